use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ingest::{distinct, RawTable};
use super::schema::{ColumnSpec, DatasetSchema, Encoding, ProtectedKind, UnseenPolicy};
use crate::error::{Error, Result};
use crate::fairness::{QuantileBinner, SubgroupKey};
use crate::model::{Batch, Task};
use crate::sample::SampleBlock;

/// A column transform with its statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    OneHot {
        levels: Vec<String>,
    },
    Ordinal {
        levels: Vec<String>,
    },
    MinMax {
        min: f64,
        max: f64,
    },
    /// With no positive level the raw value must already be 0 or 1.
    Binary {
        positive: Option<String>,
    },
    Identity {
        scale: f64,
    },
}

impl ColumnTransform {
    fn fit(spec: &ColumnSpec, encoding: Encoding, raw: &[&str]) -> Result<Self> {
        let scale = spec.scale.unwrap_or(1.0);
        Ok(match encoding {
            Encoding::OneHot => {
                let levels = match &spec.levels {
                    Some(l) => l.clone(),
                    None => {
                        let mut l = distinct(raw);
                        l.sort();
                        l
                    }
                };
                ColumnTransform::OneHot { levels }
            }
            Encoding::Ordinal => ColumnTransform::Ordinal {
                levels: spec.levels.clone().expect("validated"),
            },
            Encoding::MinMax => {
                let vals = parse_all(&spec.name, raw, scale)?;
                if vals.is_empty() {
                    return Err(Error::EmptyInput(format!("no rows to fit '{}'", spec.name)));
                }
                ColumnTransform::MinMax {
                    min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            }
            Encoding::Binary => ColumnTransform::Binary {
                positive: spec.positive.clone(),
            },
            Encoding::None => ColumnTransform::Identity { scale },
        })
    }

    pub fn width(&self) -> usize {
        match self {
            ColumnTransform::OneHot { levels } => levels.len(),
            _ => 1,
        }
    }

    fn names(&self, column: &str) -> Vec<String> {
        match self {
            ColumnTransform::OneHot { levels } => {
                levels.iter().map(|l| format!("{column}={l}")).collect()
            }
            _ => vec![column.to_string()],
        }
    }

    /// Encodes one raw cell into `out` (length [`width`](Self::width)).
    fn encode(&self, column: &str, raw: &str, unseen: UnseenPolicy, out: &mut [f64]) -> Result<()> {
        let unseen_err = || Error::Schema(format!("unseen category '{raw}' in column '{column}'"));
        match self {
            ColumnTransform::OneHot { levels } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                match levels.iter().position(|l| l == raw) {
                    Some(k) => out[k] = 1.0,
                    None if unseen == UnseenPolicy::Zeros => {}
                    None => return Err(unseen_err()),
                }
            }
            ColumnTransform::Ordinal { levels } => {
                out[0] = levels
                    .iter()
                    .position(|l| l == raw)
                    .ok_or_else(unseen_err)? as f64;
            }
            ColumnTransform::MinMax { min, max } => {
                let v = parse(column, raw, 1.0)?;
                out[0] = if max > min {
                    (v - min) / (max - min)
                } else {
                    0.0
                };
            }
            ColumnTransform::Binary { positive } => {
                out[0] = match positive {
                    Some(p) => f64::from(u8::from(raw == p)),
                    None => match parse(column, raw, 1.0)? {
                        v if v == 0.0 || v == 1.0 => v,
                        v => {
                            return Err(Error::Schema(format!(
                                "column '{column}' holds {v}, expected 0 or 1"
                            )))
                        }
                    },
                };
            }
            ColumnTransform::Identity { scale } => out[0] = parse(column, raw, *scale)?,
        }
        Ok(())
    }
}

fn parse(column: &str, raw: &str, scale: f64) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(|v| v * scale)
        .ok_or_else(|| Error::Schema(format!("column '{column}': '{raw}' is not a number")))
}

fn parse_all(column: &str, raw: &[&str], scale: f64) -> Result<Vec<f64>> {
    raw.iter().map(|r| parse(column, r, scale)).collect()
}

/// A protected attribute's encoding for the dependence measures and its
/// labelling for the subgroup metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProtected {
    pub name: String,
    pub kind: ProtectedKind,
    pub encode: ColumnTransform,
    /// Quantile cuts for continuous attributes.
    pub binner: Option<QuantileBinner>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransforms {
    pub task: Task,
    pub features: Vec<(String, ColumnTransform)>,
    pub response: (String, ColumnTransform),
    pub exposure: Option<(String, ColumnTransform)>,
    pub protected: Vec<FittedProtected>,
    pub unseen: UnseenPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedBlock {
    pub name: String,
    pub kind: ProtectedKind,
    pub block: SampleBlock,
    /// Category index, binary value or quantile bin of every row.
    pub labels: Vec<u32>,
}

/// Encoded rows ready for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub x: Array2<f64>,
    pub feature_names: Vec<String>,
    pub y: Vec<f64>,
    pub exposure: Option<Vec<f64>>,
    pub protected: Vec<ProtectedBlock>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            task: self.task,
            x: self.x.select(ndarray::Axis(0), idx),
            feature_names: self.feature_names.clone(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            exposure: self
                .exposure
                .as_ref()
                .map(|e| idx.iter().map(|&i| e[i]).collect()),
            protected: self
                .protected
                .iter()
                .map(|p| ProtectedBlock {
                    name: p.name.clone(),
                    kind: p.kind,
                    block: p.block.select_rows(idx),
                    labels: idx.iter().map(|&i| p.labels[i]).collect(),
                })
                .collect(),
        }
    }

    pub fn attrs(&self) -> Vec<SampleBlock> {
        self.protected.iter().map(|p| p.block.clone()).collect()
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(
            self.x.clone(),
            self.y.clone(),
            self.exposure.clone(),
            self.attrs(),
        )
    }

    /// Joint subgroup key of every row across all protected attributes.
    pub fn subgroup_keys(&self) -> Result<Vec<SubgroupKey>> {
        let labels: Vec<Vec<u32>> = self.protected.iter().map(|p| p.labels.clone()).collect();
        if labels.is_empty() {
            return Ok(vec![SubgroupKey(Vec::new()); self.n()]);
        }
        SubgroupKey::zip(&labels)
    }

    /// Response indicator (binary: the label; counts: any claim) joined
    /// with the subgroup key.
    pub fn strata(&self) -> Result<Vec<SubgroupKey>> {
        let keys = self.subgroup_keys()?;
        Ok(keys
            .into_iter()
            .zip(&self.y)
            .map(|(mut k, &y)| {
                k.0.insert(0, u32::from(y > 0.0));
                k
            })
            .collect())
    }
}

impl FittedTransforms {
    /// Fits every transform on `train` only.
    pub fn fit(train: &RawTable, schema: &DatasetSchema) -> Result<Self> {
        schema.validate()?;
        if train.n() == 0 {
            return Err(Error::EmptyInput("no rows to fit transforms on".into()));
        }
        let mut features = Vec::new();
        for c in schema.features() {
            let raw = train.column(&c.name)?;
            features.push((c.name.clone(), ColumnTransform::fit(c, c.encoding, &raw)?));
        }
        let r = schema.response();
        let response = (
            r.name.clone(),
            ColumnTransform::fit(r, r.encoding, &train.column(&r.name)?)?,
        );
        let exposure = match schema.exposure() {
            Some(e) => Some((
                e.name.clone(),
                ColumnTransform::fit(e, Encoding::None, &train.column(&e.name)?)?,
            )),
            None => None,
        };
        let mut protected = Vec::new();
        for c in schema.protected() {
            let raw = train.column(&c.name)?;
            let kind = c.protected.expect("filtered");
            let (encode, binner) = match kind {
                ProtectedKind::Binary => (ColumnTransform::fit(c, Encoding::Binary, &raw)?, None),
                ProtectedKind::Categorical => {
                    (ColumnTransform::fit(c, Encoding::OneHot, &raw)?, None)
                }
                ProtectedKind::Continuous => {
                    let vals = parse_all(&c.name, &raw, c.scale.unwrap_or(1.0))?;
                    let binner = QuantileBinner::fit(&vals, &schema.binning.quantiles)?;
                    (
                        ColumnTransform::fit(c, Encoding::MinMax, &raw)?,
                        Some(binner),
                    )
                }
            };
            protected.push(FittedProtected {
                name: c.name.clone(),
                kind,
                encode,
                binner,
            });
        }
        Ok(Self {
            task: schema.task,
            features,
            response,
            exposure,
            protected,
            unseen: schema.unseen,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().flat_map(|(n, t)| t.names(n)).collect()
    }

    /// Applies the frozen transforms; never refits.
    pub fn transform(&self, table: &RawTable) -> Result<Dataset> {
        let n = table.n();
        let width: usize = self.features.iter().map(|(_, t)| t.width()).sum();
        let mut x = Array2::zeros((n, width));
        let mut at = 0;
        for (name, t) in &self.features {
            let raw = table.column(name)?;
            let w = t.width();
            let mut buf = vec![0.0; w];
            for (i, cell) in raw.iter().enumerate() {
                t.encode(name, cell, self.unseen, &mut buf)?;
                for (j, v) in buf.iter().enumerate() {
                    x[[i, at + j]] = *v;
                }
            }
            at += w;
        }
        let encode_scalar = |(name, t): &(String, ColumnTransform)| -> Result<Vec<f64>> {
            let mut buf = [0.0];
            table
                .column(name)?
                .iter()
                .map(|cell| {
                    t.encode(name, cell, UnseenPolicy::Error, &mut buf)?;
                    Ok(buf[0])
                })
                .collect()
        };
        let y = encode_scalar(&self.response)?;
        if self.task == Task::Binary && y.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Schema("binary response must be 0 or 1".into()));
        }
        if self.task == Task::Poisson && y.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Schema(
                "count response must be a non-negative integer".into(),
            ));
        }
        let exposure = match &self.exposure {
            Some(e) => {
                let v = encode_scalar(e)?;
                if v.iter().any(|x| !(*x > 0.0)) {
                    return Err(Error::Schema("exposure must be positive".into()));
                }
                Some(v)
            }
            None => None,
        };
        let mut protected = Vec::new();
        for p in &self.protected {
            let raw = table.column(&p.name)?;
            let w = p.encode.width();
            let mut values = Array2::zeros((n, w));
            let mut labels = Vec::with_capacity(n);
            let mut buf = vec![0.0; w];
            for (i, cell) in raw.iter().enumerate() {
                p.encode.encode(&p.name, cell, self.unseen, &mut buf)?;
                values.row_mut(i).assign(&ndarray::ArrayView1::from(&buf));
                let label = match (&p.binner, &p.encode) {
                    (Some(b), _) => b.label(parse(&p.name, cell, 1.0)?),
                    (None, ColumnTransform::OneHot { .. }) => {
                        buf.iter().position(|v| *v == 1.0).unwrap_or(w) as u32
                    }
                    (None, _) => buf[0] as u32,
                };
                labels.push(label);
            }
            protected.push(ProtectedBlock {
                name: p.name.clone(),
                kind: p.kind,
                block: SampleBlock::new(values)?,
                labels,
            });
        }
        Ok(Dataset {
            task: self.task,
            x,
            feature_names: self.feature_names(),
            y,
            exposure,
            protected,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fits transforms on `train` and applies them to it.
pub fn preprocess(train: &RawTable, schema: &DatasetSchema) -> Result<(Dataset, FittedTransforms)> {
    let fitted = FittedTransforms::fit(train, schema)?;
    Ok((fitted.transform(train)?, fitted))
}
