use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{DatasetSchema, Recipe};
use crate::error::{Error, Result};

/// Rows of string cells under a header. Lookups by name resolve to the
/// first column carrying that name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        Self { headers, rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            headers: self.headers.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<(Self, Vec<RowReject>)> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        let mut rejects = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            match rec {
                Ok(r) if r.len() == headers.len() => {
                    rows.push(r.iter().map(|c| c.trim().to_string()).collect())
                }
                Ok(r) => rejects.push(RowReject {
                    line,
                    reason: format!("{} fields, expected {}", r.len(), headers.len()),
                }),
                Err(e) => rejects.push(RowReject {
                    line,
                    reason: e.to_string(),
                }),
            }
        }
        Ok((Self { headers, rows }, rejects))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// Rows removed by each recipe rule, in application order.
    pub filtered: Vec<(String, usize)>,
    pub rejects: Vec<RowReject>,
}

/// Reads a CSV file, applies the schema's recipe and checks that every
/// schema column exists and that numeric columns parse.
pub fn ingest_csv(path: &Path, schema: &DatasetSchema) -> Result<(RawTable, IngestReport)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<(RawTable, IngestReport)> {
    schema.validate()?;
    let (table, mut rejects) = RawTable::from_reader(reader)?;
    for c in &schema.columns {
        table.column_index(&c.name)?;
    }
    let rows_read = table.n() + rejects.len();
    let lines: Vec<usize> = (0..table.n()).map(|i| i + 2).collect();
    let (table, lines, filtered) = match schema.recipe {
        Recipe::Generic => (table, lines, Vec::new()),
        Recipe::Compas => compas(table, lines)?,
        Recipe::Pg15 => pg15(table, lines, schema)?,
    };

    let numeric: Vec<(usize, &str)> = schema
        .columns
        .iter()
        .filter(|c| c.is_numeric())
        .map(|c| Ok((table.column_index(&c.name)?, c.name.as_str())))
        .collect::<Result<_>>()?;
    let mut keep = Vec::with_capacity(table.n());
    for (i, row) in table.rows.iter().enumerate() {
        let bad = numeric
            .iter()
            .find(|(j, _)| !row[*j].parse::<f64>().is_ok_and(f64::is_finite));
        match bad {
            None => keep.push(i),
            Some((j, name)) => rejects.push(RowReject {
                line: lines[i],
                reason: format!("column '{name}' value '{}' is not a finite number", row[*j]),
            }),
        }
    }
    rejects.sort_by_key(|r| r.line);
    let table = table.select_rows(&keep);
    let report = IngestReport {
        rows_read,
        rows_kept: table.n(),
        filtered,
        rejects,
    };
    Ok((table, report))
}

type Cleaned = (RawTable, Vec<usize>, Vec<(String, usize)>);

fn apply_filter<F>(
    table: RawTable,
    lines: Vec<usize>,
    name: &str,
    log: &mut Vec<(String, usize)>,
    keep: F,
) -> (RawTable, Vec<usize>)
where
    F: Fn(&[String]) -> bool,
{
    let before = table.n();
    let (rows, lines): (Vec<_>, Vec<_>) = table
        .rows
        .into_iter()
        .zip(lines)
        .filter(|(r, _)| keep(r))
        .unzip();
    log.push((name.to_string(), before - rows.len()));
    (
        RawTable {
            headers: table.headers,
            rows,
        },
        lines,
    )
}

/// ProPublica-style cleaning: screening within 30 days of arrest, a known
/// recidivism flag, no ordinary traffic offences, a known score; Asian and
/// Native American merged into Other.
fn compas(table: RawTable, lines: Vec<usize>) -> Result<Cleaned> {
    let days = table.column_index("days_b_screening_arrest")?;
    let recid = table.column_index("is_recid")?;
    let degree = table.column_index("c_charge_degree")?;
    let score = table.column_index("score_text")?;
    let race = table.column_index("race")?;
    let mut log = Vec::new();
    let (t, l) = apply_filter(
        table,
        lines,
        "days_b_screening_arrest within 30 days",
        &mut log,
        |r| {
            r[days]
                .parse::<f64>()
                .is_ok_and(|d| (-30.0..=30.0).contains(&d))
        },
    );
    let (t, l) = apply_filter(t, l, "is_recid known", &mut log, |r| r[recid] != "-1");
    let (t, l) = apply_filter(t, l, "no ordinary traffic offence", &mut log, |r| {
        r[degree] != "O"
    });
    let (mut t, l) = apply_filter(t, l, "score_text known", &mut log, |r| {
        r[score] != "N/A" && !r[score].is_empty()
    });
    let mut merged = 0;
    for r in &mut t.rows {
        if r[race] == "Asian" || r[race] == "Native American" {
            r[race] = "Other".to_string();
            merged += 1;
        }
    }
    log.push((
        "Asian/Native American merged into Other".to_string(),
        merged,
    ));
    Ok((t, l, log))
}

/// Drops the leading run of zero-response rows that duplicate another
/// row on every schema column.
fn pg15(table: RawTable, lines: Vec<usize>, schema: &DatasetSchema) -> Result<Cleaned> {
    let cols: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| table.column_index(&c.name))
        .collect::<Result<_>>()?;
    let resp = table.column_index(&schema.response().name)?;
    let key = |r: &[String]| cols.iter().map(|&j| r[j].clone()).collect::<Vec<_>>();
    let mut counts: std::collections::HashMap<Vec<String>, usize> =
        std::collections::HashMap::new();
    for r in &table.rows {
        *counts.entry(key(r)).or_default() += 1;
    }
    let mut prefix = 0;
    for r in &table.rows {
        let zero = r[resp].parse::<f64>().is_ok_and(|v| v == 0.0);
        if zero && counts[&key(r)] > 1 {
            prefix += 1;
        } else {
            break;
        }
    }
    let rows = table.rows[prefix..].to_vec();
    let lines = lines[prefix..].to_vec();
    let log = vec![("leading duplicate zero-claim rows".to_string(), prefix)];
    Ok((
        RawTable {
            headers: table.headers,
            rows,
        },
        lines,
        log,
    ))
}

/// Distinct values of a column in first-seen order.
pub fn distinct(values: &[&str]) -> Vec<String> {
    let mut seen = HashSet::new();
    values
        .iter()
        .filter(|v| seen.insert(**v))
        .map(|v| v.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(recipe: &str, task: &str, extra: &str) -> DatasetSchema {
        DatasetSchema::from_toml_str(&format!(
            "recipe = \"{recipe}\"\ntask = \"{task}\"\n{extra}"
        ))
        .unwrap()
    }

    const BINARY_COLS: &str = r#"
[[columns]]
name = "y"
role = "response"
[[columns]]
name = "x"
role = "feature"
encoding = "min_max"
[[columns]]
name = "g"
role = "protected"
protected = "categorical"
"#;

    #[test]
    fn generic_passes_through() {
        let csv = "y,x,g\n1,0.5,a\n0,1.5,b\n1,2.5,a\n";
        let (t, rep) =
            ingest_reader(csv.as_bytes(), &schema("generic", "binary", BINARY_COLS)).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.rows[1], vec!["0", "1.5", "b"]);
        assert!(rep.rejects.is_empty());
        assert_eq!(rep.rows_kept, 3);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "y,x\n1,0.5\n";
        let r = ingest_reader(csv.as_bytes(), &schema("generic", "binary", BINARY_COLS));
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn bad_rows_are_reported() {
        let csv = "y,x,g\n1,abc,a\n0,1.5\n1,2.5,a\n";
        let (t, rep) =
            ingest_reader(csv.as_bytes(), &schema("generic", "binary", BINARY_COLS)).unwrap();
        assert_eq!(t.n(), 1);
        assert_eq!(
            rep.rejects.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![2, 3]
        );
    }

    #[test]
    fn pg15_strips_leading_duplicates() {
        let cols = r#"
[[columns]]
name = "n"
role = "response"
[[columns]]
name = "e"
role = "exposure"
[[columns]]
name = "x"
role = "feature"
"#;
        let mut csv = String::from("n,e,x\n");
        for _ in 0..3 {
            csv.push_str("0,1,7\n");
        }
        csv.push_str("0,1,2\n1,0.5,7\n0,1,3\n0,1,2\n");
        let (t, rep) = ingest_reader(csv.as_bytes(), &schema("pg15", "poisson", cols)).unwrap();
        assert_eq!(rep.filtered[0].1, 4);
        assert_eq!(t.n(), 3);
        assert_eq!(t.rows[0], vec!["1", "0.5", "7"]);
    }

    #[test]
    fn compas_filters_and_merges() {
        let cols = r#"
[[columns]]
name = "two_year_recid"
role = "response"
[[columns]]
name = "race"
role = "feature"
encoding = "one_hot"
protected = "categorical"
"#;
        let csv =
            "two_year_recid,race,days_b_screening_arrest,is_recid,c_charge_degree,score_text\n\
                   1,Asian,0,1,F,Low\n\
                   0,Caucasian,-31,0,F,Low\n\
                   0,Caucasian,,0,F,Low\n\
                   1,Native American,3,1,M,High\n\
                   1,Hispanic,3,-1,M,High\n\
                   1,Hispanic,3,1,O,High\n\
                   1,African-American,3,1,M,N/A\n\
                   0,African-American,30,0,M,Medium\n";
        let (t, rep) = ingest_reader(csv.as_bytes(), &schema("compas", "binary", cols)).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(
            t.column("race").unwrap(),
            vec!["Other", "Other", "African-American"]
        );
        assert_eq!(
            rep.filtered.iter().map(|f| f.1).collect::<Vec<_>>(),
            vec![2, 1, 1, 1, 2]
        );
    }
}
