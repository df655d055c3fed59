use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ingest::RawTable;
use super::schema::DatasetSchema;

const PLANTED_SCHEMA: &str = r#"
task = "binary"

[[columns]]
name = "y"
role = "response"

[[columns]]
name = "x1"
role = "feature"
encoding = "min_max"

[[columns]]
name = "x2"
role = "feature"
encoding = "min_max"

[[columns]]
name = "proxy"
role = "feature"
encoding = "min_max"

[[columns]]
name = "a"
role = "feature"
encoding = "binary"
positive = "1"
protected = "binary"

[[columns]]
name = "b"
role = "feature"
encoding = "binary"
positive = "1"
protected = "binary"
"#;

/// Schema of [`planted_bias`] tables.
pub fn planted_bias_schema() -> DatasetSchema {
    DatasetSchema::from_toml_str(PLANTED_SCHEMA).expect("built-in schema is valid")
}

/// Binary-outcome rows whose only protected-attribute signal sits in the
/// interaction of two balanced binary attributes `a` and `b`: the label
/// leans positive when they agree and negative when they differ, so
/// neither attribute alone predicts it. `proxy` is a noisy copy of the
/// agreement; `x1` and `x2` carry the legitimate signal.
pub fn planted_bias(n: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let headers = ["y", "x1", "x2", "proxy", "a", "b"]
        .map(String::from)
        .to_vec();
    let rows = (0..n)
        .map(|_| {
            let a = rng.gen_bool(0.5);
            let b = rng.gen_bool(0.5);
            let agree = f64::from(u8::from(a == b));
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let x2: f64 = rng.gen_range(-1.0..1.0);
            let proxy = agree + 0.6 * rng.gen_range(-0.5..0.5);
            let logit = 1.5 * x1 - 1.0 * x2 + 1.5 * (2.0 * agree - 1.0);
            let y = rng.gen_bool(1.0 / (1.0 + (-logit).exp()));
            vec![
                u8::from(y).to_string(),
                format!("{x1}"),
                format!("{x2}"),
                format!("{proxy}"),
                u8::from(a).to_string(),
                u8::from(b).to_string(),
            ]
        })
        .collect();
    RawTable::new(headers, rows)
}
