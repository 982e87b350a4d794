//! Cohort CSV and model JSON persistence.
//!
//! Floats are written in their shortest round-trip decimal form, so a saved
//! model reloads bit-for-bit.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{estimate_bulk, BulkModel, CohortMatrix, SpectralModel};
use crate::linalg::SymMatrix;

/// Model file format tag.
pub const MODEL_FORMAT: &str = "specbio-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Shortest round-trip decimal. Plain notation for moderate magnitudes,
/// exponent notation otherwise.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Parses cohort CSV text (`patient_id,<name1>,...`) into a raw cohort.
pub fn parse_cohort_csv(text: &str) -> Result<CohortMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(&e))?,
        None => return Err(Error::input("empty CSV: missing header row")),
    };
    if header.get(0) != Some("patient_id") {
        return Err(Error::Parse {
            line: 1,
            column: "1".into(),
            message: "first header cell must be 'patient_id'".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::input("p >= 1 required: header names no biomarkers"));
    }
    let p = names.len();

    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let id = rec.get(0).unwrap_or("").to_owned();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                column: "patient_id".into(),
                message: "missing patient id".into(),
            });
        }
        if rec.len() > p + 1 {
            return Err(Error::Parse {
                line,
                column: format!("{}", p + 2),
                message: format!("{} fields, header has {}", rec.len(), p + 1),
            });
        }
        for (j, name) in names.iter().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Parse {
                    line,
                    column: name.clone(),
                    message: format!("missing value for patient {id}"),
                });
            }
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                column: name.clone(),
                message: format!("non-numeric value '{cell}' for patient {id}"),
            })?;
            values.push(v);
        }
        ids.push(id);
    }
    let n = ids.len();
    let data = DMatrix::from_row_slice(n, p, &values);
    CohortMatrix::new(data, names, ids)
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        column: "?".into(),
        message: e.to_string(),
    }
}

pub fn read_cohort_csv(path: impl AsRef<Path>) -> Result<CohortMatrix> {
    parse_cohort_csv(&fs::read_to_string(path)?)
}

/// The cohort's raw (uncentered) values as CSV text.
pub fn cohort_to_csv(cohort: &CohortMatrix) -> String {
    let mut out = String::from("patient_id");
    for name in cohort.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, id) in cohort.patient_ids().iter().enumerate() {
        out.push_str(id);
        for v in cohort.raw_row(i) {
            out.push(',');
            out.push_str(&fmt_num(v));
        }
        out.push('\n');
    }
    out
}

/// On-disk model. Eigenpairs are stored for readers but recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub names: Vec<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub means: Option<Vec<f64>>,
    pub hamiltonian: Vec<Vec<f64>>,
    #[serde(default)]
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors, one per inner list, in eigenvalue order.
    #[serde(default)]
    pub eigenvectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub bulk: Option<BulkModel>,
}

fn default_format() -> String {
    MODEL_FORMAT.to_owned()
}

fn default_version() -> u32 {
    MODEL_FORMAT_VERSION
}

impl ModelFile {
    /// Snapshot of a model. The bulk estimate is attached when it succeeds.
    pub fn from_model(model: &SpectralModel) -> Self {
        let eig = model.eigen();
        ModelFile {
            format: default_format(),
            version: MODEL_FORMAT_VERSION,
            names: model.names().to_vec(),
            n: model.n_source(),
            gamma: Some(model.gamma()),
            means: Some(model.means().to_vec()),
            hamiltonian: model.hamiltonian().to_rows(),
            eigenvalues: eig.values().to_vec(),
            eigenvectors: (0..eig.dim()).map(|k| eig.vector(k)).collect(),
            bulk: estimate_bulk(model).ok(),
        }
    }

    /// Rebuilds the model. `gamma` overrides the stored value and is required
    /// when the file has none.
    pub fn into_model(self, gamma: Option<f64>) -> Result<SpectralModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::input(format!("unknown model format '{}'", self.format)));
        }
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::input(format!("unsupported model version {}", self.version)));
        }
        let gamma = gamma.or(self.gamma).ok_or_else(|| {
            Error::input("model has no gamma; supply it explicitly")
        })?;
        let h = SymMatrix::from_rows(&self.hamiltonian)?;
        SpectralModel::from_matrix(h, self.names, gamma, self.means, self.n)
    }
}

pub fn model_to_json(model: &SpectralModel) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ModelFile::from_model(model))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str, gamma: Option<f64>) -> Result<SpectralModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_model(gamma)
}

pub fn write_model(model: &SpectralModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>, gamma: Option<f64>) -> Result<SpectralModel> {
    model_from_json(&fs::read_to_string(path)?, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::build_hamiltonian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn parses_a_small_cohort() {
        let c = parse_cohort_csv("patient_id,a,b\nx,1,2\ny,3,4.5\nz,-1e-3,0\n").unwrap();
        assert_eq!(c.n(), 3);
        assert_eq!(c.names(), ["a", "b"]);
        assert_eq!(c.patient_ids(), ["x", "y", "z"]);
        assert_eq!(c.raw_row(2), vec![-1e-3, 0.0]);
    }

    #[test]
    fn empty_data_section() {
        let err = parse_cohort_csv("patient_id,a,b\n").unwrap_err();
        assert!(err.to_string().contains("n >= 2 required"), "{err}");
    }

    #[test]
    fn non_numeric_cell_is_named() {
        let err = parse_cohort_csv("patient_id,a,b\nx,1,2\ny,oops,4\n").unwrap_err();
        match err {
            Error::Parse { line, column, message } => {
                assert_eq!(line, 3);
                assert_eq!(column, "a");
                assert!(message.contains("oops"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_cell_is_named() {
        for text in ["patient_id,a,b\nx,1,2\ny,3\n", "patient_id,a,b\nx,1,2\ny,3,\n"] {
            match parse_cohort_csv(text).unwrap_err() {
                Error::Parse { column, message, .. } => {
                    assert_eq!(column, "b");
                    assert!(message.contains("missing value for patient y"));
                }
                e => panic!("{e}"),
            }
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(parse_cohort_csv("").is_err());
        assert!(parse_cohort_csv("id,a\nx,1\ny,2\n").is_err());
        let dup = parse_cohort_csv("patient_id,a,a\nx,1,2\ny,3,4\n").unwrap_err();
        assert!(matches!(dup, Error::Input(_)));
        assert!(parse_cohort_csv("patient_id,a\nx,1,2\ny,3\n").is_err());
        assert!(parse_cohort_csv("patient_id,a\nx,inf\ny,3\n").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let data = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-9..9)));
        let c = CohortMatrix::with_default_ids(data, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let back = parse_cohort_csv(&cohort_to_csv(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let data = DMatrix::from_fn(30, 6, |_, _| rng.random_range(-3.0..3.0));
        let names: Vec<String> = (0..6).map(|i| format!("m{i}")).collect();
        let cohort = CohortMatrix::with_default_ids(data, names).unwrap().center();
        let model = build_hamiltonian(&cohort).unwrap();
        let text = model_to_json(&model).unwrap();
        let back = model_from_json(&text, None).unwrap();
        assert_eq!(back.hamiltonian(), model.hamiltonian());
        assert_eq!(back.eigenvalues(), model.eigenvalues());
        assert_eq!(back.means(), model.means());
        assert_eq!(back.gamma(), model.gamma());
        assert_eq!(model_to_json(&back).unwrap(), text);
        let file: ModelFile = serde_json::from_str(&text).unwrap();
        assert!(file.bulk.is_some());
    }

    #[test]
    fn bare_matrix_needs_gamma() {
        let text = r#"{"names": ["a", "b"], "hamiltonian": [[2, 0.5], [0.5, 1]]}"#;
        assert!(model_from_json(text, None).is_err());
        let m = model_from_json(text, Some(0.1)).unwrap();
        assert_eq!(m.gamma(), 0.1);
        assert_eq!(m.dim(), 2);
    }

    #[test]
    fn number_format() {
        for x in [0.0, 1.5, -2.25e-9, 1e300, 123456.789, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_num(1e-9), "1e-9");
        assert_eq!(fmt_num(0.25), "0.25");
    }
}
