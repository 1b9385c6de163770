//! Observed data: outcomes, binary treatment and standardized covariates.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CfmError, Result};

/// Column-name mapping for dataset CSV files.
///
/// When `outcomes` or `covariates` is absent, every header column whose name
/// starts with `y_` (resp. `x_`) is used, in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub id: String,
    pub treatment: String,
    pub outcomes: Option<Vec<String>>,
    pub covariates: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: "id".into(),
            treatment: "t".into(),
            outcomes: None,
            covariates: None,
        }
    }
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CfmError::Schema(format!("schema file not found: {}", path.display()))
            } else {
                CfmError::io(path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| CfmError::Schema(format!("{}: {e}", path.display())))
    }

    fn resolve(list: &Option<Vec<String>>, prefix: &str, header: &[String]) -> Vec<String> {
        match list {
            Some(cols) => cols.clone(),
            None => header.iter().filter(|h| h.starts_with(prefix)).cloned().collect(),
        }
    }
}

/// Column-wise standardization `(x - mean) / sd` with the `n - 1` denominator.
pub fn standardize(x_raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let n = x_raw.nrows();
    let p = x_raw.ncols();
    if p > 0 && n < 2 {
        return Err(CfmError::Validation("standardization needs at least two rows".into()));
    }
    let mut x = x_raw.clone();
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for k in 0..p {
        let col = x_raw.column(k);
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(CfmError::Validation(format!(
                "covariate column {} has zero variance",
                k + 1
            )));
        }
        for v in x.column_mut(k).iter_mut() {
            *v = (*v - mean) / sd;
        }
        means.push(mean);
        sds.push(sd);
    }
    Ok((x, means, sds))
}

/// Units with a `q`-variate outcome, a binary treatment and `p` covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub unit_ids: Vec<String>,
    pub outcome_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Observed outcomes, `n x q`.
    pub y: DMatrix<f64>,
    /// Treatment indicator per unit.
    pub t: Vec<u8>,
    /// Standardized covariates, `n x p`.
    pub x: DMatrix<f64>,
    /// Covariates on their original scale.
    pub x_raw: DMatrix<f64>,
    pub x_means: Vec<f64>,
    pub x_sds: Vec<f64>,
}

impl Dataset {
    /// Validate and standardize. Covariates are passed on their original scale.
    pub fn new(
        unit_ids: Vec<String>,
        outcome_names: Vec<String>,
        covariate_names: Vec<String>,
        y: DMatrix<f64>,
        t: Vec<u8>,
        x_raw: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.nrows();
        if t.len() != n || x_raw.nrows() != n || unit_ids.len() != n {
            return Err(CfmError::Validation("row counts disagree".into()));
        }
        if outcome_names.len() != y.ncols() || covariate_names.len() != x_raw.ncols() {
            return Err(CfmError::Validation("column names disagree with matrix shapes".into()));
        }
        if y.ncols() == 0 {
            return Err(CfmError::Validation("at least one outcome column is required".into()));
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(CfmError::Validation(format!("row {}: treatment must be 0 or 1", i + 1)));
        }
        for (name, m) in [("outcome", &y), ("covariate", &x_raw)] {
            if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
                let (r, c) = (idx % n, idx / n);
                return Err(CfmError::Validation(format!(
                    "row {}: non-finite {name} in column {}",
                    r + 1,
                    c + 1
                )));
            }
        }
        let treated = t.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(CfmError::Validation("both treatment arms must be non-empty".into()));
        }
        let (x, x_means, x_sds) = standardize(&x_raw)?;
        Ok(Dataset {
            unit_ids,
            outcome_names,
            covariate_names,
            y,
            t,
            x,
            x_raw,
            x_means,
            x_sds,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Indices of units observed under treatment level `arm`.
    pub fn arm_units(&self, arm: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] as usize == arm).collect()
    }

    /// Rows `rows` of this dataset, re-standardized on the subset.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)]);
        Dataset::new(
            rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            self.outcome_names.clone(),
            self.covariate_names.clone(),
            pick(&self.y),
            rows.iter().map(|&i| self.t[i]).collect(),
            pick(&self.x_raw),
        )
    }

    pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| CfmError::io(path, e))?;
        Self::read_csv(file, schema).map_err(|e| match e {
            CfmError::Csv { source, .. } => CfmError::csv(path, source),
            other => other,
        })
    }

    pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CfmError::csv("<input>", e))?
            .iter()
            .map(str::to_string)
            .collect();
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| CfmError::Schema(format!("missing column `{name}`")))
        };
        let id_col = find(&schema.id)?;
        let t_col = find(&schema.treatment)?;
        let outcome_names = Schema::resolve(&schema.outcomes, "y_", &header);
        let covariate_names = Schema::resolve(&schema.covariates, "x_", &header);
        if outcome_names.is_empty() {
            return Err(CfmError::Schema("no outcome columns".into()));
        }
        let y_cols = outcome_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
        let x_cols = covariate_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

        let mut ids = Vec::new();
        let mut t = Vec::new();
        let mut y_vals = Vec::new();
        let mut x_vals = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CfmError::csv("<input>", e))?;
            let row = r + 1;
            let cell = |col: usize| -> Result<f64> {
                let raw = rec.get(col).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| {
                    CfmError::Validation(format!("row {row}, column `{}`: cannot parse `{raw}`", header[col]))
                })?;
                if !v.is_finite() {
                    return Err(CfmError::Validation(format!(
                        "row {row}, column `{}`: non-finite value",
                        header[col]
                    )));
                }
                Ok(v)
            };
            ids.push(rec.get(id_col).unwrap_or("").to_string());
            let tv = cell(t_col)?;
            if tv != 0.0 && tv != 1.0 {
                return Err(CfmError::Validation(format!(
                    "row {row}, column `{}`: treatment must be 0 or 1, found {tv}",
                    header[t_col]
                )));
            }
            t.push(tv as u8);
            for &c in &y_cols {
                y_vals.push(cell(c)?);
            }
            for &c in &x_cols {
                x_vals.push(cell(c)?);
            }
        }
        let n = ids.len();
        let y = DMatrix::from_row_slice(n, y_cols.len(), &y_vals);
        let x = DMatrix::from_row_slice(n, x_cols.len(), &x_vals);
        Dataset::new(ids, outcome_names, covariate_names, y, t, x)
    }

    /// Write `id, t, outcomes..., covariates...` with covariates on their original scale.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "t".to_string()];
        header.extend(self.outcome_names.iter().cloned());
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.unit_ids[i].clone(), self.t[i].to_string()];
            rec.extend(self.y.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.x_raw.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| CfmError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| CfmError::csv(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        Dataset::read_csv(text.as_bytes(), &Schema::default())
    }

    #[test]
    fn minimal_well_formed_input() {
        let ds = parse("id,t,y_1,y_2,x_1\na,0,1.0,2.0,0.5\nb,1,1.5,2.5,1.0\nc,0,0.2,0.1,2.0\nd,1,3.0,1.0,4.0\n").unwrap();
        assert_eq!((ds.n(), ds.q(), ds.p()), (4, 2, 1));
        assert_eq!(ds.arm_units(0), vec![0, 2]);
        assert_eq!(ds.arm_units(1), vec![1, 3]);
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let err = parse("id,t,y_1,x_1\na,0,1,3\nb,1,2,3\nc,0,3,3\n").unwrap_err();
        assert!(matches!(err, CfmError::Validation(ref m) if m.contains("zero variance")), "{err}");
    }

    #[test]
    fn non_binary_treatment_is_rejected() {
        let err = parse("id,t,y_1,x_1\na,0,1,3\nb,2,2,4\nc,1,3,5\n").unwrap_err();
        assert!(matches!(err, CfmError::Validation(ref m) if m.contains("row 2")), "{err}");
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let err = parse("id,t,y_1,x_1\na,0,1,3\nb,1,NaN,4\nc,1,3,5\n").unwrap_err();
        match err {
            CfmError::Validation(m) => assert!(m.contains("row 2") && m.contains("y_1"), "{m}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let schema = Schema {
            covariates: Some(vec!["age".into()]),
            ..Schema::default()
        };
        let err = Dataset::read_csv("id,t,y_1,x_1\na,0,1,3\nb,1,2,4\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, CfmError::Schema(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn remapped_schema() {
        let schema = Schema {
            id: "unit".into(),
            treatment: "smoke".into(),
            outcomes: Some(vec!["zinc".into()]),
            covariates: Some(vec!["temp".into()]),
        };
        let ds = Dataset::read_csv("unit,smoke,zinc,temp\na,0,1,3\nb,1,2,4\nc,1,2,7\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.outcome_names, vec!["zinc"]);
        assert_eq!(ds.covariate_names, vec!["temp"]);
    }

    #[test]
    fn standardize_arithmetic() {
        let (x, m, s) = standardize(&DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(m, vec![2.0]);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(x.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn standardize_two_level_column() {
        // mean 5, sd sqrt(100/3); entries (v - 5) / sd = -+5/sd.
        let (x, m, s) = standardize(&DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 10.0, 10.0])).unwrap();
        let sd = (100.0f64 / 3.0).sqrt();
        assert_eq!(m[0], 5.0);
        assert!((s[0] - sd).abs() < 1e-12);
        let expect = [-1.0, -1.0, 1.0, 1.0].map(|v: f64| v * 5.0 / sd);
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let raw = DMatrix::from_column_slice(5, 2, &[1.0, 4.0, -2.0, 8.0, 0.5, 3.0, 3.5, 9.0, -1.0, 0.0]);
        let (x, _, _) = standardize(&raw).unwrap();
        let (xx, m, s) = standardize(&x).unwrap();
        assert!((xx - &x).amax() < 1e-12);
        for k in 0..2 {
            assert!(m[k].abs() < 1e-10 && (s[k] - 1.0).abs() < 1e-10);
        }
    }
}
