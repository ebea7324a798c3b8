//! CSV ingestion.
//!
//! * Covariates: no header, one row per unit, one numeric column per covariate.
//! * Outcomes: a header naming columns from `{a, b, mu}`, one row per unit.
//!   Either both `a` and `b` or `mu` must be present; if all three are, `mu`
//!   must equal `a + b`.
//! * Assignments: no header, one `+1`/`-1` per line.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{GswError, Result};
use crate::estimator::OutcomeData;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub outcomes: Option<OutcomeData>,
    pub x_path: PathBuf,
    pub outcomes_path: Option<PathBuf>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| GswError::Data(format!("{}: {e}", path.display())))
}

fn parse_field(path: &Path, row: usize, col: usize, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        GswError::Data(format!(
            "{}: row {row}, column {col}: cannot parse '{raw}' as a number",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(GswError::Data(format!(
            "{}: row {row}, column {col}: non-finite value '{raw}'",
            path.display()
        )));
    }
    Ok(v)
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> GswError {
    GswError::Data(format!("{}: {e}", path.display()))
}

/// Reads a header-less numeric grid. Rows are numbered from 1.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, rec) in reader(path, false)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = r + 1;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(GswError::Data(format!(
                "{}: row {row} has {} fields, expected {w}",
                path.display(),
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_field(path, row, c + 1, f))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    let d = width.ok_or_else(|| GswError::Data(format!("{}: no rows", path.display())))?;
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Reads an outcomes file with a header drawn from `{a, b, mu}`.
pub fn read_outcomes(path: &Path) -> Result<OutcomeData> {
    let mut rdr = reader(path, true)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut idx = [None::<usize>; 3];
    for (c, name) in header.iter().enumerate() {
        let slot = match name {
            "a" => 0,
            "b" => 1,
            "mu" => 2,
            other => {
                return Err(GswError::Data(format!(
                    "{}: unknown outcome column '{other}' (expected a, b, mu)",
                    path.display()
                )))
            }
        };
        if idx[slot].replace(c).is_some() {
            return Err(GswError::Data(format!(
                "{}: duplicate outcome column '{name}'",
                path.display()
            )));
        }
    }
    let [ia, ib, im] = idx;
    if !(ia.is_some() && ib.is_some()) && im.is_none() {
        return Err(GswError::Data(format!(
            "{}: outcomes need columns a and b, or mu",
            path.display()
        )));
    }
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        // header is row 1
        let row = r + 2;
        if rec.len() != header.len() {
            return Err(GswError::Data(format!(
                "{}: row {row} has {} fields, expected {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        for (slot, col) in idx.iter().enumerate() {
            if let Some(c) = *col {
                cols[slot].push(parse_field(path, row, c + 1, &rec[c])?);
            }
        }
    }
    let [a, b, mu] = cols;
    match (ia.is_some() && ib.is_some(), im.is_some()) {
        (true, has_mu) => {
            let data = OutcomeData::from_ab(a, b)?;
            if has_mu {
                if let Some(i) = data.mu().iter().zip(&mu).position(|(x, y)| x != y) {
                    return Err(GswError::Data(format!(
                        "{}: row {}: mu differs from a + b",
                        path.display(),
                        i + 2
                    )));
                }
            }
            Ok(data)
        }
        (false, _) => OutcomeData::from_mu(mu),
    }
}

/// Reads a `±1` assignment vector.
pub fn read_assignment(path: &Path) -> Result<Vec<i8>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(GswError::Data(format!(
            "{}: assignment file must have a single column",
            path.display()
        )));
    }
    m.iter()
        .enumerate()
        .map(|(i, &v)| match v {
            1.0 => Ok(1),
            -1.0 => Ok(-1),
            v => Err(GswError::Data(format!(
                "{}: row {}: assignment {v} is not +1 or -1",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

/// Loads covariates and, optionally, outcomes, checking that row counts agree.
pub fn load_dataset(x_path: &Path, outcomes_path: Option<&Path>) -> Result<Dataset> {
    let x = read_matrix(x_path)?;
    let outcomes = outcomes_path.map(read_outcomes).transpose()?;
    if let Some(o) = &outcomes {
        if o.n() != x.nrows() {
            return Err(GswError::Data(format!(
                "covariates have {} rows but outcomes have {}",
                x.nrows(),
                o.n()
            )));
        }
    }
    Ok(Dataset {
        x,
        outcomes,
        x_path: x_path.to_path_buf(),
        outcomes_path: outcomes_path.map(Path::to_path_buf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_covariates_and_effect_columns() {
        let t = tempfile::tempdir().unwrap();
        let x = write(t.path(), "X.csv", "1\n1\n");
        let o = write(t.path(), "o.csv", "a,b\n3,0\n1,0\n");
        let ds = load_dataset(&x, Some(&o)).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 1));
        assert_eq!(ds.outcomes.unwrap().mu(), &[3.0, 1.0]);
    }

    #[test]
    fn mu_only_disables_effects() {
        let t = tempfile::tempdir().unwrap();
        let o = write(t.path(), "o.csv", "mu\n3\n1\n");
        let out = read_outcomes(&o).unwrap();
        assert!(!out.has_effects());
    }

    #[test]
    fn ragged_rows_are_named() {
        let t = tempfile::tempdir().unwrap();
        let x = write(t.path(), "X.csv", "1,2\n3\n");
        let err = read_matrix(&x).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn bad_numbers_report_location() {
        let t = tempfile::tempdir().unwrap();
        let x = write(t.path(), "X.csv", "1,2\n3,abc\n");
        let err = read_matrix(&x).unwrap_err().to_string();
        assert!(err.contains("row 2, column 2"), "{err}");
        let x = write(t.path(), "Y.csv", "1,NaN\n");
        assert!(read_matrix(&x).is_err());
    }

    #[test]
    fn outcome_header_is_validated() {
        let t = tempfile::tempdir().unwrap();
        assert!(read_outcomes(&write(t.path(), "o1.csv", "a\n1\n")).is_err());
        assert!(read_outcomes(&write(t.path(), "o2.csv", "a,c\n1,2\n")).is_err());
        assert!(read_outcomes(&write(t.path(), "o3.csv", "a,b,mu\n1,2,4\n")).is_err());
        assert!(read_outcomes(&write(t.path(), "o4.csv", "a,b,mu\n1,2,3\n")).is_ok());
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let t = tempfile::tempdir().unwrap();
        let x = write(t.path(), "X.csv", "1\n1\n1\n");
        let o = write(t.path(), "o.csv", "mu\n1\n");
        assert!(load_dataset(&x, Some(&o)).is_err());
    }

    #[test]
    fn assignments_must_be_signs() {
        let t = tempfile::tempdir().unwrap();
        assert_eq!(
            read_assignment(&write(t.path(), "z.csv", "1\n-1\n")).unwrap(),
            vec![1, -1]
        );
        assert!(read_assignment(&write(t.path(), "z2.csv", "1\n0\n")).is_err());
    }
}
