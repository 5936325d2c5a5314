//! Observational datasets: generators, loaders and CSV export.

mod hcmnist;
mod idx;
mod ihdp;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub use hcmnist::{build_hcmnist, hcmnist_phi, HcMnistConfig, HCMNIST_CLIP};
pub use idx::{parse_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxData, IdxImages};
pub use ihdp::{load_ihdp_csv, ihdp_file_name, IHDP_D_X, IHDP_N_TEST, IHDP_N_TRAIN};
pub use synthetic::{gen_synthetic, gen_synthetic_split, synthetic_cate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Tensor,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn has_oracle(&self) -> bool {
        self.y0.is_some() && self.y1.is_some()
    }

    /// Checks shapes, binary treatments and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.x.rows() != n || self.a.len() != n {
            return Err(Error::data(format!(
                "row counts differ: x {}, a {}, y {}",
                self.x.rows(),
                self.a.len(),
                n
            )));
        }
        if let Some(bad) = self.a.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::data(format!("treatment must be 0 or 1, found {bad}")));
        }
        for col in [&self.y0, &self.y1, &self.tau].into_iter().flatten() {
            if col.len() != n {
                return Err(Error::data("oracle column length differs from y"));
            }
        }
        if !self.x.is_finite() || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite covariate or outcome"));
        }
        Ok(())
    }

    /// Largest violation of `Y = A·Y1 + (1 − A)·Y0`; `None` without oracle
    /// outcomes.
    pub fn consistency_error(&self) -> Option<f64> {
        let (y0, y1) = (self.y0.as_ref()?, self.y1.as_ref()?);
        Some(
            (0..self.len())
                .map(|i| (self.y[i] - (self.a[i] * y1[i] + (1.0 - self.a[i]) * y0[i])).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Oracle CATE: the stored `tau` if present, else `y1 − y0`.
    pub fn oracle_cate(&self) -> Option<Vec<f64>> {
        if let Some(t) = &self.tau {
            return Some(t.clone());
        }
        match (&self.y0, &self.y1) {
            (Some(y0), Some(y1)) => Some(y1.iter().zip(y0).map(|(a, b)| a - b).collect()),
            _ => None,
        }
    }

    /// Sampled potential-outcome differences `y1 − y0`.
    pub fn outcome_differences(&self) -> Option<Vec<f64>> {
        match (&self.y0, &self.y1) {
            (Some(y0), Some(y1)) => Some(y1.iter().zip(y0).map(|(a, b)| a - b).collect()),
            _ => None,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select_rows(idx),
            a: pick(&self.a),
            y: pick(&self.y),
            y0: self.y0.as_ref().map(pick),
            y1: self.y1.as_ref().map(pick),
            tau: self.tau.as_ref().map(pick),
            split: self.split,
        }
    }

    pub fn treated_fraction(&self) -> f64 {
        self.a.iter().sum::<f64>() / self.len().max(1) as f64
    }

    /// Writes `x1..xd,a,y,mu0,mu1` (oracle columns omitted when absent).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.d_x();
        let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        header.push("a".into());
        header.push("y".into());
        if self.has_oracle() {
            header.push("mu0".into());
            header.push("mu1".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.a[i].to_string());
            rec.push(self.y[i].to_string());
            if let (Some(y0), Some(y1)) = (&self.y0, &self.y1) {
                rec.push(y0[i].to_string());
                rec.push(y1[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV schema written by [`Dataset::write_csv`]. With
    /// `require_oracle`, missing `mu0`/`mu1` columns are an error.
    pub fn read_csv(path: &Path, split: Split, require_oracle: bool) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let d = header
            .iter()
            .take_while(|h| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
            .count();
        let names_ok = header
            .iter()
            .take(d)
            .enumerate()
            .all(|(j, h)| *h == format!("x{}", j + 1));
        if d == 0 || !names_ok {
            return Err(Error::data(format!("{}: expected columns x1..xd first", path.display())));
        }
        let col = |name: &str| header.iter().position(|h| h == name);
        let (ia, iy) = match (col("a"), col("y")) {
            (Some(a), Some(y)) => (a, y),
            _ => return Err(Error::data(format!("{}: missing a or y column", path.display()))),
        };
        let oracle = match (col("mu0"), col("mu1")) {
            (Some(m0), Some(m1)) => Some((m0, m1)),
            _ if require_oracle => {
                return Err(Error::data("no oracle; evaluation-only metrics disabled"));
            }
            _ => None,
        };
        let mut x = Vec::new();
        let (mut a, mut y, mut y0, mut y1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::data(format!("{}: bad value at row {}, column {}", path.display(), line + 1, i + 1)))
            };
            for j in 0..d {
                x.push(num(j)?);
            }
            a.push(num(ia)?);
            y.push(num(iy)?);
            if let Some((m0, m1)) = oracle {
                y0.push(num(m0)?);
                y1.push(num(m1)?);
            }
        }
        let n = y.len();
        let ds = Dataset {
            x: Tensor::from_rows(n, d, x)?,
            a,
            y,
            y0: oracle.map(|_| y0),
            y1: oracle.map(|_| y1),
            tau: None,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }
}
