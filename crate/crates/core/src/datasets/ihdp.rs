use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IHDP_N_TRAIN: usize = 672;
pub const IHDP_N_TEST: usize = 75;
pub const IHDP_D_X: usize = 25;

/// `ihdp_{replicate}_{train|test}.csv`
pub fn ihdp_file_name(replicate: usize, split: Split) -> String {
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!("ihdp_{replicate}_{tag}.csv")
}

fn check_shape(ds: &Dataset, path: &PathBuf, rows: usize) -> Result<()> {
    if ds.len() != rows || ds.d_x() != IHDP_D_X {
        return Err(Error::data(format!(
            "{}: expected {rows}x{IHDP_D_X} covariates, found {}x{}",
            path.display(),
            ds.len(),
            ds.d_x()
        )));
    }
    Ok(())
}

/// Loads one replicate (1..=100) from `dir`, with header
/// `x1..x25,a,y,mu0,mu1`. The noiseless means become the oracle potential
/// outcomes.
pub fn load_ihdp_csv(dir: &Path, replicate: usize) -> Result<(Dataset, Dataset)> {
    if !(1..=100).contains(&replicate) {
        return Err(Error::invalid(format!("replicate {replicate} outside 1..=100")));
    }
    let train_path = dir.join(ihdp_file_name(replicate, Split::Train));
    let test_path = dir.join(ihdp_file_name(replicate, Split::Test));
    let train = Dataset::read_csv(&train_path, Split::Train, true)?;
    check_shape(&train, &train_path, IHDP_N_TRAIN)?;
    let test = Dataset::read_csv(&test_path, Split::Test, true)?;
    check_shape(&test, &test_path, IHDP_N_TEST)?;
    Ok((train, test))
}
