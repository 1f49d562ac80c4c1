//! Observed data: design rows plus responses.

use crate::error::{Error, Result};

/// A regression dataset: `xs[i]` is the i-th design vector, `ys[i]` the
/// response.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "{} design rows but {} responses",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let p = xs[0].len();
        for (i, row) in xs.iter().enumerate() {
            if row.len() != p {
                return Err(Error::invalid(format!(
                    "row {} has {} columns, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite design value in row {}", i + 1)));
            }
        }
        for (i, y) in ys.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::invalid(format!("non-finite response in row {}", i + 1)));
            }
        }
        Ok(Dataset { xs, ys })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn p(&self) -> usize {
        self.xs[0].len()
    }
}
