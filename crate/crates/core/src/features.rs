use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Basis expansion of the raw covariates (the intercept is added separately
/// by the learners).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// No covariate terms.
    Intercept,
    /// `x_1 .. x_d`.
    Linear,
    /// `x_1 .. x_d, x_1^2 .. x_d^2`.
    LinearPlusQuadratic,
}

impl FeatureMap {
    pub fn width(self, d: usize) -> usize {
        match self {
            FeatureMap::Intercept => 0,
            FeatureMap::Linear => d,
            FeatureMap::LinearPlusQuadratic => 2 * d,
        }
    }

    pub fn expand(self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = x.ncols();
        DMatrix::from_fn(x.nrows(), self.width(d), |i, j| {
            if j < d {
                x[(i, j)]
            } else {
                x[(i, j - d)] * x[(i, j - d)]
            }
        })
    }

    /// The next-poorer map, used to misspecify a learner against a DGP of
    /// this form.
    pub fn coarser(self) -> Self {
        match self {
            FeatureMap::LinearPlusQuadratic => FeatureMap::Linear,
            FeatureMap::Linear | FeatureMap::Intercept => FeatureMap::Intercept,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMap::Intercept => "intercept",
            FeatureMap::Linear => "linear",
            FeatureMap::LinearPlusQuadratic => "linear_plus_quadratic",
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intercept" => Ok(FeatureMap::Intercept),
            "linear" => Ok(FeatureMap::Linear),
            "linear_plus_quadratic" | "quadratic" => Ok(FeatureMap::LinearPlusQuadratic),
            other => Err(Error::Config(format!("unknown feature map `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_expansion() {
        let x = DMatrix::from_row_slice(1, 2, &[2.0, -3.0]);
        let f = FeatureMap::LinearPlusQuadratic.expand(&x);
        assert_eq!(f.as_slice(), &[2.0, -3.0, 4.0, 9.0]);
        assert_eq!(FeatureMap::Intercept.expand(&x).ncols(), 0);
    }
}
