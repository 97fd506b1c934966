//! Mean-function bases: the columns of `H`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::DesignSet;
use crate::error::{Error, Result};

/// Regression basis `f_1, …, f_p`. Every supported basis is a list of monomials.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionBasis {
    /// `p = 0`: zero-mean process.
    None,
    /// `f_1 = 1`.
    #[default]
    Constant,
    /// `1, x_1, …, x_r`.
    Linear,
    /// Monomials `x_1^{e_1} ⋯ x_r^{e_r}`, one exponent list per function.
    Custom(Vec<Vec<u32>>),
}

impl RegressionBasis {
    /// Exponent lists for points of dimension `r`.
    pub fn monomials(&self, r: usize) -> Result<Vec<Vec<u32>>> {
        Ok(match self {
            RegressionBasis::None => Vec::new(),
            RegressionBasis::Constant => vec![vec![0; r]],
            RegressionBasis::Linear => {
                let mut out = vec![vec![0; r]];
                for k in 0..r {
                    let mut e = vec![0; r];
                    e[k] = 1;
                    out.push(e);
                }
                out
            }
            RegressionBasis::Custom(list) => {
                if let Some(bad) = list.iter().find(|e| e.len() != r) {
                    return Err(Error::Input(format!(
                        "monomial {bad:?} has {} exponents but points have dimension {r}",
                        bad.len()
                    )));
                }
                list.clone()
            }
        })
    }

    pub fn dimension(&self, r: usize) -> Result<usize> {
        Ok(self.monomials(r)?.len())
    }

    /// Basis functions at one point.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.monomials(x.len())?.iter().map(|e| monomial(e, x)).collect())
    }

    /// `H`, the `n × p` matrix of basis functions at the design points.
    pub fn matrix(&self, design: &DesignSet) -> Result<DMatrix<f64>> {
        let mons = self.monomials(design.r())?;
        let h = DMatrix::from_fn(design.n(), mons.len(), |i, j| monomial(&mons[j], design.point(i)));
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("basis function not finite at a design point".into()));
        }
        Ok(h)
    }
}

fn monomial(e: &[u32], x: &[f64]) -> f64 {
    e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product()
}

impl FromStr for RegressionBasis {
    type Err = Error;

    /// `none`, `constant`, `linear`, or `custom:0,0;1,0;0,1` (one exponent list per function).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "none" | "zero" => return Ok(RegressionBasis::None),
            "constant" | "const" => return Ok(RegressionBasis::Constant),
            "linear" => return Ok(RegressionBasis::Linear),
            _ => {}
        }
        let Some(spec) = s.strip_prefix("custom:") else {
            return Err(Error::Input(format!("unknown basis '{s}' (none, constant, linear, custom:...)")));
        };
        let mut list = Vec::new();
        for mono in spec.split(';').filter(|m| !m.trim().is_empty()) {
            let e: std::result::Result<Vec<u32>, _> = mono.split(',').map(|t| t.trim().parse::<u32>()).collect();
            list.push(e.map_err(|err| Error::Input(format!("bad monomial '{mono}': {err}")))?);
        }
        Ok(RegressionBasis::Custom(list))
    }
}

impl fmt::Display for RegressionBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressionBasis::None => write!(f, "none"),
            RegressionBasis::Constant => write!(f, "constant"),
            RegressionBasis::Linear => write!(f, "linear"),
            RegressionBasis::Custom(list) => {
                let parts: Vec<String> = list
                    .iter()
                    .map(|e| e.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "custom:{}", parts.join(";"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords_round_trip() {
        for s in ["none", "constant", "linear", "custom:0,0;1,0;0,2"] {
            let b: RegressionBasis = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("quadratic".parse::<RegressionBasis>().is_err());
        assert!("custom:1,x".parse::<RegressionBasis>().is_err());
    }

    #[test]
    fn linear_basis_matrix() {
        let d = DesignSet::new(vec![vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let h = RegressionBasis::Linear.matrix(&d).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 1.0, 2.0, 3.0]));
        assert_eq!(RegressionBasis::None.matrix(&d).unwrap().ncols(), 0);
    }

    #[test]
    fn custom_dimension_mismatch() {
        let d = DesignSet::from_1d(&[0.0, 1.0]).unwrap();
        assert!(RegressionBasis::Custom(vec![vec![1, 0]]).matrix(&d).is_err());
        let h = RegressionBasis::Custom(vec![vec![2]]).matrix(&d).unwrap();
        assert_eq!(h.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn serde_forms() {
        let b: RegressionBasis = serde_json::from_str("\"linear\"").unwrap();
        assert_eq!(b, RegressionBasis::Linear);
        let c: RegressionBasis = serde_json::from_str("{\"custom\": [[0], [1]]}").unwrap();
        assert_eq!(c, RegressionBasis::Custom(vec![vec![0], vec![1]]));
    }
}
