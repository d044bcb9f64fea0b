//! Classical finite differences: exact stencil coefficients from the moment
//! system, and a least-squares derivative baseline on irregular graphs.

mod baseline;
mod linalg;

use serde::{Deserialize, Serialize};

pub use baseline::{graph_fdm_baseline, FdmEstimate};
pub use linalg::solve_dense;

use crate::{Error, Result};

/// Spatial derivative operator; the discriminant is the auxiliary label channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivOp {
    Dx = 0,
    Dy = 1,
    Dxx = 2,
    Dyy = 3,
}

impl DerivOp {
    pub const ALL: [DerivOp; 4] = [DerivOp::Dx, DerivOp::Dy, DerivOp::Dxx, DerivOp::Dyy];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn order(self) -> usize {
        match self {
            DerivOp::Dx | DerivOp::Dy => 1,
            DerivOp::Dxx | DerivOp::Dyy => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivOp::Dx => "dx",
            DerivOp::Dy => "dy",
            DerivOp::Dxx => "dxx",
            DerivOp::Dyy => "dyy",
        }
    }
}

impl std::str::FromStr for DerivOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DerivOp::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown derivative operator `{s}`")))
    }
}

/// `n`-point stencil for the `order`-th derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub offsets: Vec<f64>,
    pub order: usize,
    pub coeffs: Vec<f64>,
}

impl Stencil {
    /// Residuals `Σ α_i s_i^m − d!·[m = d]` for `m = 0..n`.
    pub fn moment_residuals(&self) -> Vec<f64> {
        let fact: f64 = (1..=self.order).map(|i| i as f64).product();
        (0..self.offsets.len())
            .map(|m| {
                let s: f64 = self
                    .offsets
                    .iter()
                    .zip(&self.coeffs)
                    .map(|(o, a)| a * o.powi(m as i32))
                    .sum();
                s - if m == self.order { fact } else { 0.0 }
            })
            .collect()
    }
}

/// Solve the Vandermonde moment system `Σ α_i s_i^m = d!·[m = d]`, `m < n`.
pub fn solve_coefficients(offsets: &[f64], order: usize) -> Result<Stencil> {
    let n = offsets.len();
    if n <= order {
        return Err(Error::Invalid(format!(
            "{n} offsets cannot resolve a derivative of order {order}"
        )));
    }
    for (i, a) in offsets.iter().enumerate() {
        if offsets[..i].contains(a) {
            return Err(Error::Singular(format!("duplicate offset {a}")));
        }
    }
    let mut mat = vec![0.0; n * n];
    for m in 0..n {
        for (i, &s) in offsets.iter().enumerate() {
            mat[m * n + i] = s.powi(m as i32);
        }
    }
    let mut rhs = vec![0.0; n];
    rhs[order] = (1..=order).map(|i| i as f64).product();
    let coeffs = solve_dense(mat, rhs, n)?;
    Ok(Stencil {
        offsets: offsets.to_vec(),
        order,
        coeffs,
    })
}

/// `Σ α_i u_i`.
pub fn apply_stencil(stencil: &Stencil, samples: &[f64]) -> Result<f64> {
    if samples.len() != stencil.coeffs.len() {
        return Err(Error::Invalid(format!(
            "stencil has {} points but {} samples were given",
            stencil.coeffs.len(),
            samples.len()
        )));
    }
    Ok(stencil.coeffs.iter().zip(samples).map(|(a, u)| a * u).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn central_first_and_second() {
        let h = 0.1;
        let s1 = solve_coefficients(&[-h, 0.0, h], 1).unwrap();
        assert!(close(&s1.coeffs, &[-1.0 / (2.0 * h), 0.0, 1.0 / (2.0 * h)], 1e-10));
        let s2 = solve_coefficients(&[-h, 0.0, h], 2).unwrap();
        assert!(close(&s2.coeffs, &[1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)], 1e-9));
    }

    #[test]
    fn two_point_slope() {
        let s = solve_coefficients(&[0.0, 1.0], 1).unwrap();
        assert!(close(&s.coeffs, &[-1.0, 1.0], 1e-15));
    }

    #[test]
    fn duplicate_offsets_and_low_n_are_errors() {
        assert!(matches!(solve_coefficients(&[0.0, 1.0, 1.0], 1), Err(Error::Singular(_))));
        assert!(solve_coefficients(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn polynomial_exactness() {
        let h = 0.5;
        let s2 = solve_coefficients(&[-h, 0.0, h], 2).unwrap();
        let sq: Vec<f64> = s2.offsets.iter().map(|x| x * x).collect();
        assert_eq!(apply_stencil(&s2, &sq).unwrap(), 2.0);
        let s1 = solve_coefficients(&[-h, 0.0, h], 1).unwrap();
        assert_eq!(apply_stencil(&s1, &s1.offsets).unwrap(), 1.0);
        let c = apply_stencil(&s2, &[3.3, 3.3, 3.3]).unwrap();
        assert!(c.abs() <= 1e-12 * 8.0);
        assert!(apply_stencil(&s2, &[1.0]).is_err());
    }

    #[test]
    fn operator_names_round_trip() {
        for op in DerivOp::ALL {
            assert_eq!(op.name().parse::<DerivOp>().unwrap(), op);
        }
    }
}
