use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CoeffScale, PdeConfig};

/// Coefficients of the initial double Fourier sum, one `(k, l, λ, γ)` per
/// integer pair with `|k|, |l| <= F`, in `k`-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierCoefficients {
    pub terms: Vec<(i32, i32, f64, f64)>,
}

impl FourierCoefficients {
    pub fn draw<R: Rng + ?Sized>(cfg: &PdeConfig, rng: &mut R) -> Self {
        let f = cfg.fourier_cutoff as i32;
        let std = match cfg.coeff_scale_kind {
            CoeffScale::StdDev => cfg.coeff_scale,
            CoeffScale::Variance => cfg.coeff_scale.sqrt(),
        };
        let normal = Normal::new(0.0, std).expect("finite non-negative std");
        let mut terms = Vec::with_capacity(((2 * f + 1) * (2 * f + 1)) as usize);
        for k in -f..=f {
            for l in -f..=f {
                let lam = normal.sample(rng);
                let gam = normal.sample(rng);
                terms.push((k, l, lam, gam));
            }
        }
        Self { terms }
    }

    /// `u(x, y) = Σ λ cos(kx + ly) + γ sin(kx + ly)`, evaluated at every cell.
    pub fn evaluate(&self, n: usize) -> Vec<f64> {
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let kmax = self
            .terms
            .iter()
            .map(|t| t.0.unsigned_abs().max(t.1.unsigned_abs()))
            .max()
            .unwrap_or(0) as i32;
        let width = (2 * kmax + 1) as usize;
        // trig[idx * width + (k + kmax)] = (cos, sin) of k·(2π idx / n)
        let mut trig = vec![(0.0, 0.0); n * width];
        for idx in 0..n {
            let z = idx as f64 * h;
            for k in -kmax..=kmax {
                let a = k as f64 * z;
                trig[idx * width + (k + kmax) as usize] = (a.cos(), a.sin());
            }
        }
        let mut u = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                let mut acc = 0.0;
                for &(k, l, lam, gam) in &self.terms {
                    let (cx, sx) = trig[col * width + (k + kmax) as usize];
                    let (cy, sy) = trig[row * width + (l + kmax) as usize];
                    let c = cx * cy - sx * sy;
                    let s = sx * cy + cx * sy;
                    acc += lam * c + gam * s;
                }
                u[row * n + col] = acc;
            }
        }
        u
    }
}

/// Initial field `u(0, ·)` and the coefficient draws that produced it.
pub fn fourier_initial_condition<R: Rng + ?Sized>(
    cfg: &PdeConfig,
    rng: &mut R,
) -> (Vec<f64>, FourierCoefficients) {
    let coeffs = FourierCoefficients::draw(cfg, rng);
    (coeffs.evaluate(cfg.grid_n), coeffs)
}
