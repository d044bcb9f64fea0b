use std::f64::consts::PI;

use super::PdeConfig;

/// Per-cell velocity `(a, b)` and diffusion coefficient `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl VelocityField {
    /// Spatially uniform field.
    pub fn uniform(cells: usize, a: f64, b: f64, c: f64) -> Self {
        Self {
            a: vec![a; cells],
            b: vec![b; cells],
            c: vec![c; cells],
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn max_diffusion(&self) -> f64 {
        self.c.iter().fold(0.0, |m, &c| m.max(c))
    }
}

/// `a = 0.5λ(cos y + x(2π − x) sin x) + 0.6`, `b = 2λ(cos y + sin x) + 0.8`, `c = D`.
pub fn velocity_field(cfg: &PdeConfig, coords: &[(f64, f64)]) -> VelocityField {
    let lam = cfg.lambda;
    let mut a = Vec::with_capacity(coords.len());
    let mut b = Vec::with_capacity(coords.len());
    for &(x, y) in coords {
        a.push(0.5 * lam * (y.cos() + x * (2.0 * PI - x) * x.sin()) + 0.6);
        b.push(2.0 * lam * (y.cos() + x.sin()) + 0.8);
    }
    VelocityField {
        a,
        b,
        c: vec![cfg.diff_coeff; coords.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambda_is_constant_drift() {
        let cfg = PdeConfig {
            lambda: 0.0,
            grid_n: 16,
            ..PdeConfig::meta_train()
        };
        let v = velocity_field(&cfg, &cfg.coords());
        assert!(v.a.iter().all(|&a| a == 0.6));
        assert!(v.b.iter().all(|&b| b == 0.8));
    }

    #[test]
    fn unit_lambda_at_origin() {
        let cfg = PdeConfig::meta_train();
        let v = velocity_field(&cfg, &[(0.0, 0.0)]);
        assert!((v.a[0] - 1.1).abs() < 1e-15);
        assert!((v.b[0] - 2.8).abs() < 1e-15);
    }

    #[test]
    fn meta_test_diffusion() {
        let cfg = PdeConfig::meta_test();
        assert_eq!((cfg.lambda, cfg.diff_coeff), (0.8, 0.1));
        let v = velocity_field(&cfg, &cfg.coords());
        assert!(v.c.iter().all(|&c| c == 0.1));
    }
}
