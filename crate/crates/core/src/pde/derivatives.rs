/// Spatial derivatives of one square periodic frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDerivatives {
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub uxx: Vec<f64>,
    pub uyy: Vec<f64>,
}

impl GridDerivatives {
    /// Channels in the fixed order `u_x, u_y, u_xx, u_yy`.
    pub fn channels(&self) -> [&[f64]; 4] {
        [&self.ux, &self.uy, &self.uxx, &self.uyy]
    }
}

/// Fourth-order central differences with periodic wraparound.
///
/// Written in difference form so a constant frame yields exact zeros.
pub fn compute_grid_derivatives(u: &[f64], n: usize, h: f64) -> GridDerivatives {
    assert_eq!(u.len(), n * n, "frame must be n×n");
    let at = |r: usize, c: usize| u[r * n + c];
    let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
    let (d1, d2) = (12.0 * h, 12.0 * h * h);

    let mut out = GridDerivatives {
        ux: vec![0.0; n * n],
        uy: vec![0.0; n * n],
        uxx: vec![0.0; n * n],
        uyy: vec![0.0; n * n],
    };
    for r in 0..n {
        for c in 0..n {
            let (ri, ci) = (r as isize, c as isize);
            let u0 = at(r, c);
            let (xp1, xm1) = (at(r, wrap(ci + 1)), at(r, wrap(ci - 1)));
            let (xp2, xm2) = (at(r, wrap(ci + 2)), at(r, wrap(ci - 2)));
            let (yp1, ym1) = (at(wrap(ri + 1), c), at(wrap(ri - 1), c));
            let (yp2, ym2) = (at(wrap(ri + 2), c), at(wrap(ri - 2), c));
            let i = r * n + c;
            out.ux[i] = (8.0 * (xp1 - xm1) - (xp2 - xm2)) / d1;
            out.uy[i] = (8.0 * (yp1 - ym1) - (yp2 - ym2)) / d1;
            out.uxx[i] = (16.0 * ((xp1 - u0) + (xm1 - u0)) - ((xp2 - u0) + (xm2 - u0))) / d2;
            out.uyy[i] = (16.0 * ((yp1 - u0) + (ym1 - u0)) - ((yp2 - u0) + (ym2 - u0))) / d2;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid_coords;

    const N: usize = 100;

    fn h() -> f64 {
        2.0 * std::f64::consts::PI / N as f64
    }

    fn field(f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        grid_coords(N).into_iter().map(|(x, y)| f(x, y)).collect()
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn sin_x_first_derivative() {
        let d = compute_grid_derivatives(&field(|x, _| x.sin()), N, h());
        assert!(max_err(&d.ux, &field(|x, _| x.cos())) < 1e-4);
        assert!(d.uy.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn cos_2y_second_derivative() {
        let d = compute_grid_derivatives(&field(|_, y| (2.0 * y).cos()), N, h());
        assert!(max_err(&d.uyy, &field(|_, y| -4.0 * (2.0 * y).cos())) < 1e-3);
    }

    #[test]
    fn constant_is_exactly_zero() {
        let d = compute_grid_derivatives(&vec![0.37; N * N], N, h());
        for ch in d.channels() {
            assert!(ch.iter().all(|&v| v == 0.0));
        }
    }
}
