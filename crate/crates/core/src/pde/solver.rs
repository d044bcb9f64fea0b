use super::{
    compute_grid_derivatives, fourier_initial_condition, velocity_field, GridField, PdeConfig,
    VelocityField,
};
use crate::{seed, Error, Result};

/// Safety factor applied to the explicit stability bound.
pub const CFL_SAFETY: f64 = 0.5;

/// `CFL_SAFETY · min(h²/(4D), h/max|v|)`; infinite when both terms vanish.
pub fn max_stable_dt(vel: &VelocityField, h: f64) -> f64 {
    let d = vel.max_diffusion();
    let s = vel.max_speed();
    let diff = if d > 0.0 { h * h / (4.0 * d) } else { f64::INFINITY };
    let adv = if s > 0.0 { h / s } else { f64::INFINITY };
    CFL_SAFETY * diff.min(adv)
}

/// Right-hand side `sign·(a u_x + b u_y) + c (u_xx + u_yy)` with second-order
/// central differences on the periodic grid.
fn rhs(u: &[f64], vel: &VelocityField, n: usize, h: f64, sign: f64, out: &mut [f64]) {
    let inv2h = 1.0 / (2.0 * h);
    let invh2 = 1.0 / (h * h);
    for r in 0..n {
        let rp = if r + 1 == n { 0 } else { r + 1 };
        let rm = if r == 0 { n - 1 } else { r - 1 };
        for c in 0..n {
            let cp = if c + 1 == n { 0 } else { c + 1 };
            let cm = if c == 0 { n - 1 } else { c - 1 };
            let i = r * n + c;
            let u0 = u[i];
            let (e, w) = (u[r * n + cp], u[r * n + cm]);
            let (nn, s) = (u[rp * n + c], u[rm * n + c]);
            let ux = (e - w) * inv2h;
            let uy = (nn - s) * inv2h;
            let lap = ((e - u0) + (w - u0) + (nn - u0) + (s - u0)) * invh2;
            out[i] = sign * (vel.a[i] * ux + vel.b[i] * uy) + vel.c[i] * lap;
        }
    }
}

/// One classical RK4 step of size `cfg.dt_solver`.
pub fn step(u: &[f64], vel: &VelocityField, cfg: &PdeConfig) -> Result<Vec<f64>> {
    let n = cfg.grid_n;
    let h = cfg.spacing();
    let dt = cfg.dt_solver;
    let max_dt = max_stable_dt(vel, h);
    if dt > max_dt {
        return Err(Error::Unstable { dt, max_dt });
    }
    rk4(u, vel, n, h, dt, cfg.convection_sign.factor())
}

fn rk4(u: &[f64], vel: &VelocityField, n: usize, h: f64, dt: f64, sign: f64) -> Result<Vec<f64>> {
    let len = u.len();
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut tmp = vec![0.0; len];

    rhs(u, vel, n, h, sign, &mut k1);
    for i in 0..len {
        tmp[i] = u[i] + 0.5 * dt * k1[i];
    }
    rhs(&tmp, vel, n, h, sign, &mut k2);
    for i in 0..len {
        tmp[i] = u[i] + 0.5 * dt * k2[i];
    }
    rhs(&tmp, vel, n, h, sign, &mut k3);
    for i in 0..len {
        tmp[i] = u[i] + dt * k3[i];
    }
    rhs(&tmp, vel, n, h, sign, &mut k4);

    let mut next = Vec::with_capacity(len);
    for i in 0..len {
        let v = u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if !v.is_finite() {
            return Err(Error::NonFinite("convection-diffusion step".into()));
        }
        next.push(v);
    }
    Ok(next)
}

/// Simulate from an explicit initial field and velocity.
pub fn simulate_from(cfg: &PdeConfig, u0: Vec<f64>, vel: &VelocityField) -> Result<GridField> {
    cfg.validate()?;
    let n = cfg.grid_n;
    if u0.len() != n * n {
        return Err(Error::Invalid(format!(
            "initial field has {} cells, expected {}",
            u0.len(),
            n * n
        )));
    }
    let h = cfg.spacing();
    let max_dt = max_stable_dt(vel, h);
    if cfg.dt_solver > max_dt {
        return Err(Error::Unstable {
            dt: cfg.dt_solver,
            max_dt,
        });
    }
    let per = cfg.steps_per_frame();
    let sign = cfg.convection_sign.factor();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut u = u0;
    frames.push(u.clone());
    while frames.len() < cfg.n_frames {
        for _ in 0..per {
            u = rk4(&u, vel, n, h, cfg.dt_solver, sign)?;
        }
        frames.push(u.clone());
    }
    let derivs = frames
        .iter()
        .map(|f| compute_grid_derivatives(f, n, h))
        .collect();
    Ok(GridField {
        config: cfg.clone(),
        frames,
        derivs,
    })
}

/// Full simulation: Fourier initial condition seeded from `cfg.seed`, the
/// configured velocity family, and `n_frames` saved frames.
pub fn simulate(cfg: &PdeConfig) -> Result<GridField> {
    cfg.validate()?;
    let mut rng = seed::derived_rng(cfg.seed, &["initial-condition"]);
    let (u0, _) = fourier_initial_condition(cfg, &mut rng);
    let vel = velocity_field(cfg, &cfg.coords());
    simulate_from(cfg, u0, &vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid_coords;

    fn small() -> PdeConfig {
        PdeConfig {
            grid_n: 32,
            dt_solver: 5e-3,
            fourier_cutoff: 3,
            n_frames: 4,
            ..PdeConfig::meta_train()
        }
    }

    #[test]
    fn constant_field_unchanged() {
        let cfg = small();
        let vel = velocity_field(&cfg, &cfg.coords());
        let u = vec![1.25; 32 * 32];
        assert_eq!(step(&u, &vel, &cfg).unwrap(), u);
    }

    #[test]
    fn unstable_step_names_limit() {
        let cfg = PdeConfig {
            dt_solver: 5e-3,
            ..PdeConfig::meta_train()
        };
        let vel = velocity_field(&cfg, &cfg.coords());
        let err = step(&vec![0.0; 100 * 100], &vel, &cfg).unwrap_err();
        match err {
            Error::Unstable { max_dt, .. } => {
                let h = cfg.spacing();
                assert!((max_dt - 0.5 * h * h / 0.8).abs() < 1e-15);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn single_frame_is_initial_condition() {
        let cfg = PdeConfig {
            n_frames: 1,
            ..small()
        };
        let g = simulate(&cfg).unwrap();
        assert_eq!(g.frames.len(), 1);
        assert_eq!(g.derivs.len(), 1);
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        assert_eq!(a, b);
        let c = simulate(&PdeConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn heat_equation_sine_decay() {
        let cfg = PdeConfig {
            grid_n: 100,
            dt_solver: 2e-3,
            dt_save: 0.02,
            n_frames: 6,
            diff_coeff: 0.2,
            ..PdeConfig::meta_train()
        };
        let vel = VelocityField::uniform(100 * 100, 0.0, 0.0, 0.2);
        let u0 = grid_coords(100).into_iter().map(|(x, _)| x.sin()).collect();
        let g = simulate_from(&cfg, u0, &vel).unwrap();
        let amp = g.frames[5][25]; // x = π/2
        let expect = (-0.2f64 * 0.1).exp();
        assert!((amp / expect - 1.0).abs() < 0.01);
    }

    #[test]
    fn invalid_save_interval_rejected() {
        let cfg = PdeConfig {
            dt_solver: 3e-3,
            ..small()
        };
        assert!(simulate(&cfg).is_err());
    }
}
