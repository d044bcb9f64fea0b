//! Periodic 2-D convection-diffusion simulation on a fine regular grid.
//!
//! The domain is `[0, 2π)²` with `grid_n` cells per axis. Grid arrays are
//! row-major with the row indexing `y` and the column indexing `x`, so cell
//! `(row, col)` sits at `(2π·col/n, 2π·row/n)`.

mod derivatives;
mod export;
mod initial;
mod solver;
mod velocity;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use derivatives::{compute_grid_derivatives, GridDerivatives};
pub use export::{load_grid_field, save_grid_field, GRID_FORMAT_VERSION};
pub use initial::{fourier_initial_condition, FourierCoefficients};
pub use solver::{max_stable_dt, simulate, simulate_from, step, CFL_SAFETY};
pub use velocity::{velocity_field, VelocityField};

use crate::{Error, Result};

/// Sign in front of the convection term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionSign {
    /// `du/dt = +v·∇u + c∇²u`.
    #[default]
    Plus,
    /// Textbook transport form `du/dt = −v·∇u + c∇²u`.
    Minus,
}

impl ConvectionSign {
    pub fn factor(self) -> f64 {
        match self {
            ConvectionSign::Plus => 1.0,
            ConvectionSign::Minus => -1.0,
        }
    }
}

/// How `coeff_scale` parameterizes the normal law of the Fourier coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffScale {
    #[default]
    StdDev,
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    /// Velocity scale λ.
    pub lambda: f64,
    /// Diffusion coefficient D.
    pub diff_coeff: f64,
    /// Largest |k|, |l| in the initial Fourier sum.
    pub fourier_cutoff: u32,
    pub coeff_scale: f64,
    pub coeff_scale_kind: CoeffScale,
    pub convection_sign: ConvectionSign,
    pub grid_n: usize,
    pub dt_solver: f64,
    pub dt_save: f64,
    pub n_frames: usize,
    pub seed: u64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self::meta_train()
    }
}

impl PdeConfig {
    /// Meta-train family: λ = 1, D = 0.2 on a 100×100 grid, 20 frames 0.01 apart.
    ///
    /// The solver step is 2e-3: the explicit stability guard at D = 0.2 and
    /// h = 2π/100 admits at most ≈2.47e-3.
    pub fn meta_train() -> Self {
        Self {
            lambda: 1.0,
            diff_coeff: 0.2,
            fourier_cutoff: 9,
            coeff_scale: 0.02,
            coeff_scale_kind: CoeffScale::StdDev,
            convection_sign: ConvectionSign::Plus,
            grid_n: 100,
            dt_solver: 2e-3,
            dt_save: 0.01,
            n_frames: 20,
            seed: 0,
        }
    }

    /// Meta-test family: λ = 0.8, D = 0.1.
    pub fn meta_test() -> Self {
        Self {
            lambda: 0.8,
            diff_coeff: 0.1,
            ..Self::meta_train()
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.grid_n as f64
    }

    /// Solver steps between saved frames.
    pub fn steps_per_frame(&self) -> usize {
        (self.dt_save / self.dt_solver).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 16 {
            return Err(Error::Invalid(format!("grid_n must be >= 16, got {}", self.grid_n)));
        }
        if !(self.dt_solver > 0.0) || !(self.dt_save > 0.0) {
            return Err(Error::Invalid("dt_solver and dt_save must be > 0".into()));
        }
        let ratio = self.dt_save / self.dt_solver;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Invalid(format!(
                "dt_save {} is not an integer multiple of dt_solver {}",
                self.dt_save, self.dt_solver
            )));
        }
        if !(self.diff_coeff >= 0.0) {
            return Err(Error::Invalid("diff_coeff must be >= 0".into()));
        }
        if !(self.coeff_scale >= 0.0) {
            return Err(Error::Invalid("coeff_scale must be >= 0".into()));
        }
        if self.n_frames == 0 {
            return Err(Error::Invalid("n_frames must be >= 1".into()));
        }
        Ok(())
    }

    /// Grid coordinates `(x, y)` of every cell in row-major order.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        grid_coords(self.grid_n)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn grid_coords(n: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * PI / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            out.push((col as f64 * h, row as f64 * h));
        }
    }
    out
}

/// Time-sampled simulation output with ground-truth spatial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub config: PdeConfig,
    /// `frames[t][row * n + col]`.
    pub frames: Vec<Vec<f64>>,
    pub derivs: Vec<GridDerivatives>,
}

impl GridField {
    pub fn grid_n(&self) -> usize {
        self.config.grid_n
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn dt_save(&self) -> f64 {
        self.config.dt_save
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        grid_coords(self.grid_n())
    }
}

/// Tag written into exported metadata describing the discretization.
pub const SOLVER_TAG: &str = "FD-solver: RK4, 2nd-order central differences; labels 4th-order central";
