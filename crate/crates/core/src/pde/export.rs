//! Grid field export: `meta.json` plus one `frame_NNNN.bin` per saved frame
//! holding the channels `u, u_x, u_y, u_xx, u_yy`, each `n²` little-endian
//! `f64` values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GridDerivatives, GridField, PdeConfig, SOLVER_TAG};
use crate::{Error, Result};

pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GridMeta {
    format_version: u32,
    solver: String,
    grid_n: usize,
    n_frames: usize,
    channels: Vec<String>,
    config: PdeConfig,
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.bin")
}

pub fn save_grid_field(field: &GridField, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = GridMeta {
        format_version: GRID_FORMAT_VERSION,
        solver: SOLVER_TAG.to_string(),
        grid_n: field.grid_n(),
        n_frames: field.n_frames(),
        channels: ["u", "u_x", "u_y", "u_xx", "u_yy"].map(String::from).to_vec(),
        config: field.config.clone(),
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;

    for (t, (u, d)) in field.frames.iter().zip(&field.derivs).enumerate() {
        let mut bytes = Vec::with_capacity(5 * u.len() * 8);
        for ch in [u.as_slice(), &d.ux, &d.uy, &d.uxx, &d.uyy] {
            for v in ch {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(frame_name(t));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_grid_field(dir: &Path) -> Result<GridField> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: GridMeta = serde_json::from_str(&text)?;
    if meta.format_version != GRID_FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", meta.format_version)));
    }
    let cells = meta.grid_n * meta.grid_n;
    let mut frames = Vec::with_capacity(meta.n_frames);
    let mut derivs = Vec::with_capacity(meta.n_frames);
    for t in 0..meta.n_frames {
        let path = dir.join(frame_name(t));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != 5 * cells * 8 {
            return Err(Error::format(&path, "unexpected frame size"));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut ch = vals.chunks_exact(cells).map(<[f64]>::to_vec);
        frames.push(ch.next().expect("u"));
        derivs.push(GridDerivatives {
            ux: ch.next().expect("u_x"),
            uy: ch.next().expect("u_y"),
            uxx: ch.next().expect("u_xx"),
            uyy: ch.next().expect("u_yy"),
        });
    }
    Ok(GridField {
        config: meta.config,
        frames,
        derivs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::simulate;

    #[test]
    fn export_round_trip() {
        let cfg = PdeConfig {
            grid_n: 16,
            dt_solver: 5e-3,
            n_frames: 3,
            fourier_cutoff: 2,
            ..PdeConfig::meta_train()
        };
        let g = simulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_grid_field(&g, dir.path()).unwrap();
        assert_eq!(load_grid_field(dir.path()).unwrap(), g);
    }
}
