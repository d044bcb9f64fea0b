use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{knn_graph, Metric, SpatialGraph};
use crate::pde::{simulate, GridField, PdeConfig};
use crate::{seed, Error, Result};

/// Where a task's data came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub source: String,
    pub pde_hash: Option<String>,
    pub pde: Option<PdeConfig>,
    pub sampling_seed: Option<u64>,
    /// Grid cell index of each node in the source simulation.
    pub cells: Option<Vec<usize>>,
}

/// One meta-learning task: a sensor graph with per-frame signals, optional
/// auxiliary derivative labels and extra features, and a k-shot split.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub id: String,
    pub graph: SpatialGraph,
    /// `frames[t][node]`.
    pub frames: Vec<Vec<f64>>,
    /// `aux[t][node] = [u_x, u_y, u_xx, u_yy]`.
    pub aux: Option<Vec<Vec<[f64; 4]>>>,
    /// `features[t][node][f]`, observed extra inputs.
    pub features: Option<Vec<Vec<Vec<f64>>>>,
    pub dt: f64,
    pub split_k: usize,
    pub provenance: Provenance,
}

impl TaskDataset {
    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_features(&self) -> usize {
        self.features
            .as_ref()
            .and_then(|f| f.first())
            .and_then(|f| f.first())
            .map_or(0, Vec::len)
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    /// Number of test frames `T − split_k`.
    pub fn n_test(&self) -> usize {
        self.n_frames() - self.split_k
    }

    /// Same task with a different shot count.
    pub fn with_split(&self, split_k: usize) -> Result<Self> {
        let mut t = self.clone();
        t.split_k = split_k;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n) = (self.n_frames(), self.n_nodes());
        if self.split_k < 1 || self.split_k + 1 > t {
            return Err(Error::Invalid(format!(
                "split_k = {} must lie in 1..={} for {t} frames",
                self.split_k,
                t.saturating_sub(1)
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.frames.iter().any(|f| f.len() != n) {
            return Err(Error::Invalid("frame length differs from node count".into()));
        }
        if let Some(aux) = &self.aux {
            if aux.len() != t || aux.iter().any(|a| a.len() != n) {
                return Err(Error::Invalid("aux labels do not match frames".into()));
            }
        }
        if let Some(feat) = &self.features {
            let f = self.n_features();
            if feat.len() != t || feat.iter().any(|x| x.len() != n || x.iter().any(|v| v.len() != f))
            {
                return Err(Error::Invalid("features do not match frames".into()));
            }
        }
        self.graph.validate()
    }

    /// SHA-256 over the canonical task files.
    pub fn hash(&self) -> String {
        super::io::task_hash(self)
    }
}

/// `n_nodes` distinct grid cells chosen uniformly without replacement.
pub fn sample_nodes<R: Rng + ?Sized>(grid: &GridField, n_nodes: usize, rng: &mut R) -> Result<Vec<usize>> {
    let cells = grid.grid_n() * grid.grid_n();
    if n_nodes > cells {
        return Err(Error::Invalid(format!(
            "cannot sample {n_nodes} nodes from {cells} grid cells"
        )));
    }
    Ok(rand::seq::index::sample(rng, cells, n_nodes).into_vec())
}

/// Sample sensors from a simulation, connect them by k-NN and attach
/// per-frame signals and derivative labels.
pub fn build_task<R: Rng + ?Sized>(
    grid: &GridField,
    n_nodes: usize,
    k_neighbors: usize,
    split_k: usize,
    rng: &mut R,
) -> Result<TaskDataset> {
    build_task_with(grid, n_nodes, k_neighbors, split_k, Metric::Euclidean, rng)
}

pub fn build_task_with<R: Rng + ?Sized>(
    grid: &GridField,
    n_nodes: usize,
    k_neighbors: usize,
    split_k: usize,
    metric: Metric,
    rng: &mut R,
) -> Result<TaskDataset> {
    let cells = sample_nodes(grid, n_nodes, rng)?;
    let coords = grid.coords();
    let nodes: Vec<_> = cells.iter().map(|&c| coords[c]).collect();
    let graph = knn_graph(&nodes, k_neighbors, metric)?;
    let frames = grid
        .frames
        .iter()
        .map(|f| cells.iter().map(|&c| f[c]).collect())
        .collect();
    let aux = grid
        .derivs
        .iter()
        .map(|d| cells.iter().map(|&c| [d.ux[c], d.uy[c], d.uxx[c], d.uyy[c]]).collect())
        .collect();
    let task = TaskDataset {
        id: String::new(),
        graph,
        frames,
        aux: Some(aux),
        features: None,
        dt: grid.dt_save(),
        split_k,
        provenance: Provenance {
            source: "synthetic".into(),
            pde_hash: Some(grid.config.hash()),
            pde: Some(grid.config.clone()),
            sampling_seed: None,
            cells: Some(cells),
        },
    };
    task.validate()?;
    Ok(task)
}

/// Small task with a closed-form signal: a few decaying travelling plane
/// waves on uniformly random points in `[0, 2π)²`, with exact derivative
/// labels. Used for gradient checks and property tests.
pub fn analytic_task(n_nodes: usize, k_neighbors: usize, n_frames: usize, split_k: usize, seed: u64) -> Result<TaskDataset> {
    let mut rng = seed::rng(seed);
    let tau = std::f64::consts::TAU;
    let nodes: Vec<_> = (0..n_nodes)
        .map(|_| (rng.random_range(0.0..tau), rng.random_range(0.0..tau)))
        .collect();
    let graph = knn_graph(&nodes, k_neighbors, Metric::Euclidean)?;
    // (amplitude, kx, ky, phase, angular speed)
    let waves: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..0.6),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..tau),
                rng.random_range(-2.0..2.0),
            )
        })
        .collect();
    let (dt, decay) = (0.05, 0.1);
    let mut frames = Vec::with_capacity(n_frames);
    let mut aux = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let time = t as f64 * dt;
        let (mut f, mut a) = (Vec::with_capacity(n_nodes), Vec::with_capacity(n_nodes));
        for &(x, y) in &nodes {
            let (mut u, mut d) = (0.0, [0.0; 4]);
            for &(amp, kx, ky, ph, w) in &waves {
                let env = amp * (-decay * (kx * kx + ky * ky) * time).exp();
                let arg = kx * x + ky * y - w * time + ph;
                let (s, c) = arg.sin_cos();
                u += env * s;
                d[0] += env * kx * c;
                d[1] += env * ky * c;
                d[2] -= env * kx * kx * s;
                d[3] -= env * ky * ky * s;
            }
            f.push(u);
            a.push(d);
        }
        frames.push(f);
        aux.push(a);
    }
    let task = TaskDataset {
        id: format!("analytic-{seed}"),
        graph,
        frames,
        aux: Some(aux),
        features: None,
        dt,
        split_k,
        provenance: Provenance {
            source: "analytic".into(),
            ..Provenance::default()
        },
    };
    task.validate()?;
    Ok(task)
}

/// Configuration of one task family (meta-train or meta-test suite).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub name: String,
    pub pde: PdeConfig,
    /// Inclusive node-count range; each task draws uniformly from it.
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub k_neighbors: usize,
    pub split_k: usize,
    pub metric: Metric,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            name: "meta-train".into(),
            pde: PdeConfig::meta_train(),
            nodes_min: 246,
            nodes_max: 246,
            k_neighbors: 4,
            split_k: 5,
            metric: Metric::Euclidean,
        }
    }
}

impl FamilyConfig {
    pub fn meta_test() -> Self {
        Self {
            name: "meta-test".into(),
            pde: PdeConfig::meta_test(),
            nodes_min: 150,
            nodes_max: 400,
            ..Self::default()
        }
    }
}

/// `m` tasks from independent simulation seeds derived from `master_seed`.
///
/// Tasks are simulated in parallel; output order and content depend only on
/// the configuration and seed.
pub fn make_meta_suite(family: &FamilyConfig, m: usize, master_seed: u64) -> Result<Vec<TaskDataset>> {
    if m == 0 {
        return Err(Error::Invalid("a suite needs at least one task".into()));
    }
    if family.nodes_min > family.nodes_max {
        return Err(Error::Invalid("nodes_min exceeds nodes_max".into()));
    }
    (0..m)
        .into_par_iter()
        .map(|i| {
            let tag = i.to_string();
            let pde = PdeConfig {
                seed: seed::derive(master_seed, &[&family.name, "simulation", &tag]),
                ..family.pde.clone()
            };
            let sampling_seed = seed::derive(master_seed, &[&family.name, "sampling", &tag]);
            let mut rng = seed::rng(sampling_seed);
            let n_nodes = rng.random_range(family.nodes_min..=family.nodes_max);
            let grid = simulate(&pde)?;
            let mut task = build_task_with(
                &grid,
                n_nodes,
                family.k_neighbors,
                family.split_k,
                family.metric,
                &mut rng,
            )?;
            task.id = format!("{}-{i:04}", family.name);
            task.provenance.sampling_seed = Some(sampling_seed);
            Ok(task)
        })
        .collect()
}
