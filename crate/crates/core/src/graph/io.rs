//! Task directory format.
//!
//! ```text
//! <task>/nodes.csv     id,x,y
//! <task>/edges.csv     src,dst
//! <task>/frames.csv    t_index,node_id,u,u_x,u_y,u_xx,u_yy   (label columns may be empty)
//! <task>/features.csv  t_index,node_id,f0,f1,...            (optional)
//! <task>/meta.json
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips `f64`
//! exactly. External datasets are ingested by writing these files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FamilyConfig, Provenance, SpatialGraph, TaskDataset};
use crate::{Error, Result};

pub const TASK_FORMAT_VERSION: u32 = 1;

/// `f64` as text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskMeta {
    pub format_version: u32,
    pub id: String,
    #[serde(rename = "T")]
    pub n_frames: usize,
    #[serde(rename = "N")]
    pub n_nodes: usize,
    pub dt: f64,
    pub split_k: usize,
    pub k_neighbors: usize,
    pub has_aux: bool,
    pub n_features: usize,
    pub provenance: Provenance,
}

fn render(task: &TaskDataset) -> Result<Vec<(&'static str, String)>> {
    let mut nodes = String::from("id,x,y\n");
    for (i, &(x, y)) in task.graph.nodes.iter().enumerate() {
        nodes.push_str(&format!("{i},{},{}\n", fmt_f64(x), fmt_f64(y)));
    }
    let mut edges = String::from("src,dst\n");
    for &(s, d) in &task.graph.edges {
        edges.push_str(&format!("{s},{d}\n"));
    }
    let mut frames = String::from("t_index,node_id,u,u_x,u_y,u_xx,u_yy\n");
    for (t, f) in task.frames.iter().enumerate() {
        for (i, &u) in f.iter().enumerate() {
            frames.push_str(&format!("{t},{i},{}", fmt_f64(u)));
            match &task.aux {
                Some(aux) => {
                    for v in aux[t][i] {
                        frames.push(',');
                        frames.push_str(&fmt_f64(v));
                    }
                }
                None => frames.push_str(",,,,"),
            }
            frames.push('\n');
        }
    }
    let meta = TaskMeta {
        format_version: TASK_FORMAT_VERSION,
        id: task.id.clone(),
        n_frames: task.n_frames(),
        n_nodes: task.n_nodes(),
        dt: task.dt,
        split_k: task.split_k,
        k_neighbors: task.graph.k_neighbors,
        has_aux: task.has_aux(),
        n_features: task.n_features(),
        provenance: task.provenance.clone(),
    };
    let mut files = vec![
        ("nodes.csv", nodes),
        ("edges.csv", edges),
        ("frames.csv", frames),
        ("meta.json", serde_json::to_string_pretty(&meta)? + "\n"),
    ];
    if let Some(feat) = &task.features {
        let nf = task.n_features();
        let mut s = String::from("t_index,node_id");
        for f in 0..nf {
            s.push_str(&format!(",f{f}"));
        }
        s.push('\n');
        for (t, fr) in feat.iter().enumerate() {
            for (i, row) in fr.iter().enumerate() {
                s.push_str(&format!("{t},{i}"));
                for &v in row {
                    s.push(',');
                    s.push_str(&fmt_f64(v));
                }
                s.push('\n');
            }
        }
        files.push(("features.csv", s));
    }
    Ok(files)
}

pub(crate) fn task_hash(task: &TaskDataset) -> String {
    let mut h = Sha256::new();
    for (name, body) in render(task).expect("task renders") {
        h.update(name.as_bytes());
        h.update((body.len() as u64).to_le_bytes());
        h.update(body.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn save_task(task: &TaskDataset, dir: &Path) -> Result<()> {
    task.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in render(task)? {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rdr.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::format(path, format!("missing column {i} in {rec:?}")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("cannot parse `{s}` in column {i}")))
}

pub fn load_task(dir: &Path) -> Result<TaskDataset> {
    let mp = dir.join("meta.json");
    let meta: TaskMeta = serde_json::from_str(
        &fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?,
    )
    .map_err(|e| Error::format(&mp, e.to_string()))?;
    if meta.format_version != TASK_FORMAT_VERSION {
        return Err(Error::format(&mp, format!("unsupported version {}", meta.format_version)));
    }
    let (n, t) = (meta.n_nodes, meta.n_frames);

    let np = dir.join("nodes.csv");
    let mut nodes = vec![(f64::NAN, f64::NAN); n];
    for rec in read_csv(&np)? {
        let id: usize = field(&np, &rec, 0)?;
        if id >= n {
            return Err(Error::format(&np, format!("node id {id} out of range")));
        }
        nodes[id] = (field(&np, &rec, 1)?, field(&np, &rec, 2)?);
    }
    if nodes.iter().any(|p| p.0.is_nan()) {
        return Err(Error::format(&np, "missing node rows"));
    }

    let ep = dir.join("edges.csv");
    let edges = read_csv(&ep)?
        .iter()
        .map(|r| Ok((field(&ep, r, 0)?, field(&ep, r, 1)?)))
        .collect::<Result<Vec<(usize, usize)>>>()?;

    let fp = dir.join("frames.csv");
    let mut frames = vec![vec![f64::NAN; n]; t];
    let mut aux = if meta.has_aux {
        Some(vec![vec![[f64::NAN; 4]; n]; t])
    } else {
        None
    };
    for rec in read_csv(&fp)? {
        let (ti, i): (usize, usize) = (field(&fp, &rec, 0)?, field(&fp, &rec, 1)?);
        if ti >= t || i >= n {
            return Err(Error::format(&fp, format!("row ({ti},{i}) out of range")));
        }
        frames[ti][i] = field(&fp, &rec, 2)?;
        if let Some(a) = aux.as_mut() {
            for c in 0..4 {
                a[ti][i][c] = field(&fp, &rec, 3 + c)?;
            }
        }
    }
    if frames.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::format(&fp, "missing frame rows"));
    }

    let features = if meta.n_features > 0 {
        let pp = dir.join("features.csv");
        let mut feat = vec![vec![vec![f64::NAN; meta.n_features]; n]; t];
        for rec in read_csv(&pp)? {
            let (ti, i): (usize, usize) = (field(&pp, &rec, 0)?, field(&pp, &rec, 1)?);
            if ti >= t || i >= n {
                return Err(Error::format(&pp, format!("row ({ti},{i}) out of range")));
            }
            for f in 0..meta.n_features {
                feat[ti][i][f] = field(&pp, &rec, 2 + f)?;
            }
        }
        Some(feat)
    } else {
        None
    };

    let task = TaskDataset {
        id: meta.id,
        graph: SpatialGraph {
            nodes,
            edges,
            k_neighbors: meta.k_neighbors,
        },
        frames,
        aux,
        features,
        dt: meta.dt,
        split_k: meta.split_k,
        provenance: meta.provenance,
    };
    task.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(task)
}

/// Suite manifest written next to the task directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub format_version: u32,
    pub family: FamilyConfig,
    pub master_seed: u64,
    pub task_count: usize,
    pub config_hash: String,
    pub tasks: Vec<SuiteEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub id: String,
    pub dir: String,
    pub hash: String,
}

impl SuiteManifest {
    /// SHA-256 of the manifest's canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("manifest serializes")))
    }
}

pub fn save_suite(tasks: &[TaskDataset], family: &FamilyConfig, master_seed: u64, dir: &Path) -> Result<SuiteManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tasks.len());
    for t in tasks {
        let sub = t.id.clone();
        save_task(t, &dir.join(&sub))?;
        entries.push(SuiteEntry {
            id: t.id.clone(),
            dir: sub,
            hash: t.hash(),
        });
    }
    let config_hash = hex::encode(Sha256::digest(serde_json::to_vec(&(family, master_seed))?));
    let manifest = SuiteManifest {
        format_version: TASK_FORMAT_VERSION,
        family: family.clone(),
        master_seed,
        task_count: tasks.len(),
        config_hash,
        tasks: entries,
    };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

pub fn load_suite(dir: &Path) -> Result<(SuiteManifest, Vec<TaskDataset>)> {
    let p = dir.join("manifest.json");
    let manifest: SuiteManifest =
        serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
            .map_err(|e| Error::format(&p, e.to_string()))?;
    let tasks = manifest
        .tasks
        .iter()
        .map(|e| load_task(&dir.join(&e.dir)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tasks))
}
