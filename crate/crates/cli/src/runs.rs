//! Training runs on disk and their evaluation on a meta-test suite.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use physmeta::autodiff::ParamStore;
use physmeta::fdm::{graph_fdm_baseline, DerivOp};
use physmeta::graph::io::{fmt_f64, SuiteManifest};
use physmeta::graph::TaskDataset;
use physmeta::meta::{
    baseline_scratch, baseline_weight_init, meta_test, meta_train_maml, meta_train_modular, pretrain,
    write_losses_csv, write_metrics_csv, AdaptOutcome, MetaConfig, MetaState, MetricRow, ModelObjective, Net,
    Pretrained, Variant,
};
use physmeta::seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Method;

pub const RUN_FORMAT_VERSION: u32 = 1;

/// `run.json`: what was trained and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub format_version: u32,
    pub method: Method,
    /// Gradients of the outer loss are taken at the adapted parameters
    /// without differentiating through the inner update.
    pub first_order: bool,
    pub extra_features: usize,
    pub suite_hash: Option<String>,
    pub meta: MetaConfig,
}

/// A run loaded back from disk.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub net: Net,
    /// Meta-trained or pretrained Φ.
    pub phi: Option<ParamStore>,
    /// Φ before training, for the auxiliary report.
    pub phi_init: Option<ParamStore>,
    pub theta: Option<ParamStore>,
}

impl Run {
    pub fn method(&self) -> Method {
        self.info.method
    }
}

fn save_ckpt(store: &ParamStore, path: &Path, meta: &str) -> Result<()> {
    store.save(path, meta).with_context(|| format!("writing {}", path.display()))
}

/// Train `method` on the meta-train suite (if it has a training stage) and
/// write the run into `dir`.
pub fn train_run(method: Method, meta: &MetaConfig, suite: Option<(&SuiteManifest, &[TaskDataset])>, dir: &Path) -> Result<RunInfo> {
    let mut meta = meta.clone();
    meta.variant = method.variant();
    meta.validate()?;
    let extra = suite.and_then(|(_, t)| t.first()).map_or(0, TaskDataset::n_features);
    let info = RunInfo {
        format_version: RUN_FORMAT_VERSION,
        method,
        first_order: true,
        extra_features: extra,
        suite_hash: suite.map(|(m, _)| m.hash()),
        meta: meta.clone(),
    };
    let info_json = serde_json::to_string_pretty(&info)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("run.json"), format!("{info_json}\n"))?;
    let net = Net::new(method.model(), &meta.model, extra)?;
    let ops = net.sdm().map(|s| s.ops().to_vec()).unwrap_or_default();

    match method.variant() {
        Variant::Scratch => {
            if suite.is_some() {
                bail!("the scratch variant has no meta-training stage and takes no meta-train suite");
            }
        }
        Variant::WeightInit => {
            let (_, tasks) = suite.context("weight-init pretraining needs a meta-train suite")?;
            let pre = pretrain(&net, tasks, &meta)?;
            write_losses_csv(&dir.join("losses.csv"), &pre.history, &ops)?;
            if !pre.phi.is_empty() {
                save_ckpt(&pre.phi, &dir.join("phi.ckpt"), &info_json)?;
                let init = net.init_phi(&mut seed::derived_rng(meta.seed, &["phi-init"]))?;
                save_ckpt(&init, &dir.join("phi_init.ckpt"), &info_json)?;
            }
            save_ckpt(&pre.theta, &dir.join("theta.ckpt"), &info_json)?;
        }
        Variant::Modular | Variant::Maml => {
            let (_, tasks) = suite.context("meta-training needs a meta-train suite")?;
            let obj = ModelObjective::new(&net, tasks, meta.aux_weight)?;
            let mut state = MetaState::init(&net, tasks, meta.seed)?;
            save_ckpt(&state.phi, &dir.join("phi_init.ckpt"), &info_json)?;
            if method.variant() == Variant::Modular {
                meta_train_modular(&obj, &mut state, &meta)?;
            } else {
                meta_train_maml(&obj, &mut state, &meta)?;
            }
            write_losses_csv(&dir.join("losses.csv"), &state.history, &ops)?;
            save_ckpt(&state.phi, &dir.join("phi.ckpt"), &info_json)?;
            let tdir = dir.join("thetas");
            fs::create_dir_all(&tdir)?;
            for (id, th) in &state.thetas {
                save_ckpt(th, &tdir.join(format!("{id}.ckpt")), &info_json)?;
            }
        }
    }
    Ok(info)
}

fn load_opt(path: &Path) -> Result<Option<ParamStore>> {
    if !path.exists() {
        return Ok(None);
    }
    let (store, _) = ParamStore::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(store))
}

pub fn load_run(dir: &Path) -> Result<Run> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let info: RunInfo = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if info.format_version != RUN_FORMAT_VERSION {
        bail!("{}: unsupported run format version {}", path.display(), info.format_version);
    }
    let net = Net::new(info.method.model(), &info.meta.model, info.extra_features)?;
    let run = Run {
        dir: dir.to_path_buf(),
        phi: load_opt(&dir.join("phi.ckpt"))?,
        phi_init: load_opt(&dir.join("phi_init.ckpt"))?,
        theta: load_opt(&dir.join("theta.ckpt"))?,
        info,
        net,
    };
    match run.method().variant() {
        Variant::Modular | Variant::Maml if run.phi.is_none() => {
            bail!("{}: missing meta-trained checkpoint phi.ckpt", dir.display())
        }
        Variant::WeightInit if run.theta.is_none() => {
            bail!("{}: missing pretrained checkpoint theta.ckpt", dir.display())
        }
        _ => Ok(run),
    }
}

/// Adapt `run` to one task with the given number of shots.
pub fn evaluate_task(run: &Run, task: &TaskDataset) -> Result<AdaptOutcome> {
    let (net, meta) = (&run.net, &run.info.meta);
    Ok(match run.method().variant() {
        Variant::Scratch => baseline_scratch(net, task, meta)?,
        Variant::WeightInit => {
            let pre = Pretrained {
                phi: run.phi.clone().unwrap_or_default(),
                theta: run.theta.clone().context("missing pretrained θ")?,
                history: Vec::new(),
            };
            baseline_weight_init(net, &pre, task, meta)?
        }
        Variant::Modular | Variant::Maml => meta_test(net, run.phi.as_ref().context("missing Φ")?, task, meta)?,
    })
}

fn check_compatible(run: &Run, tasks: &[TaskDataset]) -> Result<()> {
    for t in tasks {
        if run.method().variant() != Variant::Scratch && t.n_features() != run.info.extra_features {
            bail!(
                "feature count mismatch: run {} expects {} extra features, task `{}` has {}",
                run.dir.display(),
                run.info.extra_features,
                t.id,
                t.n_features()
            );
        }
    }
    Ok(())
}

/// Mean test MSE of one method at one shot count.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub shots: usize,
    pub mean_test_mse: f64,
    pub tasks: usize,
}

/// Auxiliary-task comparison on the nodes where the graph baseline fits.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxRow {
    pub method: String,
    pub task_id: String,
    pub op: DerivOp,
    pub nodes: usize,
    pub init_mse: f64,
    pub trained_mse: f64,
    pub fdm_mse: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub aux: Vec<AuxRow>,
}

impl EvalReport {
    pub fn mean(&self, method: &str, shots: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.shots == shots)
            .map(|r| r.mean_test_mse)
    }

    /// `(init, trained, fdm)` aux MSE of `method`, each averaged over tasks
    /// and summed over operators.
    pub fn aux_totals(&self, method: &str) -> Option<(f64, f64, f64)> {
        let rows: Vec<_> = self.aux.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let tasks: std::collections::BTreeSet<_> = rows.iter().map(|r| &r.task_id).collect();
        let n = tasks.len() as f64;
        let sum = |f: fn(&AuxRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        Some((sum(|r| r.init_mse), sum(|r| r.trained_mse), sum(|r| r.fdm_mse)))
    }

    /// Aligned text table of the summary.
    pub fn table(&self) -> String {
        let w = self.summary.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  {:>5}  {:>23}  {:>5}\n", "method", "shots", "mean_test_mse", "tasks");
        for r in &self.summary {
            s += &format!("{:<w$}  {:>5}  {:>23}  {:>5}\n", r.method, r.shots, fmt_f64(r.mean_test_mse), r.tasks);
        }
        if !self.aux.is_empty() {
            s += &format!("\n{:<w$}  {:>23}  {:>23}  {:>23}\n", "aux", "sdm_init", "sdm_trained", "graph_fdm");
            let methods: Vec<_> = self.aux.iter().map(|r| r.method.clone()).fold(Vec::new(), |mut v, m| {
                if !v.contains(&m) {
                    v.push(m);
                }
                v
            });
            for m in methods {
                let (i, t, f) = self.aux_totals(&m).expect("rows exist");
                s += &format!("{:<w$}  {:>23}  {:>23}  {:>23}\n", m, fmt_f64(i), fmt_f64(t), fmt_f64(f));
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_metrics_csv(&dir.join("metrics.csv"), &self.metrics)?;
        let mut s = String::from("method,shots,mean_test_mse,tasks\n");
        for r in &self.summary {
            s += &format!("{},{},{},{}\n", r.method, r.shots, fmt_f64(r.mean_test_mse), r.tasks);
        }
        fs::write(dir.join("summary.csv"), s)?;
        if !self.aux.is_empty() {
            let mut s = String::from("method,task_id,op,nodes,sdm_init_mse,sdm_trained_mse,fdm_mse\n");
            for r in &self.aux {
                s += &format!(
                    "{},{},{},{},{},{},{}\n",
                    r.method,
                    r.task_id,
                    r.op.name(),
                    r.nodes,
                    fmt_f64(r.init_mse),
                    fmt_f64(r.trained_mse),
                    fmt_f64(r.fdm_mse)
                );
            }
            fs::write(dir.join("aux.csv"), s)?;
        }
        Ok(())
    }
}

fn aux_rows(run: &Run, task: &TaskDataset, hops: usize) -> Result<Vec<AuxRow>> {
    let (Some(phi), Some(init), Some(sdm)) = (&run.phi, &run.phi_init, run.net.sdm()) else {
        return Ok(Vec::new());
    };
    let labels = task.aux.as_ref().context("aux report needs labelled tasks")?;
    let mut acc: BTreeMap<DerivOp, (usize, f64, f64, f64)> = BTreeMap::new();
    for t in 0..task.n_frames() {
        let trained = run.net.derivative_estimates(phi, task, t)?;
        let initial = run.net.derivative_estimates(init, task, t)?;
        for (j, &op) in sdm.ops().iter().enumerate() {
            let fdm = graph_fdm_baseline(&task.graph, &task.frames[t], op, hops)?;
            let e = acc.entry(op).or_default();
            for i in (0..task.n_nodes()).filter(|i| !fdm.flagged.contains(i)) {
                let y = labels[t][i][op.channel()];
                e.0 += 1;
                e.1 += (initial[j][i] - y).powi(2);
                e.2 += (trained[j][i] - y).powi(2);
                e.3 += (fdm.values[i] - y).powi(2);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(op, (n, a, b, c))| {
            let d = n.max(1) as f64;
            AuxRow {
                method: run.method().name().into(),
                task_id: task.id.clone(),
                op,
                nodes: n / task.n_frames(),
                init_mse: a / d,
                trained_mse: b / d,
                fdm_mse: c / d,
            }
        })
        .collect())
}

/// Evaluate every run on every task at every shot count; tasks are
/// processed in parallel and merged in suite order.
pub fn evaluate_runs(runs: &[Run], tasks: &[TaskDataset], shots: &[usize], fdm_hops: usize) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for run in runs {
        check_compatible(run, tasks)?;
        for &k in shots {
            let split: Vec<TaskDataset> = tasks.iter().map(|t| t.with_split(k)).collect::<physmeta::Result<_>>()?;
            let outcomes: Vec<AdaptOutcome> = split
                .par_iter()
                .map(|t| evaluate_task(run, t).with_context(|| format!("{} on task `{}`", run.method(), t.id)))
                .collect::<Result<_>>()?;
            let mut sum = 0.0;
            for (t, o) in split.iter().zip(&outcomes) {
                sum += o.test_mse;
                report.metrics.push(MetricRow {
                    task_id: t.id.clone(),
                    shots: k,
                    method: run.method().name().into(),
                    test_mse: o.test_mse,
                });
            }
            report.summary.push(SummaryRow {
                method: run.method().name().into(),
                shots: k,
                mean_test_mse: sum / split.len() as f64,
                tasks: split.len(),
            });
        }
        let aux: Vec<Vec<AuxRow>> = tasks.par_iter().map(|t| aux_rows(run, t, fdm_hops)).collect::<Result<_>>()?;
        report.aux.extend(aux.into_iter().flatten());
    }
    Ok(report)
}
