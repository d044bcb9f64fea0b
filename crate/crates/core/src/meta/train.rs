use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{MetaConfig, OuterOptimizer};
use super::objective::{evaluate, Eval, Net, Span, TaskObjective, Track};
use crate::autodiff::{accumulate, AdamConfig, Grads, ParamStore};
use crate::graph::TaskDataset;
use crate::{seed, Error, Result};

/// Losses of one task in one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub task_id: String,
    /// Training-frame loss before the inner update.
    pub inner_loss: f64,
    /// Test-frame loss at the adapted parameters.
    pub main_loss: f64,
    pub aux: Vec<f64>,
}

/// Shared Φ, per-task θ and the per-epoch loss history.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub phi: ParamStore,
    pub thetas: BTreeMap<String, ParamStore>,
    pub epoch: usize,
    pub history: Vec<Vec<LossRecord>>,
}

impl MetaState {
    pub fn new<O: TaskObjective>(obj: &O, phi: ParamStore, thetas: BTreeMap<String, ParamStore>) -> Result<Self> {
        for i in 0..obj.n_tasks() {
            if !thetas.contains_key(obj.task_id(i)) {
                return Err(Error::Invalid(format!("no θ for task `{}`", obj.task_id(i))));
            }
        }
        Ok(Self {
            phi,
            thetas,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Fresh Φ and one fresh θ per task, all drawn from `master`.
    pub fn init(net: &Net, tasks: &[TaskDataset], master: u64) -> Result<Self> {
        let phi = net.init_phi(&mut seed::derived_rng(master, &["phi-init"]))?;
        let mut thetas = BTreeMap::new();
        for t in tasks {
            let theta = net.init_theta(&mut seed::derived_rng(master, &["theta-init", &t.id]))?;
            if thetas.insert(t.id.clone(), theta).is_some() {
                return Err(Error::Invalid(format!("duplicate task id `{}`", t.id)));
            }
        }
        Ok(Self {
            phi,
            thetas,
            epoch: 0,
            history: Vec::new(),
        })
    }
}

/// `b` distinct task indices for `epoch`, ascending.
pub fn sample_batch(n_tasks: usize, b: usize, master: u64, epoch: usize) -> Result<Vec<usize>> {
    if b > n_tasks {
        return Err(Error::Invalid(format!("batch of {b} tasks from a suite of {n_tasks}")));
    }
    let mut rng = seed::derived_rng(master, &["batch", &epoch.to_string()]);
    let mut idx = rand::seq::index::sample(&mut rng, n_tasks, b).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn apply(store: &mut ParamStore, grads: &Grads, opt: OuterOptimizer, lr: f64) -> Result<()> {
    match opt {
        OuterOptimizer::Adam => store.adam_step(grads, &AdamConfig::with_lr(lr)),
        OuterOptimizer::Sgd => store.sgd_step(grads, lr),
    }
}

/// Contribution of one task to an outer step.
struct TaskStep {
    theta: ParamStore,
    delta: Grads,
    record: LossRecord,
}

fn check_cfg<O: TaskObjective>(obj: &O, cfg: &MetaConfig) -> Result<()> {
    cfg.validate()?;
    if obj.n_tasks() == 0 {
        return Err(Error::Invalid("meta-training needs at least one task".into()));
    }
    Ok(())
}

fn run_epochs<O, F>(obj: &O, state: &mut MetaState, cfg: &MetaConfig, per_task: F) -> Result<()>
where
    O: TaskObjective,
    F: Fn(usize, &ParamStore, &ParamStore) -> Result<TaskStep> + Sync,
{
    check_cfg(obj, cfg)?;
    for _ in 0..cfg.epochs {
        let epoch = state.epoch;
        let batch = sample_batch(obj.n_tasks(), cfg.batch_tasks, cfg.seed, epoch)?;
        let snapshot = &state.phi;
        let thetas = &state.thetas;
        let steps: Vec<TaskStep> = batch
            .par_iter()
            .map(|&i| {
                let theta = thetas
                    .get(obj.task_id(i))
                    .ok_or_else(|| Error::Invalid(format!("no θ for task `{}`", obj.task_id(i))))?;
                per_task(i, snapshot, theta)
            })
            .collect::<Result<_>>()?;
        let mut delta = Grads::new();
        let mut records = Vec::with_capacity(steps.len());
        for (i, s) in batch.iter().zip(steps) {
            accumulate(&mut delta, &s.delta, 1.0);
            state.thetas.insert(obj.task_id(*i).to_string(), s.theta);
            records.push(LossRecord { epoch, ..s.record });
        }
        if !state.phi.is_empty() {
            apply(&mut state.phi, &delta, cfg.outer_optimizer, cfg.alpha)?;
        }
        state.history.push(records);
        state.epoch += 1;
    }
    Ok(())
}

/// Inner gradient descent on θ with Φ fixed; returns the adapted θ and the
/// loss before the first step.
fn inner_theta<O: TaskObjective>(obj: &O, i: usize, phi: &ParamStore, theta: &ParamStore, cfg: &MetaConfig) -> Result<(ParamStore, f64)> {
    let mut adapted = theta.clone();
    let mut first = None;
    for _ in 0..cfg.inner_steps {
        let e = obj.inner(i, phi, &adapted, Track::THETA)?;
        first.get_or_insert(e.main);
        adapted.sgd_step(&e.grads, cfg.beta)?;
    }
    Ok((adapted, first.expect("inner_steps >= 1")))
}

/// Modular meta-training: per sampled task, inner steps on θ_i at rate β
/// with Φ fixed, then the gradient of the test and auxiliary losses with
/// respect to Φ is accumulated over the batch and applied once.
pub fn meta_train_modular<O: TaskObjective>(obj: &O, state: &mut MetaState, cfg: &MetaConfig) -> Result<()> {
    run_epochs(obj, state, cfg, |i, phi, theta| {
        let (adapted, inner_loss) = inner_theta(obj, i, phi, theta, cfg)?;
        let Eval { main, aux, grads } = obj.outer(i, phi, &adapted, Track::PHI)?;
        Ok(TaskStep {
            theta: adapted,
            delta: grads,
            record: LossRecord {
                epoch: 0,
                task_id: obj.task_id(i).to_string(),
                inner_loss,
                main_loss: main,
                aux,
            },
        })
    })
}

fn split(grads: Grads, phi: &ParamStore) -> (Grads, Grads) {
    grads.into_iter().partition(|(n, _)| phi.contains(n))
}

/// First-order MAML variant: θ and Φ are both adapted by the inner steps;
/// gradients of the outer loss at the adapted point update θ_i directly and
/// are accumulated into Φ's update.
pub fn meta_train_maml<O: TaskObjective>(obj: &O, state: &mut MetaState, cfg: &MetaConfig) -> Result<()> {
    run_epochs(obj, state, cfg, |i, phi, theta| {
        let (mut phi_a, mut theta_a) = (phi.values_only(), theta.values_only());
        let mut inner_loss = None;
        for _ in 0..cfg.inner_steps {
            let e = obj.inner(i, &phi_a, &theta_a, Track::BOTH)?;
            inner_loss.get_or_insert(e.main);
            let (gp, gt) = split(e.grads, &phi_a);
            if !phi_a.is_empty() {
                phi_a.sgd_step(&gp, cfg.beta)?;
            }
            theta_a.sgd_step(&gt, cfg.beta)?;
        }
        let Eval { main, aux, grads } = obj.outer(i, &phi_a, &theta_a, Track::BOTH)?;
        let (gp, gt) = split(grads, &phi_a);
        let mut updated = theta.clone();
        apply(&mut updated, &gt, cfg.outer_optimizer, cfg.alpha)?;
        Ok(TaskStep {
            theta: updated,
            delta: gp,
            record: LossRecord {
                epoch: 0,
                task_id: obj.task_id(i).to_string(),
                inner_loss: inner_loss.expect("inner_steps >= 1"),
                main_loss: main,
                aux,
            },
        })
    })
}

/// Jointly trained Φ and θ for the weight-initialization baseline.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub phi: ParamStore,
    pub theta: ParamStore,
    pub history: Vec<Vec<LossRecord>>,
}

/// Multi-task training of one shared model on whole sequences with the
/// main and (for PA-DGN) auxiliary losses; no inner/outer split.
pub fn pretrain(net: &Net, tasks: &[TaskDataset], cfg: &MetaConfig) -> Result<Pretrained> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Invalid("pretraining needs at least one task".into()));
    }
    let mut phi = net.init_phi(&mut seed::derived_rng(cfg.seed, &["phi-init"]))?;
    let mut theta = net.init_theta(&mut seed::derived_rng(cfg.seed, &["pretrain-theta-init"]))?;
    let aux = (net.n_aux() > 0).then_some((Span::Full, cfg.aux_weight));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = sample_batch(tasks.len(), cfg.batch_tasks, cfg.seed, epoch)?;
        let evals: Vec<Eval> = batch
            .par_iter()
            .map(|&i| evaluate(net, &phi, &theta, &tasks[i], Span::Full, aux, Track::BOTH))
            .collect::<Result<_>>()?;
        let mut total = Grads::new();
        let mut records = Vec::new();
        for (&i, e) in batch.iter().zip(evals) {
            accumulate(&mut total, &e.grads, 1.0);
            records.push(LossRecord {
                epoch,
                task_id: tasks[i].id.clone(),
                inner_loss: e.main,
                main_loss: e.main,
                aux: e.aux,
            });
        }
        let (gp, gt) = split(total, &phi);
        if !phi.is_empty() {
            apply(&mut phi, &gp, cfg.outer_optimizer, cfg.alpha)?;
        }
        apply(&mut theta, &gt, cfg.outer_optimizer, cfg.alpha)?;
        history.push(records);
    }
    Ok(Pretrained { phi, theta, history })
}
