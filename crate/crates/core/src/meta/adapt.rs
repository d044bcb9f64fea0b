use super::config::MetaConfig;
use super::objective::{evaluate, Net, Span, Track};
use super::train::Pretrained;
use crate::autodiff::{AdamConfig, ParamStore};
use crate::graph::TaskDataset;
use crate::{seed, Result};

/// Result of training one model on one task's shots.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub phi: ParamStore,
    pub theta: ParamStore,
    /// Training loss before each update, then once after the last one.
    pub train_curve: Vec<f64>,
    /// Index into `train_curve` of the kept checkpoint.
    pub best_index: usize,
    /// Mean squared error over frames `k..T` at the kept checkpoint.
    pub test_mse: f64,
}

impl AdaptOutcome {
    pub fn best_train_loss(&self) -> f64 {
        self.train_curve[self.best_index]
    }

    /// Running minimum of the training curve.
    pub fn best_curve(&self) -> Vec<f64> {
        self.train_curve
            .iter()
            .scan(f64::INFINITY, |m, &v| {
                *m = m.min(v);
                Some(*m)
            })
            .collect()
    }
}

/// Train θ (and Φ when `train_phi`) on the first `split_k` frames with Adam
/// for `epochs` updates, keep the parameters with the lowest training loss,
/// and score them on the remaining frames.
///
/// Every per-task evaluation path (meta-test and both baselines) goes
/// through here.
pub fn adapt(
    net: &Net,
    task: &TaskDataset,
    phi: &ParamStore,
    theta: &ParamStore,
    train_phi: bool,
    epochs: usize,
    lr: f64,
) -> Result<AdaptOutcome> {
    let adam = AdamConfig::with_lr(lr);
    let track = Track {
        phi: train_phi && !phi.is_empty(),
        theta: true,
    };
    let (mut phi_c, mut theta_c) = (phi.values_only(), theta.values_only());
    let mut best = (phi_c.clone(), theta_c.clone());
    let mut curve = Vec::with_capacity(epochs + 1);
    let mut best_index = 0;
    for e in 0..=epochs {
        let last = e == epochs;
        let ev = evaluate(net, &phi_c, &theta_c, task, Span::Train, None, if last { Track::NONE } else { track })?;
        if curve.is_empty() || ev.main < curve[best_index] {
            best_index = curve.len();
            best = (phi_c.values_only(), theta_c.values_only());
        }
        curve.push(ev.main);
        if last {
            break;
        }
        let (gp, gt): (crate::autodiff::Grads, _) = ev.grads.into_iter().partition(|(n, _)| phi_c.contains(n));
        if track.phi {
            phi_c.adam_step(&gp, &adam)?;
        }
        theta_c.adam_step(&gt, &adam)?;
    }
    let (phi_b, theta_b) = best;
    let test = evaluate(net, &phi_b, &theta_b, task, Span::Test, None, Track::NONE)?;
    Ok(AdaptOutcome {
        phi: phi_b,
        theta: theta_b,
        train_curve: curve,
        best_index,
        test_mse: test.main,
    })
}

/// Fresh θ for `task`, shared by every method that starts θ from scratch.
pub fn fresh_theta(net: &Net, task: &TaskDataset, cfg: &MetaConfig) -> Result<ParamStore> {
    net.init_theta(&mut seed::derived_rng(cfg.seed, &["adapt-theta", &task.id]))
}

/// Fresh Φ for `task` (train-from-scratch baseline).
pub fn fresh_phi(net: &Net, task: &TaskDataset, cfg: &MetaConfig) -> Result<ParamStore> {
    net.init_phi(&mut seed::derived_rng(cfg.seed, &["adapt-phi", &task.id]))
}

/// Meta-test: Φ from meta-training (frozen unless `finetune_phi`), θ
/// freshly initialized and trained on the task's shots.
pub fn meta_test(net: &Net, phi: &ParamStore, task: &TaskDataset, cfg: &MetaConfig) -> Result<AdaptOutcome> {
    let theta = fresh_theta(net, task, cfg)?;
    adapt(net, task, phi, &theta, cfg.finetune_phi, cfg.adapt_epochs, cfg.adapt_lr)
}

/// Train a randomly initialized model on the task's shots only.
pub fn baseline_scratch(net: &Net, task: &TaskDataset, cfg: &MetaConfig) -> Result<AdaptOutcome> {
    let phi = fresh_phi(net, task, cfg)?;
    let theta = fresh_theta(net, task, cfg)?;
    adapt(net, task, &phi, &theta, true, cfg.adapt_epochs, cfg.adapt_lr)
}

/// Start from pretrained weights, then train as [`baseline_scratch`].
pub fn baseline_weight_init(net: &Net, pretrained: &Pretrained, task: &TaskDataset, cfg: &MetaConfig) -> Result<AdaptOutcome> {
    adapt(net, task, &pretrained.phi, &pretrained.theta, true, cfg.adapt_epochs, cfg.adapt_lr)
}
