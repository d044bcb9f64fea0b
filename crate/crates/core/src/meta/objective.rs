use rand::Rng;

use super::config::{ModelConfig, ModelKind};
use crate::autodiff::{gradcheck, GradcheckReport, Grads, ParamStore, Tape, Tensor, Var};
use crate::graph::TaskDataset;
use crate::models::{
    frame_var, loss_aux, loss_main, padgn_rollout, rgn_rollout, Bound, GraphInputs, Rgn, Sdm, Tdm,
};
use crate::{Error, Result};

/// A trainable architecture: PA-DGN (shared Φ = SDM, task θ = TDM) or RGN
/// (empty Φ, θ = the whole network).
#[derive(Clone, Debug)]
pub enum Net {
    Padgn { sdm: Sdm, tdm: Tdm },
    Rgn(Rgn),
}

impl Net {
    pub fn new(kind: ModelKind, cfg: &ModelConfig, extra_features: usize) -> Result<Self> {
        Ok(match kind {
            ModelKind::Padgn => {
                let sdm = Sdm::new(cfg.sdm.clone())?;
                let mut tdm_cfg = cfg.tdm.clone();
                tdm_cfg.extra_features = extra_features;
                let tdm = Tdm::new(tdm_cfg, sdm.ops().len())?;
                Net::Padgn { sdm, tdm }
            }
            ModelKind::Rgn => {
                let mut c = cfg.rgn.clone();
                c.extra_features = extra_features;
                Net::Rgn(Rgn::new(c)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Net::Padgn { .. } => ModelKind::Padgn,
            Net::Rgn(_) => ModelKind::Rgn,
        }
    }

    pub fn sdm(&self) -> Option<&Sdm> {
        match self {
            Net::Padgn { sdm, .. } => Some(sdm),
            Net::Rgn(_) => None,
        }
    }

    pub fn n_aux(&self) -> usize {
        self.sdm().map_or(0, |s| s.ops().len())
    }

    pub fn init_phi<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        match self {
            Net::Padgn { sdm, .. } => sdm.init(rng),
            Net::Rgn(_) => Ok(ParamStore::new()),
        }
    }

    pub fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        match self {
            Net::Padgn { tdm, .. } => tdm.init(rng),
            Net::Rgn(rgn) => rgn.init(rng),
        }
    }

    fn rollout(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphInputs,
        task: &TaskDataset,
        from: usize,
        n: usize,
    ) -> Result<Vec<Var>> {
        match self {
            Net::Padgn { sdm, tdm } => padgn_rollout(tape, sdm, tdm, p, g, task, from, n),
            Net::Rgn(rgn) => rgn_rollout(tape, rgn, p, g, task, from, n),
        }
    }

    /// Predicted frames `1..T` from frame 0, as plain values.
    pub fn predict(&self, phi: &ParamStore, theta: &ParamStore, task: &TaskDataset) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, phi, false)?;
        p.bind(&mut tape, theta, false)?;
        let g = GraphInputs::new(&task.graph);
        let pred = self.rollout(&mut tape, &p, &g, task, 0, task.n_frames() - 1)?;
        Ok(pred.iter().map(|&v| tape.value(v).data().to_vec()).collect())
    }

    /// Per-operator mean squared error of the SDM estimates against the
    /// labels on the given frames; inputs are the true frames.
    pub fn aux_mse(&self, phi: &ParamStore, task: &TaskDataset, frames: std::ops::Range<usize>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, phi, false)?;
        let g = GraphInputs::new(&task.graph);
        let losses = self.aux_losses(&mut tape, &p, &g, task, frames)?;
        Ok(losses.iter().map(|&l| tape.scalar_value(l)).collect())
    }

    /// Per-operator SDM estimates at every node for the true frame `t`.
    pub fn derivative_estimates(&self, phi: &ParamStore, task: &TaskDataset, t: usize) -> Result<Vec<Vec<f64>>> {
        let sdm = self
            .sdm()
            .ok_or_else(|| Error::Invalid("this model has no spatial derivative modules".into()))?;
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, phi, false)?;
        let g = GraphInputs::new(&task.graph);
        let u = frame_var(&mut tape, task, t)?;
        let out = sdm.forward(&mut tape, &p, &g, u)?;
        Ok(out.derivs.iter().map(|&d| tape.value(d).data().to_vec()).collect())
    }

    fn aux_losses(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphInputs,
        task: &TaskDataset,
        frames: std::ops::Range<usize>,
    ) -> Result<Vec<Var>> {
        let Some(sdm) = self.sdm() else {
            return Ok(Vec::new());
        };
        let aux = task
            .aux
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("task `{}` has no auxiliary labels", task.id)))?;
        let k = sdm.ops().len();
        let mut est = vec![Vec::new(); k];
        let mut lab = vec![Vec::new(); k];
        for t in frames {
            let u = frame_var(tape, task, t)?;
            let out = sdm.forward(tape, p, g, u)?;
            for (j, op) in sdm.ops().iter().enumerate() {
                est[j].push(out.derivs[j]);
                let col = aux[t].iter().map(|a| a[op.channel()]).collect();
                lab[j].push(tape.constant(Tensor::column(col))?);
            }
        }
        (0..k).map(|j| loss_aux(tape, &est[j], &lab[j])).collect()
    }
}

/// Which frames a loss covers. Rollouts start from the last frame before
/// the covered range, so a test rollout is seeded with the last shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Span {
    /// Predictions of frames `1..k` from frame 0.
    Train,
    /// Predictions of frames `k..T` from frame `k − 1`.
    Test,
    /// Predictions of frames `1..T` from frame 0.
    Full,
}

impl Span {
    /// Seed frame and predicted frames.
    fn predicted(self, task: &TaskDataset) -> Result<(usize, std::ops::Range<usize>)> {
        let (k, t) = (task.split_k, task.n_frames());
        let r = match self {
            Span::Train => {
                if k < 2 {
                    return Err(Error::Invalid(format!(
                        "task `{}` has {k} shot(s); training needs at least 2 frames",
                        task.id
                    )));
                }
                (0, 1..k)
            }
            Span::Test => (k - 1, k..t),
            Span::Full => (0, 1..t),
        };
        Ok(r)
    }

    fn aux_frames(self, task: &TaskDataset) -> std::ops::Range<usize> {
        match self {
            Span::Train => 0..task.split_k,
            Span::Test => task.split_k..task.n_frames(),
            Span::Full => 0..task.n_frames(),
        }
    }
}

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Track {
    pub phi: bool,
    pub theta: bool,
}

impl Track {
    pub const NONE: Track = Track { phi: false, theta: false };
    pub const PHI: Track = Track { phi: true, theta: false };
    pub const THETA: Track = Track { phi: false, theta: true };
    pub const BOTH: Track = Track { phi: true, theta: true };
}

/// Loss values and gradients of one task objective.
#[derive(Clone, Debug, Default)]
pub struct Eval {
    pub main: f64,
    /// Per-operator auxiliary losses (empty when not computed).
    pub aux: Vec<f64>,
    pub grads: Grads,
}

/// Record `(main, total, aux values)` of the objective on `tape`.
fn record_loss(
    net: &Net,
    tape: &mut Tape,
    p: &Bound,
    task: &TaskDataset,
    span: Span,
    aux: Option<(Span, f64)>,
) -> Result<(Var, Var, Vec<f64>)> {
    let g = GraphInputs::new(&task.graph);
    let (from, truth) = span.predicted(task)?;
    let pred = net.rollout(tape, p, &g, task, from, truth.len())?;
    let truth: Vec<Var> = truth.map(|t| frame_var(tape, task, t)).collect::<Result<_>>()?;
    let main = loss_main(tape, &pred, &truth)?;
    let mut total = main;
    let mut aux_vals = Vec::new();
    if let Some((aspan, w)) = aux {
        let losses = net.aux_losses(tape, p, &g, task, aspan.aux_frames(task))?;
        for &l in &losses {
            aux_vals.push(tape.scalar_value(l));
            if w != 0.0 {
                let wl = tape.scale(l, w)?;
                total = tape.add(total, wl)?;
            }
        }
    }
    Ok((main, total, aux_vals))
}

/// Check the gradient of the [`evaluate`] objective with respect to every
/// parameter of `phi` and `theta` against central differences.
#[allow(clippy::too_many_arguments)]
pub fn gradcheck_objective(
    net: &Net,
    phi: &ParamStore,
    theta: &ParamStore,
    task: &TaskDataset,
    span: Span,
    aux: Option<(Span, f64)>,
    eps: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    let mut both = phi.values_only();
    both.extend(theta)?;
    gradcheck(&both, eps, tol, |tape, s| {
        let mut p = Bound::new();
        p.bind(tape, s, true)?;
        Ok(record_loss(net, tape, &p, task, span, aux)?.1)
    })
}

/// Check the gradient of the summed auxiliary losses on `frames` with
/// respect to Φ.
pub fn gradcheck_aux(
    net: &Net,
    phi: &ParamStore,
    task: &TaskDataset,
    frames: std::ops::Range<usize>,
    eps: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    gradcheck(phi, eps, tol, |tape, s| {
        let mut p = Bound::new();
        p.bind(tape, s, true)?;
        let g = GraphInputs::new(&task.graph);
        let losses = net.aux_losses(tape, &p, &g, task, frames.clone())?;
        let (first, rest) = losses
            .split_first()
            .ok_or_else(|| Error::Invalid("this model has no auxiliary losses".into()))?;
        rest.iter().try_fold(*first, |acc, &l| tape.add(acc, l))
    })
}

/// `L_main(span) + aux_weight · Σ_k L_k(aux span)` and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &Net,
    phi: &ParamStore,
    theta: &ParamStore,
    task: &TaskDataset,
    span: Span,
    aux: Option<(Span, f64)>,
    track: Track,
) -> Result<Eval> {
    let mut tape = Tape::new();
    let mut p = Bound::new();
    p.bind(&mut tape, phi, track.phi)?;
    p.bind(&mut tape, theta, track.theta)?;
    let (main, total, aux_vals) = record_loss(net, &mut tape, &p, task, span, aux)?;
    let main_val = tape.scalar_value(main);
    let grads = if track.phi || track.theta {
        tape.backward(total)?
    } else {
        Grads::new()
    };
    Ok(Eval {
        main: main_val,
        aux: aux_vals,
        grads,
    })
}

/// Per-task objective consumed by the meta-training engines.
///
/// `inner` is the loss on a task's training frames; `outer` is the loss on
/// its test frames plus the weighted auxiliary terms.
pub trait TaskObjective: Sync {
    fn n_tasks(&self) -> usize;
    fn task_id(&self, i: usize) -> &str;
    fn inner(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> Result<Eval>;
    fn outer(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> Result<Eval>;
}

/// [`TaskObjective`] of a [`Net`] on a task suite.
pub struct ModelObjective<'a> {
    pub net: &'a Net,
    pub tasks: &'a [TaskDataset],
    pub aux_weight: f64,
}

impl<'a> ModelObjective<'a> {
    pub fn new(net: &'a Net, tasks: &'a [TaskDataset], aux_weight: f64) -> Result<Self> {
        if net.n_aux() > 0 {
            if let Some(t) = tasks.iter().find(|t| !t.has_aux()) {
                return Err(Error::Invalid(format!(
                    "task `{}` has no auxiliary labels, which meta-training requires",
                    t.id
                )));
            }
        }
        Ok(Self { net, tasks, aux_weight })
    }

    fn aux(&self, span: Span) -> Option<(Span, f64)> {
        (self.net.n_aux() > 0).then_some((span, self.aux_weight))
    }
}

impl TaskObjective for ModelObjective<'_> {
    fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn task_id(&self, i: usize) -> &str {
        &self.tasks[i].id
    }

    fn inner(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> Result<Eval> {
        evaluate(self.net, phi, theta, &self.tasks[i], Span::Train, None, track)
    }

    fn outer(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> Result<Eval> {
        evaluate(self.net, phi, theta, &self.tasks[i], Span::Test, self.aux(Span::Test), track)
    }
}
