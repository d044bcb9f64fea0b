use super::nn::Bound;
use super::recurrent::{Rgn, Tdm};
use super::sdm::{GraphInputs, Sdm};
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::TaskDataset;
use crate::{Error, Result};

/// Frame `t` of `task` as a constant `[N, 1]` column.
pub fn frame_var(tape: &mut Tape, task: &TaskDataset, t: usize) -> Result<Var> {
    let f = task
        .frames
        .get(t)
        .ok_or_else(|| Error::Invalid(format!("frame {t} out of range for {} frames", task.n_frames())))?;
    tape.constant(Tensor::column(f.clone()))
}

/// Extra features of frame `t` as a constant `[N, F]`, if the task has any.
pub fn features_var(tape: &mut Tape, task: &TaskDataset, t: usize) -> Result<Option<Var>> {
    let Some(feats) = &task.features else {
        return Ok(None);
    };
    let f = &feats[t];
    let width = f.first().map_or(0, Vec::len);
    let data: Vec<f64> = f.iter().flatten().copied().collect();
    Ok(Some(tape.constant(Tensor::matrix(f.len(), width, data)?)?))
}

fn check_rollout(task: &TaskDataset, start: usize, n_steps: usize) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::Invalid("a rollout needs at least one step".into()));
    }
    if start >= task.n_frames() {
        return Err(Error::Invalid(format!("start frame {start} out of range")));
    }
    Ok(())
}

/// Autoregressive SDM → TDM rollout from frame `start`; returns the
/// `n_steps` predicted frames `start+1 ..= start+n_steps`.
#[allow(clippy::too_many_arguments)]
pub fn padgn_rollout(
    tape: &mut Tape,
    sdm: &Sdm,
    tdm: &Tdm,
    p: &Bound,
    g: &GraphInputs,
    task: &TaskDataset,
    start: usize,
    n_steps: usize,
) -> Result<Vec<Var>> {
    check_rollout(task, start, n_steps)?;
    let mut u = frame_var(tape, task, start)?;
    let mut state = tdm.zero_state(tape, g)?;
    let mut out = Vec::with_capacity(n_steps);
    for s in 0..n_steps {
        let extra = features_var(tape, task, (start + s).min(task.n_frames() - 1))?;
        let d = sdm.forward(tape, p, g, u)?;
        let step = tdm.step(tape, p, g, u, &d.derivs, extra, task.dt, &state)?;
        state = step.state;
        u = step.next;
        out.push(u);
    }
    Ok(out)
}

/// Autoregressive RGN rollout; same contract as [`padgn_rollout`].
pub fn rgn_rollout(
    tape: &mut Tape,
    rgn: &Rgn,
    p: &Bound,
    g: &GraphInputs,
    task: &TaskDataset,
    start: usize,
    n_steps: usize,
) -> Result<Vec<Var>> {
    check_rollout(task, start, n_steps)?;
    let mut u = frame_var(tape, task, start)?;
    let mut state = rgn.zero_state(tape, g)?;
    let mut out = Vec::with_capacity(n_steps);
    for s in 0..n_steps {
        let extra = features_var(tape, task, (start + s).min(task.n_frames() - 1))?;
        let (next, st) = rgn.step(tape, p, g, u, extra, &state)?;
        state = st;
        u = next;
        out.push(u);
    }
    Ok(out)
}

fn mse_frames(tape: &mut Tape, op: &'static str, pred: &[Var], truth: &[Var]) -> Result<Var> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut total = None;
    let mut count = 0;
    for (&a, &b) in pred.iter().zip(truth) {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: tape.shape(a).to_vec(),
                rhs: tape.shape(b).to_vec(),
            });
        }
        count += tape.value(a).numel();
        let d = tape.sub(a, b)?;
        let sq = tape.square(d)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("non-empty"), 1.0 / count as f64)
}

/// Mean squared error over all nodes and frames.
pub fn loss_main(tape: &mut Tape, pred: &[Var], truth: &[Var]) -> Result<Var> {
    mse_frames(tape, "loss_main", pred, truth)
}

/// Mean squared error of one operator's estimates against its labels.
pub fn loss_aux(tape: &mut Tape, est: &[Var], labels: &[Var]) -> Result<Var> {
    mse_frames(tape, "loss_aux", est, labels)
}
