//! Central finite-difference gradient checks.

use super::{Grads, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Denominator floor for relative errors so exactly-zero gradients compare
/// against an absolute scale instead of dividing by zero.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare reverse-mode gradients of `loss` against central differences.
///
/// `loss` records a scalar on a fresh tape, binding parameters from the
/// store it is handed. Only parameters bound with [`Tape::param`] appear in
/// the report; frozen bindings are skipped.
pub fn gradcheck<F>(store: &ParamStore, eps: f64, tol: f64, loss: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let root = loss(&mut tape, s)?;
        Ok(tape.scalar_value(root))
    };

    let mut tape = Tape::new();
    let root = loss(&mut tape, store)?;
    let base = tape.scalar_value(root);
    let analytic: Grads = tape.backward(root)?;

    let again = eval(store)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Invalid(format!(
            "loss closure is not deterministic: {base} then {again}"
        )));
    }

    let mut work = store.clone();
    let mut params = Vec::with_capacity(analytic.len());
    for (name, g) in &analytic {
        let n = g.numel();
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for i in 0..n {
            let orig = work.get(name).expect("bound parameter").data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = g.data()[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        params.push(ParamCheck {
            name: name.clone(),
            entries: n,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            passed: max_rel < tol,
        });
    }
    Ok(GradcheckReport { eps, tol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn quadratic_loss_is_tight() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![0.3, -1.2, 2.5])).unwrap();
        let rep = gradcheck(&s, 1e-5, 1e-4, |t, s| {
            let w = t.param(s, "w")?;
            let sq = t.square(w)?;
            t.sum(sq)
        })
        .unwrap();
        assert!(rep.passed());
        assert!(rep.max_rel_err() < 1e-8, "{}", rep.max_rel_err());
    }

    #[test]
    fn frozen_parameter_is_excluded() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![0.3])).unwrap();
        s.insert("frozen", Tensor::vector(vec![2.0])).unwrap();
        let rep = gradcheck(&s, 1e-5, 1e-4, |t, s| {
            let w = t.param(s, "w")?;
            let f = t.frozen(s, "frozen")?;
            let p = t.mul(w, f)?;
            t.sum(p)
        })
        .unwrap();
        let names: Vec<_> = rep.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["w"]);
    }

    #[test]
    fn nondeterministic_closure_is_rejected() {
        use std::cell::Cell;
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![0.3])).unwrap();
        let calls = Cell::new(0.0);
        let res = gradcheck(&s, 1e-5, 1e-4, |t, s| {
            calls.set(calls.get() + 1.0);
            let w = t.param(s, "w")?;
            let c = t.scalar(calls.get())?;
            let p = t.mul(w, c)?;
            t.sum(p)
        });
        assert!(res.is_err());
    }
}
