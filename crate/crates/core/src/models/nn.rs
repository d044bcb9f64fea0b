use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Parameters bound onto one tape, by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bind every parameter of `store`; tracked parameters receive gradients.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, tracked: bool) -> Result<()> {
        for name in store.names() {
            if self.vars.contains_key(name) {
                return Err(Error::Invalid(format!("parameter `{name}` bound twice")));
            }
            let v = if tracked {
                tape.param(store, name)?
            } else {
                tape.frozen(store, name)?
            };
            self.vars.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Uniform in `±1/√fan_in`, or all zeros.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R, zero: bool) -> Result<()> {
        let bound = 1.0 / (self.fan_in as f64).sqrt();
        let (w, b) = if zero {
            (vec![0.0; self.fan_in * self.fan_out], vec![0.0; self.fan_out])
        } else {
            (
                uniform(rng, self.fan_in * self.fan_out, bound),
                uniform(rng, self.fan_out, bound),
            )
        };
        store.insert(self.w(), Tensor::matrix(self.fan_in, self.fan_out, w)?)?;
        store.insert(self.b(), Tensor::vector(b))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(&self.w())?)?;
        tape.add_bias(y, p.get(&self.b())?)
    }
}

/// Two affine layers with a tanh between them.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            l1: Linear::new(format!("{name}.l1"), input, hidden),
            l2: Linear::new(format!("{name}.l2"), hidden, output),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.l1.init(store, rng, false)?;
        self.l2.init(store, rng, false)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.tanh(h)?;
        self.l2.forward(tape, p, h)
    }
}

/// Gated recurrent cell.
///
/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `n = tanh(x Wn + (r ⊙ h) Un + bn)`, `h' = n + z ⊙ (h − n)`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        store.insert(self.key("wx"), Tensor::matrix(self.input, 3 * h, uniform(rng, self.input * 3 * h, bound))?)?;
        store.insert(self.key("uzr"), Tensor::matrix(h, 2 * h, uniform(rng, 2 * h * h, bound))?)?;
        store.insert(self.key("un"), Tensor::matrix(h, h, uniform(rng, h * h, bound))?)?;
        store.insert(self.key("b"), Tensor::vector(uniform(rng, 3 * h, bound)))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let gx = tape.matmul(x, p.get(&self.key("wx"))?)?;
        let gx = tape.add_bias(gx, p.get(&self.key("b"))?)?;
        let gh = tape.matmul(h, p.get(&self.key("uzr"))?)?;
        let xzr = tape.slice_cols(gx, 0, 2 * n)?;
        let zr = tape.add(xzr, gh)?;
        let zr = tape.sigmoid(zr)?;
        let z = tape.slice_cols(zr, 0, n)?;
        let r = tape.slice_cols(zr, n, 2 * n)?;
        let rh = tape.mul(r, h)?;
        let hn = tape.matmul(rh, p.get(&self.key("un"))?)?;
        let xn = tape.slice_cols(gx, 2 * n, 3 * n)?;
        let cand = tape.add(xn, hn)?;
        let cand = tape.tanh(cand)?;
        let diff = tape.sub(h, cand)?;
        let gated = tape.mul(z, diff)?;
        tape.add(cand, gated)
    }
}

/// Two stacked gated recurrent cells; the state is one tensor per layer.
#[derive(Clone, Debug)]
pub struct Gru2 {
    pub c1: GruCell,
    pub c2: GruCell,
}

impl Gru2 {
    pub fn new(name: &str, input: usize, hidden: usize) -> Self {
        Self {
            c1: GruCell::new(format!("{name}.g1"), input, hidden),
            c2: GruCell::new(format!("{name}.g2"), hidden, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.c1.init(store, rng)?;
        self.c2.init(store, rng)
    }

    /// Returns the new per-layer states; the output is the second one.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, state: [Var; 2]) -> Result<[Var; 2]> {
        let h1 = self.c1.forward(tape, p, x, state[0])?;
        let h2 = self.c2.forward(tape, p, h1, state[1])?;
        Ok([h1, h2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn linear_init_bounds_and_zero() {
        let mut store = ParamStore::new();
        let l = Linear::new("l", 4, 3);
        l.init(&mut store, &mut seed::rng(1), false).unwrap();
        assert!(store.get("l.w").unwrap().max_abs() <= 0.5);
        let z = Linear::new("z", 4, 3);
        z.init(&mut store, &mut seed::rng(1), true).unwrap();
        assert_eq!(store.get("z.w").unwrap().max_abs(), 0.0);

        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, &store, false).unwrap();
        let x = tape.constant(Tensor::filled(&[2, 4], 1.0)).unwrap();
        let y = z.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), [2, 3]);
        assert_eq!(tape.value(y).max_abs(), 0.0);
    }

    #[test]
    fn gru_with_saturated_update_gate_keeps_state() {
        let mut store = ParamStore::new();
        let g = GruCell::new("g", 2, 3);
        g.init(&mut store, &mut seed::rng(2)).unwrap();
        // a large bias on z drives σ → 1, so h' ≈ h
        let b = store.get_mut("g.b").unwrap();
        for v in &mut b.data_mut()[..3] {
            *v = 50.0;
        }
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, &store, false).unwrap();
        let x = tape.constant(Tensor::filled(&[1, 2], 0.3)).unwrap();
        let h = tape.constant(Tensor::matrix(1, 3, vec![0.1, -0.2, 0.4]).unwrap()).unwrap();
        let out = g.forward(&mut tape, &p, x, h).unwrap();
        for (a, b) in tape.value(out).data().iter().zip([0.1, -0.2, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn double_binding_is_rejected() {
        let mut store = ParamStore::new();
        Linear::new("l", 1, 1).init(&mut store, &mut seed::rng(0), false).unwrap();
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, &store, true).unwrap();
        assert!(p.bind(&mut tape, &store, false).is_err());
    }
}
