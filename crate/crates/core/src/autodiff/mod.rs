//! Dense tensors, reverse-mode differentiation, parameter storage and Adam.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport, ParamCheck, REL_FLOOR};
pub use params::{AdamConfig, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

/// `Σ scale·g` accumulated into `acc`, inserting missing names.
pub fn accumulate(acc: &mut Grads, g: &Grads, scale: f64) {
    for (name, t) in g {
        match acc.get_mut(name) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                    *x += scale * y;
                }
            }
            None => {
                acc.insert(name.clone(), t.scale(scale));
            }
        }
    }
}
