//! Graph-network models: spatial derivative modules (SDM), the recurrent
//! temporal derivative module (TDM), their PA-DGN composition and the RGN
//! baseline.
//!
//! Parameters live in [`ParamStore`](crate::autodiff::ParamStore)s with
//! prefixes `sdm.<op>.`, `tdm.` and `rgn.`; a forward pass binds them onto a
//! tape through [`Bound`].

mod nn;
mod recurrent;
mod rollout;
mod sdm;

pub use nn::{Bound, Gru2, GruCell, Linear, Mlp2};
pub use recurrent::{GnState, Rgn, RgnConfig, Tdm, TdmConfig, TdmStep};
pub use rollout::{features_var, frame_var, loss_aux, loss_main, padgn_rollout, rgn_rollout};
pub use sdm::{combine_coefficients, GraphInputs, Sdm, SdmConfig, SdmOutput};
