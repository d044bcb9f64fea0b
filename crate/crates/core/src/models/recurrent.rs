use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Bound, Gru2, Linear};
use super::sdm::GraphInputs;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-block edge and node states of a recurrent graph network.
#[derive(Clone, Debug)]
pub struct GnState {
    pub edge: Vec<[Var; 2]>,
    pub node: Vec<[Var; 2]>,
}

#[derive(Clone, Debug)]
struct Block {
    edge: Gru2,
    node: Gru2,
}

/// Two recurrent graph-network blocks and a zero-initialized scalar head.
#[derive(Clone, Debug)]
struct RecurrentGn {
    input: usize,
    hidden: usize,
    blocks: [Block; 2],
    head: Linear,
}

impl RecurrentGn {
    fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        let h = hidden;
        let block = |i: usize, edge_in: usize, node_in: usize| Block {
            edge: Gru2::new(&format!("{prefix}.b{i}.edge"), edge_in, h),
            node: Gru2::new(&format!("{prefix}.b{i}.node"), node_in, h),
        };
        Self {
            input,
            hidden,
            blocks: [block(1, 2 * input + 3, input + h), block(2, 3 * h, 2 * h)],
            head: Linear::new(format!("{prefix}.head"), h, 1),
        }
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for b in &self.blocks {
            b.edge.init(&mut store, rng)?;
            b.node.init(&mut store, rng)?;
        }
        self.head.init(&mut store, rng, true)?;
        Ok(store)
    }

    fn zero_state(&self, tape: &mut Tape, g: &GraphInputs) -> Result<GnState> {
        let mut st = GnState {
            edge: Vec::new(),
            node: Vec::new(),
        };
        for _ in &self.blocks {
            let e = tape.constant(Tensor::zeros(&[g.n_edges(), self.hidden]))?;
            let n = tape.constant(Tensor::zeros(&[g.n_nodes, self.hidden]))?;
            st.edge.push([e, e]);
            st.node.push([n, n]);
        }
        Ok(st)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, g: &GraphInputs, x: Var, st: &GnState) -> Result<(Var, GnState)> {
        g.check_nodes(tape, x, "recurrent_gn")?;
        if tape.shape(x)[1] != self.input {
            return Err(Error::Shape {
                op: "recurrent_gn",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![g.n_nodes, self.input],
            });
        }
        let mut next = GnState {
            edge: Vec::with_capacity(2),
            node: Vec::with_capacity(2),
        };
        let mut node_x = x;
        let mut edge_x = tape.constant(g.geometry.clone())?;
        for (bi, b) in self.blocks.iter().enumerate() {
            let xi = tape.gather_rows(node_x, g.src.clone())?;
            let xj = tape.gather_rows(node_x, g.dst.clone())?;
            let ein = tape.concat(&[xi, xj, edge_x])?;
            let es = b.edge.forward(tape, p, ein, st.edge[bi])?;
            let agg = tape.scatter_mean_rows(es[1], g.src.clone(), g.n_nodes)?;
            let nin = tape.concat(&[node_x, agg])?;
            let ns = b.node.forward(tape, p, nin, st.node[bi])?;
            next.edge.push(es);
            next.node.push(ns);
            node_x = ns[1];
            edge_x = es[1];
        }
        let out = self.head.forward(tape, p, node_x)?;
        Ok((out, next))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdmConfig {
    pub hidden: usize,
    pub extra_features: usize,
}

impl Default for TdmConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            extra_features: 0,
        }
    }
}

/// Temporal derivative module: per-node `[u, û_k…, extra…]` to `û_t`,
/// advanced by a forward-Euler step.
#[derive(Clone, Debug)]
pub struct Tdm {
    pub config: TdmConfig,
    pub n_ops: usize,
    gn: RecurrentGn,
}

/// Result of one temporal step.
#[derive(Clone, Debug)]
pub struct TdmStep {
    pub u_t: Var,
    pub next: Var,
    pub state: GnState,
}

impl Tdm {
    pub fn new(config: TdmConfig, n_ops: usize) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Invalid("TDM hidden size must be positive".into()));
        }
        let gn = RecurrentGn::new("tdm", 1 + n_ops + config.extra_features, config.hidden);
        Ok(Self { config, n_ops, gn })
    }

    pub fn input_channels(&self) -> usize {
        self.gn.input
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        self.gn.init(rng)
    }

    pub fn zero_state(&self, tape: &mut Tape, g: &GraphInputs) -> Result<GnState> {
        self.gn.zero_state(tape, g)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphInputs,
        u: Var,
        derivs: &[Var],
        extra: Option<Var>,
        dt: f64,
        state: &GnState,
    ) -> Result<TdmStep> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        if derivs.len() != self.n_ops {
            return Err(Error::Invalid(format!(
                "TDM expects {} derivative inputs, got {}",
                self.n_ops,
                derivs.len()
            )));
        }
        let mut parts = vec![u];
        parts.extend_from_slice(derivs);
        parts.extend(extra);
        let x = tape.concat(&parts)?;
        let (u_t, state) = self.gn.forward(tape, p, g, x, state)?;
        let inc = tape.scale(u_t, dt)?;
        let next = tape.add(u, inc)?;
        Ok(TdmStep { u_t, next, state })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgnConfig {
    pub hidden: usize,
    pub extra_features: usize,
}

impl Default for RgnConfig {
    fn default() -> Self {
        Self {
            hidden: 73,
            extra_features: 0,
        }
    }
}

/// Recurrent graph network predicting `u(t+1) = u(t) + head(h)`.
#[derive(Clone, Debug)]
pub struct Rgn {
    pub config: RgnConfig,
    gn: RecurrentGn,
}

impl Rgn {
    pub fn new(config: RgnConfig) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Invalid("RGN hidden size must be positive".into()));
        }
        let gn = RecurrentGn::new("rgn", 1 + config.extra_features, config.hidden);
        Ok(Self { config, gn })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        self.gn.init(rng)
    }

    pub fn zero_state(&self, tape: &mut Tape, g: &GraphInputs) -> Result<GnState> {
        self.gn.zero_state(tape, g)
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphInputs,
        u: Var,
        extra: Option<Var>,
        state: &GnState,
    ) -> Result<(Var, GnState)> {
        let x = match extra {
            Some(e) => tape.concat(&[u, e])?,
            None => u,
        };
        let (delta, state) = self.gn.forward(tape, p, g, x, state)?;
        Ok((tape.add(u, delta)?, state))
    }
}
