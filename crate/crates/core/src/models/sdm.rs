use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Bound, Mlp2};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::fdm::DerivOp;
use crate::graph::SpatialGraph;
use crate::{Error, Result};

/// Graph structure prepared for message passing.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub n_nodes: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Per-edge `[x_j − x_i, y_j − y_i, |x_j − x_i|]`.
    pub geometry: Tensor,
}

impl GraphInputs {
    pub fn new(graph: &SpatialGraph) -> Self {
        let mut geo = Vec::with_capacity(graph.n_edges() * 3);
        for &(i, j) in &graph.edges {
            let (dx, dy) = (graph.nodes[j].0 - graph.nodes[i].0, graph.nodes[j].1 - graph.nodes[i].1);
            geo.extend([dx, dy, dx.hypot(dy)]);
        }
        Self {
            n_nodes: graph.n_nodes(),
            src: graph.sources().into(),
            dst: graph.targets().into(),
            geometry: Tensor::matrix(graph.n_edges(), 3, geo).expect("3 values per edge"),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub(crate) fn check_nodes(&self, tape: &Tape, x: Var, what: &'static str) -> Result<()> {
        match tape.shape(x) {
            [n, _] if *n == self.n_nodes => Ok(()),
            s => Err(Error::Shape {
                op: what,
                lhs: s.to_vec(),
                rhs: vec![self.n_nodes],
            }),
        }
    }
}

/// `û_i = Σ_{(i,j)∈E} a_ij (u_i − b_ij u_j)` for per-edge `ab: [E, 2]`.
pub fn combine_coefficients(tape: &mut Tape, g: &GraphInputs, u: Var, ab: Var) -> Result<Var> {
    g.check_nodes(tape, u, "combine_coefficients")?;
    if tape.shape(ab) != [g.n_edges(), 2] {
        return Err(Error::Shape {
            op: "combine_coefficients",
            lhs: tape.shape(ab).to_vec(),
            rhs: vec![g.n_edges(), 2],
        });
    }
    let a = tape.slice_cols(ab, 0, 1)?;
    let b = tape.slice_cols(ab, 1, 2)?;
    let ui = tape.gather_rows(u, g.src.clone())?;
    let uj = tape.gather_rows(u, g.dst.clone())?;
    let buj = tape.mul(b, uj)?;
    let d = tape.sub(ui, buj)?;
    let term = tape.mul(a, d)?;
    tape.scatter_add_rows(term, g.src.clone(), g.n_nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdmConfig {
    pub hidden: usize,
    pub ops: Vec<DerivOp>,
}

impl Default for SdmConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            ops: DerivOp::ALL.to_vec(),
        }
    }
}

/// One message-passing network producing per-edge `(a, b)` for one operator.
#[derive(Clone, Debug)]
struct Module {
    edge1: Mlp2,
    node: Mlp2,
    edge2: Mlp2,
}

impl Module {
    fn new(op: DerivOp, h: usize) -> Self {
        let p = format!("sdm.{}", op.name());
        Self {
            edge1: Mlp2::new(&format!("{p}.edge1"), 5, h, h),
            node: Mlp2::new(&format!("{p}.node"), 1 + h, h, h),
            edge2: Mlp2::new(&format!("{p}.edge2"), 3 * h, h, 2),
        }
    }

    fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.edge1.init(store, rng)?;
        self.node.init(store, rng)?;
        self.edge2.init(store, rng)
    }

    fn coefficients(&self, tape: &mut Tape, p: &Bound, g: &GraphInputs, u: Var, geo: Var) -> Result<Var> {
        let ui = tape.gather_rows(u, g.src.clone())?;
        let uj = tape.gather_rows(u, g.dst.clone())?;
        let ein = tape.concat(&[ui, uj, geo])?;
        let e1 = self.edge1.forward(tape, p, ein)?;
        let agg = tape.scatter_mean_rows(e1, g.src.clone(), g.n_nodes)?;
        let nin = tape.concat(&[u, agg])?;
        let n1 = self.node.forward(tape, p, nin)?;
        let ni = tape.gather_rows(n1, g.src.clone())?;
        let nj = tape.gather_rows(n1, g.dst.clone())?;
        let e2in = tape.concat(&[ni, nj, e1])?;
        self.edge2.forward(tape, p, e2in)
    }
}

/// Spatial derivative modules, one independent network per operator.
#[derive(Clone, Debug)]
pub struct Sdm {
    pub config: SdmConfig,
    modules: Vec<Module>,
}

/// Per-operator node estimates `[N, 1]` and edge coefficients `[E, 2]`,
/// in the configured operator order.
#[derive(Clone, Debug)]
pub struct SdmOutput {
    pub derivs: Vec<Var>,
    pub coeffs: Vec<Var>,
}

impl Sdm {
    pub fn new(config: SdmConfig) -> Result<Self> {
        if config.hidden == 0 || config.ops.is_empty() {
            return Err(Error::Invalid("SDM needs a hidden size and at least one operator".into()));
        }
        for (i, op) in config.ops.iter().enumerate() {
            if config.ops[..i].contains(op) {
                return Err(Error::Invalid(format!("operator {} listed twice", op.name())));
            }
        }
        let modules = config.ops.iter().map(|&op| Module::new(op, config.hidden)).collect();
        Ok(Self { config, modules })
    }

    pub fn ops(&self) -> &[DerivOp] {
        &self.config.ops
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for m in &self.modules {
            m.init(&mut store, rng)?;
        }
        Ok(store)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, g: &GraphInputs, u: Var) -> Result<SdmOutput> {
        g.check_nodes(tape, u, "sdm_forward")?;
        let geo = tape.constant(g.geometry.clone())?;
        let mut out = SdmOutput {
            derivs: Vec::with_capacity(self.modules.len()),
            coeffs: Vec::with_capacity(self.modules.len()),
        };
        for m in &self.modules {
            let ab = m.coefficients(tape, p, g, u, geo)?;
            out.derivs.push(combine_coefficients(tape, g, u, ab)?);
            out.coeffs.push(ab);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{knn_graph, Metric};
    use crate::seed;

    fn graph() -> SpatialGraph {
        let pts: Vec<_> = (0..10).map(|i| ((i % 4) as f64 * 0.7, (i / 4) as f64 * 0.9 + 0.01 * i as f64)).collect();
        knn_graph(&pts, 3, Metric::Euclidean).unwrap()
    }

    #[test]
    fn forced_coefficients_identities() {
        let g = GraphInputs::new(&graph());
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::column((0..10).map(|i| (i as f64).sin()).collect())).unwrap();
        let e = g.n_edges();
        let mut zero_a = vec![0.0; 2 * e];
        for (i, v) in zero_a.iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = i as f64;
            }
        }
        let ab = tape.constant(Tensor::matrix(e, 2, zero_a).unwrap()).unwrap();
        let d = combine_coefficients(&mut tape, &g, u, ab).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));

        let c = tape.constant(Tensor::column(vec![2.5; 10])).unwrap();
        let unit_b: Vec<f64> = (0..e).flat_map(|i| [1.0 + i as f64, 1.0]).collect();
        let ab = tape.constant(Tensor::matrix(e, 2, unit_b).unwrap()).unwrap();
        let d = combine_coefficients(&mut tape, &g, c, ab).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_module_per_operator() {
        let sdm = Sdm::new(SdmConfig { hidden: 4, ..SdmConfig::default() }).unwrap();
        let store = sdm.init(&mut seed::rng(3)).unwrap();
        for op in DerivOp::ALL {
            assert!(store.contains(&format!("sdm.{}.edge2.l2.w", op.name())));
        }
        let g = GraphInputs::new(&graph());
        let mut tape = Tape::new();
        let mut p = Bound::new();
        p.bind(&mut tape, &store, true).unwrap();
        let u = tape.constant(Tensor::column(vec![0.1; 10])).unwrap();
        let out = sdm.forward(&mut tape, &p, &g, u).unwrap();
        assert_eq!(out.derivs.len(), 4);
        assert_eq!(tape.shape(out.coeffs[0]), [g.n_edges(), 2]);
        let bad = tape.constant(Tensor::column(vec![0.1; 9])).unwrap();
        assert!(sdm.forward(&mut tape, &p, &g, bad).is_err());
    }
}
