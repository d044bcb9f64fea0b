use std::rc::Rc;

use physmeta::autodiff::{gradcheck, ParamStore, Tape, Tensor, Var};
use physmeta::fdm::solve_coefficients;
use physmeta::graph::{knn_graph, Metric};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 3..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_brute_force(pts in points(40), k in 1usize..6, periodic in any::<bool>()) {
        prop_assume!(k < pts.len());
        let metric = if periodic { Metric::Periodic { period: 10.0 } } else { Metric::Euclidean };
        let g = knn_graph(&pts, k, metric).unwrap();
        g.validate().unwrap();
        for i in 0..pts.len() {
            let mut all: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| (metric.dist2(pts[i], pts[j]), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            let got: Vec<usize> = g.neighbors(i).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn stencils_satisfy_moments(
        raw in prop::collection::btree_set(-4i32..=4, 2..=8),
        order in 0usize..4,
    ) {
        let offsets: Vec<f64> = raw.iter().map(|&o| o as f64).collect();
        prop_assume!(order < offsets.len());
        let s = solve_coefficients(&offsets, order).unwrap();
        for r in s.moment_residuals() {
            prop_assert!(r.abs() <= 1e-9, "residual {r} for {offsets:?}, order {order}");
        }
    }

    #[test]
    fn backward_is_linear(
        x in prop::collection::vec(-2.0..2.0f64, 6),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::matrix(3, 2, x).unwrap()).unwrap();
        let f = |t: &mut Tape, s: &ParamStore| -> physmeta::Result<Var> {
            let x = t.param(s, "x")?;
            let th = t.tanh(x)?;
            t.sum(th)
        };
        let g = |t: &mut Tape, s: &ParamStore| -> physmeta::Result<Var> {
            let x = t.param(s, "x")?;
            let sq = t.square(x)?;
            t.mean(sq)
        };
        let grad = |h: &dyn Fn(&mut Tape, &ParamStore) -> physmeta::Result<Var>| {
            let mut t = Tape::new();
            let r = h(&mut t, &store).unwrap();
            t.backward(r).unwrap().remove("x").unwrap()
        };
        let combo = |t: &mut Tape, s: &ParamStore| -> physmeta::Result<Var> {
            let (fv, gv) = (f(t, s)?, g(t, s)?);
            let (fa, gb) = (t.scale(fv, a)?, t.scale(gv, b)?);
            t.add(fa, gb)
        };
        let (gf, gg, gc) = (grad(&f), grad(&g), grad(&combo));
        for i in 0..6 {
            let want = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((gc.data()[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

fn store(entries: &[(&str, usize, usize, u64)]) -> ParamStore {
    let mut s = ParamStore::new();
    for &(name, r, c, seed) in entries {
        // deterministic values away from kinks and zeros
        let data = (0..r * c)
            .map(|i| {
                let v = ((i as u64 * 7919 + seed * 104729) % 997) as f64 / 997.0;
                0.2 + 1.3 * v
            })
            .enumerate()
            .map(|(i, v)| if i % 3 == 1 { -v } else { v })
            .collect();
        s.insert(name, Tensor::matrix(r, c, data).unwrap()).unwrap();
    }
    s
}

fn check(s: &ParamStore, loss: impl Fn(&mut Tape, &ParamStore) -> physmeta::Result<Var>) {
    let rep = gradcheck(s, 1e-5, 1e-4, loss).unwrap();
    assert!(rep.passed(), "max rel err {}", rep.max_rel_err());
}

#[test]
fn elementwise_ops_gradcheck() {
    let s = store(&[("a", 3, 2, 1), ("b", 3, 2, 2)]);
    check(&s, |t, s| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let m = t.mul(a, b)?;
        let d = t.div(m, b)?;
        let sub = t.sub(d, b)?;
        let sg = t.sigmoid(sub)?;
        let th = t.tanh(a)?;
        let r = t.relu(b)?;
        let all = t.add(sg, th)?;
        let all = t.add(all, r)?;
        let sq = t.square(all)?;
        t.mean(sq)
    });
}

#[test]
fn structural_ops_gradcheck() {
    let mut s = store(&[("x", 4, 3, 3), ("w", 3, 2, 4)]);
    s.insert("b", Tensor::vector(vec![0.4, -0.7])).unwrap();
    let idx: Rc<[usize]> = Rc::from(vec![0, 2, 2, 3, 1]);
    let back: Rc<[usize]> = Rc::from(vec![1, 1, 0, 3, 2]);
    check(&s, |t, s| {
        let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
        let y = t.matmul(x, w)?;
        let y = t.add_bias(y, b)?;
        let g = t.gather_rows(y, idx.clone())?;
        let c = t.concat(&[g, g])?;
        let sl = t.slice_cols(c, 1, 3)?;
        let sc = t.scatter_add_rows(sl, back.clone(), 4)?;
        let sm = t.scatter_mean_rows(sl, back.clone(), 4)?;
        let target = t.constant(Tensor::filled(&[4, 2], 0.3))?;
        let l1 = t.mse(sc, target)?;
        let l2 = t.mse(sm, target)?;
        t.add(l1, l2)
    });
}
