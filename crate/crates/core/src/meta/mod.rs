//! Meta-learning engines: modular meta-training with auxiliary derivative
//! losses, its first-order MAML variant, meta-test adaptation and the
//! train-from-scratch and weight-initialization baselines.

mod adapt;
mod artifacts;
mod config;
mod objective;
mod train;

pub use adapt::{adapt, baseline_scratch, baseline_weight_init, fresh_phi, fresh_theta, meta_test, AdaptOutcome};
pub use artifacts::{read_metrics_csv, write_losses_csv, write_metrics_csv, MetricRow};
pub use config::{MetaConfig, ModelConfig, ModelKind, OuterOptimizer, Variant};
pub use objective::{evaluate, gradcheck_aux, gradcheck_objective, Eval, ModelObjective, Net, Span, TaskObjective, Track};
pub use train::{
    meta_train_maml, meta_train_modular, pretrain, sample_batch, LossRecord, MetaState, Pretrained,
};

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::autodiff::{Grads, ParamStore, Tensor};
    use crate::graph::{analytic_task, TaskDataset};

    /// `L_tr = (θ − a)² + θφ`, `L_te = (θ − b)² + (φ − c)²` on scalars.
    struct Toy {
        ids: Vec<String>,
        abc: Vec<(f64, f64, f64)>,
    }

    fn get(s: &ParamStore, n: &str) -> f64 {
        s.get(n).unwrap().item()
    }

    fn grads(pairs: &[(&str, f64)], track: Track) -> Grads {
        pairs
            .iter()
            .filter(|(n, _)| if *n == "phi" { track.phi } else { track.theta })
            .map(|(n, g)| (n.to_string(), Tensor::scalar(*g)))
            .collect()
    }

    impl TaskObjective for Toy {
        fn n_tasks(&self) -> usize {
            self.ids.len()
        }
        fn task_id(&self, i: usize) -> &str {
            &self.ids[i]
        }
        fn inner(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> crate::Result<Eval> {
            let (a, _, _) = self.abc[i];
            let (t, p) = (get(theta, "theta"), get(phi, "phi"));
            Ok(Eval {
                main: (t - a).powi(2) + t * p,
                aux: vec![],
                grads: grads(&[("theta", 2.0 * (t - a) + p), ("phi", t)], track),
            })
        }
        fn outer(&self, i: usize, phi: &ParamStore, theta: &ParamStore, track: Track) -> crate::Result<Eval> {
            let (_, b, c) = self.abc[i];
            let (t, p) = (get(theta, "theta"), get(phi, "phi"));
            Ok(Eval {
                main: (t - b).powi(2) + (p - c).powi(2),
                aux: vec![],
                grads: grads(&[("theta", 2.0 * (t - b)), ("phi", 2.0 * (p - c))], track),
            })
        }
    }

    fn scalar_store(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::scalar(v)).unwrap();
        s
    }

    fn toy_state(toy: &Toy, theta0: f64, phi0: f64) -> MetaState {
        let thetas = toy.ids.iter().map(|id| (id.clone(), scalar_store("theta", theta0))).collect();
        MetaState::new(toy, scalar_store("phi", phi0), thetas).unwrap()
    }

    fn sgd_cfg(alpha: f64, beta: f64, b: usize) -> MetaConfig {
        MetaConfig {
            alpha,
            beta,
            batch_tasks: b,
            epochs: 1,
            outer_optimizer: OuterOptimizer::Sgd,
            ..MetaConfig::default()
        }
    }

    #[test]
    fn modular_step_on_quadratic_toy_is_closed_form() {
        let (a, b, c) = (1.5, -0.5, 0.25);
        let toy = Toy { ids: vec!["t0".into()], abc: vec![(a, b, c)] };
        let (t0, p0, alpha, beta) = (0.3, 0.7, 0.4, 0.1);
        let mut st = toy_state(&toy, t0, p0);
        meta_train_modular(&toy, &mut st, &sgd_cfg(alpha, beta, 1)).unwrap();
        assert_eq!(get(&st.thetas["t0"], "theta"), t0 - beta * (2.0 * (t0 - a) + p0));
        assert_eq!(get(&st.phi, "phi"), p0 - alpha * (2.0 * (p0 - c)));
    }

    #[test]
    fn maml_step_on_quadratic_toy_is_first_order_closed_form() {
        let (a, b, c) = (1.0, -2.0, 0.5);
        let toy = Toy { ids: vec!["t0".into()], abc: vec![(a, b, c)] };
        let (t0, p0, alpha, beta) = (0.4, -0.3, 0.05, 0.1);
        let mut st = toy_state(&toy, t0, p0);
        meta_train_maml(&toy, &mut st, &sgd_cfg(alpha, beta, 1)).unwrap();
        let t_a = t0 - beta * (2.0 * (t0 - a) + p0);
        let p_a = p0 - beta * t0;
        assert_eq!(get(&st.thetas["t0"], "theta"), t0 - alpha * 2.0 * (t_a - b));
        assert_eq!(get(&st.phi, "phi"), p0 - alpha * 2.0 * (p_a - c));
    }

    #[test]
    fn accumulation_is_linear_over_the_batch() {
        let toy = Toy {
            ids: (0..4).map(|i| format!("t{i}")).collect(),
            abc: vec![(0.1, 0.2, 0.3), (-1.0, 0.5, 2.0), (0.7, -0.7, -1.1), (2.0, 1.0, 0.0)],
        };
        let mut st = toy_state(&toy, 0.2, 0.9);
        meta_train_modular(&toy, &mut st, &sgd_cfg(1.0, 0.0, 4)).unwrap();
        let per_task: f64 = toy.abc.iter().map(|&(_, _, c)| 2.0 * (0.9 - c)).sum();
        assert!((get(&st.phi, "phi") - (0.9 - per_task)).abs() < 1e-10);
    }

    fn desk_net(h: usize) -> Net {
        Net::new(ModelKind::Padgn, &ModelConfig::with_hidden(h), 0).unwrap()
    }

    fn suite(n: usize) -> Vec<TaskDataset> {
        (0..n)
            .map(|i| {
                let mut t = analytic_task(10, 3, 6, 3, 40 + i as u64).unwrap();
                t.id = format!("task-{i}");
                t
            })
            .collect()
    }

    fn constant(mut t: TaskDataset, c: f64) -> TaskDataset {
        for f in &mut t.frames {
            f.iter_mut().for_each(|v| *v = c);
        }
        for a in t.aux.iter_mut().flatten() {
            a.iter_mut().for_each(|v| *v = [0.0; 4]);
        }
        t
    }

    #[test]
    fn beta_zero_keeps_theta_and_matches_maml_first_epoch() {
        let tasks = suite(3);
        let net = desk_net(3);
        let obj = ModelObjective::new(&net, &tasks, 1.0).unwrap();
        let cfg = MetaConfig { beta: 0.0, epochs: 2, batch_tasks: 2, inner_steps: 3, seed: 5, ..MetaConfig::default() };
        let init = MetaState::init(&net, &tasks, 5).unwrap();
        let mut modular = init.clone();
        meta_train_modular(&obj, &mut modular, &cfg).unwrap();
        for (id, th) in &modular.thetas {
            assert_eq!(th.content_hash(), init.thetas[id].content_hash());
        }
        let mut maml = init.clone();
        meta_train_maml(&obj, &mut maml, &MetaConfig { epochs: 1, ..cfg.clone() }).unwrap();
        for (x, y) in maml.history[0].iter().zip(&modular.history[0]) {
            assert_eq!(x.task_id, y.task_id);
            assert!((x.main_loss - y.main_loss).abs() <= 1e-10);
            assert!((x.inner_loss - y.inner_loss).abs() <= 1e-10);
            for (a, b) in x.aux.iter().zip(&y.aux) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
        assert_eq!(modular.history.len(), 2);
    }

    #[test]
    fn degenerate_task_leaves_parameters_unchanged() {
        let tasks: Vec<_> = suite(2).into_iter().map(|t| constant(t, 0.0)).collect();
        let net = desk_net(3);
        let obj = ModelObjective::new(&net, &tasks, 1.0).unwrap();
        let init = MetaState::init(&net, &tasks, 1).unwrap();
        let mut st = init.clone();
        meta_train_modular(&obj, &mut st, &MetaConfig { epochs: 1, ..MetaConfig::default() }).unwrap();
        assert_eq!(st.phi.content_hash(), init.phi.content_hash());
        for (id, th) in &st.thetas {
            assert_eq!(th.content_hash(), init.thetas[id].content_hash());
        }
    }

    #[test]
    fn missing_aux_labels_rejected() {
        let mut tasks = suite(1);
        tasks[0].aux = None;
        let net = desk_net(3);
        assert!(ModelObjective::new(&net, &tasks, 1.0).is_err());
    }

    #[test]
    fn meta_test_freezes_phi_and_is_deterministic() {
        let task = suite(1).remove(0);
        let net = desk_net(3);
        let cfg = MetaConfig { adapt_epochs: 5, ..MetaConfig::default() };
        let phi = fresh_phi(&net, &task, &cfg).unwrap();
        let before = phi.content_hash();
        let a = meta_test(&net, &phi, &task, &cfg).unwrap();
        let b = meta_test(&net, &phi, &task, &cfg).unwrap();
        assert_eq!(phi.content_hash(), before);
        assert_eq!(a.phi.content_hash(), before);
        assert_eq!(a.theta.content_hash(), b.theta.content_hash());
        assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
        assert_eq!(a.train_curve.len(), 6);
        let best = a.best_curve();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.best_train_loss(), *best.last().unwrap());
    }

    #[test]
    fn constant_task_is_exact_at_init() {
        let task = constant(suite(1).remove(0), 0.8);
        for kind in [ModelKind::Padgn, ModelKind::Rgn] {
            let net = Net::new(kind, &ModelConfig::with_hidden(3), 0).unwrap();
            let cfg = MetaConfig { adapt_epochs: 0, ..MetaConfig::default() };
            let phi = fresh_phi(&net, &task, &cfg).unwrap();
            assert_eq!(meta_test(&net, &phi, &task, &cfg).unwrap().test_mse, 0.0);
            assert_eq!(baseline_scratch(&net, &task, &cfg).unwrap().test_mse, 0.0);
        }
    }

    #[test]
    fn weight_init_from_random_checkpoint_equals_scratch() {
        let task = suite(1).remove(0);
        let net = desk_net(3);
        let cfg = MetaConfig { adapt_epochs: 4, ..MetaConfig::default() };
        let pre = Pretrained {
            phi: fresh_phi(&net, &task, &cfg).unwrap(),
            theta: fresh_theta(&net, &task, &cfg).unwrap(),
            history: vec![],
        };
        let a = baseline_weight_init(&net, &pre, &task, &cfg).unwrap();
        let b = baseline_scratch(&net, &task, &cfg).unwrap();
        assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
        assert_eq!(a.theta.content_hash(), b.theta.content_hash());
    }

    #[test]
    fn training_is_reproducible() {
        let tasks = suite(3);
        let net = desk_net(3);
        let obj = ModelObjective::new(&net, &tasks, 1.0).unwrap();
        let cfg = MetaConfig { epochs: 3, batch_tasks: 2, seed: 9, ..MetaConfig::default() };
        let run = || {
            let mut st = MetaState::init(&net, &tasks, 9).unwrap();
            meta_train_maml(&obj, &mut st, &cfg).unwrap();
            st
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.phi.content_hash(), b.phi.content_hash());
        let thetas: BTreeMap<_, _> = a.thetas.iter().map(|(k, v)| (k.clone(), v.content_hash())).collect();
        assert!(thetas.iter().all(|(k, h)| &b.thetas[k].content_hash() == h));
    }
}
