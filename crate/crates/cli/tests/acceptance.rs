//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use physmeta::fdm::solve_coefficients;
use physmeta::graph::io::load_suite;
use physmeta::graph::TaskDataset;
use physmeta::meta::{
    fresh_phi, meta_test, meta_train_maml, meta_train_modular, MetaConfig, MetaState, ModelConfig, ModelKind,
    ModelObjective, Net,
};
use physmeta::pde::{grid_coords, simulate_from, velocity_field, PdeConfig, VelocityField};
use physmeta::seed;
use physmeta_cli::commands;
use physmeta_cli::config::{Method, RunConfig};
use physmeta_cli::runs::EvalReport;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.1} s of {limit_s:.0} s"))
}

fn autodiff() -> Result<Outcome> {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let mut worst = 0.0f64;
    let mut ok = true;
    for nodes in [10, 15] {
        for l in commands::gradcheck(&[ModelKind::Padgn, ModelKind::Rgn], nodes, &seeds, 3)? {
            worst = worst.max(l.max_rel_err);
            ok &= l.passed;
        }
    }
    let (fast, time) = within(t.elapsed(), 120.0);
    outcome(ok && fast, format!("padgn and rgn, 10 and 15 nodes, 5 seeds, max rel err {worst:.2e}; {time}"))
}

fn stencils() -> Result<Outcome> {
    let t = Instant::now();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10);
    let mut ok = true;
    for h in [1.0, 0.1, 0.013] {
        let d1 = solve_coefficients(&[-h, 0.0, h], 1)?;
        let d2 = solve_coefficients(&[-h, 0.0, h], 2)?;
        ok &= close(&d1.coeffs.iter().map(|c| c * h).collect::<Vec<_>>(), &[-0.5, 0.0, 0.5]);
        ok &= close(&d2.coeffs.iter().map(|c| c * h * h).collect::<Vec<_>>(), &[1.0, -2.0, 1.0]);
    }
    let mut rng = seed::derived_rng(0, &["acceptance", "stencils"]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let mut offsets: Vec<f64> = Vec::with_capacity(n);
        while offsets.len() < n {
            let o = rng.random_range(-4i32..=4) as f64;
            if !offsets.contains(&o) {
                offsets.push(o);
            }
        }
        let order = rng.random_range(0..n.min(5));
        let s = solve_coefficients(&offsets, order)?;
        worst = s.moment_residuals().iter().fold(worst, |m, r| m.max(r.abs()));
    }
    ok &= worst <= 1e-9;
    let (fast, time) = within(t.elapsed(), 5.0);
    outcome(ok && fast, format!("central stencils exact to 1e-10, 200 random stencils max moment residual {worst:.1e}; {time}"))
}

fn physics() -> Result<Outcome> {
    let t = Instant::now();
    let n = 100;
    let coords = grid_coords(n);
    let cfg = PdeConfig {
        grid_n: n,
        diff_coeff: 0.2,
        dt_solver: 2e-3,
        dt_save: 0.1,
        n_frames: 2,
        ..PdeConfig::meta_train()
    };
    let heat = VelocityField::uniform(n * n, 0.0, 0.0, 0.2);
    let mut worst_decay = 0.0f64;
    for k in 0..=3 {
        for l in 0..=3 {
            let mode: Vec<f64> = coords.iter().map(|&(x, y)| (k as f64 * x + l as f64 * y).cos()).collect();
            let g = simulate_from(&cfg, mode.clone(), &heat)?;
            let amp = g.frames[1].iter().zip(&mode).map(|(u, m)| u * m).sum::<f64>() / mode.iter().map(|m| m * m).sum::<f64>();
            let expect = (-0.2 * ((k * k + l * l) as f64) * 0.1).exp();
            worst_decay = worst_decay.max((amp / expect - 1.0).abs());
        }
    }

    let flat_cfg = PdeConfig { n_frames: 20, dt_save: 0.01, ..cfg.clone() };
    let vel = velocity_field(&flat_cfg, &coords);
    let flat = simulate_from(&flat_cfg, vec![0.37; n * n], &vel)?;
    let constant = flat.frames.iter().all(|f| f.iter().all(|v| v.to_bits() == 0.37f64.to_bits()));

    let adv_cfg = PdeConfig { n_frames: 20, dt_save: 0.01, dt_solver: 5e-3, ..cfg };
    let drift = VelocityField::uniform(n * n, 1.0, -0.6, 0.0);
    let bump: Vec<f64> = coords.iter().map(|&(x, y)| x.sin() * (2.0 * y).cos() + 0.5 * (x + y).sin()).collect();
    let adv = simulate_from(&adv_cfg, bump, &drift)?;
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n0 = norm(&adv.frames[0]);
    let drift_err = adv.frames.iter().map(|f| (norm(f) / n0 - 1.0).abs()).fold(0.0, f64::max);

    let ok = worst_decay < 0.01 && constant && drift_err < 0.005;
    let (fast, time) = within(t.elapsed(), 60.0);
    outcome(
        ok && fast,
        format!(
            "mode decay max rel err {worst_decay:.2e}, constant field bitwise {constant}, advection L2 drift {drift_err:.2e}; {time}"
        ),
    )
}

fn dataset(tmp: &Path) -> Result<Outcome> {
    let t = Instant::now();
    let cfg = RunConfig::preset("paper-metatrain")?;
    let out = tmp.join("paper-metatrain");
    commands::generate(&cfg, &out)?;
    let (manifest, tasks) = load_suite(&out.join("meta-train"))?;
    let mut ok = manifest.task_count == 100 && tasks.len() == 100;
    ok &= tasks.iter().all(|t| t.n_frames() == 20);
    ok &= tasks.iter().all(|t| {
        let mut deg = vec![0usize; t.n_nodes()];
        t.graph.edges.iter().for_each(|e| deg[e.0] += 1);
        deg.iter().all(|&d| d == 4)
    });
    ok &= cfg.shots == [5, 10];
    for &k in &cfg.shots {
        ok &= tasks.iter().all(|t| {
            t.with_split(k).map(|s| s.split_k == k && s.n_test() == 20 - k).unwrap_or(false)
        });
    }
    let (fast, time) = within(t.elapsed(), 900.0);
    outcome(ok && fast, format!("{} tasks, 20 frames, 4 edges per node, splits 5/15 and 10/10; {time}", tasks.len()))
}

/// Desk pipeline for each seed; shared by the ordering and auxiliary criteria.
fn desk_runs(tmp: &Path) -> Result<(Vec<EvalReport>, Duration)> {
    let t = Instant::now();
    let mut reports = Vec::new();
    for s in 0..3 {
        let cfg = commands::seeded(RunConfig::preset("desk")?, Some(s));
        reports.push(commands::pipeline(&cfg, &tmp.join(format!("desk-{s}")))?);
    }
    Ok((reports, t.elapsed()))
}

fn ordering(reports: &[EvalReport], elapsed: Duration) -> Result<Outcome> {
    let mut meta_wins = 0;
    let mut shots_ok = 0;
    let mut lines = Vec::new();
    for (s, r) in reports.iter().enumerate() {
        let m = |method: Method, k| r.mean(method.name(), k).context("missing summary row");
        let scratch = m(Method::PadgnScratch, 5)?;
        let (modular, maml) = (m(Method::PimetalModular, 5)?, m(Method::PimetalMaml, 5)?);
        if modular < scratch && maml < scratch {
            meta_wins += 1;
        }
        let mut all = true;
        for method in Method::ALL {
            all &= m(method, 10)? <= m(method, 5)?;
        }
        if all {
            shots_ok += 1;
        }
        lines.push(format!("seed {s}: modular {modular:.3e}, maml {maml:.3e}, scratch {scratch:.3e}, 10<=5 shots {all}"));
    }
    let (fast, time) = within(elapsed, 1800.0);
    outcome(
        meta_wins >= 2 && shots_ok >= 2 && fast,
        format!("meta beats scratch at 5 shots in {meta_wins}/3 seeds, 10-shot <= 5-shot for all methods in {shots_ok}/3 seeds [{}]; {time}", lines.join("; ")),
    )
}

fn auxiliary(reports: &[EvalReport]) -> Result<Outcome> {
    let t = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for (s, r) in reports.iter().enumerate() {
        for method in [Method::PimetalModular, Method::PimetalMaml] {
            let (init, trained, fdm) = r.aux_totals(method.name()).context("missing aux rows")?;
            ok &= trained <= 0.5 * init;
            lines.push(format!("seed {s} {method}: init {init:.3e}, trained {trained:.3e}, graph fdm {fdm:.3e}"));
        }
    }
    let (fast, time) = within(t.elapsed(), 300.0);
    outcome(ok && fast, format!("trained aux MSE at most half of init [{}]; {time}", lines.join("; ")))
}

fn constant_task(mut t: TaskDataset, c: f64) -> TaskDataset {
    t.frames.iter_mut().for_each(|f| f.iter_mut().for_each(|v| *v = c));
    t.aux.iter_mut().flatten().for_each(|f| f.iter_mut().for_each(|a| *a = [0.0; 4]));
    t
}

fn degeneracies(tmp: &Path) -> Result<Outcome> {
    let desk = RunConfig::preset("desk")?;
    let mut cfg = commands::seeded(desk.clone(), Some(3));
    cfg.train_tasks = 3;
    cfg.test_tasks = 2;
    let data = tmp.join("degenerate-data");
    cfg.validate()?;
    commands::generate(&cfg, &data)?;
    let (_, tasks) = load_suite(&data.join("meta-train"))?;
    let net = Net::new(ModelKind::Padgn, &cfg.meta.model, 0)?;
    let obj = ModelObjective::new(&net, &tasks, cfg.meta.aux_weight)?;
    let one = MetaConfig { beta: 0.0, epochs: 1, batch_tasks: 2, ..cfg.meta.clone() };
    let init = MetaState::init(&net, &tasks, one.seed)?;
    let (mut a, mut b) = (init.clone(), init);
    meta_train_modular(&obj, &mut a, &one)?;
    meta_train_maml(&obj, &mut b, &one)?;
    let mut gap = 0.0f64;
    for (x, y) in a.history[0].iter().zip(&b.history[0]) {
        ensure!(x.task_id == y.task_id, "different task batches");
        gap = gap.max((x.main_loss - y.main_loss).abs()).max((x.inner_loss - y.inner_loss).abs());
        for (p, q) in x.aux.iter().zip(&y.aux) {
            gap = gap.max((p - q).abs());
        }
    }
    let maml_ok = gap <= 1e-10;

    // zero heads roll out the identity
    let mut identity_ok = true;
    for kind in [ModelKind::Padgn, ModelKind::Rgn] {
        let net = Net::new(kind, &ModelConfig::with_hidden(16), 0)?;
        let mut rng = seed::rng(11);
        let (phi, theta) = (net.init_phi(&mut rng)?, net.init_theta(&mut rng)?);
        let task = &tasks[0];
        let pred = net.predict(&phi, &theta, task)?;
        identity_ok &= pred.iter().all(|f| f.iter().zip(&task.frames[0]).all(|(a, b)| a.to_bits() == b.to_bits()));
        let flat = constant_task(task.clone(), 0.61);
        let zero = MetaConfig { adapt_epochs: 0, ..cfg.meta.clone() };
        identity_ok &= meta_test(&net, &phi, &flat, &zero)?.test_mse == 0.0;
    }

    // frozen Φ: hash in memory and checkpoint bytes on disk
    let phi = fresh_phi(&net, &tasks[0], &cfg.meta)?;
    let before = phi.content_hash();
    let short = MetaConfig { adapt_epochs: 3, finetune_phi: false, ..cfg.meta.clone() };
    let adapted = meta_test(&net, &phi, &tasks[1].with_split(5)?, &short)?;
    let mut frozen_ok = phi.content_hash() == before && adapted.phi.content_hash() == before;
    let run = tmp.join("degenerate-run");
    let train_cfg = RunConfig { meta: MetaConfig { epochs: 2, adapt_epochs: 2, ..cfg.meta.clone() }, ..cfg.clone() };
    commands::train(&train_cfg, Method::PimetalModular, Some(&data.join("meta-train")), &Default::default(), &run)?;
    let ckpt = fs::read(run.join("phi.ckpt"))?;
    commands::evaluate(&train_cfg, &data.join("meta-test"), &[run.clone()], &[5], &tmp.join("degenerate-eval"))?;
    frozen_ok &= fs::read(run.join("phi.ckpt"))? == ckpt;

    outcome(
        maml_ok && identity_ok && frozen_ok,
        format!("maml beta=0 vs modular first-epoch gap {gap:.1e}, zero-head identity {identity_ok}, frozen phi hash unchanged {frozen_ok}"),
    )
}

fn files(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.log") {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn determinism(tmp: &Path) -> Result<Outcome> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.train_tasks = 3;
    cfg.test_tasks = 2;
    cfg.meta.epochs = 3;
    cfg.meta.adapt_epochs = 3;
    let cfg_path = tmp.join("tiny.toml");
    fs::write(&cfg_path, cfg.to_toml())?;
    let bin = env!("CARGO_BIN_EXE_physmeta");
    let mut trees = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let out = tmp.join(format!("det-{i}"));
        let status = Command::new(bin)
            .args(["--config", cfg_path.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap(), "pipeline"])
            .output()?;
        ensure!(status.status.success(), "pipeline failed: {}", String::from_utf8_lossy(&status.stderr));
        trees.push(files(&out)?);
    }
    let same = trees.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("pipeline repeated with --threads 1, 1, 3: {} files byte-identical {same}", trees[0].len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let mut results: Vec<(&str, Result<Outcome>)> = vec![
        ("1 autodiff soundness", autodiff()),
        ("2 stencil oracle", stencils()),
        ("3 physics reproduction", physics()),
        ("4 dataset contract", dataset(tmp)),
    ];
    match desk_runs(tmp) {
        Ok((reports, elapsed)) => {
            results.push(("5 meta-learning ordering", ordering(&reports, elapsed)));
            results.push(("6 auxiliary-task efficacy", auxiliary(&reports)));
        }
        Err(e) => {
            let msg = format!("{e:#}");
            results.push(("5 meta-learning ordering", Err(anyhow::anyhow!(msg.clone()))));
            results.push(("6 auxiliary-task efficacy", Err(anyhow::anyhow!(msg))));
        }
    }
    results.push(("7 degeneracy identities", degeneracies(tmp)));
    results.push(("8 determinism", determinism(tmp)));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(o) => {
                println!("criterion {name}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
                failed += usize::from(!o.passed);
            }
            Err(e) => {
                println!("criterion {name}: FAIL (error: {e:#})");
                failed += 1;
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
