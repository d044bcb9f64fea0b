//! The subcommands, independent of argument parsing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use physmeta::fdm::solve_coefficients;
use physmeta::graph::io::{load_suite, save_suite, SuiteManifest};
use physmeta::graph::{analytic_task, make_meta_suite, TaskDataset};
use physmeta::meta::{gradcheck_aux, gradcheck_objective, MetaConfig, ModelConfig, ModelKind, Net, Span};
use physmeta::seed;
use rand::Rng;

use crate::config::{Method, RunConfig, SuiteKind};
use crate::runs::{evaluate_runs, load_run, train_run, EvalReport};

/// Timing log kept next to the outputs; the only file whose bytes vary
/// between identical runs.
#[derive(Default)]
pub struct RunLog {
    lines: Vec<String>,
    start: Option<Instant>,
}

impl RunLog {
    pub fn new() -> Self {
        Self { lines: Vec::new(), start: Some(Instant::now()) }
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.lines.push(format!("{name}: {:.3} s", t.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut s = self.lines.join("\n");
        if let Some(t) = self.start {
            let _ = write!(s, "\ntotal: {:.3} s", t.elapsed().as_secs_f64());
        }
        s.push('\n');
        fs::write(dir.join("run.log"), s)?;
        Ok(())
    }
}

/// Write into `<out>.incomplete`, then move it to `out` once `f` succeeds.
/// A failed command leaves only the quarantined directory behind.
pub fn with_output<T>(out: &Path, f: impl FnOnce(&Path, &mut RunLog) -> Result<T>) -> Result<T> {
    if out.exists() {
        bail!("output directory {} already exists", out.display());
    }
    let mut tmp = out.as_os_str().to_owned();
    tmp.push(".incomplete");
    let tmp = PathBuf::from(tmp);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
    }
    fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let mut log = RunLog::new();
    let value = f(&tmp, &mut log)?;
    log.write(&tmp)?;
    fs::rename(&tmp, out).with_context(|| format!("moving {} to {}", tmp.display(), out.display()))?;
    Ok(value)
}

/// Suite sizes and node counts that override the configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenerateOverrides {
    pub tasks: Option<usize>,
    pub nodes: Option<usize>,
}

pub fn apply_generate_overrides(cfg: &mut RunConfig, o: GenerateOverrides) -> Result<()> {
    if let Some(n) = o.tasks {
        cfg.train_tasks = n;
        cfg.test_tasks = n;
    }
    if let Some(n) = o.nodes {
        for fam in [&mut cfg.train_family, &mut cfg.test_family] {
            fam.nodes_min = n;
            fam.nodes_max = n;
        }
    }
    cfg.validate()
}

fn generate_suite(cfg: &RunConfig, kind: SuiteKind, dir: &Path) -> Result<(SuiteManifest, Vec<TaskDataset>)> {
    let (fam, m) = match kind {
        SuiteKind::MetaTrain => (&cfg.train_family, cfg.train_tasks),
        SuiteKind::MetaTest => (&cfg.test_family, cfg.test_tasks),
    };
    let tasks = make_meta_suite(fam, m, cfg.seed).with_context(|| format!("generating the {} suite", kind.dir_name()))?;
    let manifest = save_suite(&tasks, fam, cfg.seed, dir)?;
    Ok((manifest, tasks))
}

/// Write the configured suites under `out/<suite>`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Vec<SuiteManifest>> {
    with_output(out, |dir, log| {
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let mut manifests = Vec::new();
        for &kind in &cfg.suites {
            let (m, _) = log.stage(kind.dir_name(), || generate_suite(cfg, kind, &dir.join(kind.dir_name())))?;
            manifests.push(m);
        }
        Ok(manifests)
    })
}

/// Overrides accepted by `train`; the meta-learning ones are rejected for
/// methods without a training stage.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
}

pub fn train(cfg: &RunConfig, method: Method, data: Option<&Path>, o: &TrainOverrides, out: &Path) -> Result<()> {
    let mut meta = cfg.meta.clone();
    if method.variant().is_meta() {
        meta.beta = o.beta.unwrap_or(meta.beta);
    } else if o.beta.is_some() {
        bail!("--beta only applies to the modular and maml variants");
    }
    if method.variant() == physmeta::meta::Variant::Scratch {
        if data.is_some() || o.epochs.is_some() {
            bail!("the scratch variant trains only at evaluation time; it takes no --data or --epochs");
        }
    } else {
        meta.epochs = o.epochs.unwrap_or(meta.epochs);
    }
    let suite = match (method.variant(), data) {
        (physmeta::meta::Variant::Scratch, _) => None,
        (_, Some(d)) => Some(load_suite(d).with_context(|| format!("loading suite {}", d.display()))?),
        (_, None) => bail!("{method} needs a meta-train suite (--data)"),
    };
    with_output(out, |dir, log| {
        log.stage(method.name(), || {
            train_run(method, &meta, suite.as_ref().map(|(m, t)| (m, t.as_slice())), dir)
        })?;
        Ok(())
    })
}

pub fn evaluate(cfg: &RunConfig, data: &Path, runs: &[PathBuf], shots: &[usize], out: &Path) -> Result<EvalReport> {
    if runs.is_empty() {
        bail!("evaluate needs at least one --run directory");
    }
    let (_, tasks) = load_suite(data).with_context(|| format!("loading suite {}", data.display()))?;
    let runs = runs.iter().map(|r| load_run(r)).collect::<Result<Vec<_>>>()?;
    with_output(out, |dir, log| {
        let report = log.stage("evaluate", || evaluate_runs(&runs, &tasks, shots, cfg.fdm_hops))?;
        report.write(dir)?;
        Ok(report)
    })
}

/// Generate both suites, train every configured method and evaluate them.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    with_output(out, |dir, log| {
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let data = dir.join("data");
        let (train_m, train_t) = log.stage("generate meta-train", || {
            generate_suite(cfg, SuiteKind::MetaTrain, &data.join(SuiteKind::MetaTrain.dir_name()))
        })?;
        let (_, test_t) = log.stage("generate meta-test", || {
            generate_suite(cfg, SuiteKind::MetaTest, &data.join(SuiteKind::MetaTest.dir_name()))
        })?;
        let mut runs = Vec::new();
        for &method in &cfg.methods {
            let rdir = dir.join("runs").join(method.name());
            let suite = method.variant().is_meta() || method.variant() == physmeta::meta::Variant::WeightInit;
            log.stage(&format!("train {method}"), || {
                train_run(method, &cfg.meta, suite.then_some((&train_m, train_t.as_slice())), &rdir)
            })?;
            runs.push(load_run(&rdir)?);
        }
        let report = log.stage("evaluate", || evaluate_runs(&runs, &test_t, &cfg.shots, cfg.fdm_hops))?;
        let edir = dir.join("eval");
        fs::create_dir_all(&edir)?;
        report.write(&edir)?;
        Ok(report)
    })
}

/// Randomize every parameter so no zero-initialized head masks the
/// gradients of the layers behind it.
fn randomize(store: &mut physmeta::autodiff::ParamStore, rng: &mut impl Rng) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        for v in store.get_mut(&n).expect("listed").data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
}

/// One model family's gradient check at one seed.
#[derive(Clone, Debug)]
pub struct GradcheckLine {
    pub model: ModelKind,
    pub seed: u64,
    pub params: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Check the rollout loss of each model, and the auxiliary losses of
/// models that have them, on small random graphs.
pub fn gradcheck(models: &[ModelKind], nodes: usize, seeds: &[u64], hidden: usize) -> Result<Vec<GradcheckLine>> {
    let mut lines = Vec::new();
    for &kind in models {
        for &s in seeds {
            let task = analytic_task(nodes, 3, 4, 3, s)?;
            let net = Net::new(kind, &ModelConfig::with_hidden(hidden), 0)?;
            let mut rng = seed::derived_rng(s, &["gradcheck", kind.name()]);
            let mut phi = net.init_phi(&mut rng)?;
            let mut theta = net.init_theta(&mut rng)?;
            randomize(&mut phi, &mut rng);
            randomize(&mut theta, &mut rng);
            let mut r = gradcheck_objective(&net, &phi, &theta, &task, Span::Full, None, 1e-5, 1e-4)?;
            if net.n_aux() > 0 {
                let aux = gradcheck_aux(&net, &phi, &task, 0..task.n_frames(), 1e-5, 1e-4)?;
                r.params.extend(aux.params.into_iter().map(|mut p| {
                    p.name = format!("aux:{}", p.name);
                    p
                }));
            }
            lines.push(GradcheckLine {
                model: kind,
                seed: s,
                params: r.params.len(),
                max_rel_err: r.max_rel_err(),
                passed: r.passed(),
            });
        }
    }
    Ok(lines)
}

/// Format a coefficient so exact integers print without a fraction.
pub fn fmt_coef(c: f64) -> String {
    let r = c.round();
    if (c - r).abs() <= 1e-9 * c.abs().max(1.0) {
        format!("{}", r as i64)
    } else {
        format!("{c}")
    }
}

/// Stencil coefficients for `order` on unit-spaced `offsets`, space
/// separated.
pub fn fdm(offsets: &[f64], order: usize) -> Result<String> {
    let st = solve_coefficients(offsets, order)?;
    Ok(st.coeffs.iter().map(|&c| fmt_coef(c)).collect::<Vec<_>>().join(" "))
}

/// Meta-training settings after `--seed`.
pub fn seeded(mut cfg: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.meta = MetaConfig { seed: cfg.seed, ..cfg.meta };
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_print_as_integers() {
        assert_eq!(fdm(&[-1.0, 0.0, 1.0], 2).unwrap(), "1 -2 1");
        assert_eq!(fdm(&[0.0, 1.0], 1).unwrap(), "-1 1");
        assert_eq!(fdm(&[-1.0, 0.0, 1.0], 1).unwrap(), "-0.5 0 0.5");
    }

    #[test]
    fn existing_output_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(with_output(dir.path(), |_, _| Ok(())).is_err());
    }

    #[test]
    fn failures_stay_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let r: Result<()> = with_output(&out, |d, _| {
            fs::write(d.join("partial"), "x")?;
            bail!("boom")
        });
        assert!(r.is_err());
        assert!(!out.exists());
        assert!(dir.path().join("o.incomplete/partial").exists());
    }
}
