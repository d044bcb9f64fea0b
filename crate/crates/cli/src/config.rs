use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use physmeta::graph::FamilyConfig;
use physmeta::meta::{MetaConfig, ModelKind, Variant};
use physmeta::pde::PdeConfig;
use serde::{Deserialize, Serialize};

/// An evaluated method: a training variant applied to a model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RgnScratch,
    PadgnScratch,
    RgnWeightInit,
    PadgnWeightInit,
    PimetalModular,
    PimetalMaml,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RgnScratch,
        Method::PadgnScratch,
        Method::RgnWeightInit,
        Method::PadgnWeightInit,
        Method::PimetalModular,
        Method::PimetalMaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RgnScratch => "rgn-scratch",
            Method::PadgnScratch => "padgn-scratch",
            Method::RgnWeightInit => "rgn-weight-init",
            Method::PadgnWeightInit => "padgn-weight-init",
            Method::PimetalModular => "pimetal-modular",
            Method::PimetalMaml => "pimetal-maml",
        }
    }

    pub fn of(variant: Variant, model: ModelKind) -> Result<Self> {
        Ok(match (variant, model) {
            (Variant::Scratch, ModelKind::Rgn) => Method::RgnScratch,
            (Variant::Scratch, ModelKind::Padgn) => Method::PadgnScratch,
            (Variant::WeightInit, ModelKind::Rgn) => Method::RgnWeightInit,
            (Variant::WeightInit, ModelKind::Padgn) => Method::PadgnWeightInit,
            (Variant::Modular, ModelKind::Padgn) => Method::PimetalModular,
            (Variant::Maml, ModelKind::Padgn) => Method::PimetalMaml,
            (v, ModelKind::Rgn) => bail!("variant `{}` needs the padgn model", v.name()),
        })
    }

    pub fn variant(self) -> Variant {
        match self {
            Method::RgnScratch | Method::PadgnScratch => Variant::Scratch,
            Method::RgnWeightInit | Method::PadgnWeightInit => Variant::WeightInit,
            Method::PimetalModular => Variant::Modular,
            Method::PimetalMaml => Variant::Maml,
        }
    }

    pub fn model(self) -> ModelKind {
        match self {
            Method::RgnScratch | Method::RgnWeightInit => ModelKind::Rgn,
            _ => ModelKind::Padgn,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .with_context(|| format!("unknown method `{s}`"))
    }
}

/// Which suites `generate` writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    MetaTrain,
    MetaTest,
}

impl SuiteKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SuiteKind::MetaTrain => "meta-train",
            SuiteKind::MetaTest => "meta-test",
        }
    }
}

/// Everything an experiment needs, in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub suites: Vec<SuiteKind>,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub shots: Vec<usize>,
    pub methods: Vec<Method>,
    /// Neighbourhood radius of the least-squares derivative baseline.
    pub fdm_hops: usize,
    pub train_family: FamilyConfig,
    pub test_family: FamilyConfig,
    pub meta: MetaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suites: vec![SuiteKind::MetaTrain, SuiteKind::MetaTest],
            train_tasks: 100,
            test_tasks: 10,
            shots: vec![5, 10],
            methods: Method::ALL.to_vec(),
            fdm_hops: 2,
            train_family: FamilyConfig::default(),
            test_family: FamilyConfig::meta_test(),
            meta: MetaConfig::default(),
        }
    }
}

pub const PRESETS: [(&str, &str); 3] = [
    ("paper-metatrain", include_str!("../presets/paper-metatrain.toml")),
    ("paper-metatest", include_str!("../presets/paper-metatest.toml")),
    ("desk", include_str!("../presets/desk.toml")),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .with_context(|| {
                let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
                format!("unknown preset `{name}` (available: {})", names.join(", "))
            })?;
        Self::from_toml(text).with_context(|| format!("preset `{name}`"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        for (fam, what) in [(&self.train_family, "train_family"), (&self.test_family, "test_family")] {
            fam.pde.validate().with_context(|| format!("{what}.pde"))?;
            if fam.nodes_min > fam.nodes_max {
                bail!("{what}: nodes_min exceeds nodes_max");
            }
        }
        if self.train_tasks == 0 || self.test_tasks == 0 {
            bail!("train_tasks and test_tasks must be at least 1");
        }
        let frames = self.test_family.pde.n_frames;
        for &k in &self.shots {
            if k < 2 || k >= frames {
                bail!("shots = {k} must lie in 2..{frames} for {frames}-frame tasks");
            }
        }
        Ok(())
    }

    /// Meta-train and meta-test PDE settings.
    pub fn pdes(&self) -> (&PdeConfig, &PdeConfig) {
        (&self.train_family.pde, &self.test_family.pde)
    }
}
