//! The JSON run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use perc_core::attacks::{Anneal, AttackConfig, AttackKind, Mode, Tier};
use perc_core::classifier::{Architecture, TrainConfig};
use perc_core::eval::{DEFAULT_BIT_DEPTHS, DEFAULT_JPEG_QUALITIES};
use perc_core::tuning::{Parameter, LAMBDA_GRID, STEP_SCALE_GRID};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Output directory; `--out` takes precedence. Defaults to `runs/` next to the config.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub campaigns: Vec<CampaignConfig>,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

/// Sizes of the procedural corpus `train` draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub image_size: usize,
    pub train_images: usize,
    pub validation_images: usize,
    /// Correctly classified validation images exported as the attack suite.
    pub suite_images: usize,
    /// Further correctly classified images exported for hyperparameter tuning.
    pub tuning_images: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            train_images: 3000,
            validation_images: 600,
            suite_images: 100,
            tuning_images: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureName {
    Small,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub architecture: ArchitectureName,
    /// Defaults to `<out>/models/<name>.ckpt`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_epochs() -> usize {
    15
}
fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_momentum() -> f64 {
    TrainConfig::default().momentum
}
fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}
fn default_weight_decay() -> f64 {
    TrainConfig::default().weight_decay
}

impl ModelSpec {
    pub fn new(name: &str, architecture: ArchitectureName) -> Self {
        Self {
            name: name.into(),
            architecture,
            checkpoint: None,
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn architecture(&self, size: usize, classes: usize) -> Architecture {
        match self.architecture {
            ArchitectureName::Small => Architecture::small(size, size, classes),
            ArchitectureName::Wide => Architecture::wide(size, size, classes),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    /// The model under attack.
    pub source: ModelSpec,
    /// Transfer targets.
    #[serde(default)]
    pub transfer: Vec<ModelSpec>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            source: ModelSpec::new("small", ArchitectureName::Small),
            transfer: vec![ModelSpec::new("wide", ArchitectureName::Wide)],
        }
    }
}

/// Image directories with a `manifest.csv`; default to the ones `train` exports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub suite: Option<PathBuf>,
    #[serde(default)]
    pub tuning: Option<PathBuf>,
}

/// A fixed κ, or a multiple of a quantile of the suite's clean logit margins
/// under the source model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Fixed(f64),
    CleanMargin(CleanMarginKappa),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanMarginKappa {
    pub clean_margin_quantile: f64,
    pub factor: f64,
}

impl Default for KappaSpec {
    fn default() -> Self {
        KappaSpec::Fixed(0.0)
    }
}

impl KappaSpec {
    /// Nearest-rank quantile of `margins`, times the factor.
    pub fn resolve(&self, margins: &[f64]) -> Result<f64> {
        match *self {
            KappaSpec::Fixed(k) => Ok(k),
            KappaSpec::CleanMargin(c) => {
                if margins.is_empty() {
                    return Err(CliError::Config("clean-margin κ needs a non-empty suite".into()));
                }
                let mut m = margins.to_vec();
                m.sort_by(f64::total_cmp);
                let rank = (c.clean_margin_quantile * m.len() as f64).ceil().max(1.0) as usize;
                Ok(c.factor * m[rank.min(m.len()) - 1].max(0.0))
            }
        }
    }
}

/// Field-level changes to the published defaults for one attack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOverrides {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub loss_step: Option<Anneal>,
    #[serde(default)]
    pub color_step: Option<Anneal>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub lambda_init: Option<f64>,
    #[serde(default)]
    pub lambda_range: Option<f64>,
    #[serde(default)]
    pub early_abort: Option<bool>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub epsilon_init: Option<f64>,
    #[serde(default)]
    pub max_rounds: Option<usize>,
}

impl AttackOverrides {
    pub fn apply(&self, c: &mut AttackConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(alpha, loss_step, color_step, learning_rate, lambda_init, lambda_range, early_abort, gamma, epsilon_init);
        if let Some(r) = self.max_rounds {
            c.budget.search_steps = r;
        }
    }

    /// Whether the override pins the parameter tuning would otherwise choose.
    pub fn fixes(&self, p: Parameter) -> bool {
        match p {
            Parameter::LambdaInit => self.lambda_init.is_some(),
            Parameter::StepScale => self.loss_step.is_some() || self.color_step.is_some() || self.epsilon_init.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub kappa: KappaSpec,
    pub attacks: Vec<AttackKind>,
    /// Budget tiers; I-FGSM has a single setting and ignores this.
    #[serde(default = "all_tiers")]
    pub tiers: Vec<Tier>,
    #[serde(default)]
    pub overrides: BTreeMap<AttackKind, AttackOverrides>,
}

fn all_tiers() -> Vec<Tier> {
    Tier::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub enabled: bool,
    /// Leading images of the tuning directory used for the search.
    pub images: usize,
    pub lambda_grid: Vec<f64>,
    pub step_scale_grid: Vec<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            images: 8,
            lambda_grid: LAMBDA_GRID.to_vec(),
            step_scale_grid: STEP_SCALE_GRID.to_vec(),
        }
    }
}

impl TuningConfig {
    pub fn grid(&self, p: Parameter) -> &[f64] {
        match p {
            Parameter::LambdaInit => &self.lambda_grid,
            Parameter::StepScale => &self.step_scale_grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub bit_depths: Vec<u8>,
    pub jpeg_qualities: Vec<u8>,
    /// Budget tier whose campaigns feed robustness, transfer and contact sheets.
    pub tier: Tier,
    pub contact_sheet_images: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            bit_depths: DEFAULT_BIT_DEPTHS.to_vec(),
            jpeg_qualities: DEFAULT_JPEG_QUALITIES.to_vec(),
            tier: Tier::High,
            contact_sheet_images: 6,
        }
    }
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let c = &self.corpus;
        if c.image_size < 4 || c.train_images == 0 || c.validation_images == 0 || c.suite_images == 0 {
            return bad("corpus sizes must be positive and image_size at least 4".into());
        }
        if c.suite_images + c.tuning_images > c.validation_images {
            return bad("suite_images + tuning_images exceeds validation_images".into());
        }
        let mut names = BTreeSet::new();
        for m in std::iter::once(&self.models.source).chain(&self.models.transfer) {
            if !safe_name(&m.name) || !names.insert(m.name.as_str()) {
                return bad(format!("model name `{}` is empty, unsafe or duplicated", m.name));
            }
            if m.epochs == 0 || m.batch_size == 0 || !(m.learning_rate > 0.0) {
                return bad(format!("model `{}` needs positive epochs, batch size and learning rate", m.name));
            }
        }
        let mut campaigns = BTreeSet::new();
        for camp in &self.campaigns {
            if !safe_name(&camp.name) || !campaigns.insert(camp.name.as_str()) {
                return bad(format!("campaign name `{}` is empty, unsafe or duplicated", camp.name));
            }
            if camp.attacks.is_empty() {
                return bad(format!("campaign `{}` selects no attacks", camp.name));
            }
            if camp.tiers.is_empty() {
                return bad(format!("campaign `{}` selects no tiers", camp.name));
            }
            match camp.kappa {
                KappaSpec::Fixed(k) if !(k >= 0.0 && k.is_finite()) => {
                    return bad(format!("campaign `{}`: kappa must be >= 0", camp.name));
                }
                KappaSpec::CleanMargin(m)
                    if !((0.0..=1.0).contains(&m.clean_margin_quantile) && m.factor > 0.0 && m.factor.is_finite()) =>
                {
                    return bad(format!("campaign `{}`: quantile must be in [0, 1] and factor positive", camp.name));
                }
                _ => {}
            }
            for (kind, o) in &camp.overrides {
                if !camp.attacks.contains(kind) {
                    return bad(format!("campaign `{}` overrides unselected attack {}", camp.name, kind.name()));
                }
                let mut probe = AttackConfig::defaults(*kind, camp.mode, 0.0, Tier::Low);
                o.apply(&mut probe);
                probe
                    .validate()
                    .map_err(|e| CliError::Config(format!("campaign `{}`: {e}", camp.name)))?;
            }
        }
        let t = &self.tuning;
        if t.enabled && t.images == 0 {
            return bad("tuning.images must be positive when tuning is enabled".into());
        }
        if t.enabled && t.images > self.corpus.tuning_images && self.dataset.tuning.is_none() {
            return bad("tuning.images exceeds corpus.tuning_images".into());
        }
        if t.lambda_grid.iter().chain(&t.step_scale_grid).any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("tuning grids must hold positive finite values".into());
        }
        if t.enabled && (t.lambda_grid.is_empty() || t.step_scale_grid.is_empty()) {
            return bad("tuning grids must be non-empty".into());
        }
        let e = &self.evaluation;
        if e.bit_depths.iter().any(|b| !(1..=8).contains(b)) {
            return bad("bit depths must lie in 1..=8".into());
        }
        if e.jpeg_qualities.iter().any(|q| !(1..=100).contains(q)) {
            return bad("JPEG qualities must lie in 1..=100".into());
        }
        Ok(())
    }
}

/// Deterministic per-purpose seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Resolved filesystem locations for one invocation.
#[derive(Debug, Clone)]
pub struct Layout {
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig, config_dir: &Path, out: Option<&Path>) -> Self {
        let base = config_dir.to_path_buf();
        let out = match (out, &config.output) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => base.join(o),
            (None, None) => base.join("runs"),
        };
        Self { base, out }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn checkpoint(&self, spec: &ModelSpec) -> PathBuf {
        match &spec.checkpoint {
            Some(p) => self.resolve(p),
            None => self.out.join("models").join(format!("{}.ckpt", spec.name)),
        }
    }

    pub fn suite(&self, config: &RunConfig) -> PathBuf {
        match &config.dataset.suite {
            Some(p) => self.resolve(p),
            None => self.out.join("suite"),
        }
    }

    pub fn tuning(&self, config: &RunConfig) -> PathBuf {
        match &config.dataset.tuning {
            Some(p) => self.resolve(p),
            None => self.out.join("tuning"),
        }
    }

    pub fn campaign(&self, name: &str) -> PathBuf {
        self.out.join("campaigns").join(name)
    }

    pub fn evaluation(&self, name: &str) -> PathBuf {
        self.out.join("evaluation").join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "seed": 3,
            "campaigns": [{"name": "c", "mode": "targeted", "attacks": ["cw", "perc_al"]}]
        })
    }

    fn parse(v: serde_json::Value) -> Result<RunConfig> {
        RunConfig::parse(&v.to_string(), Path::new("cfg.json"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse(minimal()).unwrap();
        assert_eq!(c.campaigns[0].tiers, Tier::ALL.to_vec());
        assert_eq!(c.campaigns[0].kappa, KappaSpec::Fixed(0.0));
        assert_eq!(c.models.transfer.len(), 1);
        assert_eq!(c.evaluation.bit_depths, DEFAULT_BIT_DEPTHS.to_vec());
    }

    #[test]
    fn unknown_fields_are_rejected_everywhere() {
        let mut v = minimal();
        v["sede"] = 1.into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["campaigns"][0]["kapa"] = 1.0.into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["corpus"] = serde_json::json!({"image_sise": 8});
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["campaigns"][0]["overrides"] = serde_json::json!({"cw": {"lamda_init": 2.0}});
        assert!(parse(v).is_err());
    }

    #[test]
    fn seed_and_version_are_required() {
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("seed");
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["schema_version"] = 2.into();
        assert!(matches!(parse(v), Err(CliError::Config(_))));
    }

    #[test]
    fn kappa_forms() {
        let mut v = minimal();
        v["campaigns"][0]["kappa"] = serde_json::json!({"clean_margin_quantile": 0.5, "factor": 2.0});
        let c = parse(v).unwrap();
        let k = c.campaigns[0].kappa.resolve(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(k, 4.0);
        let mut v = minimal();
        v["campaigns"][0]["kappa"] = (-1.0).into();
        assert!(parse(v).is_err());
    }

    #[test]
    fn overrides_must_name_selected_attacks() {
        let mut v = minimal();
        v["campaigns"][0]["overrides"] = serde_json::json!({"ddn": {"gamma": 0.1}});
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["campaigns"][0]["overrides"] = serde_json::json!({"cw": {"lambda_init": -1.0}});
        assert!(parse(v).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "validation"));
        assert_eq!(derive_seed(9, "x"), derive_seed(9, "x"));
    }
}
