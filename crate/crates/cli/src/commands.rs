//! `train`, `attack`, `evaluate` and `report`.
//!
//! Outputs never embed absolute paths or timings, so a rerun with the same
//! config, seed and checkpoints reproduces every file byte-for-byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use perc_core::attacks::{run, AttackConfig, AttackKind, AttackOutcome, Mode, Tier};
use perc_core::classifier::{self, logit_margin, Model, TrainReport};
use perc_core::corpus;
use perc_core::eval::{
    aggregate, robustness_eval, transfer_eval, AdversarialExample, OutcomeRecord, RobustnessCurve, Summary,
    TransferResult, TransformKind,
};
use perc_core::tuning::{self, Parameter, TuningResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, CampaignConfig, CorpusConfig, Layout, RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::{self, ImageRecord};
use crate::render;

/// A validated config plus where it reads from and writes to.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub layout: Layout,
    /// `--suite`: attack and evaluate only the first n suite images.
    pub suite_limit: Option<usize>,
}

impl Context {
    pub fn new(config: RunConfig, config_dir: &Path, out: Option<&Path>, suite_limit: Option<usize>) -> Result<Self> {
        config.validate()?;
        if suite_limit == Some(0) {
            return Err(CliError::Config("--suite must be positive".into()));
        }
        let layout = Layout::new(&config, config_dir, out);
        Ok(Self {
            config,
            layout,
            suite_limit,
        })
    }

    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>, suite_limit: Option<usize>) -> Result<Self> {
        let mut config = RunConfig::load(path)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &dir, out, suite_limit)
    }

    fn require(&self, path: &Path, what: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::Config(format!("{what} {} does not exist", path.display())))
        }
    }

    fn load_model(&self, spec: &crate::config::ModelSpec) -> Result<Model> {
        let path = self.layout.checkpoint(spec);
        self.require(&path, &format!("checkpoint for model `{}`", spec.name))?;
        Ok(classifier::load(&path)?)
    }

    fn suite(&self, model: &Model) -> Result<Vec<ImageRecord>> {
        let dir = self.layout.suite(&self.config);
        self.require(&dir, "suite directory")?;
        let mut records = manifest::ingest(&dir, Some(model.classes()))?;
        if let Some(n) = self.suite_limit {
            records.truncate(n);
        }
        check_dims(&records, model)?;
        Ok(records)
    }
}

fn check_dims(records: &[ImageRecord], model: &Model) -> Result<()> {
    for r in records {
        if r.image.dims() != model.input_dims() {
            return Err(CliError::Config(format!(
                "image {} is {:?} but the model expects {:?}",
                r.id,
                r.image.dims(),
                model.input_dims()
            )));
        }
    }
    Ok(())
}

pub fn tier_name(tier: Tier) -> &'static str {
    match tier {
        Tier::Low => "low",
        Tier::Mid => "mid",
        Tier::High => "high",
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Targeted => "targeted",
        Mode::Untargeted => "untargeted",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub name: String,
    pub role: String,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub models: Vec<TrainedModel>,
    pub suite_images: usize,
    pub tuning_images: usize,
}

/// Trains source and transfer models, then exports the correctly classified
/// held-out images as the attack suite and tuning set.
pub fn train(ctx: &Context) -> Result<TrainingSummary> {
    let cfg = &ctx.config;
    let c = &cfg.corpus;
    let classes = corpus::CLASS_COUNT;
    log::info!("rendering {} training and {} validation images", c.train_images, c.validation_images);
    let train_set = corpus::generate(c.train_images, c.image_size, derive_seed(cfg.seed, "train"))?;
    let validation = corpus::generate(c.validation_images, c.image_size, derive_seed(cfg.seed, "validation"))?;

    let mut models = Vec::new();
    let mut source = None;
    let specs = std::iter::once((&cfg.models.source, "source")).chain(cfg.models.transfer.iter().map(|m| (m, "transfer")));
    for (spec, role) in specs {
        log::info!("training `{}`", spec.name);
        let arch = spec.architecture(c.image_size, classes);
        let (model, report) = classifier::train(
            &train_set,
            &validation,
            arch,
            &spec.train_config(derive_seed(cfg.seed, &format!("model/{}", spec.name))),
        )?;
        let path = ctx.layout.checkpoint(spec);
        io::write_bytes(&path, &classifier::save_to_bytes(&model))?;
        log::info!("`{}` validation accuracy {:.3}", spec.name, report.validation_accuracy);
        models.push(TrainedModel {
            name: spec.name.clone(),
            role: role.into(),
            report,
        });
        if source.is_none() {
            source = Some(model);
        }
    }
    let source = source.expect("source model trained first");

    let mut correct = Vec::new();
    for s in &validation {
        if source.predict(&s.image)? == s.label {
            correct.push(s);
        }
    }
    if correct.len() < c.suite_images + c.tuning_images {
        return Err(CliError::Config(format!(
            "only {} validation images are classified correctly; need {}",
            correct.len(),
            c.suite_images + c.tuning_images
        )));
    }
    let export = |prefix: &str, items: &[&classifier::LabeledImage], dir: PathBuf| -> Result<()> {
        let rows: Vec<_> = items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let id = format!("{prefix}{i:04}");
                let target = corpus::target_for(s.label, classes, derive_seed(cfg.seed, &id));
                (id, &s.image, s.label, Some(target))
            })
            .collect();
        manifest::export(&dir, &rows)
    };
    export("s", &correct[..c.suite_images], ctx.layout.out.join("suite"))?;
    export(
        "t",
        &correct[c.suite_images..c.suite_images + c.tuning_images],
        ctx.layout.out.join("tuning"),
    )?;
    let summary = TrainingSummary {
        seed: cfg.seed,
        corpus: c.clone(),
        models,
        suite_images: c.suite_images,
        tuning_images: c.tuning_images,
    };
    io::write_json(&ctx.layout.out.join("training.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub attack: AttackKind,
    /// Absent for I-FGSM, which has a single setting.
    pub tier: Option<Tier>,
    pub budget: String,
    /// Relative to the campaign directory; holds `images/` and `records.csv`.
    pub directory: String,
    pub config: AttackConfig,
    pub tuning: Option<TuningResult>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub seed: u64,
    pub campaign: CampaignConfig,
    pub source_model: String,
    pub suite_size: usize,
    pub kappa: f64,
    pub entries: Vec<CampaignEntry>,
}

impl CampaignReport {
    pub fn entry(&self, attack: AttackKind, tier: Option<Tier>) -> Option<&CampaignEntry> {
        self.entries
            .iter()
            .find(|e| e.attack == attack && (e.tier == tier || e.tier.is_none()))
    }
}

fn entry_dir(kind: AttackKind, tier: Option<Tier>) -> String {
    match tier {
        Some(t) => format!("{}/{}", kind.name(), tier_name(t)),
        None => kind.name().to_string(),
    }
}

/// Operating points a campaign expands to.
pub fn campaign_points(campaign: &CampaignConfig) -> Vec<(AttackKind, Option<Tier>)> {
    let mut out = Vec::new();
    for &kind in &campaign.attacks {
        if kind == AttackKind::Ifgsm {
            out.push((kind, None));
        } else {
            out.extend(campaign.tiers.iter().map(|&t| (kind, Some(t))));
        }
    }
    out
}

/// Clean `Z_y − max_{i≠y} Z_i` for every image.
pub fn clean_margins(model: &Model, records: &[ImageRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| Ok(logit_margin(&model.forward(&r.image)?, r.label, true)?))
        .collect()
}

fn run_suite(
    kind: AttackKind,
    model: &Model,
    records: &[ImageRecord],
    targeted: bool,
    config: &AttackConfig,
) -> Result<Vec<AttackOutcome>> {
    records
        .par_iter()
        .map(|r| {
            run(kind, model, &r.image, r.goal(targeted), config).map_err(|e| CliError::Attack {
                id: r.id.clone(),
                source: e,
            })
        })
        .collect()
}

/// Runs every configured campaign over the suite.
pub fn attack(ctx: &Context) -> Result<Vec<CampaignReport>> {
    let cfg = &ctx.config;
    if cfg.campaigns.is_empty() {
        return Err(CliError::Config("no campaigns configured".into()));
    }
    let model = ctx.load_model(&cfg.models.source)?;
    let suite = ctx.suite(&model)?;
    if suite.is_empty() {
        return Err(CliError::Config("the suite is empty".into()));
    }
    let tuning_set = if cfg.tuning.enabled {
        let dir = ctx.layout.tuning(cfg);
        ctx.require(&dir, "tuning directory")?;
        let mut t = manifest::ingest(&dir, Some(model.classes()))?;
        if t.len() < cfg.tuning.images {
            return Err(CliError::Config(format!(
                "tuning directory has {} images, {} requested",
                t.len(),
                cfg.tuning.images
            )));
        }
        t.truncate(cfg.tuning.images);
        check_dims(&t, &model)?;
        t
    } else {
        Vec::new()
    };
    for camp in &cfg.campaigns {
        if camp.mode == Mode::Targeted {
            if let Some(r) = suite.iter().chain(&tuning_set).find(|r| r.target.is_none()) {
                return Err(CliError::Config(format!(
                    "campaign `{}` is targeted but image {} has no target label",
                    camp.name, r.id
                )));
            }
        }
    }
    let margins = clean_margins(&model, &suite)?;

    let mut reports = Vec::new();
    for camp in &cfg.campaigns {
        let kappa = camp.kappa.resolve(&margins)?;
        let targeted = camp.mode == Mode::Targeted;
        let dir = ctx.layout.campaign(&camp.name);
        log::info!("campaign `{}`: {} mode, κ = {kappa:.3}", camp.name, mode_name(camp.mode));
        let tuning_pairs: Vec<_> = tuning_set.iter().map(|r| (r.image.clone(), r.goal(targeted))).collect();
        let mut entries = Vec::new();
        for (kind, tier) in campaign_points(camp) {
            let mut config = AttackConfig::defaults(kind, camp.mode, kappa, tier.unwrap_or(Tier::High));
            config.seed = derive_seed(cfg.seed, &format!("{}/{}", camp.name, entry_dir(kind, tier)));
            let overrides = camp.overrides.get(&kind).cloned().unwrap_or_default();
            overrides.apply(&mut config);
            let mut tuned = None;
            if let Some(p) = Parameter::for_kind(kind).filter(|p| cfg.tuning.enabled && !overrides.fixes(*p)) {
                let result = tuning::tune(kind, &model, &tuning_pairs, &config, p, cfg.tuning.grid(p))?;
                log::info!("{}: tuned {:?} = {}", entry_dir(kind, tier), p, result.selected);
                config = p.apply(&config, result.selected);
                tuned = Some(result);
            }
            let outcomes = run_suite(kind, &model, &suite, targeted, &config)?;
            let sub = entry_dir(kind, tier);
            let mut records = Vec::with_capacity(outcomes.len());
            for (r, o) in suite.iter().zip(&outcomes) {
                io::write_png(&dir.join(&sub).join("images").join(format!("{}.png", r.id)), &o.adversarial)?;
                records.push(OutcomeRecord::new(&r.id, r.goal(targeted), o));
            }
            io::write_records(&dir.join(&sub).join("records.csv"), &records)?;
            let summary = aggregate(&records)?;
            log::info!(
                "{} ({}): success {:.1}%, mean C2 {}",
                kind.name(),
                config.budget.label(kind),
                summary.success_rate,
                opt(summary.mean_c2, 2)
            );
            entries.push(CampaignEntry {
                attack: kind,
                tier,
                budget: config.budget.label(kind),
                directory: sub,
                config,
                tuning: tuned,
                summary,
            });
        }
        let report = CampaignReport {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            campaign: camp.clone(),
            source_model: cfg.models.source.name.clone(),
            suite_size: suite.len(),
            kappa,
            entries,
        };
        io::write_json(&dir.join("report.json"), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub attack: AttackKind,
    pub tier: Option<Tier>,
    pub successes: usize,
    /// Successful images that re-ingest on the 8-bit grid and are still adversarial at κ = 0.
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub attack: AttackKind,
    pub tier: Option<Tier>,
    pub curves: Vec<RobustnessCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub attack: AttackKind,
    pub tier: Option<Tier>,
    pub model: String,
    /// Absent when the target model misclassifies every clean image.
    pub result: Option<TransferResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub campaign: String,
    pub tier: Tier,
    pub validity: Vec<ValidityRow>,
    pub robustness: Vec<RobustnessRow>,
    pub transfer: Vec<TransferRow>,
}

/// Re-reads a campaign entry's persisted images and records.
pub fn load_examples(
    campaign_dir: &Path,
    entry: &CampaignEntry,
    suite: &[ImageRecord],
) -> Result<(Vec<OutcomeRecord>, Vec<AdversarialExample>)> {
    let dir = campaign_dir.join(&entry.directory);
    let records = io::read_records(&dir.join("records.csv"))?;
    let mut examples = Vec::with_capacity(records.len());
    for rec in &records {
        let original = suite
            .iter()
            .find(|s| s.id == rec.id)
            .ok_or_else(|| CliError::Config(format!("record {} is not in the suite", rec.id)))?;
        let adversarial = io::read_image(&dir.join("images").join(format!("{}.png", rec.id)))?;
        let goal = perc_core::attacks::Goal {
            label: rec.label,
            target: rec.target,
        };
        examples.push(AdversarialExample {
            original: original.image.clone(),
            adversarial,
            goal,
            success: rec.success,
        });
    }
    Ok((records, examples))
}

fn load_campaign(ctx: &Context, name: &str) -> Result<CampaignReport> {
    let path = ctx.layout.campaign(name).join("report.json");
    ctx.require(&path, &format!("report for campaign `{name}`"))?;
    io::read_json(&path)
}

/// Validity, robustness curves, transfer rates, contact sheets and curve plots.
pub fn evaluate(ctx: &Context) -> Result<Vec<EvaluationReport>> {
    let cfg = &ctx.config;
    let source = ctx.load_model(&cfg.models.source)?;
    let targets = cfg
        .models
        .transfer
        .iter()
        .map(|m| Ok((m.name.clone(), ctx.load_model(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let suite = ctx.suite(&source)?;
    let camps = cfg
        .campaigns
        .iter()
        .map(|c| load_campaign(ctx, &c.name))
        .collect::<Result<Vec<_>>>()?;
    let tier = cfg.evaluation.tier;

    let mut reports = Vec::new();
    for camp in &camps {
        let name = &camp.campaign.name;
        log::info!("evaluating campaign `{name}`");
        let camp_dir = ctx.layout.campaign(name);
        let eval_dir = ctx.layout.evaluation(name);
        let mut validity = Vec::new();
        let mut robustness = Vec::new();
        let mut transfer = Vec::new();
        for entry in &camp.entries {
            let (_, examples) = load_examples(&camp_dir, entry, &suite)?;
            let checks: Vec<bool> = examples
                .par_iter()
                .filter(|e| e.success)
                .map(|e| {
                    let ok = e.adversarial.is_quantized()
                        && e.adversarial.dims() == e.original.dims()
                        && classifier::is_adversarial(&source.forward(&e.adversarial)?, e.goal.label, e.goal.target, 0.0)?;
                    Ok(ok)
                })
                .collect::<Result<_>>()?;
            validity.push(ValidityRow {
                attack: entry.attack,
                tier: entry.tier,
                successes: checks.len(),
                valid: checks.iter().filter(|v| **v).count(),
            });
            if entry.tier.is_some_and(|t| t != tier) {
                continue;
            }
            let curves = [
                (TransformKind::BitDepth, &cfg.evaluation.bit_depths),
                (TransformKind::Jpeg, &cfg.evaluation.jpeg_qualities),
            ]
            .into_iter()
            .map(|(t, grid)| Ok(robustness_eval(&source, &examples, t, grid)?))
            .collect::<Result<Vec<_>>>()?;
            robustness.push(RobustnessRow {
                attack: entry.attack,
                tier: entry.tier,
                curves,
            });
            for (model_name, target) in &targets {
                let result = match transfer_eval(&examples, target) {
                    Ok(r) => Some(r),
                    Err(perc_core::Error::EmptySuite) => {
                        log::warn!("`{model_name}` misclassifies every clean suite image");
                        None
                    }
                    Err(e) => return Err(e.into()),
                };
                transfer.push(TransferRow {
                    attack: entry.attack,
                    tier: entry.tier,
                    model: model_name.clone(),
                    result,
                });
            }
            let n = cfg.evaluation.contact_sheet_images.min(examples.len());
            let pairs: Vec<_> = examples[..n].iter().map(|e| (&e.original, &e.adversarial)).collect();
            if let Some(sheet) = render::contact_sheet(&pairs) {
                io::write_rgb(&eval_dir.join(format!("contact_{}.png", entry.attack.name())), &sheet)?;
            }
        }
        for (i, t) in [TransformKind::BitDepth, TransformKind::Jpeg].into_iter().enumerate() {
            let series: Vec<&[f64]> = robustness.iter().map(|r| r.curves[i].rates.as_slice()).collect();
            io::write_rgb(&eval_dir.join(format!("{}.png", t.name())), &render::curve_plot(&series))?;
        }
        let report = EvaluationReport {
            campaign: name.clone(),
            tier,
            validity,
            robustness,
            transfer,
        };
        io::write_json(&eval_dir.join("evaluation.json"), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Recomputes each entry's aggregate from its persisted per-image records.
pub fn regenerate_summaries(campaign_dir: &Path, report: &CampaignReport) -> Result<Vec<Summary>> {
    report
        .entries
        .iter()
        .map(|e| Ok(aggregate(&io::read_records(&campaign_dir.join(&e.directory).join("records.csv"))?)?))
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

/// Markdown summary of every campaign and, when present, its evaluation.
pub fn report(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let mut md = String::new();
    writeln!(md, "# Campaign report\n").unwrap();
    writeln!(md, "Seed {}. Source model `{}`.\n", cfg.seed, cfg.models.source.name).unwrap();
    for camp_cfg in &cfg.campaigns {
        let camp = load_campaign(ctx, &camp_cfg.name)?;
        let dir = ctx.layout.campaign(&camp_cfg.name);
        let regenerated = regenerate_summaries(&dir, &camp)?;
        for (e, s) in camp.entries.iter().zip(&regenerated) {
            if &e.summary != s {
                return Err(CliError::Parse {
                    path: dir.join(&e.directory).join("records.csv"),
                    message: "records no longer reproduce the stored aggregate".into(),
                });
            }
        }
        writeln!(
            md,
            "## {} ({}, κ = {:.2}, {} images)\n",
            camp.campaign.name,
            mode_name(camp.campaign.mode),
            camp.kappa,
            camp.suite_size
        )
        .unwrap();
        writeln!(md, "| Attack | Budget | Success (%) | L2 | L∞ | C2 | Tuned |").unwrap();
        writeln!(md, "|---|---|---|---|---|---|---|").unwrap();
        for e in &camp.entries {
            let tuned = e
                .tuning
                .as_ref()
                .map_or_else(|| "-".into(), |t| format!("{:?} = {}", t.parameter, t.selected));
            writeln!(
                md,
                "| {} | {} | {:.1} | {} | {} | {} | {} |",
                e.attack.display(),
                e.budget,
                e.summary.success_rate,
                opt(e.summary.mean_l2, 3),
                opt(e.summary.mean_linf, 2),
                opt(e.summary.mean_c2, 2),
                tuned
            )
            .unwrap();
        }
        writeln!(md).unwrap();
        let eval_path = ctx.layout.evaluation(&camp_cfg.name).join("evaluation.json");
        if !eval_path.exists() {
            continue;
        }
        let ev: EvaluationReport = io::read_json(&eval_path)?;
        let valid: usize = ev.validity.iter().map(|v| v.valid).sum();
        let total: usize = ev.validity.iter().map(|v| v.successes).sum();
        writeln!(md, "Persisted successful images still adversarial after re-ingest: {valid}/{total}.\n").unwrap();
        for (i, t) in [TransformKind::BitDepth, TransformKind::Jpeg].into_iter().enumerate() {
            let Some(first) = ev.robustness.first() else { break };
            let grid = &first.curves[i].grid;
            writeln!(md, "### Surviving {} (%), {} tier\n", t.name().replace('_', " "), tier_name(ev.tier)).unwrap();
            write!(md, "| Attack |").unwrap();
            grid.iter().for_each(|g| write!(md, " {g} |").unwrap());
            writeln!(md).unwrap();
            writeln!(md, "|---|{}", "---|".repeat(grid.len())).unwrap();
            for r in &ev.robustness {
                write!(md, "| {} |", r.attack.display()).unwrap();
                r.curves[i].rates.iter().for_each(|v| write!(md, " {v:.1} |").unwrap());
                writeln!(md).unwrap();
            }
            writeln!(md).unwrap();
        }
        if !ev.transfer.is_empty() {
            writeln!(md, "### Transfer (%)\n").unwrap();
            writeln!(md, "| Attack | Model | Filtered | Rate |").unwrap();
            writeln!(md, "|---|---|---|---|").unwrap();
            for t in &ev.transfer {
                let (n, rate) = t
                    .result
                    .as_ref()
                    .map_or(("0".into(), "-".into()), |r| (r.filtered.to_string(), format!("{:.1}", r.rate)));
                writeln!(md, "| {} | {} | {} | {} |", t.attack.display(), t.model, n, rate).unwrap();
            }
            writeln!(md).unwrap();
        }
    }
    io::write_bytes(&ctx.layout.out.join("report.md"), md.as_bytes())?;
    Ok(md)
}
