use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fpcp::artifacts::{
    hash_file, load_json, load_model, save_json, LoadedModel, ModelArtifact, RuleArtifact, RuleKind,
};
use fpcp::dataset::{load_dataset, save_dataset, save_truth};
use fpcp::fpcp_core::baselines::{
    fit_inner_threshold, fit_outer_threshold, fit_top_k, inner_epsilon, predict_fixed, FixedRule,
    TopKRule,
};
use fpcp::fpcp_core::calibration::{calibrate, predict_greedy};
use fpcp::fpcp_core::metrics::SizePartition;
use fpcp::fpcp_core::setfn::train::train_deepsets_logged;
use fpcp::fpcp_core::setfn::{fit_platt, MaxScore, SetFunction, TrainConfig};
use fpcp::fpcp_core::{CalibrationSet, NestedCandidates, PredictionSet, ScoredExample, Tolerance};
use fpcp::harness::{parse_k_grid, run_trials, sweep_k, Method, MethodConfig};
use fpcp::report::{write_csv, write_evaluate_summary, write_sweep_summary};
use fpcp::split::split_threeway;
use fpcp::synthetic::{generate_synthetic, SyntheticSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// False-positive-controlled conformal prediction for multi-label data.
///
/// Every subcommand reads an optional JSON config file; flags override it.
/// `--print-config` shows the merged configuration, including defaults.
#[derive(Debug, Parser)]
#[command(name = "fpcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print the merged configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground-truth sidecar.
    Generate(GenerateArgs),
    /// Split a dataset into base-model, set-function and calibration/test parts.
    Split(SplitArgs),
    /// Train a set function (DeepSets or Platt) or write the max-score model.
    TrainSetfn(TrainArgs),
    /// Calibrate an FP-CP threshold or fit a baseline rule.
    Calibrate(CalibrateArgs),
    /// Predict label sets with a model and a calibrated rule.
    Predict(PredictArgs),
    /// Run randomized calibration/test trials at one tolerance.
    Evaluate(EvaluateArgs),
    /// Run randomized trials over a grid of k values.
    Sweep(SweepArgs),
}

/// Input errors: bad flags or configs, or artifacts that do not fit together.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Usage>()
            || matches!(
                e.downcast_ref::<fpcp::Error>(),
                Some(fpcp::Error::Invalid(_) | fpcp::Error::Core(_))
            )
            || e.is::<fpcp::fpcp_core::Error>()
    })
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Defaults, then the config file, then flags.
fn resolve<C: Default + Serialize + DeserializeOwned>(
    config: Option<&Path>,
    flags: &impl Serialize,
) -> anyhow::Result<C> {
    let mut merged = serde_json::to_value(C::default())?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if !file.is_object() {
            bail!(usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        }
        overlay(&mut merged, file);
    }
    overlay(&mut merged, serde_json::to_value(flags)?);
    serde_json::from_value(merged).map_err(|e| usage(format!("invalid configuration: {e}")))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn print_config(config: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(config)?);
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    /// Generator config (JSON); flags override its fields.
    #[arg(long, alias = "config")]
    #[serde(skip)]
    spec: Option<PathBuf>,
    /// Dataset output (JSON lines).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Ground-truth sidecar output with per-label `p_true`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<PathBuf>,
    /// Number of examples (default 10000).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_examples: Option<usize>,
    /// Number of labels per example (default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_labels: Option<usize>,
    /// Mean positive fraction (default 0.15).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    base_rate: Option<f64>,
    /// Logit-space noise standard deviation (default 0.5).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    score_noise: Option<f64>,
    /// Temperature applied to the true logits (default 1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    miscalibration: Option<f64>,
    /// Random seed (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    #[serde(flatten)]
    spec: SyntheticSpec,
    out: Option<PathBuf>,
    truth: Option<PathBuf>,
}

fn cmd_generate(args: &GenerateArgs, print: bool) -> anyhow::Result<()> {
    let cfg: GenerateConfig = resolve(args.spec.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let out = required(&cfg.out, "out")?;
    cfg.spec.validate().map_err(|e| usage(e.to_string()))?;
    let synthetic = generate_synthetic(&cfg.spec)?;
    save_dataset(&synthetic.examples, out)?;
    if let Some(truth) = &cfg.truth {
        save_truth(&synthetic.truth, truth)?;
    }
    log::info!(
        "wrote {} examples to {}",
        synthetic.examples.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- split

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    /// Split config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset to split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Fractions for base, set-function and calibration/test parts
    /// (default 0.5,0.25,0.25).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    fracs: Option<Vec<f64>>,
    /// Random seed (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Output for the base-model part.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_base: Option<PathBuf>,
    /// Output for the set-function training part.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_setfn: Option<PathBuf>,
    /// Output for the calibration/test part.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_caltest: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SplitConfig {
    data: Option<PathBuf>,
    fracs: [f64; 3],
    seed: u64,
    out_base: Option<PathBuf>,
    out_setfn: Option<PathBuf>,
    out_caltest: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            data: None,
            fracs: [0.5, 0.25, 0.25],
            seed: 0,
            out_base: None,
            out_setfn: None,
            out_caltest: None,
        }
    }
}

fn cmd_split(args: &SplitArgs, print: bool) -> anyhow::Result<()> {
    let cfg: SplitConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let data = load_dataset(required(&cfg.data, "data")?)?;
    let outs = [
        required(&cfg.out_base, "out-base")?,
        required(&cfg.out_setfn, "out-setfn")?,
        required(&cfg.out_caltest, "out-caltest")?,
    ];
    let parts = split_threeway(data, cfg.fracs, cfg.seed).map_err(|e| usage(e.to_string()))?;
    for (part, out) in parts.iter().zip(outs) {
        save_dataset(part, out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train-setfn

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelKind {
    Deepsets,
    Platt,
    Max,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Training config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Set-function training data; must be disjoint from calibration data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Model kind (default deepsets).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<ModelKind>,
    /// Model output (JSON).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// DeepSets hidden width (default 64).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_dim: Option<usize>,
    /// Training epochs (default 20).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    /// Adam learning rate (default 0.001).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    /// Examples per gradient step (default 32).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    /// Random seed (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Largest supported set size (default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    b_max: Option<usize>,
    /// Ranked prefixes sampled per example (default 8).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sets_per_example: Option<usize>,
    /// Random subsets sampled per example (default 2).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    random_subsets: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainSetfnConfig {
    data: Option<PathBuf>,
    kind: ModelKind,
    out: Option<PathBuf>,
    #[serde(flatten)]
    train: TrainConfig,
}

impl Default for TrainSetfnConfig {
    fn default() -> Self {
        Self {
            data: None,
            kind: ModelKind::Deepsets,
            out: None,
            train: TrainConfig::default(),
        }
    }
}

fn cmd_train(args: &TrainArgs, print: bool) -> anyhow::Result<()> {
    let cfg: TrainSetfnConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let out = required(&cfg.out, "out")?;
    let artifact = match cfg.kind {
        ModelKind::Max => ModelArtifact::Max,
        kind => {
            let path = required(&cfg.data, "data")?;
            let data = load_dataset(path)?;
            let created_from = hash_file(path)?;
            let training_ids = data.iter().map(|ex| ex.id.clone()).collect();
            if kind == ModelKind::Platt {
                let pairs: Vec<(f64, bool)> = data
                    .iter()
                    .flat_map(|ex| {
                        ex.scores
                            .iter()
                            .enumerate()
                            .map(|(c, &s)| (s, ex.positives.contains(c)))
                    })
                    .collect();
                let p = fit_platt(&pairs)?;
                log::info!("Platt fit: a = {}, b = {}", p.a, p.b);
                ModelArtifact::Platt {
                    a: p.a,
                    b: p.b,
                    created_from,
                    training_ids,
                }
            } else {
                let model = train_deepsets_logged(&data, &cfg.train, |epoch, loss| {
                    log::info!("epoch {}: loss {loss:.6}", epoch + 1);
                })?;
                ModelArtifact::deepsets(model, cfg.train, created_from, training_ids)
            }
        }
    };
    save_json(&artifact, out)?;
    Ok(())
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ToleranceKind {
    Kfp,
    Kdfp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RuleChoice {
    Fpcp,
    Topk,
    Inner,
    Outer,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateArgs {
    /// Calibration config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Calibration data; must be disjoint from the model's training data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Set-function model; required for the fpcp rule.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Rule to fit (default fpcp).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleChoice>,
    /// Tolerance kind: kfp (E[FP] <= k) or kdfp (P(FP <= k) >= 1 - delta).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<ToleranceKind>,
    /// Tolerated number of false positives.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    /// Allowed failure probability; required with --kind kdfp.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    /// Chain truncation B (default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<usize>,
    /// Level for inner/outer sets (default k/B or delta for inner, 0.1 for outer).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// Rule output (JSON).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateConfig {
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    rule: RuleChoice,
    kind: ToleranceKind,
    k: Option<f64>,
    delta: Option<f64>,
    b: usize,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            rule: RuleChoice::Fpcp,
            kind: ToleranceKind::Kfp,
            k: None,
            delta: None,
            b: 100,
            epsilon: None,
            out: None,
        }
    }
}

fn tolerance(kind: ToleranceKind, k: Option<f64>, delta: Option<f64>) -> anyhow::Result<Tolerance> {
    let k = *required(&k, "k")?;
    let tol = match (kind, delta) {
        (ToleranceKind::Kfp, None) => Tolerance::k_fp(k),
        (ToleranceKind::Kfp, Some(_)) => bail!(usage("--delta is only valid with --kind kdfp")),
        (ToleranceKind::Kdfp, Some(d)) => Tolerance::k_delta_fp(k, d),
        (ToleranceKind::Kdfp, None) => bail!(usage("--kind kdfp requires --delta")),
    };
    tol.map_err(|e| usage(e.to_string()))
}

fn check_b(b: usize) -> anyhow::Result<()> {
    if b == 0 {
        bail!(usage("--b must be positive"));
    }
    Ok(())
}

/// Refuses data that overlaps the model's training examples.
fn check_disjoint(data: &[ScoredExample], model: &LoadedModel) -> anyhow::Result<()> {
    let train: HashSet<&str> = model
        .artifact
        .training_ids()
        .iter()
        .map(String::as_str)
        .collect();
    let shared = data
        .iter()
        .filter(|ex| train.contains(ex.id.as_str()))
        .count();
    if shared > 0 {
        bail!(usage(format!(
            "{shared} example(s) were used to train the set function; \
             calibration and test data must be disjoint from its training data"
        )));
    }
    Ok(())
}

fn chains(
    data: &[ScoredExample],
    b: usize,
    f: &(dyn SetFunction + Sync),
) -> anyhow::Result<Vec<NestedCandidates>> {
    use rayon::prelude::*;
    Ok(data
        .par_iter()
        .map(|ex| NestedCandidates::build(ex, b, f))
        .collect::<Result<_, _>>()?)
}

fn cmd_calibrate(args: &CalibrateArgs, print: bool) -> anyhow::Result<()> {
    let cfg: CalibrateConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let tol = tolerance(cfg.kind, cfg.k, cfg.delta)?;
    check_b(cfg.b)?;
    let data_path = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let model = match (&cfg.model, cfg.rule) {
        (Some(p), _) => Some(load_model(p)?),
        (None, RuleChoice::Fpcp) => bail!(usage("--model is required for the fpcp rule")),
        (None, _) => None,
    };
    let data = load_dataset(data_path)?;
    if data.is_empty() {
        bail!(usage("calibration data is empty"));
    }
    if let Some(m) = &model {
        check_disjoint(&data, m)?;
    }
    let mut rule = RuleArtifact {
        kind: RuleKind::Kfp,
        k: tol.k(),
        delta: tol.delta(),
        t_star: f64::INFINITY,
        n: data.len(),
        b: cfg.b,
        set_function_id: model
            .as_ref()
            .map_or_else(|| "none".into(), |m| m.hash.clone()),
        created_from: hash_file(data_path)?,
        k_prime: None,
        epsilon: None,
        sentinels: None,
    };
    match cfg.rule {
        RuleChoice::Fpcp => {
            let m = model.as_ref().expect("checked above");
            let f = m.model.set_function(tol);
            let cal = CalibrationSet::new(
                chains(&data, cfg.b, &*f)?
                    .into_iter()
                    .zip(data.iter().map(|ex| ex.positives.clone()))
                    .collect(),
            )?;
            rule.kind = match tol {
                Tolerance::KFp { .. } => RuleKind::Kfp,
                Tolerance::KDeltaFp { .. } => RuleKind::Kdfp,
            };
            rule.t_star = calibrate(&cal, tol)?.t_star;
        }
        RuleChoice::Topk => {
            let cal = CalibrationSet::new(
                chains(&data, cfg.b, &MaxScore)?
                    .into_iter()
                    .zip(data.iter().map(|ex| ex.positives.clone()))
                    .collect(),
            )?;
            rule.kind = RuleKind::Topk;
            rule.k_prime = Some(fit_top_k(&cal, tol)?.k_prime);
        }
        RuleChoice::Inner => {
            let eps = cfg.epsilon.unwrap_or_else(|| inner_epsilon(tol, cfg.b));
            let fit = fit_inner_threshold(&data, eps)?;
            rule.kind = RuleKind::Inner;
            rule.t_star = fit.tau;
            rule.epsilon = Some(eps);
            rule.sentinels = Some(fit.sentinels);
        }
        RuleChoice::Outer => {
            let eps = cfg.epsilon.unwrap_or(0.1);
            let fit = fit_outer_threshold(&data, eps)?;
            rule.kind = RuleKind::Outer;
            rule.t_star = fit.tau;
            rule.epsilon = Some(eps);
            rule.sentinels = Some(fit.sentinels);
        }
    }
    if let Some(s) = rule.sentinels.filter(|&s| s > 0) {
        log::warn!("{s} calibration example(s) received a -inf sentinel score");
    }
    log::info!("calibrated {:?} rule: t_star = {}", rule.kind, rule.t_star);
    save_json(&rule, out)?;
    Ok(())
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Prediction config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Examples to predict (JSON lines; positives are ignored).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// The model the rule was calibrated with (required for FP-CP rules).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Rule from `calibrate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<PathBuf>,
    /// Predictions output (JSON lines).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PredictConfig {
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    threshold: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    labels: &'a [usize],
    chain_index: usize,
}

fn cmd_predict(args: &PredictArgs, print: bool) -> anyhow::Result<()> {
    let cfg: PredictConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let rule: RuleArtifact = load_json(required(&cfg.threshold, "threshold")?)?;
    let out = required(&cfg.out, "out")?;
    check_b(rule.b)?;
    let model = cfg.model.as_ref().map(load_model).transpose()?;
    if let Some(m) = &model {
        if rule.set_function_id != "none" && m.hash != rule.set_function_id {
            bail!(usage(format!(
                "model {} does not match the threshold (calibrated with set function {})",
                m.hash, rule.set_function_id
            )));
        }
    }
    let data = load_dataset(required(&cfg.data, "data")?)?;
    let preds: Vec<PredictionSet> = match rule.kind {
        RuleKind::Kfp | RuleKind::Kdfp => {
            let Some(m) = &model else {
                bail!(usage("--model is required for FP-CP thresholds"));
            };
            let tol = rule.tolerance()?;
            let f = m.model.set_function(tol);
            let threshold = fpcp::fpcp_core::CalibratedThreshold {
                t_star: rule.t_star,
                tolerance: tol,
                n_calibration: rule.n,
                truncation_b: rule.b,
            };
            chains(&data, rule.b, &*f)?
                .iter()
                .map(|c| predict_greedy(c, &threshold))
                .collect::<Result<_, _>>()?
        }
        kind => {
            let fixed = match kind {
                RuleKind::Topk => FixedRule::TopK(TopKRule {
                    k_prime: rule
                        .k_prime
                        .ok_or_else(|| usage("topk rule is missing k_prime"))?,
                }),
                RuleKind::Inner => FixedRule::Inner { tau: rule.t_star },
                _ => FixedRule::Outer { tau: rule.t_star },
            };
            data.iter()
                .map(|ex| predict_fixed(ex, &fixed, rule.b))
                .collect()
        }
    };
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    for p in &preds {
        serde_json::to_writer(
            &mut w,
            &PredictionRecord {
                id: &p.example_id,
                labels: &p.labels,
                chain_index: p.chain_index,
            },
        )?;
        std::io::Write::write_all(&mut w, b"\n")?;
    }
    std::io::Write::flush(&mut w)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate / sweep

#[derive(Debug, Args, Serialize)]
struct TrialArgs {
    /// Pool of calibration/test data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Method to evaluate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    /// Set-function model; required for fpcp-nn and fpcp-sum.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Number of random trials (default 1000).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// Random seed (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Allowed failure probability; selects (k, delta)-FP control.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    /// Chain truncation B (default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<usize>,
    /// Calibration fraction of each trial (default 0.8).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_frac: Option<f64>,
    /// Outer-set miscoverage level (default 0.1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    outer_epsilon: Option<f64>,
    /// Inner-set level (default k/B under kfp, delta under kdfp).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_epsilon: Option<f64>,
    /// Per-trial CSV output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// JSON summary output (default: --out with a .json extension).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrialConfig {
    data: Option<PathBuf>,
    method: Option<Method>,
    model: Option<PathBuf>,
    trials: usize,
    seed: u64,
    delta: Option<f64>,
    b: usize,
    split_frac: f64,
    outer_epsilon: f64,
    inner_epsilon: Option<f64>,
    /// Inclusive prediction-size bins for SSFP (default [0,0], [1,10], [11,50], [51,B]).
    size_bins: Option<Vec<(usize, usize)>>,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            data: None,
            method: None,
            model: None,
            trials: 1000,
            seed: 0,
            delta: None,
            b: 100,
            split_frac: 0.8,
            outer_epsilon: 0.1,
            inner_epsilon: None,
            size_bins: None,
            out: None,
            summary: None,
        }
    }
}

struct TrialSetup {
    data: Vec<ScoredExample>,
    method: MethodConfig,
    out: PathBuf,
    summary: PathBuf,
}

fn trial_setup(cfg: &TrialConfig) -> anyhow::Result<TrialSetup> {
    let method = *required(&cfg.method, "method")?;
    check_b(cfg.b)?;
    if cfg.trials == 0 {
        bail!(usage("--trials must be at least 1"));
    }
    if !(cfg.split_frac > 0.0 && cfg.split_frac < 1.0) {
        bail!(usage("--split-frac must lie in (0, 1)"));
    }
    let out = required(&cfg.out, "out")?.clone();
    let summary = cfg
        .summary
        .clone()
        .unwrap_or_else(|| out.with_extension("json"));
    let model = match (&cfg.model, method) {
        (Some(p), _) => Some(load_model(p)?),
        (None, Method::FpcpNn | Method::FpcpSum) => {
            bail!(usage(format!("--model is required for method {method}")))
        }
        (None, _) => None,
    };
    let data = load_dataset(required(&cfg.data, "data")?)?;
    if let Some(m) = &model {
        check_disjoint(&data, m)?;
    }
    let mut mc = MethodConfig::new(method, cfg.b);
    mc.model = model.map(|m| m.model);
    mc.outer_epsilon = cfg.outer_epsilon;
    mc.inner_epsilon = cfg.inner_epsilon;
    if let Some(bins) = &cfg.size_bins {
        mc.partition = SizePartition::new(bins.clone(), cfg.b).map_err(|e| usage(e.to_string()))?;
    }
    Ok(TrialSetup {
        data,
        method: mc,
        out,
        summary,
    })
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Evaluation config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Tolerated number of false positives.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    trial: TrialArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvaluateConfig {
    k: Option<f64>,
    #[serde(flatten)]
    trial: TrialConfig,
}

fn kind_of(delta: Option<f64>) -> ToleranceKind {
    if delta.is_some() {
        ToleranceKind::Kdfp
    } else {
        ToleranceKind::Kfp
    }
}

fn cmd_evaluate(args: &EvaluateArgs, print: bool) -> anyhow::Result<()> {
    let cfg: EvaluateConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let tol = tolerance(kind_of(cfg.trial.delta), cfg.k, cfg.trial.delta)?;
    let setup = trial_setup(&cfg.trial)?;
    let report = run_trials(
        &setup.data,
        &setup.method,
        tol,
        cfg.trial.trials,
        cfg.trial.split_frac,
        cfg.trial.seed,
    )?;
    write_csv([&report], &setup.out)?;
    write_evaluate_summary(&report, &setup.summary)?;
    let a = &report.aggregate;
    log::info!(
        "{}: TPR {:.4}, avg FP {:.4} (SE {:.4}), P(FP <= k) {:.4}",
        report.method,
        a.tpr.mean,
        a.avg_fp.mean,
        a.avg_fp.se,
        a.frac_fp_le_k.mean
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    /// Sweep config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// k values: `lo:hi`, `lo:hi:step` or a comma-separated list (default 1:B).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_grid: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    trial: TrialArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SweepConfig {
    k_grid: Option<String>,
    #[serde(flatten)]
    trial: TrialConfig,
}

fn cmd_sweep(args: &SweepArgs, print: bool) -> anyhow::Result<()> {
    let cfg: SweepConfig = resolve(args.config.as_deref(), args)?;
    if print {
        return print_config(&cfg);
    }
    let grid_text = cfg
        .k_grid
        .clone()
        .unwrap_or_else(|| format!("1:{}", cfg.trial.b));
    let grid = parse_k_grid(&grid_text).map_err(|e| usage(e.to_string()))?;
    let setup = trial_setup(&cfg.trial)?;
    let sweep = sweep_k(
        &setup.data,
        &setup.method,
        &grid,
        cfg.trial.delta,
        cfg.trial.trials,
        cfg.trial.split_frac,
        cfg.trial.seed,
    )?;
    write_csv(&sweep.reports, &setup.out)?;
    write_sweep_summary(&sweep, &setup.summary)?;
    log::info!(
        "{}: TPR AUC {:.4} (raw {:.4})",
        sweep.method,
        sweep.tpr_auc.normalized,
        sweep.tpr_auc.raw
    );
    Ok(())
}

// ---------------------------------------------------------------- main

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let print = cli.print_config;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, print),
        Command::Split(a) => cmd_split(a, print),
        Command::TrainSetfn(a) => cmd_train(a, print),
        Command::Calibrate(a) => cmd_calibrate(a, print),
        Command::Predict(a) => cmd_predict(a, print),
        Command::Evaluate(a) => cmd_evaluate(a, print),
        Command::Sweep(a) => cmd_sweep(a, print),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 2 } else { 1 })
        }
    }
}
