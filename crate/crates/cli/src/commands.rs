//! Subcommand bodies. Each returns [`CommandError`] so the binary can map
//! failures onto exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use conveyance::par::Execution;
use conveyance::{conveyance_loss_logits, LogitVector, LossBreakdown, LossParams, PlausibilityMatrix};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::{self, grid_points, ExperimentOutcome};
use crate::output::{append_ledger, matrix_text, write_atomic, write_json, write_manifest, write_timing};

#[derive(Debug)]
pub enum CommandError {
    /// Bad flags, files or configuration. Exit code 2.
    Invalid(anyhow::Error),
    /// Anything that went wrong after validation. Exit code 1.
    Runtime(anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Invalid(_) => 2,
            CommandError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Invalid(e) => write!(f, "invalid input: {e:#}"),
            CommandError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CommandError {}

fn invalid<E: Into<anyhow::Error>>(e: E) -> CommandError {
    CommandError::Invalid(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CommandError {
    CommandError::Runtime(e.into())
}

/// Flags shared by the training subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(kind: ExperimentKind, o: &RunOverrides) -> Result<ExperimentConfig, CommandError> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(kind, path).map_err(invalid)?,
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(seed) = o.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if let Some(a) = o.alpha {
        cfg.loss.alpha = a;
    }
    if let Some(b) = o.beta {
        cfg.loss.beta = b;
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

/// Runs a training experiment and writes its artifacts. Returns the outcome
/// and a human-readable summary.
pub fn run_experiment(
    kind: ExperimentKind,
    overrides: &RunOverrides,
    exec: Execution,
) -> Result<(ExperimentOutcome, String), CommandError> {
    let cfg = resolve_config(kind, overrides)?;
    log::info!("running {} over {} seed(s)", kind.name(), cfg.seeds.len());
    let outcome = experiments::run(&cfg, exec).map_err(runtime)?;
    write_outputs(&cfg, &outcome).map_err(runtime)?;
    let summary = summary_text(&cfg, &outcome);
    if !outcome.runs.is_empty() && outcome.runs.iter().all(|r| r.error.is_some()) {
        return Err(runtime(anyhow!("every run failed\n{summary}")));
    }
    Ok((outcome, summary))
}

pub fn write_outputs(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> anyhow::Result<()> {
    let dir = &cfg.output_dir;
    write_json(&dir.join("report.json"), outcome)?;
    append_ledger(&dir.join("metrics.csv"), cfg.experiment.name(), &outcome.runs)?;
    write_manifest(dir, cfg)?;
    write_timing(dir, outcome)?;
    for r in &outcome.runs {
        if let Some(rep) = &r.report {
            write_atomic(
                &dir.join(format!("confusion_{}.txt", run_tag(r))),
                matrix_text(&rep.confusion_matrix).as_bytes(),
            )?;
        }
    }
    if cfg.experiment == ExperimentKind::Sweep {
        let grid = cfg.sweep.as_ref().expect("validated");
        let heat = experiments::heatmap(outcome, cfg);
        let mut text = String::new();
        let betas: Vec<String> = grid.beta_values.iter().map(|b| b.to_string()).collect();
        let alphas: Vec<String> = grid.alpha_values.iter().map(|a| a.to_string()).collect();
        writeln!(text, "# rows alpha = {}", alphas.join(" ")).ok();
        writeln!(text, "# cols beta = {}", betas.join(" ")).ok();
        text.push_str(&matrix_text(&heat));
        write_atomic(&dir.join("heatmap.txt"), text.as_bytes())?;
    }
    if cfg.experiment == ExperimentKind::Toy2d {
        let points = grid_points(cfg.dataset.grid_resolution);
        for (r, grid) in outcome.runs.iter().zip(&outcome.grids) {
            if let Some(pred) = grid {
                let mut text = String::with_capacity(points.len() * 24);
                for (p, c) in points.iter().zip(pred) {
                    writeln!(text, "{} {} {}", p[0], p[1], c).ok();
                }
                write_atomic(&dir.join(format!("grid_{}.txt", run_tag(r))), text.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn run_tag(r: &experiments::RunRecord) -> String {
    match (r.alpha, r.beta) {
        (Some(a), Some(b)) if r.method == experiments::METHOD_CONVEYANCE => {
            format!("{}_a{a}_b{b}_seed{}", r.method, r.seed)
        }
        _ => format!("{}_seed{}", r.method, r.seed),
    }
}

pub fn summary_text(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> String {
    let mut out = format!("{} ({} seeds)\n", cfg.experiment.name(), cfg.seeds.len());
    for s in &outcome.summary {
        let label = match (s.alpha, s.beta) {
            (Some(a), Some(b)) => format!("{}(alpha={a}, beta={b})", s.method),
            _ => s.method.clone(),
        };
        let acc = s.accuracy.as_ref().map_or("n/a".to_string(), |a| a.to_string());
        let diag = s.diagonal_mass.as_ref().map_or("n/a".to_string(), |a| a.to_string());
        write!(out, "  {label:<36} accuracy {acc}  diagonal {diag}").ok();
        if let Some(r) = &s.negative_recall_in_positive_bags {
            write!(out, "  neg-recall-in-pos-bags {r}").ok();
        }
        if s.failures > 0 {
            write!(out, "  ({} failed)", s.failures).ok();
        }
        out.push('\n');
    }
    out
}

/// Inputs for `loss-eval`.
#[derive(Debug, Clone)]
pub struct LossEvalArgs {
    pub logits: PathBuf,
    pub q: PathBuf,
    pub targets: PathBuf,
    pub alpha: f64,
    pub beta: f64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossEvalRow {
    pub target: usize,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossEvalOutcome {
    pub alpha: f64,
    pub beta: f64,
    pub rows: Vec<LossEvalRow>,
    pub mean: f64,
}

fn read(path: &Path) -> Result<String, CommandError> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_logits(text: &str) -> anyhow::Result<Vec<LogitVector>> {
    data_lines(text)
        .map(|(line, l)| {
            let values = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|e| anyhow!("logits line {line}: {t:?}: {e}")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            LogitVector::new(values).map_err(|e| anyhow!("logits line {line}: {e}"))
        })
        .collect()
}

fn parse_targets(text: &str) -> anyhow::Result<Vec<usize>> {
    data_lines(text)
        .flat_map(|(line, l)| l.split_whitespace().map(move |t| (line, t)))
        .map(|(line, t)| t.parse::<usize>().map_err(|e| anyhow!("targets line {line}: {t:?}: {e}")))
        .collect()
}

pub fn load_q(path: &Path) -> Result<PlausibilityMatrix, CommandError> {
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        PlausibilityMatrix::from_json(&text)
    } else {
        PlausibilityMatrix::from_text(&text)
    };
    parsed
        .with_context(|| format!("Q matrix {}", path.display()))
        .map_err(invalid)
}

/// Evaluates the loss row by row and prints every intermediate.
pub fn loss_eval(args: &LossEvalArgs) -> Result<(LossEvalOutcome, String), CommandError> {
    let params = LossParams::new(args.alpha, args.beta).map_err(invalid)?;
    let q = load_q(&args.q)?;
    let logits = parse_logits(&read(&args.logits)?).map_err(invalid)?;
    let targets = parse_targets(&read(&args.targets)?).map_err(invalid)?;
    if logits.is_empty() {
        return Err(invalid(anyhow!("logits file holds no rows")));
    }
    if logits.len() != targets.len() {
        return Err(invalid(anyhow!(
            "{} logit rows but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut rows = Vec::with_capacity(logits.len());
    for (i, (z, &t)) in logits.iter().zip(&targets).enumerate() {
        if z.len() != q.class_count() {
            return Err(invalid(anyhow!(
                "logit row {} has {} classes but Q has {}",
                i + 1,
                z.len(),
                q.class_count()
            )));
        }
        let s = q
            .plausible_set(t)
            .with_context(|| format!("target on row {}", i + 1))
            .map_err(invalid)?;
        let breakdown = conveyance_loss_logits(z, &s, &params).map_err(runtime)?;
        rows.push(LossEvalRow { target: t, breakdown });
    }
    let mean = rows.iter().map(|r| r.breakdown.loss).sum::<f64>() / rows.len() as f64;
    let mut text = String::new();
    for (i, r) in rows.iter().enumerate() {
        let b = &r.breakdown;
        writeln!(
            text,
            "row {i}: target={} loss={} tau_0={} tau_alpha={} tau_beta={} z_t={} z_S={} z_N={} z_not_t={}",
            r.target, b.loss, b.tau_0, b.tau_alpha, b.tau_beta, b.z_target, b.z_s, b.z_n, b.z_not_t
        )
        .ok();
    }
    writeln!(text, "mean loss={mean}").ok();
    let outcome = LossEvalOutcome {
        alpha: args.alpha,
        beta: args.beta,
        rows,
        mean,
    };
    if let Some(dir) = &args.out {
        write_atomic(&dir.join("loss_eval.txt"), text.as_bytes()).map_err(runtime)?;
        write_json(&dir.join("loss_eval.json"), &outcome).map_err(runtime)?;
    }
    Ok((outcome, text))
}
