use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cajnet::config::{Bandwidth, Component, MuSetting, NeighborCount, PipelineConfig};
use cajnet::data::{
    load_feature_file, load_labels, save_feature_file, save_labels, synth_shifted_domains, DomainDataset, SynthParams,
};
use cajnet::discrepancy::{joint_discrepancy, joint_features_for};
use cajnet::{run_cajnet, Error};

#[derive(Parser)]
#[command(name = "cajnet", version, about = "Joint-feature domain adaptation over precomputed features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt a labelled source domain to an unlabelled target domain.
    Adapt(AdaptArgs),
    /// Write a synthetic pair of shifted domains.
    Synth(SynthArgs),
    /// Print marginal, conditional and joint discrepancies.
    Discrepancy(DiscrepancyArgs),
}

#[derive(Parser)]
struct AdaptArgs {
    #[arg(long)]
    source_features: PathBuf,
    #[arg(long)]
    source_labels: PathBuf,
    #[arg(long)]
    target_features: PathBuf,
    /// Used only to score the final predictions.
    #[arg(long)]
    target_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Neighbourhood size, or `auto` to tune it on the target.
    #[arg(long, default_value = "auto", value_parser = parse_k)]
    k: NeighborCount,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Adaptive factor, or `auto` to estimate it each round.
    #[arg(long, default_value = "auto", value_parser = parse_mu)]
    mu: MuSetting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Z-score both domains with source statistics.
    #[arg(long)]
    normalize: bool,
    /// Comma-separated subset of adversarial, topk, alignment.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<Component>,
}

#[derive(Parser)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    rotation: f64,
    #[arg(long, default_value_t = 2.0)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct DiscrepancyArgs {
    #[arg(long)]
    source_features: PathBuf,
    #[arg(long)]
    target_features: PathBuf,
    #[arg(long)]
    source_labels: PathBuf,
}

fn parse_k(s: &str) -> Result<NeighborCount, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(NeighborCount::default());
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(NeighborCount::Fixed(k)),
        _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
    }
}

fn parse_mu(s: &str) -> Result<MuSetting, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(MuSetting::Auto);
    }
    match s.parse::<f64>() {
        Ok(mu) if (0.0..=1.0).contains(&mu) => Ok(MuSetting::Fixed(mu)),
        _ => Err(format!("expected a value in [0, 1] or `auto`, got `{s}`")),
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

/// Loads a labelled domain; the class count is taken from the labels.
fn load_source(features: &Path, labels: &Path) -> Result<DomainDataset, Error> {
    let x = load_feature_file(features)?;
    let y = load_labels(labels, usize::MAX)?;
    let classes = y.iter().max().map_or(0, |m| m + 1);
    DomainDataset::new(x, Some(y), classes)
}

fn adapt(a: AdaptArgs) -> Result<(), Failure> {
    let defaults = PipelineConfig::default();
    let mut config = PipelineConfig {
        k: a.k,
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        adaptation_factor: a.tau.unwrap_or(defaults.adaptation_factor),
        eta: a.eta.unwrap_or(defaults.eta),
        lambda: a.lambda.unwrap_or(defaults.lambda),
        rho: a.rho.unwrap_or(defaults.rho),
        mu: a.mu,
        seed: a.seed,
        normalize_features: a.normalize,
        kernel_bandwidth: Bandwidth::Median,
        ..defaults
    };
    config = cajnet::ablate(&config, &a.disable);
    if a.tau.is_some() && a.disable.contains(&Component::Adversarial) {
        config.adaptation_factor = 0.0;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let source = load_source(&a.source_features, &a.source_labels)?;
    let xt = load_feature_file(&a.target_features)?;
    let target = match &a.target_labels {
        Some(p) => DomainDataset::new(xt, Some(load_labels(p, source.num_classes())?), source.num_classes())?,
        None => DomainDataset::unlabeled(xt, source.num_classes())?,
    };
    let report = run_cajnet(&source, &target, &config)?;
    report.write_to(&a.out)?;
    if let Some(t) = &report.topk {
        println!("k: {}", t.k);
    }
    if let Some(acc) = report.target_accuracy() {
        println!("target accuracy: {acc:.4}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let p = SynthParams {
        seed: a.seed,
        num_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        rotation_deg: a.rotation,
        shift_scale: a.shift,
    };
    let (s, t) = synth_shifted_domains(&p).map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    save_feature_file(s.features(), a.out.join("source_features.bin"))?;
    save_labels(s.labels().expect("labelled"), a.out.join("source_labels.txt"))?;
    save_feature_file(t.features(), a.out.join("target_features.bin"))?;
    save_labels(t.labels().expect("labelled"), a.out.join("target_labels.txt"))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn discrepancy(a: DiscrepancyArgs) -> Result<(), Failure> {
    let source = load_source(&a.source_features, &a.source_labels)?;
    let xt = load_feature_file(&a.target_features)?;
    let js = joint_features_for(source.features(), &source)?;
    let jt = joint_features_for(&xt, &source)?;
    let d = joint_discrepancy(&js, &jt)?;
    println!("marginal: {}", d.marginal);
    println!("conditional: {}", d.conditional);
    println!("joint: {}", d.total);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Adapt(a) => adapt(a),
        Command::Synth(a) => synth(a),
        Command::Discrepancy(a) => discrepancy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
