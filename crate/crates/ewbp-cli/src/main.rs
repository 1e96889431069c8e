//! Command-line front end: train ensembles, sweep FER/BER curves, decode
//! single frames, and inspect partitions, latency, and member diversity.
//!
//! Worker count comes from the RAYON_NUM_THREADS environment variable;
//! results are byte-identical whatever its value. Everything else is flags,
//! optionally seeded from a TOML config file whose keys mirror the long
//! flag names (flags win on conflict).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use ewbp::crc::{parse_generator_msb_first, CrcSpec, PartitionKind, PartitionStrategy};
use ewbp::ensemble::EnsembleModel;
use ewbp::harness::{
    crc_histogram, diversity_report, flops_curve, run_fer, run_fer_paired, write_results,
    EvalConfig, EvalMode, StopRule,
};
use ewbp::polar::PolarCode;
use ewbp::training::{train_ensemble, TrainConfig};

/// Generator of the default CRC, degree 11, as an MSB-first bit string.
const DEFAULT_CRC: &str = "111000100001";

#[derive(Parser)]
#[command(
    name = "ewbp",
    version,
    about = "CRC-gated ensembles of weighted belief-propagation decoders for polar codes",
    after_help = "Set RAYON_NUM_THREADS to control the worker count; outputs do not depend on it."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a code's frozen set, reliable positions, and channel qualities.
    Construct(ConstructArgs),
    /// Train an ensemble and write its model file.
    Train(TrainArgs),
    /// Monte Carlo FER/BER sweep of a model.
    Eval(EvalArgs),
    /// Decode one frame of channel LLRs from a file.
    Decode(DecodeArgs),
    /// Expected-latency curve of a model across SNR.
    Flops(FlopsArgs),
    /// Gate-failure counts per partition region at one SNR.
    PartitionStats(PartitionStatsArgs),
    /// Per-member rescue statistics on gate-failed frames.
    Diversity(DiversityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Msb,
    Uniform,
    BitsSum,
    BitsSumMod,
}

impl From<StrategyArg> for PartitionKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Msb => PartitionKind::Msb,
            StrategyArg::Uniform => PartitionKind::Uniform,
            StrategyArg::BitsSum => PartitionKind::BitsSum,
            StrategyArg::BitsSumMod => PartitionKind::BitsSumMod,
        }
    }
}

fn parse_strategy_name(s: &str) -> Result<StrategyArg> {
    StrategyArg::from_str(s, true).map_err(|_| {
        anyhow::anyhow!("unknown strategy '{s}' (expected msb, uniform, bits-sum, or bits-sum-mod)")
    })
}

// ---------------------------------------------------------------- parsing --

/// "N,K" block and information lengths.
fn parse_code(s: &str) -> Result<(usize, usize)> {
    let (n, k) = s.split_once(',').with_context(|| format!("expected N,K, got '{s}'"))?;
    Ok((
        n.trim().parse().with_context(|| format!("bad block length '{n}'"))?,
        k.trim().parse().with_context(|| format!("bad info length '{k}'"))?,
    ))
}

/// SNR specs: a single value, a comma list, or an inclusive lo:hi:step range.
fn parse_snrs(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let snrs = match parts.as_slice() {
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad SNR '{v}'")))
            .collect::<Result<Vec<f64>>>()?,
        [lo, hi, step] => {
            let lo: f64 = lo.trim().parse().with_context(|| format!("bad SNR '{lo}'"))?;
            let hi: f64 = hi.trim().parse().with_context(|| format!("bad SNR '{hi}'"))?;
            let step: f64 = step.trim().parse().with_context(|| format!("bad step '{step}'"))?;
            if !(step > 0.0) {
                bail!("SNR step must be positive, got {step}");
            }
            if hi < lo {
                bail!("SNR range end {hi} lies below start {lo}");
            }
            let mut out = Vec::new();
            let mut k = 0u32;
            loop {
                let v = lo + f64::from(k) * step;
                if v > hi + step * 1e-9 {
                    break;
                }
                // Snap accumulated float error for clean CSV values.
                out.push((v * 1e9).round() / 1e9);
                k += 1;
            }
            out
        }
        _ => bail!("expected a value, a comma list, or lo:hi:step, got '{s}'"),
    };
    if snrs.is_empty() {
        bail!("the SNR spec '{s}' is empty");
    }
    if snrs.iter().any(|v| !v.is_finite()) {
        bail!("SNRs must be finite");
    }
    Ok(snrs)
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_model(path: &Path) -> Result<EnsembleModel> {
    EnsembleModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn build_crc(poly: &str, info_len: usize) -> Result<CrcSpec> {
    let coeffs = parse_generator_msb_first(poly)?;
    let parity = coeffs.len() - 1;
    if parity >= info_len {
        bail!(
            "a degree-{parity} CRC leaves no message bits in {info_len} information positions"
        );
    }
    Ok(CrcSpec::new(&coeffs, info_len - parity)?)
}

// -------------------------------------------------------------- construct --

#[derive(Args)]
struct ConstructArgs {
    /// Block and information lengths as "N,K".
    #[arg(long)]
    code: String,
    /// Initial erasure parameter of the channel-quality recursion.
    #[arg(long, default_value_t = 0.5)]
    design_param: f64,
}

fn cmd_construct(args: ConstructArgs) -> Result<()> {
    let (n, k) = parse_code(&args.code)?;
    let code = PolarCode::construct(n, k, args.design_param)?;
    println!("code ({n},{k}), {} stages, design parameter {}", code.stages(), args.design_param);
    let frozen: Vec<String> = code.frozen_positions().iter().map(|p| p.to_string()).collect();
    println!("frozen positions: {}", frozen.join(" "));
    let reliable: Vec<String> =
        code.reliable_positions().iter().map(|p| p.to_string()).collect();
    println!("reliable positions: {}", reliable.join(" "));
    println!("position  bhattacharyya");
    for (i, z) in code.bhattacharyya().iter().enumerate() {
        println!("{i:>8}  {z}");
    }
    Ok(())
}

// ------------------------------------------------------------------ train --

#[derive(Args)]
struct TrainArgs {
    /// TOML config whose keys mirror these flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Block and information lengths as "N,K".
    #[arg(long)]
    code: Option<String>,
    /// Number of partition regions and ensemble members.
    #[arg(long)]
    alpha: Option<usize>,
    /// BP/WBP iteration count T.
    #[arg(long)]
    iters: Option<usize>,
    /// Training SNRs in dB: comma list or lo:hi:step.
    #[arg(long)]
    snrs: Option<String>,
    #[arg(long)]
    frames_per_snr: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam steps per epoch.
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generator polynomial, MSB first, as hex (0x...) or a bit string.
    #[arg(long)]
    crc_poly: Option<String>,
    #[arg(long)]
    design_param: Option<f64>,
    /// Channel rate override for noise scaling; defaults to K/N.
    #[arg(long)]
    rate: Option<f64>,
    /// Validation-checkpoint cadence in epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output model path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TrainFile {
    code: Option<String>,
    alpha: Option<usize>,
    iters: Option<usize>,
    snrs: Option<String>,
    frames_per_snr: Option<u64>,
    epochs: Option<usize>,
    batches: Option<usize>,
    lr: Option<f64>,
    strategy: Option<String>,
    seed: Option<u64>,
    crc_poly: Option<String>,
    design_param: Option<f64>,
    rate: Option<f64>,
    checkpoint_every: Option<usize>,
    out: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file: TrainFile = read_config(args.config.as_deref())?;
    let code_spec = args.code.or(file.code).context("--code is required")?;
    let (n, k) = parse_code(&code_spec)?;
    let design_param = args.design_param.or(file.design_param).unwrap_or(0.5);
    let code = PolarCode::construct(n, k, design_param)?;

    let strategy_kind: PartitionKind = match (args.strategy, file.strategy) {
        (Some(s), _) => s.into(),
        (None, Some(name)) => parse_strategy_name(&name)?.into(),
        (None, None) => PartitionKind::Msb,
    };
    let alpha = args.alpha.or(file.alpha).unwrap_or(4);
    let strategy = PartitionStrategy::new(strategy_kind, alpha)?;

    let crc_poly = args.crc_poly.or(file.crc_poly).unwrap_or_else(|| DEFAULT_CRC.into());
    let crc = build_crc(&crc_poly, code.info_len())?;

    let seed = args.seed.or(file.seed).unwrap_or(0);
    let defaults = TrainConfig::recommended(&code, strategy, seed);
    let snrs_db = match args.snrs.or(file.snrs) {
        Some(spec) => parse_snrs(&spec)?,
        None => defaults.snrs_db.clone(),
    };
    let config = TrainConfig {
        snrs_db,
        frames_per_snr: args
            .frames_per_snr
            .or(file.frames_per_snr)
            .unwrap_or(defaults.frames_per_snr),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batches_per_epoch: args.batches.or(file.batches).unwrap_or(defaults.batches_per_epoch),
        lr: args.lr.or(file.lr).unwrap_or(defaults.lr),
        checkpoint_every: args
            .checkpoint_every
            .or(file.checkpoint_every)
            .unwrap_or(defaults.checkpoint_every),
        iterations: args.iters.or(file.iters).unwrap_or(defaults.iterations),
        strategy,
        seed,
        rate: args.rate.or(file.rate),
    };
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("model.json"));

    eprintln!(
        "training ({n},{k}) alpha={alpha} strategy={} T={} over {:?} dB, {} frames/SNR, {} epochs",
        strategy.kind.name(),
        config.iterations,
        config.snrs_db,
        config.frames_per_snr,
        config.epochs
    );
    let model = train_ensemble(&code, &crc, &config)?;
    model.save(&out)?;
    if let Some(meta) = model.metadata() {
        for (i, (size, bce)) in meta.bucket_sizes.iter().zip(&meta.validation_bce).enumerate() {
            eprintln!("member {}: {size} frames, validation BCE {bce:.6}", i + 1);
        }
    }
    println!("{}", out.display());
    Ok(())
}

// ------------------------------------------------------------------- eval --

#[derive(Args)]
struct EvalArgs {
    /// TOML config whose keys mirror these flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// SNRs in dB: comma list or lo:hi:step.
    #[arg(long)]
    snr: Option<String>,
    /// Stop a point once it has this many frame errors.
    #[arg(long)]
    min_errors: Option<u64>,
    /// Hard frame cap per point.
    #[arg(long)]
    max_frames: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Channel rate override for noise scaling; defaults to K/N.
    #[arg(long)]
    rate: Option<f64>,
    /// Evaluate the plain BP gate without members.
    #[arg(long)]
    gate_only: bool,
    /// Run gate and ensemble on identical frames and report both.
    #[arg(long, conflicts_with = "gate_only")]
    paired: bool,
    /// Frames per point in paired mode.
    #[arg(long)]
    frames: Option<u64>,
    /// Output CSV path (a .json sidecar lands next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct EvalFile {
    model: Option<PathBuf>,
    snr: Option<String>,
    min_errors: Option<u64>,
    max_frames: Option<u64>,
    seed: Option<u64>,
    rate: Option<f64>,
    gate_only: Option<bool>,
    paired: Option<bool>,
    frames: Option<u64>,
    out: Option<PathBuf>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file: EvalFile = read_config(args.config.as_deref())?;
    let model_path = args.model.or(file.model).context("--model is required")?;
    let model = load_model(&model_path)?;
    let snr_spec = args.snr.or(file.snr).context("--snr is required")?;
    let snrs_db = parse_snrs(&snr_spec)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let rate = args.rate.or(file.rate);
    let out = args.out.or(file.out).context("--out is required")?;

    if args.paired || file.paired.unwrap_or(false) {
        let frames = args.frames.or(file.frames).unwrap_or(100_000);
        let points = run_fer_paired(&model, &snrs_db, frames, seed, rate)?;
        let mut text = String::from(
            "snr_db,frames,gate_frame_errors,ensemble_frame_errors,gate_only_errors,ensemble_only_errors\n",
        );
        for p in &points {
            println!(
                "{} dB: gate {} vs ensemble {} errors ({} rescued, {} introduced)",
                p.snr_db,
                p.gate_frame_errors,
                p.ensemble_frame_errors,
                p.gate_only_errors,
                p.ensemble_only_errors
            );
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.snr_db,
                p.frames,
                p.gate_frame_errors,
                p.ensemble_frame_errors,
                p.gate_only_errors,
                p.ensemble_only_errors
            ));
        }
        fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        return Ok(());
    }

    let gate_only = args.gate_only || file.gate_only.unwrap_or(false);
    let config = EvalConfig {
        snrs_db,
        mode: if gate_only { EvalMode::GateOnly } else { EvalMode::Ensemble },
        stop: StopRule {
            min_frame_errors: args.min_errors.or(file.min_errors).unwrap_or(500),
            max_frames: args.max_frames.or(file.max_frames).unwrap_or(10_000_000),
        },
        seed,
        rate,
    };
    let result = run_fer(&model, &config)?;
    for p in &result.points {
        println!(
            "{} dB: FER {:.3e} ({}/{} frames){}",
            p.snr_db,
            p.fer,
            p.frame_errors,
            p.frames,
            if p.censored { " censored" } else { "" }
        );
    }
    write_results(&result, &out)?;
    Ok(())
}

// ------------------------------------------------------------------ decode --

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// File of channel LLRs, one real per line.
    #[arg(long)]
    llr: PathBuf,
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let text =
        fs::read_to_string(&args.llr).with_context(|| format!("reading {}", args.llr.display()))?;
    let mut llr = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        llr.push(
            line.parse::<f64>()
                .with_context(|| format!("{}:{}: bad LLR '{line}'", args.llr.display(), i + 1))?,
        );
    }
    let n = model.code().block_len();
    if llr.len() != n {
        bail!("expected {n} LLRs for this code, found {}", llr.len());
    }
    let outcome = model.decode(&llr)?;
    let n_m = model.crc().message_len();
    let message: String = outcome.info[..n_m].iter().map(|b| char::from(b'0' + b)).collect();
    println!("message {message}");
    println!("path {}", outcome.path);
    println!("members invoked {}", outcome.members_invoked);
    Ok(())
}

// ------------------------------------------------------------------- flops --

#[derive(Args)]
struct FlopsArgs {
    #[arg(long)]
    model: PathBuf,
    /// SNRs in dB: comma list or lo:hi:step.
    #[arg(long)]
    snr: String,
    /// Stop a point once it has this many gate failures.
    #[arg(long, default_value_t = 500)]
    min_errors: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_frames: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let snrs = parse_snrs(&args.snr)?;
    let stop = StopRule { min_frame_errors: args.min_errors, max_frames: args.max_frames };
    let points = flops_curve(&model, &snrs, stop, args.seed, args.rate)?;
    let mut text =
        String::from("snr_db,frames,gate_failures,gate_fail_prob,tau,tau_lower,tau_upper\n");
    for p in &points {
        println!("{} dB: gate fails {:.4}, tau {:.2}", p.snr_db, p.gate_fail_prob, p.tau);
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.snr_db, p.frames, p.gate_failures, p.gate_fail_prob, p.tau, p.tau_lower, p.tau_upper
        ));
    }
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

// --------------------------------------------------------- partition-stats --

#[derive(Args)]
struct PartitionStatsArgs {
    /// Block and information lengths as "N,K".
    #[arg(long)]
    code: String,
    #[arg(long)]
    alpha: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Msb)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    #[arg(long, default_value_t = 100_000)]
    frames: u64,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator polynomial, MSB first, as hex (0x...) or a bit string.
    #[arg(long, default_value = DEFAULT_CRC)]
    crc_poly: String,
    #[arg(long, default_value_t = 0.5)]
    design_param: f64,
    #[arg(long)]
    rate: Option<f64>,
    /// Optional CSV path; the table always prints to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_partition_stats(args: PartitionStatsArgs) -> Result<()> {
    let (n, k) = parse_code(&args.code)?;
    let code = PolarCode::construct(n, k, args.design_param)?;
    let crc = build_crc(&args.crc_poly, code.info_len())?;
    let strategy = PartitionStrategy::new(args.strategy.into(), args.alpha)?;
    let hist = crc_histogram(
        &code,
        &crc,
        strategy,
        args.iters,
        args.snr,
        args.frames,
        args.seed,
        args.rate,
    )?;
    let total: u64 = hist.iter().sum();
    println!(
        "{} gate failures over {} frames at {} dB ({} partition)",
        total,
        args.frames,
        args.snr,
        strategy.kind.name()
    );
    println!("region  count  share");
    let mut csv = String::from("region,count,share\n");
    for (i, &count) in hist.iter().enumerate() {
        let share = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        println!("{:>6}  {count:>5}  {share:.4}", i + 1);
        csv.push_str(&format!("{},{},{}\n", i + 1, count, share));
    }
    if let Some(out) = args.out {
        fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

// --------------------------------------------------------------- diversity --

#[derive(Args)]
struct DiversityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    #[arg(long, default_value_t = 10_000)]
    frames: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rate: Option<f64>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_diversity(args: DiversityArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let report = diversity_report(&model, args.snr, args.frames, args.seed, args.rate)?;
    let alpha = model.alpha();
    println!(
        "{} gate failures over {} frames at {} dB",
        report.region_frames.iter().sum::<u64>(),
        report.frames,
        report.snr_db
    );
    let header: Vec<String> = (1..=alpha).map(|m| format!("m{m:>4}")).collect();
    println!("rescues by member (rows are regions)");
    println!("region  frames  {}", header.join("  "));
    for r in 0..alpha {
        let row: Vec<String> = report.counts[r].iter().map(|c| format!("{c:>5}")).collect();
        println!("{:>6}  {:>6}  {}", r + 1, report.region_frames[r], row.join("  "));
    }
    println!("rescues where the designated member failed");
    println!("region  {}", header.join("  "));
    for r in 0..alpha {
        let row: Vec<String> =
            report.designated_fail[r].iter().map(|c| format!("{c:>5}")).collect();
        println!("{:>6}  {}", r + 1, row.join("  "));
    }
    if let Some(out) = args.out {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Construct(args) => cmd_construct(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Flops(args) => cmd_flops(args),
        Command::PartitionStats(args) => cmd_partition_stats(args),
        Command::Diversity(args) => cmd_diversity(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_specs_cover_singles_lists_and_ranges() {
        assert_eq!(parse_snrs("3").unwrap(), vec![3.0]);
        assert_eq!(parse_snrs("1,2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(parse_snrs("1:4:0.5").unwrap(), vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
        assert_eq!(parse_snrs("2:2:1").unwrap(), vec![2.0]);
        assert_eq!(parse_snrs("2:4:0.1").unwrap().len(), 21);
        assert!(parse_snrs("4:1:0.5").is_err());
        assert!(parse_snrs("1:4:0").is_err());
        assert!(parse_snrs("").is_err());
        assert!(parse_snrs("1:4").is_err());
    }

    #[test]
    fn code_specs_need_two_lengths() {
        assert_eq!(parse_code("64,32").unwrap(), (64, 32));
        assert_eq!(parse_code(" 128 , 64 ").unwrap(), (128, 64));
        assert!(parse_code("64").is_err());
        assert!(parse_code("64,x").is_err());
    }

    #[test]
    fn crc_must_leave_room_for_message_bits() {
        assert!(build_crc(DEFAULT_CRC, 32).is_ok());
        assert!(build_crc(DEFAULT_CRC, 11).is_err());
        assert!(build_crc(DEFAULT_CRC, 8).is_err());
    }
}
