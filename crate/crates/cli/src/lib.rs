//! `sbb84` command-line harness.
//!
//! Exit codes: 0 on completion (aborted sessions are data, not failures),
//! 2 for invalid configuration, input or formula preconditions, 3 for I/O.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sbb84::analysis::{self, AnalysisError};
use sbb84::batch::{self, RunReport, Timing, TrialRow};
use sbb84::gf2::BitVec;
use sbb84::privacy::KeyLengthRule;
use sbb84::qsim::{ChannelParams, EveStrategy};
use sbb84::reconcile::{self, CascadeParams, RoundStats};
use sbb84::rng::{substream, Stream};
use sbb84::session::ProtocolConfig;
use sbb84::transcript::Transcript;
use sbb84::verify::{self, VerifyOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

fn invalid(msg: impl ToString) -> CliError {
    CliError::Invalid(msg.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        invalid(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sbb84", version, about = "Simplified BB84 simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of seeded sessions and write a JSON report.
    Run(RunArgs),
    /// Crude correction, then subset verification, on two bit files.
    Reconcile(ReconcileArgs),
    /// Subset verification alone on two bit files.
    Verify(VerifyArgs),
    /// Evaluate the closed-form bounds.
    Analyze(AnalyzeArgs),
}

/// Config file: flat JSON keys, every one optional.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub n_s: Option<usize>,
    pub target_residual: Option<f64>,
    pub max_rounds: Option<usize>,
    pub abort_threshold_bit: Option<f64>,
    pub abort_threshold_phase: Option<f64>,
    pub eta: Option<f64>,
    pub key_len_margin: Option<usize>,
    pub key_len_fixed: Option<usize>,
    pub eps_b: Option<f64>,
    pub eps_p: Option<f64>,
    pub eps_bp: Option<f64>,
    pub eve_intercept: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct ProtocolArgs {
    /// Flat-key JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "ns")]
    pub n_s: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub eps_b: Option<f64>,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub eps_bp: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub threshold_bit: Option<f64>,
    #[arg(long)]
    pub threshold_phase: Option<f64>,
    #[arg(long)]
    pub target_residual: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub key_len_margin: Option<usize>,
    #[arg(long)]
    pub key_len_fixed: Option<usize>,
    /// Intercept-resend attack probability per qubit.
    #[arg(long, value_name = "P")]
    pub eve_intercept: Option<f64>,
}

impl ProtocolArgs {
    fn overrides(&self) -> FileConfig {
        FileConfig {
            n: self.n,
            delta: self.delta,
            m: self.m,
            n_s: self.n_s,
            target_residual: self.target_residual,
            max_rounds: self.max_rounds,
            abort_threshold_bit: self.threshold_bit,
            abort_threshold_phase: self.threshold_phase,
            eta: self.eta,
            key_len_margin: self.key_len_margin,
            key_len_fixed: self.key_len_fixed,
            eps_b: self.eps_b,
            eps_p: self.eps_p,
            eps_bp: self.eps_bp,
            eve_intercept: self.eve_intercept,
            seed: None,
        }
    }
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Layers `file` then `flags` over the defaults and validates the result.
pub fn resolve_config(file: &FileConfig, flags: &FileConfig) -> Result<ProtocolConfig, CliError> {
    let d = ProtocolConfig::default();
    macro_rules! pick {
        ($field:ident, $default:expr) => {
            flags.$field.or(file.$field).unwrap_or($default)
        };
    }
    let margin = flags.key_len_margin.or(file.key_len_margin);
    let fixed = flags.key_len_fixed.or(file.key_len_fixed);
    let key_len_rule = match (margin, fixed) {
        (Some(_), Some(_)) => return Err(invalid("key_len_margin and key_len_fixed are mutually exclusive")),
        (_, Some(key_len)) => KeyLengthRule::Fixed { key_len },
        (Some(margin), None) => KeyLengthRule::EntropyMargin { margin },
        (None, None) => d.key_len_rule,
    };
    let channel = ChannelParams::new(pick!(eps_b, 0.0), pick!(eps_p, 0.0), pick!(eps_bp, 0.0)).map_err(invalid)?;
    let eve = match flags.eve_intercept.or(file.eve_intercept) {
        None => EveStrategy::None,
        Some(p) => EveStrategy::intercept_resend(p).map_err(invalid)?,
    };
    let config = ProtocolConfig {
        n: pick!(n, d.n),
        delta: pick!(delta, d.delta),
        m: pick!(m, d.m),
        n_s: pick!(n_s, d.n_s),
        target_residual: pick!(target_residual, d.target_residual),
        max_rounds: pick!(max_rounds, d.max_rounds),
        abort_threshold_bit: pick!(abort_threshold_bit, d.abort_threshold_bit),
        abort_threshold_phase: pick!(abort_threshold_phase, d.abort_threshold_phase),
        eta: pick!(eta, d.eta),
        key_len_rule,
        channel,
        eve,
        seed: pick!(seed, d.seed),
    };
    config.validate().map_err(invalid)?;
    Ok(config)
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Seed of the first trial; trial i uses seed + i. Overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trial rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON Lines transcript of the first trial.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BitFileArgs {
    /// Alice's bits: lines of `<hex> <bit length>`, concatenated.
    #[arg(long)]
    pub alice: PathBuf,
    #[arg(long)]
    pub bob: PathBuf,
    #[arg(long = "ns", default_value_t = 100)]
    pub n_s: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_alice: Option<PathBuf>,
    #[arg(long)]
    pub out_bob: Option<PathBuf>,
    /// Stats JSON path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconcileArgs {
    #[command(flatten)]
    pub files: BitFileArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub target_residual: f64,
    #[arg(long, default_value_t = 16)]
    pub max_rounds: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub files: BitFileArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, default_value_t = 0.0)]
    pub eps_b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps_p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps_bp: f64,
    #[arg(long, default_value_t = 0.02)]
    pub eta: f64,
    /// X-basis check-bit count behind the phase estimate.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long = "ns", default_value_t = 100)]
    pub n_s: usize,
    /// Residual bit-error rate after crude correction.
    #[arg(long, default_value_t = 1e-3)]
    pub eps_b_c: f64,
    /// Accepted subsets.
    #[arg(long, default_value_t = 1)]
    pub g: usize,
    #[arg(long, default_value_t = 30)]
    pub m: u32,
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => cmd_run(args, stdout),
        Command::Reconcile(args) => cmd_reconcile(args, stdout),
        Command::Verify(args) => cmd_verify(args, stdout),
        Command::Analyze(args) => cmd_analyze(args, stdout),
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(io_err(path)),
        None => writeln!(stdout, "{text}").map_err(io_err(Path::new("<stdout>"))),
    }
}

pub fn write_csv(rows: &[TrialRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(e, path))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(e, path))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(e: csv::Error, path: &Path) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = match &args.protocol.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };
    let mut flags = args.protocol.overrides();
    flags.seed = args.seed;
    let config = resolve_config(&file, &flags)?;
    if args.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }

    let start = Instant::now();
    let results = batch::run_sessions(&config, args.trials, config.seed).map_err(invalid)?;
    let mut report = RunReport::from_results(&config, config.seed, &results);
    report.timing = Some(Timing {
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    });

    if let Some(path) = &args.transcript {
        let f = File::create(path).map_err(io_err(path))?;
        results[0]
            .transcript
            .write_jsonl(BufWriter::new(f))
            .map_err(io_err(path))?;
    }
    if let Some(path) = &args.csv {
        write_csv(&report.rows, path)?;
    }
    emit_json(&report, args.out.as_deref(), stdout)
}

/// Reads a bit file: each nonempty line is `<hex> <bit length>`.
pub fn read_bits(path: &Path) -> Result<BitVec, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut bits = BitVec::zeros(0);
    let mut lines = 0;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |why: String| invalid(format!("{}:{}: {why}", path.display(), i + 1));
        let mut parts = line.split_whitespace();
        let (Some(hex), Some(len), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `<hex> <bit length>`".into()));
        };
        let len: usize = len.parse().map_err(|e| bad(format!("bit length: {e}")))?;
        bits.extend_from(&BitVec::from_hex(hex, len).map_err(|e| bad(e.to_string()))?);
        lines += 1;
    }
    if lines == 0 {
        return Err(invalid(format!("{}: no bits", path.display())));
    }
    Ok(bits)
}

pub fn write_bits(bits: &BitVec, path: &Path) -> Result<(), CliError> {
    let text = if bits.is_empty() {
        String::new()
    } else {
        format!("{} {}\n", bits.to_hex(), bits.len())
    };
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_pair(files: &BitFileArgs) -> Result<(BitVec, BitVec), CliError> {
    let a = read_bits(&files.alice)?;
    let b = read_bits(&files.bob)?;
    if a.len() != b.len() {
        return Err(invalid(format!(
            "length mismatch: alice {} bits, bob {} bits",
            a.len(),
            b.len()
        )));
    }
    if files.m == 0 || files.m >= files.n_s {
        return Err(invalid(format!(
            "m must satisfy 0 < m < ns = {}, got {}",
            files.n_s, files.m
        )));
    }
    Ok((a, b))
}

fn disagreements(a: &BitVec, b: &BitVec) -> usize {
    a.xor(b).expect("equal lengths").count_ones()
}

#[derive(Debug, Serialize)]
pub struct VerifyStats {
    pub input_len: usize,
    pub subsets: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub output_len: usize,
    /// Disagreements left in the surviving bits.
    pub residual_disagreements: usize,
}

/// Partitions, verifies every subset and concatenates the accepted ones.
fn verify_bits(a: &BitVec, b: &BitVec, files: &BitFileArgs) -> (BitVec, BitVec, VerifyStats) {
    let mut out_a = BitVec::zeros(0);
    let mut out_b = BitVec::zeros(0);
    let mut stats = VerifyStats {
        input_len: a.len(),
        subsets: 0,
        accepted: 0,
        rejected: 0,
        output_len: 0,
        residual_disagreements: 0,
    };
    let Ok(subsets) = reconcile::partition_subsets(a, b, files.n_s) else {
        return (out_a, out_b, stats);
    };
    let mut rng = substream(files.seed, Stream::ParityStrings);
    let mut transcript = Transcript::new();
    stats.subsets = subsets.len();
    for (i, (sa, sb)) in subsets.iter().enumerate() {
        let strings =
            verify::gen_parity_strings(files.n_s, files.m, i, &mut rng, &mut transcript).expect("round count checked");
        match verify::verify_subset(sa, sb, &strings, i, &mut transcript).expect("subset length") {
            VerifyOutcome::Accept { alice, bob } => {
                stats.accepted += 1;
                out_a.extend_from(&alice);
                out_b.extend_from(&bob);
            }
            VerifyOutcome::Reject { .. } => stats.rejected += 1,
        }
    }
    stats.output_len = out_a.len();
    stats.residual_disagreements = disagreements(&out_a, &out_b);
    (out_a, out_b, stats)
}

fn write_outputs(files: &BitFileArgs, a: &BitVec, b: &BitVec) -> Result<(), CliError> {
    if let Some(path) = &files.out_alice {
        write_bits(a, path)?;
    }
    if let Some(path) = &files.out_bob {
        write_bits(b, path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ReconcileReport {
    pub input_len: usize,
    pub input_disagreements: usize,
    pub rounds: Vec<RoundStats>,
    /// Set when crude correction stopped without reaching the target.
    pub cascade_failure: Option<String>,
    pub reconciled_len: usize,
    pub verify: VerifyStats,
}

pub fn cmd_reconcile(args: &ReconcileArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (a, b) = read_pair(&args.files)?;
    if !(args.target_residual > 0.0 && args.target_residual < 1.0) {
        return Err(invalid(format!(
            "target_residual must lie in (0, 1), got {}",
            args.target_residual
        )));
    }
    if args.max_rounds == 0 {
        return Err(invalid("max_rounds must be at least 1"));
    }
    let params = CascadeParams {
        target_residual: args.target_residual,
        max_rounds: args.max_rounds,
    };
    let mut rng = substream(args.files.seed, Stream::Pairing);
    let (ra, rb, rounds, failure) = match reconcile::crude_cascade(&a, &b, &params, &mut rng, &mut Transcript::new()) {
        Ok(c) => (c.alice, c.bob, c.rounds, None),
        Err(f) => (BitVec::zeros(0), BitVec::zeros(0), f.rounds, Some(f.error.to_string())),
    };
    let (out_a, out_b, verify) = verify_bits(&ra, &rb, &args.files);
    write_outputs(&args.files, &out_a, &out_b)?;
    let report = ReconcileReport {
        input_len: a.len(),
        input_disagreements: disagreements(&a, &b),
        rounds,
        cascade_failure: failure,
        reconciled_len: ra.len(),
        verify,
    };
    emit_json(&report, args.files.out.as_deref(), stdout)
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (a, b) = read_pair(&args.files)?;
    let (out_a, out_b, stats) = verify_bits(&a, &b, &args.files);
    write_outputs(&args.files, &out_a, &out_b)?;
    emit_json(&stats, args.files.out.as_deref(), stdout)
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub phase_update: analysis::PhaseUpdate,
    pub eps_1: f64,
    pub epsilon1_confidence: f64,
    pub subset_discard_prob: analysis::DiscardProbability,
    pub key_correctness: f64,
    pub success_lower_bound: analysis::SuccessBound,
}

pub fn cmd_analyze(args: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let phase = analysis::phase_update(args.eps_b, args.eps_p, args.eps_bp)?;
    let report = AnalyzeReport {
        phase_update: phase,
        eps_1: phase.upper_bound + args.eta,
        epsilon1_confidence: analysis::epsilon1_confidence(args.eta, args.n, args.eps_p)?,
        subset_discard_prob: analysis::subset_discard_prob(args.n_s, args.eps_b_c)?,
        key_correctness: analysis::key_correctness_bound(args.g, args.m),
        success_lower_bound: analysis::success_lower_bound(args.g, args.m, args.eta, args.n, args.eps_p)?,
    };
    emit_json(&report, None, stdout)
}
