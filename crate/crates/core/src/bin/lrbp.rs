use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lrbp::als::{fit_als, AlsOptions};
use lrbp::bench::{self, BenchOptions};
use lrbp::builder::{build_node_centered, build_sequence, SharingScheme, TypedGraph};
use lrbp::graph::{FactorBinding, FactorGraph, ParamId, Payload};
use lrbp::lbp::{run_lbp, LbpOptions};
use lrbp::seq::{self, SeqConfig};
use lrbp::tensor::{DenseTensor, Limits};
use lrbp::verify::verify;

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_VERIFY_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "lrbp", version, about = "Low-rank loopy belief propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run loopy BP and write beliefs as JSON.
    Infer(InferArgs),
    /// Compare against dense-expansion and enumeration oracles.
    Verify(VerifyArgs),
    /// Time low-rank message sweeps against factor order.
    BenchOrder(BenchOrderArgs),
    /// Time low-rank message sweeps against rank.
    BenchRank(BenchRankArgs),
    /// Synthetic sequence-labelling experiment.
    SeqExp(SeqArgs),
    /// Fit CP factors to dense tables with ALS.
    FitCp(FitCpArgs),
    /// Build a factor-graph file from a typed graph or a sequence.
    Build(BuildArgs),
}

#[derive(Args)]
struct LbpArgs {
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// Compute messages on all cores.
    #[arg(long)]
    parallel: bool,
}

impl LbpArgs {
    fn options(&self) -> LbpOptions {
        LbpOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            damping: self.damping,
            parallel: self.parallel,
            limits: Limits::from_env(),
            ..LbpOptions::default()
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Beliefs JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration `iteration,max_delta` CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    lbp: LbpArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Seed of the random incoming messages.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    lbp: LbpArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 7)]
    reps: usize,
    /// Sweeps timed per rep.
    #[arg(long, default_value_t = bench::DEFAULT_INNER_SWEEPS)]
    inner: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchOrderArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    orders: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    rank: usize,
    #[command(flatten)]
    common: BenchArgs,
}

#[derive(Args)]
struct BenchRankArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    order: usize,
    #[command(flatten)]
    common: BenchArgs,
}

#[derive(Args)]
struct SeqArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    orders: Vec<usize>,
    /// First seed; `--seeds` consecutive seeds are run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    word_len: Option<usize>,
    #[arg(long)]
    alphabet: Option<usize>,
    #[arg(long)]
    train_words: Option<usize>,
    #[arg(long)]
    test_words: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    /// Defaults to twice the hidden width.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitCpArgs {
    /// Factor graph whose dense factors are replaced by CP fits.
    #[arg(long, conflicts_with = "tensor", required_unless_present = "tensor")]
    graph: Option<PathBuf>,
    /// A single dense tensor `{shape, data}`.
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Typed-graph JSON; one factor per node.
    #[arg(long, conflicts_with = "sequence", required_unless_present = "sequence", requires = "scheme")]
    typed: Option<PathBuf>,
    /// CAT, BT, CABT or CABTA.
    #[arg(long)]
    scheme: Option<SharingScheme>,
    /// Sequence length; one factor per position.
    #[arg(long)]
    sequence: Option<usize>,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Give every sequence factor its own slots.
    #[arg(long)]
    unshared: bool,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weights are drawn from `U[0, scale)`.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_graph(path: &Path) -> anyhow::Result<FactorGraph> {
    FactorGraph::load(path).with_context(|| format!("loading graph {}", path.display()))
}

fn infer(a: &InferArgs) -> anyhow::Result<u8> {
    let g = load_graph(&a.graph)?;
    let beliefs = run_lbp(&g, &a.lbp.options())?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&beliefs)? + "\n"))?;
    if let Some(path) = &a.trace {
        let mut csv = String::from("iteration,max_delta\n");
        for (k, delta) in beliefs.trace.iter().enumerate() {
            csv += &format!("{},{}\n", k + 1, bench::format_float(*delta));
        }
        emit(Some(path), &csv)?;
    }
    if beliefs.converged {
        Ok(0)
    } else {
        eprintln!("not converged after {} iterations (final delta {:?})", beliefs.iterations_used, beliefs.final_delta);
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn verify_cmd(a: &VerifyArgs) -> anyhow::Result<u8> {
    let g = load_graph(&a.graph)?;
    let report = verify(&g, &a.lbp.options(), a.seed)?;
    for c in &report.checks {
        println!("{c}");
    }
    Ok(if report.passed() { 0 } else { EXIT_VERIFY_FAILED })
}

fn bench_output(records: &[bench::BenchRecord], fit: Option<bench::LinearFit>, out: Option<&Path>) -> anyhow::Result<()> {
    let mut csv = format!("{}\n", bench::CSV_HEADER);
    for r in records {
        csv += &r.csv_row();
        csv.push('\n');
    }
    emit(out, &csv)?;
    let line = format!("fit: {}", bench::describe_fit(fit));
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

fn bench_options(a: &BenchArgs) -> BenchOptions {
    BenchOptions { reps: a.reps, inner_sweeps: a.inner, seed: a.seed }
}

fn bench_order(a: &BenchOrderArgs) -> anyhow::Result<u8> {
    let records = bench::bench_order(&a.orders, a.common.d, a.rank, &bench_options(&a.common))?;
    bench_output(&records, bench::fit_records(&records, |r| r.order), a.common.out.as_deref())?;
    Ok(0)
}

fn bench_rank(a: &BenchRankArgs) -> anyhow::Result<u8> {
    let records = bench::bench_rank(&a.ranks, a.order, a.common.d, &bench_options(&a.common))?;
    bench_output(&records, bench::fit_records(&records, |r| r.rank), a.common.out.as_deref())?;
    Ok(0)
}

fn seq_exp(a: &SeqArgs) -> anyhow::Result<u8> {
    let base = SeqConfig::default();
    let mut csv = format!("{}\n", seq::CSV_HEADER);
    for seed in a.seed..a.seed + a.seeds {
        let cfg = SeqConfig {
            orders: a.orders.clone(),
            seed,
            noise: a.noise.unwrap_or(base.noise),
            vocab_size: a.vocab_size.unwrap_or(base.vocab_size),
            word_len: a.word_len.unwrap_or(base.word_len),
            alphabet: a.alphabet.unwrap_or(base.alphabet),
            train_words: a.train_words.unwrap_or(base.train_words),
            test_words: a.test_words.unwrap_or(base.test_words),
            epochs: a.epochs.unwrap_or(base.epochs),
            lr: a.lr.unwrap_or(base.lr),
            layers: a.layers.unwrap_or(base.layers),
            rank: a.rank,
            parallel: a.parallel,
            ..base.clone()
        };
        for r in seq::run_seq_experiment(&cfg)? {
            csv += &format!(
                "{},{},{},{},{},{},{}\n",
                r.model,
                r.order.map(|k| k.to_string()).unwrap_or_default(),
                r.seed,
                bench::format_float(r.noise),
                r.rank,
                bench::format_float(r.final_loss),
                bench::format_float(r.accuracy)
            );
        }
    }
    emit(a.out.as_deref(), &csv)?;
    Ok(0)
}

fn fit_cp(a: &FitCpArgs) -> anyhow::Result<u8> {
    let opts = AlsOptions { max_iters: a.max_iters, tol: a.tol, seed: a.seed, ..AlsOptions::new(a.rank) };
    if let Some(path) = &a.tensor {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t: DenseTensor = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let fit = fit_als(&t, &opts)?;
        eprintln!("relative error {:e} after {} sweeps", fit.relative_error, fit.iterations);
        emit(a.out.as_deref(), &(serde_json::to_string_pretty(&fit.factor)? + "\n"))?;
        return Ok(0);
    }
    let Some(path) = &a.graph else { bail!("one of --graph or --tensor is required") };
    let g = load_graph(path)?;
    let mut params: Vec<(String, lrbp::tensor::CpFactor)> =
        (0..g.params().len()).map(|k| (g.param_name(ParamId(k)).to_string(), g.params()[k].clone())).collect();
    let mut bindings = Vec::with_capacity(g.num_factors());
    for (a_idx, f) in g.factors().iter().enumerate() {
        match &f.payload {
            Payload::Dense(t) => {
                let fit = fit_als(t, &opts).with_context(|| format!("fitting factor {a_idx}"))?;
                eprintln!("factor {a_idx}: relative error {:e}", fit.relative_error);
                params.push((format!("fit{a_idx}"), fit.factor));
                bindings.push(FactorBinding::low_rank(f.scope.clone(), ParamId(params.len() - 1)));
            }
            Payload::LowRank(_) => bindings.push(f.clone()),
        }
    }
    let fitted = FactorGraph::build(g.num_vars(), g.cardinality(), bindings, g.unary().map(|u| u.to_vec()), params)?;
    emit(a.out.as_deref(), &(fitted.to_json()? + "\n"))?;
    Ok(0)
}

fn build(a: &BuildArgs) -> anyhow::Result<u8> {
    let structured = match (&a.typed, a.sequence) {
        (Some(path), _) => {
            let tg = TypedGraph::load(path).with_context(|| format!("loading typed graph {}", path.display()))?;
            build_node_centered(&tg, a.scheme.expect("clap enforces --scheme"), a.rank)?
        }
        (None, Some(n)) => build_sequence(n, a.order, a.rank, !a.unshared)?,
        (None, None) => bail!("one of --typed or --sequence is required"),
    };
    let g = structured.to_factor_graph(a.d, a.seed, a.scale)?;
    emit(a.out.as_deref(), &(g.to_json()? + "\n"))?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Infer(a) => infer(a),
        Command::Verify(a) => verify_cmd(a),
        Command::BenchOrder(a) => bench_order(a),
        Command::BenchRank(a) => bench_rank(a),
        Command::SeqExp(a) => seq_exp(a),
        Command::FitCp(a) => fit_cp(a),
        Command::Build(a) => build(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
