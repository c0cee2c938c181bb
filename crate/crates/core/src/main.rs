use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use polynas::config::{ConfigError, NetworkConfig, SearchFile, SpecFile};
use polynas::interp::InterpError;
use polynas::ir::IrError;
use polynas::nnet::{fisher_potential, NnetError};
use polynas::search::{run_search, SearchError};
use polynas::transforms::{
    sequence1_steps, sequence2_steps, sequence3_steps, spatial_bottleneck_steps, ParseError, Seq1Params,
    Seq2Params, Seq3Params, TransformError,
};
use polynas::{
    check_semantic_legality, conv_nest, count_macs, execute, reference_conv, Caps, ConvSpec, ElementMode, ExecEnv,
    LoopNest, Tensor, TransformClass, TransformSequence, Verdict,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSFORM: u8 = 3;
const EXIT_LEGALITY: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "polynas", version, about = "Loop-nest and neural-architecture transformations of convolutions")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Brute-force instance cap for dependence checks.
    #[arg(long, global = true, value_name = "INSTANCES")]
    caps: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the loop nest of a convolution spec file.
    Dump(SpecArgs),
    /// Apply a transformation sequence and print the result with its MAC delta.
    Transform(TransformArgs),
    /// Check each step for legality and compare the result against the oracle.
    Verify(VerifyArgs),
    /// Print the Fisher Potential of a network.
    Fisher(RunArgs),
    /// Run the random transformation search.
    Search(RunArgs),
}

#[derive(clap::Args, Debug)]
struct SpecArgs {
    /// Spec file (TOML with `schema_version` and a `[conv]` table).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Write the main output to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SeqArgs {
    /// Pipe-separated transformation DSL, e.g. `tile(ci,2) | interchange(h,w)`.
    #[arg(long, value_name = "DSL", conflicts_with = "named")]
    sequence: Option<String>,
    /// A named composition instead of a DSL string.
    #[arg(long, value_enum)]
    named: Option<Named>,
    /// Overrides for the named composition, e.g. `groups=4,parts=2`.
    #[arg(long, value_name = "K=V,...", requires = "named")]
    params: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Named {
    Sequence1,
    Sequence2,
    Sequence3,
    SpatialBottleneck,
}

#[derive(clap::Args, Debug)]
struct TransformArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    seq: SeqArgs,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    seq: SeqArgs,
    /// Seed for the random oracle inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Network file for `fisher`, search file for `search`; the built-in toy
    /// network is used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the network seed (`fisher`) or the search seed (`search`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; `search` also writes a CSV next to it.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// A failed run: exit code plus message.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_CONFIG };
        Failure::new(code, e)
    }
}

impl From<TransformError> for Failure {
    fn from(e: TransformError) -> Self {
        Failure::new(EXIT_TRANSFORM, e)
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::new(EXIT_TRANSFORM, format!("cannot parse sequence: {e}"))
    }
}

impl From<IrError> for Failure {
    fn from(e: IrError) -> Self {
        match e {
            IrError::CapExceeded { what, count, cap } => Failure::new(
                EXIT_LEGALITY,
                format!(
                    "{e}; shrink the spatial or channel bounds so the {what} count fits, \
                     or raise --caps above {count} (current {cap})"
                ),
            ),
            other => Failure::new(EXIT_TRANSFORM, other),
        }
    }
}

impl From<InterpError> for Failure {
    fn from(e: InterpError) -> Self {
        match e {
            InterpError::Ir(ir) => ir.into(),
            other => Failure::new(EXIT_TRANSFORM, other),
        }
    }
}

impl From<NnetError> for Failure {
    fn from(e: NnetError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        let code = match &e {
            SearchError::Io { .. } => EXIT_IO,
            SearchError::Config(ConfigError::Io { .. }) => EXIT_IO,
            SearchError::InvalidConfig(_) | SearchError::Config(_) | SearchError::Conv(_) | SearchError::Nnet(_) => {
                EXIT_CONFIG
            }
            SearchError::Ir { .. } => EXIT_LEGALITY,
            SearchError::Exhausted { .. } | SearchError::Transform { .. } => EXIT_TRANSFORM,
        };
        Failure::new(code, e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli);
    let code = match result {
        Ok(()) => {
            println!("RESULT ok 0");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            println!("RESULT fail {}", f.code);
            f.code
        }
    };
    ExitCode::from(code)
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::new(EXIT_CONFIG, "--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    }
    let caps = Caps {
        instances: cli.caps.unwrap_or(Caps::default().instances),
        ..Caps::default()
    };
    match &cli.command {
        Command::Dump(a) => cmd_dump(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Verify(a) => cmd_verify(a, caps),
        Command::Fisher(a) => cmd_fisher(a),
        Command::Search(a) => cmd_search(a, cli.caps),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::new(EXIT_IO, format!("cannot write `{}`: {e}", p.display())))?;
            println!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_spec(a: &SpecArgs) -> Result<(ConvSpec, LoopNest), Failure> {
    let spec = SpecFile::load(&a.config)?.conv;
    let nest = conv_nest(&spec).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    Ok((spec, nest))
}

/// Applies `key=value` overrides to a parameter struct via its serialized form.
fn with_overrides<T: Serialize + DeserializeOwned>(base: T, params: Option<&str>) -> Result<T, Failure> {
    let bad = |m: String| Failure::new(EXIT_CONFIG, format!("--params: {m}"));
    let mut table = toml::Table::try_from(&base).map_err(|e| bad(e.to_string()))?;
    for item in params.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{item}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !table.contains_key(k) {
            let known: Vec<&String> = table.keys().collect();
            return Err(bad(format!("unknown key `{k}` (expected one of {known:?})")));
        }
        let value = match v.parse::<i64>() {
            Ok(n) => toml::Value::Integer(n),
            Err(_) => toml::Value::String(v.to_string()),
        };
        table.insert(k.to_string(), value);
    }
    table.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))
}

fn load_sequence(a: &SeqArgs, nest: &LoopNest) -> Result<TransformSequence, Failure> {
    let params = a.params.as_deref();
    match (a.named, &a.sequence) {
        (Some(Named::Sequence1), _) => Ok(sequence1_steps(nest, &with_overrides(Seq1Params::default(), params)?)?),
        (Some(Named::Sequence2), _) => Ok(sequence2_steps(nest, &with_overrides(Seq2Params::default(), params)?)?),
        (Some(Named::Sequence3), _) => Ok(sequence3_steps(nest, &with_overrides(Seq3Params::default(), params)?)?),
        (Some(Named::SpatialBottleneck), _) => {
            #[derive(Serialize, serde::Deserialize)]
            struct P {
                factor: i64,
            }
            Ok(spatial_bottleneck_steps(with_overrides(P { factor: 2 }, params)?.factor))
        }
        (None, Some(dsl)) => Ok(TransformSequence::parse(dsl)?),
        (None, None) => Ok(TransformSequence::parse("")?),
    }
}

fn cmd_dump(a: &SpecArgs) -> Outcome {
    let (_, nest) = load_spec(a)?;
    emit(a.out.as_deref(), &nest.to_string())?;
    println!("macs {}", count_macs(&nest)?);
    Ok(())
}

fn cmd_transform(a: &TransformArgs) -> Outcome {
    let (_, nest) = load_spec(&a.spec)?;
    let seq = load_sequence(&a.seq, &nest)?;
    let out = seq.apply(&nest)?;
    emit(a.spec.out.as_deref(), &out.to_string())?;
    let (before, after) = (count_macs(&nest)?, count_macs(&out)?);
    println!("sequence {seq}");
    println!(
        "macs {before} -> {after} (delta {}, ratio {:.6})",
        after as i128 - before as i128,
        after as f64 / before as f64
    );
    Ok(())
}

fn random_inputs(spec: &ConvSpec, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::random_i64(&spec.input_shape(), -8, 8, &mut rng);
    let w = Tensor::random_i64(&spec.weight_shape(), -8, 8, &mut rng);
    (x, w)
}

/// Runs `nest` and `reference_conv(spec)` on the same seeded integer inputs.
fn oracle_equal(nest: &LoopNest, spec: &ConvSpec, seed: u64) -> Result<bool, Failure> {
    let (x, w) = random_inputs(spec, seed);
    let want = reference_conv(spec, &x, &w)?;
    let env = ExecEnv::new(ElementMode::Int64).bind("I", x).bind("W", w);
    let got = match execute(nest, &env) {
        Ok(t) => t,
        Err(InterpError::RankMismatch { .. }) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    Ok(got == want)
}

fn cmd_verify(a: &VerifyArgs, caps: Caps) -> Outcome {
    let (spec, nest) = load_spec(&a.spec)?;
    let seq = load_sequence(&a.seq, &nest)?;
    let trace = seq.trace(&nest)?;
    let mut report = String::new();
    let mut failed = false;
    writeln!(report, "sequence {seq}").ok();
    for (i, step) in seq.steps.iter().enumerate() {
        let verdict = match step.class() {
            TransformClass::Neural => Verdict::NotApplicable("neural transformation".into()),
            TransformClass::Semantic => check_semantic_legality(&trace[i], &trace[i + 1], caps)?,
        };
        failed |= matches!(verdict, Verdict::Illegal(_));
        let class = match step.class() {
            TransformClass::Neural => "neural",
            TransformClass::Semantic => "semantic",
        };
        writeln!(report, "step {i} {class} `{step}`: {verdict}").ok();
    }
    let last = trace.last().expect("trace holds the input nest");
    if seq.is_semantic() {
        let equal = oracle_equal(last, &spec, a.seed)?;
        failed |= !equal;
        let word = if equal { "equal" } else { "NOT equal" };
        writeln!(report, "oracle: {word} to the reference convolution").ok();
    } else {
        writeln!(report, "oracle: original reference not applicable (neural steps change the operator)").ok();
        if let Some(derived) = &last.provenance {
            let equal = oracle_equal(last, derived, a.seed)?;
            failed |= !equal;
            let word = if equal { "equal" } else { "NOT equal" };
            writeln!(report, "oracle: {word} to the reference of the derived spec").ok();
        }
    }
    emit(a.spec.out.as_deref(), &report)?;
    if failed {
        return Err(Failure::new(EXIT_LEGALITY, "sequence failed verification"));
    }
    Ok(())
}

fn cmd_fisher(a: &RunArgs) -> Outcome {
    let mut net = match &a.config {
        Some(p) => NetworkConfig::load(p)?,
        None => NetworkConfig::toy(),
    };
    if let Some(s) = a.seed {
        net.seed = s;
    }
    let base = a.config.as_deref().and_then(Path::parent);
    let network = net.build_network()?;
    let batch = net.build_batch(base)?;
    let report = fisher_potential(&network, &batch)?;
    emit(a.out.as_deref(), &report.to_text())
}

fn cmd_search(a: &RunArgs, caps: Option<u64>) -> Outcome {
    let mut file = match &a.config {
        Some(p) => SearchFile::load(p)?,
        None => SearchFile {
            schema_version: polynas::config::SCHEMA_VERSION,
            network: NetworkConfig::toy(),
            search: Default::default(),
        },
    };
    if let Some(s) = a.seed {
        file.search.seed = s;
    }
    if let Some(n) = caps {
        file.search.caps.instances = n;
    }
    let base = a.config.as_deref().and_then(Path::parent);
    let report = run_search(&file.search, &file.network, a.out.as_deref(), base)?;
    let s = &report.stats;
    println!("candidates {}", s.candidate_count);
    println!("survivors {}", s.survivors);
    println!("rejected semantic {}", s.rejected_semantic);
    println!("rejected fisher {}", s.rejected_fisher);
    println!("rejection rate {:.4}", s.rejection_rate);
    println!("origin macs {}", report.origin.macs_total);
    for r in report.ranked.iter().take(5) {
        println!(
            "rank {} id {} macs {} fisher {:.6e} {}",
            r.rank, r.id, r.macs_total, r.fisher_total, r.dsl
        );
    }
    println!("seconds {:.3}", report.timing.total_seconds);
    if let Some(p) = &a.out {
        println!("wrote {}", p.display());
    }
    Ok(())
}
