//! Command-line front end. Machine-readable output goes to stdout or the
//! `-o` file; progress and summaries go to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::confusion::{mean_region_entropy, pool_class_confusion, total_confusion_entropy, DEFAULT_EPSILON};
use crate::coreset::{euclidean_matrix, k_center_greedy, InitialPoint};
use crate::divergence::{cd_matrix, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::policy::{load_policy, reinforce_train, save_policy, select_with_policy, top_k, TrainConfig};
use crate::pool::{load_pool, write_selection_to, Pool, PoolFormat, Selection, Strategy};
use crate::simulator::{run_al_loop, AlConfig, AlStrategy, SceneConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cdal", version, about = "Contextual-diversity batch active learning")]
struct Cli {
    /// Worker threads for parallel library calls (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool file utilities.
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Per-class confusion mixtures and total confusion entropy as CSV.
    Analyze(AnalyzeArgs),
    /// Select a batch of images to annotate.
    #[command(subcommand)]
    Select(SelectCommand),
    /// Train a selection policy with REINFORCE.
    TrainPolicy(TrainArgs),
    /// Run a synthetic active-learning experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Subcommand)]
enum PoolCommand {
    /// Check a pool file and print a summary line.
    Validate { path: PathBuf },
}

#[derive(Debug, Args)]
struct PoolArg {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: String,
}

impl PoolArg {
    fn load(&self) -> Result<Pool> {
        let format: PoolFormat = self.format.parse()?;
        let pool = load_pool(&self.pool, format)?;
        eprintln!("loaded {} images from {}", pool.len(), self.pool.display());
        Ok(pool)
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pool: PoolArg,
    /// Also write the contextual-diversity matrix to this CSV file.
    #[arg(long)]
    export_matrix: Option<PathBuf>,
    /// Restrict the exported matrix to these classes.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Debug, Subcommand)]
enum SelectCommand {
    /// K-center greedy on contextual diversity or feature distance.
    Cs(CsArgs),
    /// Top images under a trained policy.
    Rl(RlArgs),
    /// Uniformly random images.
    Random(RandomArgs),
    /// Images with the highest mean region entropy.
    Entropy(EntropyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Cd,
    Euclidean,
}

#[derive(Debug, Args)]
struct CsArgs {
    #[command(flatten)]
    pool: PoolArg,
    #[arg(long)]
    budget: usize,
    #[arg(long, value_enum, default_value = "cd")]
    metric: Metric,
    /// Image id of the first center.
    #[arg(long, conflicts_with = "seed")]
    initial: Option<String>,
    /// Seed for the random first center.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict contextual diversity to these classes.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    /// Already-labeled image ids, treated as covered centers.
    #[arg(long, value_delimiter = ',')]
    preselected: Vec<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RlArgs {
    #[command(flatten)]
    pool: PoolArg,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RandomArgs {
    #[command(flatten)]
    pool: PoolArg,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    #[command(flatten)]
    pool: PoolArg,
    #[arg(long)]
    budget: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    pool: PoolArg,
    /// JSON file with training settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Write the per-epoch mean reward to this CSV file.
    #[arg(long)]
    rewards: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    cell_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    budget_fraction: Option<f64>,
    #[arg(long)]
    size_penalty: Option<f64>,
    #[arg(long)]
    use_sr: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scene description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// JSON file with loop, classifier and policy settings; flags override its values.
    #[arg(long)]
    al_config: Option<PathBuf>,
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    init_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not configure {n} threads: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pool(PoolCommand::Validate { path }) => {
            let pool = load_pool(&path, PoolFormat::Jsonl)?;
            println!(
                "n_images={} n_classes={} total_regions={}",
                pool.len(),
                pool.n_classes(),
                pool.total_regions()
            );
            Ok(())
        }
        Command::Analyze(args) => analyze(&args),
        Command::Select(cmd) => select(cmd),
        Command::TrainPolicy(args) => train(&args),
        Command::Simulate(args) => simulate(&args),
    }
}

/// Opens `path`, or stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let pool = args.pool.load()?;
    let n = pool.n_classes();
    let mut out = sink(None)?;
    let io_err = |e| Error::io("<stdout>", e);
    let mut header = vec!["class_id".to_string(), "n_images".into(), "entropy_bits".into()];
    header.extend((0..n).map(|k| format!("p{k}")));
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for c in 0..n {
        if pool.class_index().is_empty(c) {
            continue;
        }
        let mix = pool_class_confusion(&pool, c, args.epsilon)?;
        let probs: Vec<String> = mix.probs.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{c},{},{},{}",
            pool.class_index().members(c).len(),
            mix.entropy_bits(),
            probs.join(",")
        )
        .map_err(io_err)?;
    }
    let h = total_confusion_entropy(&pool, args.epsilon);
    writeln!(out, "total,{},{h}{}", pool.len(), ",".repeat(n)).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    eprintln!("h_I = {h} bits");

    if let Some(path) = &args.export_matrix {
        cd_matrix(&pool, args.classes.as_deref(), args.epsilon, DEFAULT_FLOOR)?.write_csv(path)?;
        eprintln!("wrote contextual-diversity matrix to {}", path.display());
    }
    Ok(())
}

fn emit(sel: &Selection, output: Option<&Path>) -> Result<()> {
    write_selection_to(sel, sink(output)?)?;
    eprintln!("selected {} images ({})", sel.len(), sel.strategy());
    Ok(())
}

fn check_budget(pool: &Pool, budget: usize) -> Result<()> {
    if budget < 1 || budget > pool.len() {
        return Err(Error::Budget {
            budget,
            available: pool.len(),
        });
    }
    Ok(())
}

fn select(cmd: SelectCommand) -> Result<()> {
    match cmd {
        SelectCommand::Cs(a) => {
            let pool = a.pool.load()?;
            let d = match a.metric {
                Metric::Cd => cd_matrix(&pool, a.classes.as_deref(), DEFAULT_EPSILON, DEFAULT_FLOOR)?,
                Metric::Euclidean => euclidean_matrix(&pool)?,
            };
            let initial = match a.initial {
                Some(id) => InitialPoint::Id(id),
                None => InitialPoint::Seed(a.seed),
            };
            emit(&k_center_greedy(&d, a.budget, &initial, &a.preselected)?, a.output.as_deref())
        }
        SelectCommand::Rl(a) => {
            let pool = a.pool.load()?;
            let params = load_policy(&a.policy)?;
            emit(&select_with_policy(&pool, &params, a.budget, a.epsilon)?, a.output.as_deref())
        }
        SelectCommand::Random(a) => {
            let pool = a.pool.load()?;
            check_budget(&pool, a.budget)?;
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
            idx.truncate(a.budget);
            let ids = idx.iter().map(|&i| pool.image(i).image_id.clone()).collect();
            emit(&Selection::new(ids, None, Strategy::Random, a.seed)?, a.output.as_deref())
        }
        SelectCommand::Entropy(a) => {
            let pool = a.pool.load()?;
            check_budget(&pool, a.budget)?;
            let scores: Vec<f64> = pool.images().iter().map(mean_region_entropy).collect();
            let top = top_k(&scores, a.budget);
            let sel = Selection::new(
                top.iter().map(|&i| pool.image(i).image_id.clone()).collect(),
                Some(top.iter().map(|&i| scores[i]).collect()),
                Strategy::Entropy,
                0,
            )?;
            emit(&sel, a.output.as_deref())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn train(args: &TrainArgs) -> Result<()> {
    let pool = args.pool.load()?;
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! override_with {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    override_with!(
        seed => seed,
        epochs => max_epochs,
        episodes => episodes_per_epoch,
        learning_rate => learning_rate,
        cell_size => cell_size,
        alpha => alpha,
        budget_fraction => budget_fraction,
        size_penalty => size_penalty_weight
    );
    if args.use_sr {
        cfg.use_sr = true;
    }
    let outcome = reinforce_train(&pool, &cfg)?;
    save_policy(&outcome.params, &args.output)?;
    if let Some(path) = &args.rewards {
        let mut out = sink(Some(path))?;
        let io_err = |e| Error::io(path, e);
        writeln!(out, "epoch,mean_reward").map_err(io_err)?;
        for (k, r) in outcome.epoch_rewards.iter().enumerate() {
            writeln!(out, "{k},{r}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
    }
    if let (Some(first), Some(last)) = (outcome.epoch_rewards.first(), outcome.epoch_rewards.last()) {
        eprintln!("trained {} epochs: mean reward {first} -> {last}", outcome.epoch_rewards.len());
    }
    eprintln!("wrote policy to {}", args.output.display());
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let scene: SceneConfig = read_json(&args.config)?;
    let strategy: AlStrategy = args.strategy.parse()?;
    let mut cfg: AlConfig = match &args.al_config {
        Some(p) => read_json(p)?,
        None => AlConfig::default(),
    };
    if let Some(v) = args.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = args.budget {
        cfg.budget_per_round = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_fraction = v;
    }
    if let Some(v) = args.init_fraction {
        cfg.init_fraction = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let report = run_al_loop(strategy, &scene, &cfg)?;
    report.write_csv_to(sink(args.output.as_deref())?)?;
    eprintln!(
        "{strategy}: final accuracy {} with {} labeled images",
        report.final_accuracy(),
        report.rounds.last().map_or(0, |r| r.labeled)
    );
    Ok(())
}
