use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subsplit::cli::{
    render_bench_table, run_bench, run_train, run_verify, BenchPlan, BlobsParams, DatasetChoice,
    Method, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "subsplit",
    version,
    about = "Train feed-forward networks split into coupled subnetworks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write per-epoch metrics
    Train(TrainArgs),
    /// Run the self-check suites
    Verify(VerifyArgs),
    /// Compare epoch times across method, splits, and workers variants
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "64,64,64,64,64,64")]
    widths: Vec<usize>,
    /// Explicit cut positions as layer indices; omit to balance parameter
    /// counts across the pieces
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<usize>>,
    /// mnist, fashion, kmnist, or blobs
    #[arg(long, default_value = "blobs")]
    dataset: String,
    /// Directory holding <name>/{train,test}-{images,labels}.idx
    /// (the SUBSPLIT_DATA environment variable overrides this)
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Penalty weight on the subnetwork outputs
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Coupling weight and dual step size
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Weight step divisor (step size 1/tau1); defaults to 100, or 1000
    /// for adam
    #[arg(long)]
    tau1: Option<f64>,
    /// Activation step divisor (step size 1/tau2)
    #[arg(long, default_value_t = 100.0)]
    tau2: f64,
    #[arg(long, default_value_t = 120)]
    batch: usize,
    /// Visit every row per epoch in shuffled batches instead of the
    /// default single sampled batch per epoch
    #[arg(long, default_value_t = false)]
    full_shuffle: bool,
    #[arg(long, default_value_t = 4)]
    blob_classes: usize,
    #[arg(long, default_value_t = 20)]
    blob_dim: usize,
    /// Training rows per class; a fifth as many test rows are added
    #[arg(long, default_value_t = 500)]
    blob_per_class: usize,
    #[arg(long, default_value_t = 10.0)]
    blob_separation: f64,
}

impl CommonArgs {
    fn config(&self, method: Method, splits: usize, workers: usize) -> subsplit::Result<RunConfig> {
        let mut cfg = RunConfig::new(method);
        cfg.splits = splits;
        cfg.widths = self.widths.clone();
        cfg.boundaries = self.boundaries.clone();
        cfg.dataset = DatasetChoice::parse(&self.dataset)?;
        cfg.blobs = BlobsParams {
            classes: self.blob_classes,
            dim: self.blob_dim,
            per_class: self.blob_per_class,
            separation: self.blob_separation,
        };
        cfg.data_root = self.data_root.clone();
        cfg.seed = self.seed;
        cfg.hp.alpha = self.alpha;
        cfg.hp.rho = self.rho;
        cfg.hp.tau1 = self.tau1.unwrap_or_else(|| method.default_tau1());
        cfg.hp.tau2 = self.tau2;
        cfg.hp.batch = self.batch;
        cfg.workers = workers;
        cfg.full_shuffle = self.full_shuffle;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// sgd, adam, gsadmm, or gsam
    #[arg(long, default_value = "gsadmm")]
    method: String,
    /// Number of subnetworks
    #[arg(long, default_value_t = 1)]
    splits: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Threads for the parallel phases; 0 picks min(splits, cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Metrics CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of q-update, gradients, loss-gap,
    /// reduction; an empty value runs nothing
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    only: Option<Vec<String>>,
}

#[derive(Args)]
struct BenchArgs {
    /// Methods to compare, comma separated
    #[arg(long, value_delimiter = ',', default_value = "gsadmm")]
    method: Vec<String>,
    /// Split counts to compare, comma separated
    #[arg(long, value_delimiter = ',', default_value = "2")]
    splits: Vec<usize>,
    /// Worker counts to compare, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    timed: usize,
    /// Write the table as CSV here as well
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

fn train(args: &TrainArgs) -> subsplit::Result<ExitCode> {
    let method = Method::parse(&args.method)?;
    let mut cfg = args.common.config(method, args.splits, args.workers)?;
    cfg.epochs = args.epochs;
    cfg.out = args.out.clone();
    let summary = run_train(&cfg)?;
    let last = summary.last();
    println!(
        "{} splits={} boundaries={:?} workers={}: epoch {} train_loss {:.6} train_acc {:.4} test_acc {:.4} residual {:.3e}",
        method.as_str(),
        cfg.splits,
        summary.boundaries,
        summary.workers,
        last.epoch,
        last.train_loss,
        last.train_acc,
        last.test_acc,
        last.residual,
    );
    if let Some(out) = &cfg.out {
        println!("metrics written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(args: &VerifyArgs) -> subsplit::Result<ExitCode> {
    let only: Option<Vec<String>> = args
        .only
        .as_ref()
        .map(|v| v.iter().filter(|s| !s.is_empty()).cloned().collect());
    let outcomes = run_verify(args.seed, only.as_deref())?;
    let mut all = true;
    for o in &outcomes {
        println!("{}", o.line());
        all &= o.passed;
    }
    Ok(if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(args: &BenchArgs) -> subsplit::Result<ExitCode> {
    let mut configs = Vec::new();
    for method in &args.method {
        let method = Method::parse(method)?;
        for &splits in &args.splits {
            for &workers in &args.workers {
                let mut cfg = args.common.config(method, splits, workers)?;
                cfg.epochs = args.warmup + args.timed;
                configs.push(cfg);
            }
        }
    }
    let plan = BenchPlan {
        configs,
        warmup: args.warmup,
        timed: args.timed,
    };
    let rows = run_bench(&plan)?;
    print!("{}", render_bench_table(&rows));
    if let Some(out) = &args.out {
        let mut csv = String::from("config,mean_epoch_s,std_epoch_s,ratio,final_train_loss\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label.replace(' ', "_"),
                r.mean_epoch_s,
                r.std_epoch_s,
                r.ratio,
                r.final_train_loss
            ));
        }
        std::fs::write(out, csv)?;
        println!("bench table written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Train(args) => train(args),
        Command::Verify(args) => verify(args),
        Command::Bench(args) => bench(args),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
