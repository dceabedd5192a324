//! Experiment driver behind the command-line interface: builds datasets
//! and networks from a `RunConfig`, executes training/verification/bench
//! runs, and emits metrics.
//!
//! All argument parsing lives in the binary; everything here takes plain
//! config structs so tests can drive runs directly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{idx_files_present, load_idx_pair, synthetic_blobs, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{CsvLogger, MetricsRow};
use crate::network::{balanced_boundaries, LossKind, NetworkSpec};
use crate::optim::epochs::{baseline_epoch, gsadmm_epoch, gsam_epoch};
use crate::optim::{
    evaluate, objective_full, residual_metric, AuxMode, AuxState, Hyperparams, InnerOpt,
    TrainState,
};
use crate::rng::RngState;
use crate::runtime::available_workers;
use crate::verify::{
    suite_gradients, suite_loss_gap, suite_q_closed_form, suite_reduction, SuiteOutcome,
    SUITE_NAMES,
};

/// Seed streams, so weight init, batch sampling, and data synthesis draw
/// from independent sequences of the same user seed.
const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_DATA: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sgd,
    Adam,
    Gsadmm,
    Gsam,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Method::Sgd),
            "adam" => Ok(Method::Adam),
            "gsadmm" => Ok(Method::Gsadmm),
            "gsam" => Ok(Method::Gsam),
            other => Err(Error::Config(format!(
                "unknown method {other}; expected sgd, adam, gsadmm, or gsam"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Adam => "adam",
            Method::Gsadmm => "gsadmm",
            Method::Gsam => "gsam",
        }
    }

    /// The auxiliary-state flavor, or None for the unsplit baselines.
    pub fn aux_mode(self) -> Option<AuxMode> {
        match self {
            Method::Gsadmm => Some(AuxMode::Admm),
            Method::Gsam => Some(AuxMode::Am),
            Method::Sgd | Method::Adam => None,
        }
    }

    pub fn inner(self) -> InnerOpt {
        match self {
            Method::Adam => InnerOpt::Adam,
            _ => InnerOpt::Sgd,
        }
    }

    /// Default weight step divisor; Adam's 1/tau1 acts as its learning
    /// rate, so it defaults an order of magnitude finer.
    pub fn default_tau1(self) -> f64 {
        match self {
            Method::Adam => 1000.0,
            _ => 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetChoice {
    Mnist,
    Fashion,
    Kmnist,
    Blobs,
}

impl DatasetChoice {
    pub fn parse(s: &str) -> Result<DatasetChoice> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetChoice::Mnist),
            "fashion" => Ok(DatasetChoice::Fashion),
            "kmnist" => Ok(DatasetChoice::Kmnist),
            "blobs" => Ok(DatasetChoice::Blobs),
            other => Err(Error::Config(format!(
                "unknown dataset {other}; expected mnist, fashion, kmnist, or blobs"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Fashion => "fashion",
            DatasetChoice::Kmnist => "kmnist",
            DatasetChoice::Blobs => "blobs",
        }
    }

    fn idx_name(self) -> Option<&'static str> {
        match self {
            DatasetChoice::Blobs => None,
            other => Some(other.as_str()),
        }
    }
}

/// Shape of the synthetic mixture when `--dataset blobs` is selected.
/// `per_class` counts training rows; a fifth as many test rows are drawn
/// from the same mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobsParams {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
}

impl Default for BlobsParams {
    fn default() -> BlobsParams {
        BlobsParams {
            classes: 4,
            dim: 20,
            per_class: 500,
            separation: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: Method,
    pub splits: usize,
    /// Hidden-layer widths; input and class counts come from the data.
    pub widths: Vec<usize>,
    /// Explicit cut positions (layer indices); None picks cuts balancing
    /// parameter counts across the pieces.
    pub boundaries: Option<Vec<usize>>,
    pub dataset: DatasetChoice,
    pub blobs: BlobsParams,
    pub data_root: Option<PathBuf>,
    pub epochs: usize,
    pub seed: u64,
    pub hp: Hyperparams,
    /// 0 picks min(splits, available cores).
    pub workers: usize,
    pub out: Option<PathBuf>,
    /// False runs the one-batch-per-epoch scheme; true visits every row
    /// each epoch in shuffled batches.
    pub full_shuffle: bool,
}

impl RunConfig {
    pub fn new(method: Method) -> RunConfig {
        RunConfig {
            method,
            splits: 1,
            widths: vec![64; 6],
            boundaries: None,
            dataset: DatasetChoice::Blobs,
            blobs: BlobsParams::default(),
            data_root: None,
            epochs: 100,
            seed: 0,
            hp: Hyperparams {
                tau1: method.default_tau1(),
                ..Hyperparams::default()
            },
            workers: 0,
            out: None,
            full_shuffle: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.splits == 0 {
            return Err(Error::Config("splits must be at least 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".to_string()));
        }
        if self.method.aux_mode().is_none() && self.splits != 1 {
            return Err(Error::Config(format!(
                "{} trains the unsplit network; use --splits 1",
                self.method.as_str()
            )));
        }
        Ok(())
    }
}

/// `SUBSPLIT_DATA`, when set and non-empty, wins over the flag; the flag
/// wins over the `data` default.
pub fn resolve_data_root(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os("SUBSPLIT_DATA") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data")),
    }
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset.idx_name() {
        None => {
            let b = &cfg.blobs;
            let mut rng = RngState::with_stream(cfg.seed, STREAM_DATA);
            // draw 6/5 of the requested training rows, then carve off an
            // exact per-class fifth as the test set
            let pool = synthetic_blobs(b.classes, b.dim, b.per_class * 6 / 5, b.separation, &mut rng)?;
            train_test_split(&pool, 5.0 / 6.0, &mut rng)
        }
        Some(name) => {
            let root = resolve_data_root(cfg.data_root.as_deref());
            load_idx_pair(&root, name)
        }
    }
}

/// True when the IDX files for a named dataset are present under the
/// resolved data root.
pub fn dataset_available(choice: DatasetChoice, flag_root: Option<&Path>) -> bool {
    match choice.idx_name() {
        None => true,
        Some(name) => idx_files_present(&resolve_data_root(flag_root), name),
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub boundaries: Vec<usize>,
    pub workers: usize,
}

impl TrainSummary {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("epochs >= 1 guarantees a row")
    }
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;

    let mut layer_widths = Vec::with_capacity(cfg.widths.len() + 2);
    layer_widths.push(train.dim());
    layer_widths.extend_from_slice(&cfg.widths);
    layer_widths.push(train.classes());
    let boundaries = match &cfg.boundaries {
        Some(b) => b.clone(),
        None => balanced_boundaries(&layer_widths, cfg.splits)?,
    };

    let mut init_rng = RngState::with_stream(cfg.seed, STREAM_INIT);
    let mut net = NetworkSpec::mlp(
        &layer_widths,
        &boundaries,
        LossKind::SoftmaxCrossEntropy,
        &mut init_rng,
    )?;
    let workers = if cfg.workers == 0 {
        available_workers().min(net.splits())
    } else {
        cfg.workers
    };
    let mut state = TrainState::new(&net, RngState::with_stream(cfg.seed, STREAM_BATCH));
    let mut aux = match cfg.method.aux_mode() {
        Some(mode) => Some(AuxState::warm_start(&net, train.inputs(), mode)?),
        None => None,
    };
    let inner = cfg.method.inner();

    let mut logger = match &cfg.out {
        Some(path) => Some(CsvLogger::create(path)?),
        None => None,
    };
    let mut rows = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let begun = Instant::now();
        let timings = match (&mut aux, cfg.method.aux_mode()) {
            (Some(aux), Some(AuxMode::Admm)) => gsadmm_epoch(
                &mut net,
                aux,
                train.labels(),
                &cfg.hp,
                inner,
                &mut state,
                workers,
                cfg.full_shuffle,
            )?,
            (Some(aux), Some(AuxMode::Am)) => gsam_epoch(
                &mut net,
                aux,
                train.labels(),
                &cfg.hp,
                inner,
                &mut state,
                workers,
                cfg.full_shuffle,
            )?,
            _ => baseline_epoch(
                &mut net,
                train.inputs(),
                train.labels(),
                &cfg.hp,
                inner,
                &mut state,
                cfg.full_shuffle,
            )?,
        };
        let wall_s = begun.elapsed().as_secs_f64();

        let (train_loss, train_acc) = evaluate(&net, train.inputs(), train.labels())?;
        let (_, test_acc) = evaluate(&net, test.inputs(), test.labels())?;
        let (residual, objective) = match &aux {
            Some(aux) => (
                residual_metric(&net, aux)?,
                objective_full(&net, aux, train.labels(), &cfg.hp)?,
            ),
            None => (0.0, train_loss),
        };
        let row = MetricsRow {
            epoch: state.epoch,
            wall_s,
            train_loss,
            train_acc,
            test_acc,
            residual,
            objective,
            phase_w_s: timings.w_s,
            phase_p_s: timings.p_s,
            phase_q_s: timings.q_s,
            phase_u_s: timings.u_s,
        };
        if let Some(log) = &mut logger {
            log.append(&row)?;
        }
        rows.push(row);
    }
    if let Some(log) = logger {
        log.finish()?;
    }
    Ok(TrainSummary {
        rows,
        boundaries,
        workers,
    })
}

/// Runs the named suites (all of them when `only` is None; none when
/// `only` is an empty list). Returns the outcomes; overall success is
/// their conjunction.
pub fn run_verify(seed: u64, only: Option<&[String]>) -> Result<Vec<SuiteOutcome>> {
    let selected: Vec<&str> = match only {
        None => SUITE_NAMES.to_vec(),
        Some(names) => {
            let mut picked = Vec::with_capacity(names.len());
            for name in names {
                let known = SUITE_NAMES
                    .iter()
                    .find(|&&s| s == name.as_str())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown suite {name}; expected one of {}",
                            SUITE_NAMES.join(", ")
                        ))
                    })?;
                picked.push(*known);
            }
            picked
        }
    };
    Ok(selected
        .into_iter()
        .map(|name| match name {
            "q-update" => suite_q_closed_form(seed),
            "gradients" => suite_gradients(seed),
            "loss-gap" => suite_loss_gap(seed),
            _ => suite_reduction(seed),
        })
        .collect())
}

/// One benchmark lane: a training config plus how many timed epochs to
/// aggregate after warm-up.
#[derive(Clone, Debug)]
pub struct BenchPlan {
    pub configs: Vec<RunConfig>,
    pub warmup: usize,
    pub timed: usize,
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub label: String,
    pub mean_epoch_s: f64,
    pub std_epoch_s: f64,
    /// This row's mean over the first row's mean.
    pub ratio: f64,
    pub final_train_loss: f64,
}

fn bench_label(cfg: &RunConfig) -> String {
    format!(
        "{} splits={} workers={}",
        cfg.method.as_str(),
        cfg.splits,
        cfg.workers
    )
}

/// Times epochs per config and reports each mean against the first
/// config's. Configs must differ only in method, splits, and workers, so
/// the comparison stays apples to apples.
pub fn run_bench(plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    if plan.configs.len() < 2 {
        return Err(Error::Config(
            "bench needs at least two configs to compare".to_string(),
        ));
    }
    if plan.timed < 20 {
        return Err(Error::Config(
            "bench needs at least 20 timed epochs".to_string(),
        ));
    }
    let first = &plan.configs[0];
    for cfg in &plan.configs[1..] {
        let comparable = cfg.widths == first.widths
            && cfg.dataset == first.dataset
            && cfg.blobs == first.blobs
            && cfg.data_root == first.data_root
            && cfg.seed == first.seed
            && cfg.hp == first.hp
            && cfg.epochs == first.epochs
            && cfg.full_shuffle == first.full_shuffle
            && cfg.boundaries == first.boundaries;
        if !comparable {
            return Err(Error::Config(format!(
                "bench configs must differ only in method/splits/workers; {} differs elsewhere",
                bench_label(cfg)
            )));
        }
    }

    let mut out = Vec::with_capacity(plan.configs.len());
    let mut first_mean = None;
    for cfg in &plan.configs {
        let mut cfg = cfg.clone();
        cfg.epochs = plan.warmup + plan.timed;
        cfg.out = None;
        let summary = run_train(&cfg)?;
        let times: Vec<f64> = summary.rows[plan.warmup..]
            .iter()
            .map(|r| r.wall_s)
            .collect();
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / times.len() as f64;
        let base = *first_mean.get_or_insert(mean);
        out.push(BenchRow {
            label: bench_label(&cfg),
            mean_epoch_s: mean,
            std_epoch_s: var.sqrt(),
            ratio: mean / base,
            final_train_loss: summary.last().train_loss,
        });
    }
    Ok(out)
}

pub fn render_bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("config                              mean_s      std_s    ratio  final_loss\n");
    for r in rows {
        s.push_str(&format!(
            "{:<34} {:>9.6} {:>10.6} {:>8.3} {:>11.6}\n",
            r.label, r.mean_epoch_s, r.std_epoch_s, r.ratio, r.final_train_loss
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_and_dataset_names_roundtrip() {
        for m in [Method::Sgd, Method::Adam, Method::Gsadmm, Method::Gsam] {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        for d in [
            DatasetChoice::Mnist,
            DatasetChoice::Fashion,
            DatasetChoice::Kmnist,
            DatasetChoice::Blobs,
        ] {
            assert_eq!(DatasetChoice::parse(d.as_str()).unwrap(), d);
        }
        assert!(Method::parse("sgdd").is_err());
        assert!(DatasetChoice::parse("cifar").is_err());
    }

    #[test]
    fn baselines_refuse_split_counts() {
        let mut cfg = RunConfig::new(Method::Sgd);
        cfg.splits = 2;
        assert!(matches!(run_train(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn blobs_split_sizes_are_exact() {
        let mut cfg = RunConfig::new(Method::Sgd);
        cfg.blobs = BlobsParams {
            classes: 3,
            dim: 5,
            per_class: 50,
            separation: 8.0,
        };
        let (train, test) = load_data(&cfg).unwrap();
        assert_eq!(train.len(), 150);
        assert_eq!(test.len(), 30);
        assert_eq!(train.dim(), 5);
        assert_eq!(train.classes(), 3);
    }

    #[test]
    fn missing_idx_dataset_names_the_path() {
        let mut cfg = RunConfig::new(Method::Sgd);
        cfg.dataset = DatasetChoice::Mnist;
        cfg.data_root = Some(PathBuf::from("/nonexistent-root"));
        cfg.epochs = 1;
        let err = run_train(&cfg).unwrap_err().to_string();
        assert!(err.contains("nonexistent-root"), "{err}");
        assert!(err.contains("mnist"), "{err}");
    }

    #[test]
    fn verify_selection_is_validated_and_empty_is_noop() {
        assert!(run_verify(0, Some(&["nope".to_string()])).is_err());
        assert!(run_verify(0, Some(&[])).unwrap().is_empty());
        let one = run_verify(0, Some(&["q-update".to_string()])).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].name, "q-update");
        assert!(one[0].passed, "{}", one[0].line());
    }

    #[test]
    fn bench_rejects_incomparable_configs() {
        let a = RunConfig::new(Method::Gsadmm);
        let mut b = RunConfig::new(Method::Gsadmm);
        b.widths = vec![8; 2];
        let plan = BenchPlan {
            configs: vec![a, b],
            warmup: 1,
            timed: 20,
        };
        let err = run_bench(&plan).unwrap_err().to_string();
        assert!(err.contains("differ only in"), "{err}");
    }
}
