use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use symstdp::config::PRESETS;
use symstdp::dataio::{fetch_dataset, DatasetManifest, DatasetName, Sample, Source};
use symstdp::metrics::{accuracy, accuracy_of, write_activities_csv, write_weights_csv, ConfusionMatrix};
use symstdp::topology::{build_network, Network};
use symstdp::trainer::{checkpoint, evaluate, label_stats, Cursor, EvalSet, NeuronLabels, Trainer};
use symstdp::{RunConfig, SnnError, TrainMode};

#[derive(Parser)]
#[command(name = "symstdp", version, about = "Spiking network trained with symmetric STDP")]
struct Cli {
    /// Worker threads for simulation and evaluation; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download (or import) a dataset into the verified cache.
    Fetch {
        /// mnist or fashion-mnist.
        #[arg(long, default_value = "mnist")]
        dataset: DatasetName,
        /// Cache root; each dataset lives in its own subdirectory.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Import IDX files (raw or .gz) from this directory instead of downloading.
        #[arg(long)]
        from_dir: Option<PathBuf>,
    },
    /// Train from a preset or a JSON config; flags override either.
    Train {
        /// Named preset, see `symstdp presets`.
        #[arg(long, required_unless_present = "config")]
        preset: Option<String>,
        /// JSON run config; takes precedence over --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Presentations between checkpoints.
        #[arg(long, default_value_t = 10_000)]
        checkpoint_every: u64,
    },
    /// Continue a run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        /// Presentations between checkpoints.
        #[arg(long, default_value_t = 10_000)]
        checkpoint_every: u64,
    },
    /// Evaluate a checkpoint with all plasticity off.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Use only the first N samples of the split.
        #[arg(long)]
        limit: Option<usize>,
        /// Also score the Label-Statistics readout.
        #[arg(long)]
        label_stats: bool,
        /// Where to write records; defaults to the run's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write activity or weight tables as CSV.
    Export {
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        kind: ExportKind,
        /// Split to record activities on.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Use only the first N samples of the split.
        #[arg(long)]
        limit: Option<usize>,
        /// Output CSV; defaults to `activities_<split>.csv` or `weights.csv` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available presets.
    Presets,
}

#[derive(clap::Args)]
struct Overrides {
    /// simultaneous, layer-by-layer or unsupervised-only.
    #[arg(long)]
    mode: Option<TrainMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs (hidden-layer epochs in layer-by-layer mode).
    #[arg(long)]
    epochs: Option<u32>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
    /// Presentations between periodic test evaluations; 0 disables them.
    #[arg(long)]
    eval_every: Option<u64>,
    /// Test samples used by periodic evaluations.
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Run directory for config, checkpoint and history.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Disable boosted re-presentation during evaluation.
    #[arg(long)]
    no_test_retry: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Activities,
    Weights,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("error: could not start {w} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<SnnError>()) {
        Some(SnnError::Fault { .. }) => 3,
        Some(SnnError::Config { .. }) | Some(SnnError::Contract(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Fetch {
            dataset,
            data_dir,
            from_dir,
        } => {
            let manifest = DatasetManifest::builtin(dataset);
            let source = from_dir.as_deref().map_or(Source::Mirrors, Source::LocalDir);
            let handle = fetch_dataset(&manifest, &data_dir, source)?;
            log::info!("{dataset} ready in {}", handle.dir.display());
            Ok(())
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Train {
            preset,
            config,
            overrides,
            checkpoint_every,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => RunConfig::load(path)?,
                (None, Some(name)) => RunConfig::preset(name)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let (train, test) = cfg.load_data()?;
            fs::create_dir_all(&cfg.output_dir)
                .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            let resolved = cfg.output_dir.join("config.json");
            fs::write(&resolved, cfg.to_json())
                .with_context(|| format!("writing {}", resolved.display()))?;
            let _ = fs::remove_file(cfg.output_dir.join("history.jsonl"));
            let network = build_network(&cfg.network, cfg.seed)?;
            train_loop(cfg, network, Cursor::default(), &train, &test, checkpoint_every)
        }
        Command::Resume {
            checkpoint: path,
            checkpoint_every,
        } => {
            let (mut cfg, network, cursor) = checkpoint::load(&path)?;
            let (train, test) = cfg.load_data()?;
            log::info!("resuming at {} presentations", cursor.presented);
            train_loop(cfg, network, cursor, &train, &test, checkpoint_every)
        }
        Command::Eval {
            checkpoint: path,
            split,
            limit,
            label_stats: with_ls,
            output,
        } => {
            let (mut cfg, network, _) = checkpoint::load(&path)?;
            let (train, test) = cfg.load_data()?;
            let samples = pick(split, &train, &test, limit);
            let out = output.unwrap_or_else(|| cfg.output_dir.clone());
            let labels_src = with_ls.then_some(&train[..cfg.label_stats_samples.min(train.len())]);
            let summary = evaluate_and_report(&cfg, &network, samples, split, labels_src)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let name = format!("eval_{}", split_name(split));
            let json = out.join(format!("{name}.json"));
            fs::write(&json, serde_json::to_string_pretty(&summary.json)?)
                .with_context(|| format!("writing {}", json.display()))?;
            write_activities_csv(
                &out.join(format!("{name}_activities.csv")),
                &summary.records,
                network.config.n_hidden * usize::from(network.config.hidden_blocks),
                network.config.n_labels,
            )?;
            log::info!("records written to {}", out.display());
            Ok(())
        }
        Command::Export {
            checkpoint: path,
            kind,
            split,
            limit,
            out,
        } => {
            let (mut cfg, network, _) = checkpoint::load(&path)?;
            let (train, test) = cfg.load_data()?;
            let out = out.unwrap_or_else(|| {
                cfg.output_dir.join(match kind {
                    ExportKind::Activities => format!("activities_{}.csv", split_name(split)),
                    ExportKind::Weights => "weights.csv".to_string(),
                })
            });
            match kind {
                ExportKind::Activities => {
                    let samples = pick(split, &train, &test, limit);
                    let records = evaluate(
                        &network,
                        &cfg,
                        samples,
                        eval_set(split),
                        cfg.sim.test_time_retry,
                    )?;
                    write_activities_csv(
                        &out,
                        &records,
                        network.config.n_hidden * usize::from(network.config.hidden_blocks),
                        network.config.n_labels,
                    )?;
                }
                ExportKind::Weights => {
                    let labels = assign_labels(&cfg, &network, &train)?;
                    write_weights_csv(&out, &network, labels.as_ref())?;
                }
            }
            log::info!("wrote {}", out.display());
            Ok(())
        }
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.mode {
            cfg.sim.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.sim.epochs = e;
        }
        if self.train_limit.is_some() {
            cfg.train_limit = self.train_limit;
        }
        if self.test_limit.is_some() {
            cfg.test_limit = self.test_limit;
        }
        if let Some(e) = self.eval_every {
            cfg.sim.eval_every = e;
        }
        if self.eval_samples.is_some() {
            cfg.sim.eval_samples = self.eval_samples;
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if self.no_test_retry {
            cfg.sim.test_time_retry = false;
        }
    }
}

fn split_name(s: SplitArg) -> &'static str {
    match s {
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    }
}

fn eval_set(s: SplitArg) -> EvalSet {
    match s {
        SplitArg::Train => EvalSet::Assign,
        SplitArg::Test => EvalSet::Test,
    }
}

fn pick<'a>(split: SplitArg, train: &'a [Sample], test: &'a [Sample], limit: Option<usize>) -> &'a [Sample] {
    let s = match split {
        SplitArg::Train => train,
        SplitArg::Test => test,
    };
    &s[..limit.map_or(s.len(), |n| n.min(s.len()))]
}

fn assign_labels(cfg: &RunConfig, network: &Network, train: &[Sample]) -> anyhow::Result<Option<NeuronLabels>> {
    if network.config.hidden_blocks == 0 {
        return Ok(None);
    }
    let assign = &train[..cfg.label_stats_samples.min(train.len())];
    let records = evaluate(network, cfg, assign, EvalSet::Assign, cfg.sim.test_time_retry)?;
    Ok(Some(NeuronLabels::assign(
        &records,
        network.config.n_hidden,
        network.config.n_labels,
    )?))
}

struct Report {
    records: Vec<symstdp::trainer::RunRecord>,
    json: serde_json::Value,
}

fn evaluate_and_report(
    cfg: &RunConfig,
    network: &Network,
    samples: &[Sample],
    split: SplitArg,
    label_source: Option<&[Sample]>,
) -> anyhow::Result<Report> {
    let records = evaluate(network, cfg, samples, eval_set(split), cfg.sim.test_time_retry)?;
    let n_labels = network.config.n_labels;
    let confusion = ConfusionMatrix::from_records(n_labels, &records);
    let acc = accuracy(&records);
    let zero = records.iter().filter(|r| r.zero_output).count();
    println!(
        "accuracy {:.4} on {} {} samples ({} without output spikes)",
        acc,
        records.len(),
        split_name(split),
        zero
    );
    print!("{}", confusion.to_table());

    let mut ls_acc = None;
    if let (Some(src), true) = (label_source, network.config.hidden_blocks == 1) {
        match label_stats(network, cfg, src, &records) {
            Ok((_, preds)) => {
                let a = accuracy_of(
                    records
                        .iter()
                        .zip(&preds)
                        .map(|(r, &p)| (usize::from(r.label), p)),
                );
                println!("label-statistics accuracy {a:.4}");
                ls_acc = Some(a);
            }
            Err(e) => log::warn!("label-statistics unavailable: {e}"),
        }
    }
    let json = serde_json::json!({
        "split": split_name(split),
        "samples": records.len(),
        "accuracy": acc,
        "label_stats_accuracy": ls_acc,
        "zero_output": zero,
        "confusion": (0..n_labels)
            .map(|t| (0..n_labels).map(|p| confusion.get(t, p)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    });
    Ok(Report { records, json })
}

fn append_history(path: &Path, entries: &[symstdp::trainer::HistoryEntry]) -> anyhow::Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn train_loop(
    cfg: RunConfig,
    network: Network,
    cursor: Cursor,
    train: &[Sample],
    test: &[Sample],
    checkpoint_every: u64,
) -> anyhow::Result<()> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = out.join("checkpoint.bin");
    let history = out.join("history.jsonl");
    let mut trainer = Trainer::new(cfg, network, cursor, train, test);
    log::info!(
        "training {} presentations ({} done)",
        trainer.total_presentations(),
        trainer.cursor.presented
    );
    let mut written = 0;
    loop {
        let n = trainer.run_for(Some(checkpoint_every.max(1)))?;
        append_history(&history, &trainer.history[written..])?;
        written = trainer.history.len();
        checkpoint::save(&ckpt, &trainer.run, &trainer.network, &trainer.cursor)?;
        if n == 0 || trainer.is_done() {
            break;
        }
    }
    log::info!("training complete; checkpoint at {}", ckpt.display());
    let cfg = trainer.run.clone();
    let network = trainer.network;
    let labels_src = &train[..cfg.label_stats_samples.min(train.len())];
    let summary = evaluate_and_report(&cfg, &network, test, SplitArg::Test, Some(labels_src))?;
    let path = out.join("final.json");
    fs::write(&path, serde_json::to_string_pretty(&summary.json)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
