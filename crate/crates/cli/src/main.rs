use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use simmp_core::config::RunConfig;
use simmp_core::harness::checkpoint;
use simmp_core::harness::data::audit;
use simmp_core::harness::io::{load_samples, save_samples, write_atomic};
use simmp_core::harness::train::{evaluate, evaluation_csv, make_splits, train, CHECKPOINT_FILE};
use simmp_core::PrototypeMemoryBank;

/// Memory-prior segmentation on synthetic shapes.
#[derive(Debug, Parser)]
#[command(name = "simmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (`key = value` lines); defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the train and test splits as PGM files under `--out`.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Print per-class pixel fractions and presence rates.
        #[arg(long)]
        audit: bool,
    },
    /// Train a network; writes log.csv, metrics.csv and checkpoint.bin.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Dataset written by `gen-data`; generated from the seed otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset split directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding `images/` and `masks/`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for eval.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump every memory bank of a checkpoint as CSV.
    InspectMemory {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for memory.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a loss trajectory (one value per line) through the update
    /// budget rule and print the K curve.
    SimulateK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        losses: PathBuf,
        /// Slots per cluster; taken from the configuration otherwise.
        #[arg(long)]
        memory: Option<usize>,
        /// Output directory for k.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_atomic(&dir.join(file), text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_data(common: &Common, out: &Path, show_audit: bool) -> Result<()> {
    let cfg = common.load()?;
    let (train, test) = make_splits(&cfg)?;
    save_samples(&out.join("train"), &train)?;
    save_samples(&out.join("test"), &test)?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    if show_audit {
        let all: Vec<_> = train.iter().chain(&test).cloned().collect();
        let a = audit(&all, cfg.network.classes);
        println!("class,pixel_fraction,presence");
        for (c, (f, p)) in a.pixel_fraction.iter().zip(&a.presence).enumerate() {
            println!("{c},{f:.4},{p:.4}");
        }
    }
    Ok(())
}

fn run_train(common: &Common, out: &Path, data: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let (train_set, test_set) = match data {
        Some(d) => (load_samples(&d.join("train"))?, load_samples(&d.join("test"))?),
        None => make_splits(&cfg)?,
    };
    let start = Instant::now();
    let outcome = train(&cfg, &train_set, &test_set, Some(out), |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  K {:>3}  mean DSC {:.4}  [{:.0}s]",
            e.epoch,
            e.loss,
            e.k,
            e.mean_dsc,
            start.elapsed().as_secs_f64()
        );
    })?;
    let last = outcome.log.last().expect("at least one epoch");
    eprintln!("final mean DSC {:.4}; checkpoint at {}", last.mean_dsc, out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let samples = load_samples(data)?;
    let m = evaluate(ckpt, &samples)?;
    emit(out, "eval.csv", &evaluation_csv(&m))
}

fn inspect_memory(ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let (_, net) = checkpoint::load(ckpt)?;
    let mut s = String::from("block,k_current,kind,cluster,slot,channel,value\n");
    for (b, bank) in net.banks.iter().enumerate() {
        let (k, c) = (bank.clusters(), bank.channels());
        for i in 0..k {
            for (idx, v) in bank.prior(i).iter().enumerate() {
                let _ = writeln!(s, "{b},{},prior,{i},{},{},{v}", bank.k_current(), idx / c, idx % c);
            }
            for (ch, v) in bank.core(i).iter().enumerate() {
                let _ = writeln!(s, "{b},{},core,{i},,{ch},{v}", bank.k_current());
            }
        }
    }
    emit(out, "memory.csv", &s)
}

fn simulate_k(common: &Common, losses: &Path, memory: Option<usize>, out: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let m = memory.unwrap_or(cfg.network.memory);
    if m < 2 {
        bail!("memory must be at least 2, got {m}");
    }
    let text = std::fs::read_to_string(losses).with_context(|| format!("reading {}", losses.display()))?;
    let mut bank = PrototypeMemoryBank::new(1, m, 1);
    let mut s = String::from("epoch,loss,k\n");
    let mut epoch = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loss: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: not a number", losses.display(), i + 1))?;
        epoch += 1;
        let k = bank.record_epoch_loss(loss)?;
        let _ = writeln!(s, "{epoch},{loss},{k}");
    }
    emit(out, "k.csv", &s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out, audit } => gen_data(&common, &out, audit),
        Command::Train { common, out, data } => run_train(&common, &out, data.as_deref()),
        Command::Eval { checkpoint, data, out } => run_eval(&checkpoint, &data, out.as_deref()),
        Command::InspectMemory { checkpoint, out } => inspect_memory(&checkpoint, out.as_deref()),
        Command::SimulateK {
            common,
            losses,
            memory,
            out,
        } => simulate_k(&common, &losses, memory, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
