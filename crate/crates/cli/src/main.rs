use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use npgd::experiment::{self, parse_entries, ExperimentConfig};
use npgd::{NpgdError, Result};

#[derive(Parser, Debug)]
#[command(name = "npgd", version, about = "Neural proximal gradient descent for image reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the variable-density sampling mask (PGM and bitmask).
    Genmask(Common),
    /// Write the synthetic phantom dataset.
    Gendata(Common),
    /// Train the unrolled network.
    Train(Common),
    /// Reconstruct test images with a trained checkpoint.
    Reconstruct(Common),
    /// Run the wavelet compressed-sensing baseline.
    Baseline(Common),
    /// Contraction diagnostics and de-biasing of a trained checkpoint.
    Analyze(Common),
    /// Train and evaluate a grid of (iterations, residual blocks) cells.
    Sweep(Common),
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides NPGD_OUT and out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides `threads`).
    #[arg(long)]
    threads: Option<usize>,
    /// Checkpoint for reconstruct/analyze (default: <out>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory of *_re.pgm/*_im.pgm pairs for reconstruct.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Suppress the summary line.
    #[arg(long)]
    quiet: bool,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| NpgdError::Config(format!("cannot read config {}: {e}", c.config.display())))?;
    let mut entries = parse_entries(&text)?;
    if let Some(seed) = c.seed {
        entries.insert("seed".into(), seed.to_string());
    }
    if let Some(t) = c.threads {
        entries.insert("threads".into(), t.to_string());
    }
    let mut cfg = ExperimentConfig::from_entries(&entries)?;
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    } else if let Some(env) = std::env::var_os("NPGD_OUT") {
        cfg.out_dir = PathBuf::from(env);
    }
    Ok(cfg)
}

fn checkpoint_path(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("model.ckpt"))
}

fn say(c: &Common, msg: impl AsRef<str>) {
    if !c.quiet {
        println!("{}", msg.as_ref());
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Genmask(c) => {
            let cfg = load_config(&c)?;
            let mask = experiment::cmd_genmask(&cfg)?;
            say(&c, format!("mask: {} of {} samples", mask.popcount(), mask.bits().len()));
        }
        Command::Gendata(c) => {
            let cfg = load_config(&c)?;
            let dir = experiment::cmd_gendata(&cfg)?;
            say(&c, format!("wrote {} images to {}", cfg.data.count, dir.display()));
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let out = experiment::run_with_threads(&cfg, || experiment::cmd_train(&cfg))?;
            if let Some(last) = out.trace.last() {
                say(&c, format!("step {} loss {:.6e} alpha {:.4}", last.step, last.loss_total, last.alpha));
            }
        }
        Command::Reconstruct(c) => {
            let cfg = load_config(&c)?;
            let ck = checkpoint_path(&c, &cfg);
            let input = c.input.as_deref();
            let rows = experiment::run_with_threads(&cfg, || experiment::cmd_reconstruct(&cfg, &ck, input))?;
            say(
                &c,
                format!(
                    "{} images: snr {:.3} dB (zero-filled {:.3} dB)",
                    rows.len(),
                    mean(rows.iter().map(|r| r.recon.snr_db)),
                    mean(rows.iter().map(|r| r.zero_filled.snr_db))
                ),
            );
        }
        Command::Baseline(c) => {
            let cfg = load_config(&c)?;
            let s = experiment::run_with_threads(&cfg, || experiment::cmd_baseline(&cfg))?;
            say(&c, format!("lambda {:.4e}: snr {:.3} dB", s.lambda, s.mean_snr()));
        }
        Command::Analyze(c) => {
            let cfg = load_config(&c)?;
            let ck = checkpoint_path(&c, &cfg);
            let s = experiment::run_with_threads(&cfg, || experiment::cmd_analyze(&cfg, &ck))?;
            say(&c, format!("analyzed {} trajectories", s.traces.len()));
        }
        Command::Sweep(c) => {
            let cfg = load_config(&c)?;
            let rows = experiment::run_with_threads(&cfg, || experiment::cmd_sweep(&cfg))?;
            for r in rows {
                say(&c, format!("T={} RB={}: snr {:.3} dB", r.iterations, r.res_blocks, r.snr_mean));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
