use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dehaze::commands::{self, Model, Q_SWEEP};
use dehaze::haze::SynthOptions;
use dehaze::imaging::Image;

/// Haze removal with artificial multi-shot priors and graph reasoning.
#[derive(Parser)]
#[command(name = "dehaze", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic (hazy, clear) dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Modulate the haze density with a smooth random field.
        #[arg(long)]
        nonhomogeneous: bool,
    },
    /// Train from scratch; writes the checkpoint, `<out>.cfg` and the loss log.
    Train {
        /// Dataset directory (defaults to `data` from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path (defaults to `checkpoint` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print only every n-th log line.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Dehaze one PPM image.
    Dehaze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Network configuration (defaults to `<ckpt>.cfg`).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-β PSNR/SSIM table over a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the nine component combinations plus an SGR node sweep.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score on this dataset instead of the training set.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Steps per configuration (defaults to the config's `max_steps`, else 100).
        #[arg(long)]
        steps: Option<usize>,
        /// SGR grid sides for the sweep; empty disables it.
        #[arg(long, value_delimiter = ',', default_values_t = Q_SWEEP)]
        q: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump projection and adjacency heatmaps for one image.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        node: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn missing(what: &str) -> dehaze::Error {
    dehaze::Error::Config(format!("no {what} given on the command line or in the config"))
}

fn write(path: &std::path::Path, text: &str) -> Result<(), dehaze::Error> {
    std::fs::write(path, text).map_err(|source| {
        dehaze::imaging::ImageError::Io {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

fn run(cli: Cli) -> Result<(), dehaze::Error> {
    match cli.command {
        Command::Synth {
            out,
            count,
            size,
            seed,
            nonhomogeneous,
        } => {
            let n = commands::synth(
                &out,
                SynthOptions {
                    count,
                    size,
                    seed,
                    nonhomogeneous,
                },
            )?;
            println!("wrote {n} pairs to {}", out.display());
        }
        Command::Train {
            data,
            config,
            out,
            every,
        } => {
            let cfg = commands::load_config(config.as_deref())?;
            let data = data.or(cfg.data.clone()).ok_or_else(|| missing("dataset"))?;
            let out = out
                .or(cfg.checkpoint.clone())
                .ok_or_else(|| missing("checkpoint path"))?;
            let every = every.max(1);
            let summary = commands::train_to(&cfg, &data, &out, |l| {
                if l.step % every == 0 || l.step == 1 {
                    println!("{l}");
                }
            })?;
            println!(
                "wrote {} and {}",
                summary.checkpoint.display(),
                summary.log_path.display()
            );
        }
        Command::Dehaze {
            ckpt,
            input,
            out,
            config,
        } => {
            let model = Model::load(&ckpt, config.as_deref())?;
            commands::dehaze_file(&model, &input, &out)?;
        }
        Command::Eval {
            ckpt,
            data,
            config,
            out,
        } => {
            let model = Model::load(&ckpt, config.as_deref())?;
            let table = commands::eval_tsv(&commands::evaluate(&model, &data)?);
            print!("{table}");
            if let Some(out) = out {
                write(&out, &table)?;
            }
        }
        Command::Ablate {
            data,
            config,
            eval_data,
            steps,
            q,
            out,
        } => {
            let cfg = commands::load_config(config.as_deref())?;
            let steps = steps.or(cfg.train.max_steps).unwrap_or(100);
            let eval = eval_data.unwrap_or_else(|| data.clone());
            let rows = commands::ablate(&cfg, &data, &eval, steps, &q, |r| {
                eprintln!("{}: psnr {:.3} ssim {:.4}", r.label, r.psnr, r.ssim);
            })?;
            let table = commands::ablation_tsv(&rows);
            print!("{table}");
            if let Some(out) = out {
                write(&out, &table)?;
            }
        }
        Command::Inspect {
            ckpt,
            input,
            out,
            node,
            channel,
            config,
        } => {
            let model = Model::load(&ckpt, config.as_deref())?;
            let ins = commands::inspect(&model, &Image::load(&input)?, node, channel)?;
            for f in commands::write_inspection(&ins, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
