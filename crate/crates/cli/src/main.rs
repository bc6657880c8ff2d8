use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use seofp_cli::commands::{self, Engine, QuantMode, ReportOptions, TrainOptions};
use seofp_cli::data;

#[derive(Parser)]
#[command(
    name = "seofp",
    about = "Sign-exponent-only floating-point toolkit: train, quantize, pack, \
             and run regression networks whose inference multiplies are single \
             32-bit integer additions."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Full32,
    Se9,
    Codebook,
}

impl EncodingArg {
    fn resolve(self) -> seofp::pack::Encoding {
        match self {
            EncodingArg::Full32 => seofp::pack::Encoding::Full32,
            EncodingArg::Se9 => seofp::pack::Encoding::SignExponent9,
            EncodingArg::Codebook => seofp::pack::Encoding::Codebook,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fraction,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Native,
    Seofp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic denoising corpus (.f32 pairs plus meta.json).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of clean/noisy utterance pairs.
        #[arg(long, default_value_t = 24)]
        count: usize,
        /// Samples per utterance.
        #[arg(long, default_value_t = 512)]
        len: usize,
        /// SNR levels in dB, cycled across utterances.
        #[arg(long = "snr-db", num_args = 1.., default_values_t = vec![0.0f32])]
        snr_db: Vec<f32>,
        #[arg(long, default_value_t = 0.75)]
        train_fraction: f64,
    },
    /// Train a model with quantize-in-the-loop SGD and save it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Layer stack, e.g. `dense:16` or `conv:8:9,conv:1:9`.
        #[arg(long, default_value = "conv:32:1,conv:1:1")]
        layers: String,
        /// Frame size for dense stacks (ignored for conv stacks).
        #[arg(long, default_value_t = 16)]
        frame: usize,
        /// Retained bits (9..=32); 32 trains in plain float.
        #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u32).range(9..=32))]
        bits: u32,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 0.9)]
        learning_rate: f32,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-quantize a stored model's parameters to a smaller bit width.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u32).range(9..=32))]
        bits: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::Fraction)]
        mode: ModeArg,
    },
    /// Re-encode a stored model with a given parameter encoding.
    Pack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = EncodingArg::Se9)]
        encoding: EncodingArg,
    },
    /// Run the test split through a model and print quality metrics.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EngineArg::Seofp)]
        engine: EngineArg,
    },
    /// Check integer-add inference against native multiplies word by
    /// word. Exits with status 2 on any mismatch.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Use the dataset's test split instead of random inputs.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        inputs: usize,
        /// Input length for conv models when generating random inputs.
        #[arg(long, default_value_t = 64)]
        input_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time native-multiply vs integer-add inference and emit a
    /// markdown report.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Optional path for the markdown report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bit-width degradation study: in-loop quantization vs direct
    /// removal, as a markdown table.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "conv:32:1,conv:1:1")]
        layers: String,
        #[arg(long, default_value_t = 16)]
        frame: usize,
        #[arg(long = "bits", num_args = 1.., default_values_t = vec![26u32, 17, 9])]
        bits: Vec<u32>,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 0.9)]
        learning_rate: f32,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional path for the markdown report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            out,
            seed,
            count,
            len,
            snr_db,
            train_fraction,
        } => {
            let meta = data::generate(&out, seed, count, len, &snr_db, train_fraction)?;
            println!(
                "wrote {} train + {} test pairs of {} samples to {}",
                meta.train.len(),
                meta.test.len(),
                meta.utterance_len,
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            layers,
            frame,
            bits,
            epochs,
            learning_rate,
            batch_size,
            seed,
        } => {
            let opts = TrainOptions {
                layers,
                frame,
                bits,
                epochs,
                learning_rate,
                batch_size,
                seed,
            };
            let summary = commands::train_command(&data, &out, &opts)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Quantize {
            model,
            out,
            bits,
            mode,
        } => {
            let mode = match mode {
                ModeArg::Fraction => QuantMode::Fraction,
                ModeArg::Direct => QuantMode::Direct,
            };
            commands::quantize_command(&model, &out, bits, mode)?;
            println!("wrote {}", out.display());
        }
        Command::Pack {
            model,
            out,
            encoding,
        } => {
            let summary = commands::pack_command(&model, &out, encoding.resolve())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Infer {
            model,
            data,
            engine,
        } => {
            let engine = match engine {
                EngineArg::Native => Engine::Native,
                EngineArg::Seofp => Engine::Seofp,
            };
            let summary = commands::infer_command(&model, &data, engine)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Verify {
            model,
            data,
            inputs,
            input_len,
            seed,
        } => {
            let report =
                commands::verify_command(&model, data.as_deref(), inputs, input_len, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed() {
                eprintln!(
                    "verification FAILED: {} mismatched output words",
                    report.word_mismatches
                );
                return Ok(ExitCode::from(2));
            }
            println!("verification passed: every output word identical");
        }
        Command::Bench {
            model,
            data,
            repeats,
            out,
        } => {
            let report = commands::bench_command(&model, &data, repeats)?;
            let md = report.to_markdown();
            match out {
                Some(path) => {
                    std::fs::write(&path, &md)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{md}"),
            }
            if !report.bit_exact {
                eprintln!("benchmark FAILED bit-exactness check");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report {
            data,
            layers,
            frame,
            bits,
            epochs,
            learning_rate,
            batch_size,
            seed,
            out,
        } => {
            let opts = ReportOptions {
                layers,
                frame,
                bit_widths: bits,
                epochs,
                learning_rate,
                batch_size,
                seed,
            };
            let report = commands::report_command(&data, &opts)?;
            let md = report.to_markdown();
            match out {
                Some(path) => {
                    std::fs::write(&path, &md)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{md}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
