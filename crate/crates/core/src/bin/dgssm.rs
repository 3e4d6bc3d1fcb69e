use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dgssm::ablate::{ablate, checkpoint_bytes, sha256_hex};
use dgssm::config::{Precision, RunConfig};
use dgssm::data::{generate_ids, load_dataset, write_dataset, SyntheticSample};
use dgssm::eval::evaluate;
use dgssm::network::Model;
use dgssm::scan::bench_scan;
use dgssm::train::{log_csv, train};
use dgssm::{Error, Real, Result};

#[derive(Parser)]
#[command(name = "dgssm", version, about = "Diffusion-guided state-space saliency detection")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    precision: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic train and test sets as PPM/PGM files with manifests.
    Generate,
    /// Trains a model; writes model.ckpt, train_log.csv, denoiser_log.csv, config.txt.
    Train {
        /// Training manifest; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Scores a checkpoint; writes eval.csv.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test manifest; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Trains and scores the seven-row component ladder; writes ablation.md.
    Ablate {
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Times the parallel and sequential scan kernels; writes bench.csv.
    Bench,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let (mut cfg, seeded) = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => (RunConfig::default(), false),
    };
    match cli.seed {
        Some(s) => cfg.seed = s,
        None if !seeded => {
            return Err(Error::Config("a seed is required: pass --seed or set `seed` in the config".into()))
        }
        None => {}
    }
    if let Some(p) = &cli.precision {
        cfg.precision = p.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_set(cfg: &RunConfig, manifest: Option<&Path>) -> Result<Vec<SyntheticSample>> {
    match manifest {
        Some(m) => load_dataset(m),
        None => generate_ids(0..cfg.train_samples, cfg.image_size, cfg.image_size, cfg.seed),
    }
}

fn test_set(cfg: &RunConfig, manifest: Option<&Path>) -> Result<Vec<SyntheticSample>> {
    match manifest {
        Some(m) => load_dataset(m),
        None => {
            let start = cfg.train_samples;
            generate_ids(start..start + cfg.test_samples, cfg.image_size, cfg.image_size, cfg.seed)
        }
    }
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run<T: Real>(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = &cli.out_dir;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::Generate => {
            let tr = write_dataset(&out.join("train"), &train_set(cfg, None)?)?;
            let te = write_dataset(&out.join("test"), &test_set(cfg, None)?)?;
            println!("wrote {} and {}", tr.display(), te.display());
        }
        Command::Train { data } => {
            let samples = train_set(cfg, data.as_deref())?;
            let res = train::<T>(cfg, &samples)?;
            let bytes = checkpoint_bytes(&res.model)?;
            write(out, "model.ckpt", &bytes)?;
            write(out, "train_log.csv", log_csv(&res.log))?;
            let den: String = std::iter::once("epoch,loss\n".to_string())
                .chain(res.denoiser_log.iter().enumerate().map(|(i, l)| format!("{i},{l:.9e}\n")))
                .collect();
            write(out, "denoiser_log.csv", den)?;
            write(out, "config.txt", cfg.to_text())?;
            if let (Some(a), Some(b)) = (res.log.first(), res.log.last()) {
                println!("loss {:.5} -> {:.5} over {} epochs", a.loss, b.loss, res.log.len());
            }
            println!("checkpoint sha256 {}", sha256_hex(&bytes));
        }
        Command::Eval { checkpoint, data } => {
            let path = checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt"));
            let model = Model::<T>::load(&mut BufReader::new(fs::File::open(&path)?))?;
            let report = evaluate(&model, &test_set(cfg, data.as_deref())?)?;
            write(out, "eval.csv", report.to_csv())?;
            let s = report.summary;
            println!(
                "S_m {:.4}  F_m {:.4}  E_m {:.4}  MAE {:.4}",
                s.s_measure, s.f_measure_mean, s.e_measure_mean, s.mae
            );
        }
        Command::Ablate { train_data, test_data } => {
            let tr = train_set(cfg, train_data.as_deref())?;
            let te = test_set(cfg, test_data.as_deref())?;
            let report = ablate::<T>(cfg, &tr, &te, |r| {
                println!("{:<22} F_m {:.4}  loss {:.4} -> {:.4}", r.label, r.scores.f_measure_mean, r.first_loss, r.final_loss)
            })?;
            write(out, "ablation.md", report.to_markdown())?;
        }
        Command::Bench => {
            let report = bench_scan(&cfg.bench_lengths, cfg.bench_state_dim, cfg.bench_reps, cfg.seed)?;
            write(out, "bench.csv", report.to_csv())?;
            for r in &report.rows {
                println!(
                    "{:<10} L={:<6} Dh={:<3} threads={:<2} {:>12.3e} elem/s  residual {:.1e}",
                    r.kernel, r.length, r.dh, r.threads, r.elements_per_sec, r.max_residual_vs_sequential
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        let cfg = config(&cli)?;
        if !matches!(cli.command, Command::Bench | Command::Generate) {
            let params = Model::<f32>::new(cfg.network.clone(), cfg.seed)?.params.count();
            println!("model parameters: {params}");
        }
        match cfg.precision {
            Precision::F32 => run::<f32>(&cli, &cfg),
            Precision::F64 => run::<f64>(&cli, &cfg),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
