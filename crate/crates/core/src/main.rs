use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use tensemap::bridge::{Backend, BackendKind, ExternalBackend, SurrogateBackend, Transport};
use tensemap::experiment::{
    metrics_from_dir, plots_from_dir, read_manifest, read_param_list, resume_experiment, run_experiment,
    run_repeatability, write_repeatability_outputs, ExperimentConfig, ExperimentError, ExperimentOutcome, METRICS,
};

#[derive(Parser)]
#[command(name = "tensemap", version, about = "Behavior repertoire discovery for a vibrating tensegrity robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the shared / MAP-Elites / random-control experiment.
    Run {
        /// Experiment config (TOML). Optional with --resume.
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        backend: Option<BackendKind>,
        /// `host:port` or serial device path for the external backend.
        #[arg(long)]
        endpoint: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run stored in this directory.
        #[arg(long, conflicts_with_all = ["config", "seed", "out"])]
        resume: Option<PathBuf>,
    },
    /// Recompute and print the metrics table of a run from its trial logs.
    Metrics { dir: PathBuf },
    /// Regenerate the grid and arrow plots of a run from its trial logs.
    Plots { dir: PathBuf },
    /// Replicate a list of parameter sets on the noisy surrogate and suggest
    /// bin widths and a trial duration.
    Repeatability {
        /// One `f1,f2,f3` per line.
        #[arg(long)]
        params: PathBuf,
        /// Config supplying simulator, structure and protocol settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "repeatability")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tensemap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), ExperimentError> {
    match cmd {
        Command::Run { config, seed, backend, endpoint, out, resume } => {
            let outcome = if let Some(dir) = resume {
                let mut evaluator = read_manifest(&dir)?.config.evaluator;
                if let Some(b) = backend {
                    evaluator.backend = b;
                }
                if endpoint.is_some() {
                    evaluator.endpoint = endpoint;
                }
                evaluator.validate()?;
                let manifest = read_manifest(&dir)?;
                let cfg = ExperimentConfig { evaluator: evaluator.clone(), ..manifest.config };
                let mut b = open_backend(&cfg)?;
                eprintln!("resuming {}", dir.display());
                resume_experiment(&dir, Some(evaluator), &mut b)?
            } else {
                let path = config.expect("clap enforces --config without --resume");
                let mut cfg = ExperimentConfig::load(&path)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(b) = backend {
                    cfg.evaluator.backend = b;
                }
                if endpoint.is_some() {
                    cfg.evaluator.endpoint = endpoint;
                }
                if let Some(o) = out {
                    cfg.output_dir = o;
                }
                cfg.validate()?;
                let mut b = open_backend(&cfg)?;
                run_experiment(&cfg, &mut b)?
            };
            report(&outcome);
            Ok(())
        }
        Command::Metrics { dir } => {
            let table = metrics_from_dir(&dir)?;
            let path = dir.join(METRICS);
            let file = File::create(&path).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
            table.write_csv(file).map_err(|source| ExperimentError::Io { path, source })?;
            print!("{}", table.render());
            Ok(())
        }
        Command::Plots { dir } => {
            plots_from_dir(&dir)?;
            println!("plots written to {}", dir.join("plots").display());
            Ok(())
        }
        Command::Repeatability { params, config, seed, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let text = read(&params)?;
            let list = read_param_list(text.as_bytes())
                .map_err(|m| ExperimentError::Config(format!("{}: {m}", params.display())))?;
            let run = run_repeatability(&cfg, &list)?;
            let (_, report_path) = write_repeatability_outputs(&run, &out)
                .map_err(|source| ExperimentError::Io { path: out.clone(), source })?;
            let r = &run.report;
            println!("{} trials over {} parameter sets", run.trials.len(), list.len());
            for d in &r.durations {
                println!(
                    "  {:>5} s: max std dx {:.2} mm, dy {:.2} mm, dpsi {:.2} deg; score {:.3}",
                    d.duration_s, d.max_std[0], d.max_std[1], d.max_std[2], d.score
                );
            }
            println!(
                "suggested widths: dx {:.2} mm, dy {:.2} mm, dpsi {:.2} deg; duration {} s",
                r.suggested_widths[0], r.suggested_widths[1], r.suggested_widths[2], r.suggested_duration_s
            );
            println!("report: {}", report_path.display());
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn open_backend(cfg: &ExperimentConfig) -> Result<Box<dyn Backend>, ExperimentError> {
    match cfg.evaluator.backend {
        BackendKind::Surrogate => Ok(Box::new(SurrogateBackend::new(cfg.simulator()?))),
        BackendKind::External => {
            let endpoint = cfg.evaluator.endpoint.as_deref().expect("validated");
            let transport = Transport::open(endpoint).map_err(|source| ExperimentError::Io { path: endpoint.into(), source })?;
            let mut backend = ExternalBackend::new(transport);
            backend.ping(Duration::from_secs(5))?;
            Ok(Box::new(backend))
        }
    }
}

fn report(o: &ExperimentOutcome) {
    print!("{}", o.metrics.render());
    if let Some(r) = o.metrics.unique_ratio() {
        println!("mutation / random new bins: {r:.2}");
    }
    println!("results in {}", o.dir.display());
}
