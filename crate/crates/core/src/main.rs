use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use idras::config::{ConfigError, RunConfig};
use idras::data::ObservationSet;
use idras::io::{self, IoError, StageWriter};
use idras::model::Mode;
use idras::simulators::SimError;
use idras::surrogate::DistanceKind;
use idras::trainer::{evaluate, train, OmegaBundle, TrainError};

#[derive(Parser)]
#[command(name = "idras", version, about = "Find regulated combinations of observables in multi-system time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a generator config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset and write parameters, history, series and report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        distance: Option<DistanceKind>,
    },
    /// Score saved parameters on a dataset.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the evaluation seed stored with the parameters.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        distance: Option<DistanceKind>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

struct Failure {
    code: u8,
    msg: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            msg: format!("config error: {e}"),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure {
            code: EXIT_DATA,
            msg: e.to_string(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::InvalidParams(_) | SimError::UnknownEquation(_) => EXIT_CONFIG,
            SimError::Instability { .. } | SimError::LineageStall { .. } => EXIT_NUMERIC,
        };
        Failure {
            code,
            msg: format!("generator: {e}"),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => EXIT_CONFIG,
            TrainError::DegenerateSurrogate { .. } | TrainError::NonFinite { .. } | TrainError::Metric(_) => EXIT_NUMERIC,
            TrainError::Model(_) | TrainError::Surrogate(_) => EXIT_CONFIG,
            TrainError::Data(_) | TrainError::Format(_) | TrainError::Architecture { .. } => EXIT_DATA,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = io::read_text(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        msg: e.to_string(),
    })?;
    Ok(RunConfig::parse(&text)?)
}

fn load_dataset(path: &Path) -> Result<ObservationSet, Failure> {
    let text = io::read_text(path)?;
    ObservationSet::from_csv(&text).map_err(|e| Failure {
        code: EXIT_DATA,
        msg: format!("{}: {e}", path.display()),
    })
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.or_else(|| cfg.and_then(|c| c.out.clone())).unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            cfg.override_with(None, None, seed)?;
            let gen = cfg.generator.as_ref().ok_or(ConfigError::Missing("generator"))?;
            let set = io::generate(gen, cfg.seed)?;
            let dir = out_dir(out, Some(&cfg));
            let mut w = StageWriter::new(&dir, "generate")?;
            let path = w.write(io::DATASET_FILE, &set.to_csv())?;
            w.finish(&cfg.entries, &set.metadata, started.elapsed().as_secs_f64())?;
            eprintln!("wrote {} ({} systems, {} rows)", path.display(), set.systems.len(), set.total_samples());
        }
        Command::Train {
            config,
            dataset,
            out,
            mode,
            epochs,
            seed,
            distance,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.override_with(mode, epochs, seed)?;
            let data = load_dataset(&dataset)?;
            if let Some(f) = &cfg.features {
                data.require_features(f).map_err(|e| Failure {
                    code: EXIT_DATA,
                    msg: e.to_string(),
                })?;
            }
            let rec = train(&data, &cfg.train)?;
            let report = evaluate(&rec.omega, &data, distance.or(cfg.distance))?;
            let dir = out_dir(out, Some(&cfg));
            let mut w = StageWriter::new(&dir, "train")?;
            let ids: Vec<usize> = data.systems.iter().map(|s| s.id).collect();
            w.write(io::PARAMS_FILE, &rec.omega.to_text())?;
            w.write(io::HISTORY_FILE, &io::history_csv(&rec, &ids))?;
            for (name, body) in io::series_csvs(&report) {
                w.write(&name, &body)?;
            }
            w.write(io::ZETA_FILE, &io::zeta_csv(&report))?;
            let text = report.to_text();
            w.write(io::REPORT_FILE, &text)?;
            let mut extra = BTreeMap::new();
            extra.insert("dataset".into(), dataset.display().to_string());
            extra.insert("dataset_sha256".into(), io::sha256_hex(io::read_text(&dataset)?.as_bytes()));
            w.finish(&cfg.entries, &extra, started.elapsed().as_secs_f64())?;
            print!("{text}");
        }
        Command::Eval {
            params,
            dataset,
            out,
            seed,
            distance,
        } => {
            let text = io::read_text(&params)?;
            let mut bundle = OmegaBundle::from_text(&text)?;
            if let Some(s) = seed {
                bundle.eval.seed = s;
            }
            let data = load_dataset(&dataset)?;
            let report = evaluate(&bundle, &data, distance)?;
            let text = report.to_text();
            if let Some(dir) = out {
                let mut w = StageWriter::new(&dir, "eval")?;
                w.write(io::REPORT_FILE, &text)?;
                let mut snapshot = BTreeMap::new();
                snapshot.insert("params".into(), params.display().to_string());
                snapshot.insert("dataset".into(), dataset.display().to_string());
                snapshot.insert("seed".into(), bundle.eval.seed.to_string());
                w.finish(&snapshot, &BTreeMap::new(), started.elapsed().as_secs_f64())?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
