use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use va_core::attention::AttentionMode;
use va_core::fsutil;
use va_core::phantom::{ablate, run_experiment, AblationAxis, ExperimentConfig, SCHEMA};

use crate::{echo_config, CmdResult, Failure, OutDir};

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// none, channel, spatial or both.
    #[arg(long)]
    pub mode: Option<AttentionMode>,
    /// Bag size N (odd).
    #[arg(long)]
    pub bag: Option<usize>,
    /// Number of paired seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Axis {
    Bag,
    Mode,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values, e.g. `1,3,9` or `none,channel,both`.
    #[arg(long)]
    pub values: String,
    #[command(flatten)]
    pub base: ExperimentArgs,
}

/// Reads a config file. The `schema` field is mandatory; any other field
/// may be omitted and takes its default.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let bytes = fsutil::read(path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Failure::from(fsutil::json_error(path, &bytes, &e)))?;
    match value.get("schema").and_then(|s| s.as_u64()) {
        Some(s) if s == u64::from(SCHEMA) => {}
        Some(s) => return Err(Failure::input(format!("{}: unsupported schema {s}", path.display()))),
        None => return Err(Failure::input(format!("{}: missing \"schema\" field", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn effective_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.model.mode = m;
    }
    if let Some(n) = a.bag {
        cfg.model.bag_size = n;
    }
    if let Some(k) = a.seeds {
        cfg.seeds = k;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    va_core::volume::BagSpec::new(cfg.model.bag_size)?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> CmdResult {
    fsutil::write_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

fn prepare(out: &OutDir) -> Result<Option<PathBuf>, Failure> {
    if let Some(dir) = &out.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(out.out.clone())
}

pub fn run(a: ExperimentArgs) -> CmdResult {
    let cfg = effective_config(&a)?;
    echo_config("experiment", &cfg);
    let dir = prepare(&a.out)?;
    let report = run_experiment(&cfg)?;
    let json = report.to_json() + "\n";
    match dir {
        Some(d) => {
            write(&d, "config.json", &(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"))?;
            write(&d, "metrics.json", &json)?;
            write(&d, "metrics.csv", &report.to_csv())?;
            write(&d, "loss.csv", &report.loss_csv())?;
            write(&d, "froc.csv", &report.froc_csv())?;
            println!("{}", serde_json::to_string_pretty(&report.median).expect("summary serializes"));
        }
        None => print!("{json}"),
    }
    Ok(())
}

pub fn run_ablate(a: AblateArgs) -> CmdResult {
    let cfg = effective_config(&a.base)?;
    let parts: Vec<&str> = a.values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(Failure::input("no ablation values given"));
    }
    let axis = match a.axis {
        Axis::Bag => AblationAxis::BagSize(
            parts
                .iter()
                .map(|p| p.parse::<usize>().map_err(|e| Failure::input(format!("bag size {p:?}: {e}"))))
                .collect::<Result<_, _>>()?,
        ),
        Axis::Mode => AblationAxis::AttentionMode(parts.iter().map(|p| p.parse()).collect::<Result<_, _>>()?),
    };
    if let AblationAxis::BagSize(sizes) = &axis {
        for &n in sizes {
            va_core::volume::BagSpec::new(n)?;
        }
    }
    echo_config("ablate", &(&cfg, &axis));
    let dir = prepare(&a.base.out)?;
    let table = ablate(&cfg, &axis)?;
    match dir {
        Some(d) => {
            write(&d, "ablation.json", &(table.to_json() + "\n"))?;
            write(&d, "ablation.csv", &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        None => println!("{}", table.to_json()),
    }
    Ok(())
}
