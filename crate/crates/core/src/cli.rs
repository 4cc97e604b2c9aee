//! Command-line front end: `train`, `ablate`, `analyze`, `print-defaults`.
//!
//! Config precedence, lowest to highest: built-in defaults, the config file
//! (or the config stored in a run manifest), then each `--set section.key=value`
//! in order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{aggregate_max_per_index, SpectrumRecord};
use crate::harness::{self, HarnessError, MetricsRecord, RunConfig};

/// Bumped whenever a column or field of an output file changes.
pub const SCHEMA_VERSION: u32 = 1;
pub const ABLATION_HEADER: [&str; 7] = [
    "strategy",
    "use_ao",
    "use_rs",
    "final_eval_loss",
    "elements",
    "wall_ms",
    "status",
];

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Io { .. } | CliError::Data(_) => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Divergence(_) => "divergence",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
        }
    }

    /// One-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => CliError::Config(m),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "grassopt",
    version,
    about = "Low-rank subspace optimizers at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write metrics into `--out`.
    Train {
        #[arg(long, conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Reuse the resolved config of an earlier run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `section.key=value`, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run the strategy × AO × RS grid and write `ablation.csv`.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize energy and spectrum records of a training run.
    Analyze {
        dir: PathBuf,
        /// Parameter-name prefix; repeatable. Defaults to one group per
        /// parameter.
        #[arg(long = "group")]
        groups: Vec<String>,
    },
    /// Print the default config as TOML.
    PrintDefaults,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub seed: u64,
    pub config: RunConfig,
}

/// Loads `path` (or defaults when `None`) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            RunConfig::from_toml(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        config.apply_override(o).map_err(CliError::Config)?;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn load_manifest(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut config = manifest.config;
    config.run.seed = Some(manifest.seed);
    for o in overrides {
        config.apply_override(o).map_err(CliError::Config)?;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes every artifact of one run into `out`.
pub fn write_run(
    out: &Path,
    config: &RunConfig,
    outcome: &harness::TrainOutcome,
) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let seed = config.resolved_seed().map_err(CliError::Config)?;
    let mut resolved = config.clone();
    resolved.run.seed = Some(seed);

    let mut jsonl = String::new();
    for rec in &outcome.series {
        jsonl.push_str(&serde_json::to_string(rec).expect("record serializes"));
        jsonl.push('\n');
    }
    write_file(&out.join("metrics.jsonl"), jsonl.as_bytes())?;

    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| CliError::Data(format!("{}: {e}", p.display()))
    };
    let energy_path = out.join("energy.csv");
    let mut w = csv::Writer::from_path(&energy_path).map_err(csv_err(&energy_path))?;
    w.write_record(["step", "param_id", "ratio"])
        .map_err(csv_err(&energy_path))?;
    for e in outcome.series.iter().flat_map(|r| &r.energy) {
        w.write_record([e.step.to_string(), e.param_id.clone(), e.ratio.to_string()])
            .map_err(csv_err(&energy_path))?;
    }
    w.flush().map_err(io_err(&energy_path))?;

    let spectrum_path = out.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&spectrum_path).map_err(csv_err(&spectrum_path))?;
    w.write_record(["step", "param_id", "i", "sigma"])
        .map_err(csv_err(&spectrum_path))?;
    for s in outcome.series.iter().flat_map(|r| &r.spectrum) {
        for (i, sigma) in s.top_singular_values.iter().enumerate() {
            w.write_record([
                s.step.to_string(),
                s.param_id.clone(),
                i.to_string(),
                sigma.to_string(),
            ])
            .map_err(csv_err(&spectrum_path))?;
        }
    }
    w.flush().map_err(io_err(&spectrum_path))?;

    write_file(
        &out.join("final_loss.txt"),
        format!("{}\n", outcome.final_eval_loss).as_bytes(),
    )?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: resolved,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&out.join("run_manifest.json"), text.as_bytes())
}

pub fn cmd_train(
    config: Option<&Path>,
    manifest: Option<&Path>,
    overrides: &[String],
    out: &Path,
) -> Result<f64, CliError> {
    let config = match manifest {
        Some(m) => load_manifest(m, overrides)?,
        None => load_config(config, overrides)?,
    };
    let outcome = harness::train(&config)?;
    write_run(out, &config, &outcome)?;
    Ok(outcome.final_eval_loss)
}

pub fn cmd_ablate(
    config: Option<&Path>,
    overrides: &[String],
    out: &Path,
    jobs: usize,
) -> Result<Vec<harness::AblationRow>, CliError> {
    let mut base = load_config(config, overrides)?;
    // Pin the seed so every arm sees the same data and initial basis.
    base.run.seed = Some(base.resolved_seed().map_err(CliError::Config)?);
    let rows = harness::run_ablation_grid(&base, jobs);
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("ablation.csv");
    let to_data = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(to_data)?;
    w.write_record(ABLATION_HEADER).map_err(to_data)?;
    for r in &rows {
        w.write_record([
            r.arm.strategy.as_str().to_string(),
            r.arm.use_ao.to_string(),
            r.arm.use_rs.to_string(),
            r.final_eval_loss.map(|l| l.to_string()).unwrap_or_default(),
            r.elements.to_string(),
            format!("{:.3}", r.wall_ms),
            r.status.clone(),
        ])
        .map_err(to_data)?;
    }
    w.flush().map_err(io_err(&path))?;
    if rows.iter().all(|r| r.final_eval_loss.is_none()) {
        return Err(CliError::Divergence("every ablation arm failed".into()));
    }
    Ok(rows)
}

/// Reads `metrics.jsonl` from a run directory.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let path = dir.join("metrics.jsonl");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<MetricsRecord>, _>>()?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{} has no records", path.display())));
    }
    Ok(records)
}

/// Summary lines for `analyze`: per group, the max-aggregated spectrum at the
/// last diagnostic step and first/last/min/max energy ratios.
pub fn analyze_lines(records: &[MetricsRecord], groups: &[String]) -> Vec<String> {
    let groups: Vec<String> = if groups.is_empty() {
        let mut ids: Vec<String> = records
            .iter()
            .flat_map(|r| r.energy.iter().map(|e| e.param_id.clone()))
            .chain(
                records
                    .iter()
                    .flat_map(|r| r.spectrum.iter().map(|s| s.param_id.clone())),
            )
            .collect();
        ids.sort();
        ids.dedup();
        ids
    } else {
        groups.to_vec()
    };
    let last_spectrum_step = records
        .iter()
        .filter(|r| !r.spectrum.is_empty())
        .map(|r| r.step)
        .max();
    let final_spectra: Vec<&SpectrumRecord> = records
        .iter()
        .flat_map(|r| &r.spectrum)
        .filter(|s| Some(s.step) == last_spectrum_step)
        .collect();

    let mut lines = Vec::new();
    for g in &groups {
        // Per step, the mean ratio over the group's parameters.
        let mut by_step: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for e in records
            .iter()
            .flat_map(|r| &r.energy)
            .filter(|e| e.param_id.starts_with(g.as_str()))
        {
            let slot = by_step.entry(e.step).or_insert((0.0, 0));
            slot.0 += e.ratio;
            slot.1 += 1;
        }
        let spectrum = aggregate_max_per_index(final_spectra.iter().copied(), g);
        if by_step.is_empty() && spectrum.is_empty() {
            lines.push(format!("group {g}: empty group"));
            continue;
        }
        if !spectrum.is_empty() {
            let vals: Vec<String> = spectrum.iter().map(|s| format!("{s:.6e}")).collect();
            lines.push(format!(
                "group {g}: spectrum_max step={} [{}]",
                last_spectrum_step.unwrap_or(0),
                vals.join(", ")
            ));
        }
        if !by_step.is_empty() {
            let ratios: Vec<f64> = by_step.values().map(|(s, n)| s / *n as f64).collect();
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lines.push(format!(
                "group {g}: energy first={:.6} last={:.6} min={min:.6} max={max:.6} points={}",
                ratios[0],
                ratios[ratios.len() - 1],
                ratios.len()
            ));
        }
    }
    lines
}

pub fn cmd_analyze(dir: &Path, groups: &[String]) -> Result<Vec<String>, CliError> {
    let records = read_metrics(dir)?;
    Ok(analyze_lines(&records, groups))
}

pub fn defaults_text() -> String {
    let mut text = String::from(
        "# grassopt defaults. Unset optional keys:\n\
         #   subspace.rank  per-parameter max(4, min(m, n) / 8)\n\
         #   run.seed       GRASSOPT_SEED, else 0\n\
         #   task.data_seed the run seed\n",
    );
    text.push_str(&RunConfig::default().to_toml());
    text
}

/// Dispatches a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let stdout = io::stdout();
    let result = match cli.command {
        Command::Train {
            config,
            manifest,
            overrides,
            out,
        } => cmd_train(config.as_deref(), manifest.as_deref(), &overrides, &out)
            .map(|loss| println!("final_eval_loss {loss}")),
        Command::Ablate {
            config,
            overrides,
            out,
            jobs,
        } => cmd_ablate(config.as_deref(), &overrides, &out, jobs).map(|rows| {
            let ok = rows.iter().filter(|r| r.status == "ok").count();
            println!(
                "{ok}/{} arms ok; wrote {}",
                rows.len(),
                out.join("ablation.csv").display()
            );
        }),
        Command::Analyze { dir, groups } => cmd_analyze(&dir, &groups).map(|lines| {
            let mut lock = stdout.lock();
            for l in lines {
                let _ = writeln!(lock, "{l}");
            }
        }),
        Command::PrintDefaults => {
            print!("{}", defaults_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
