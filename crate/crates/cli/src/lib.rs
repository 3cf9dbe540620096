//! Subcommands of the `fedmark` binary. Every command builds its outputs in
//! memory and then writes each file atomically, so a failed run leaves no
//! partial files behind.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fedmark::config::ExperimentConfig;
use fedmark::io::write_atomic;

pub mod analyze;
pub mod netsim;
pub mod simulate;

pub const DEFAULT_OUT: &str = "fedmark-out";

#[derive(Debug, Parser)]
#[command(name = "fedmark", version, about = "Three-stage multi-modal FL simulator and biomarker analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML). Defaults are used for anything omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Never changes results.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// Output directory.
    #[arg(long, global = true, env = "FEDMARK_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    All,
    PretrainOnly,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the three-stage protocol and write metrics.
    Simulate {
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
    },
    /// Biomarker features, ANOVA and diagnosis from detection timelines.
    Analyze {
        /// Directory with one `<subject_id>.csv` (`t_s,class_idx`) per subject.
        #[arg(long)]
        detections: PathBuf,
        /// CSV with header `subject_id,group` (group is NC, MCI or AD).
        #[arg(long)]
        groups: PathBuf,
        /// Detection period in seconds.
        #[arg(long, default_value_t = 2.0, value_parser = positive)]
        period: f64,
    },
    /// Write a synthetic detection cohort with one planted group effect.
    Cohort {
        /// Class whose duration differs by group; omit for a null cohort.
        #[arg(long)]
        planted: Option<usize>,
        #[arg(long, default_value_t = 12)]
        subjects_per_group: usize,
    },
    /// Bandwidth trace, sensor failures and round completion times.
    Netsim {
        #[arg(long, default_value_t = 24.0, value_parser = positive)]
        hours: f64,
        /// Upload/broadcast size; defaults to `system.netsim_payload_bytes`.
        #[arg(long)]
        payload_bytes: Option<u64>,
    },
    /// Frames per second of the inference pipeline, sequential and pipelined.
    Pipeline {
        #[arg(long, value_parser = positive)]
        collect: Option<f64>,
        /// Preprocessing time, applied to every modality.
        #[arg(long, value_parser = positive)]
        pre: Option<f64>,
        #[arg(long, value_parser = positive)]
        infer: Option<f64>,
    },
    /// Check the numerical kernels against reference computations.
    Selftest,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` must be positive"))
    }
}

/// Loads and validates the config, applying `--seed`. Validation errors are
/// anchored to the line of the offending key when it appears in the file.
pub fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let (mut cfg, text, origin) = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let cfg = ExperimentConfig::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            (cfg, text, path.display().to_string())
        }
        None => (ExperimentConfig::default(), String::new(), "<defaults>".to_string()),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        let msg = e.to_string();
        return Err(match key_line(&text, &msg) {
            Some(line) => anyhow::anyhow!("{origin}: line {line}: {msg}"),
            None => anyhow::anyhow!("{origin}: {msg}"),
        });
    }
    Ok(cfg)
}

/// Line of `section.key` named in `msg`, if the file sets it.
fn key_line(text: &str, msg: &str) -> Option<usize> {
    let path = msg
        .split(|c: char| c.is_whitespace() || c == ':')
        .find(|w| w.contains('.') && w.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.'))?;
    let (section, key) = path.rsplit_once('.')?;
    let header = format!("[{section}]");
    let mut in_section = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            in_section = t == header;
        } else if in_section && t.split('=').next().is_some_and(|k| k.trim() == key) {
            return Some(i + 1);
        }
    }
    None
}

pub fn out_dir(global: &GlobalArgs, cfg: &ExperimentConfig) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Files of one command, written together at the end.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl AsRef<Path>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.as_ref().to_path_buf(), contents.into()));
    }

    pub fn write(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (name, contents) in self.files {
            let path = dir.join(name);
            write_atomic(&path, &contents).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn selftest() -> Result<()> {
    let checks = fedmark::selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}

pub fn pipeline_table(cfg: &ExperimentConfig, collect: Option<f64>, pre: Option<f64>, infer: Option<f64>) -> Result<String> {
    use fedmark::sysim::{pipeline_throughput, PipelineMode};
    let mut spec = cfg.pipeline.clone();
    if let Some(v) = collect {
        spec.collect_s = v;
    }
    if let Some(v) = pre {
        spec.preprocess_s.values_mut().for_each(|p| *p = v);
    }
    if let Some(v) = infer {
        spec.infer_s = v;
    }
    let seq = pipeline_throughput(&spec, PipelineMode::Sequential)?;
    let pipe = pipeline_throughput(&spec, PipelineMode::Pipelined)?;
    Ok(format!(
        "mode,fps,speedup\nsequential,{seq:.4},1.0000\npipelined,{pipe:.4},{:.4}\n",
        pipe / seq
    ))
}

/// Runs one parsed command line; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&cli.global)?;
    let dir = out_dir(&cli.global, &cfg);
    let workers = cli.global.workers as usize;
    match &cli.command {
        Command::Simulate { stage } => simulate::run(&cfg, workers, *stage == Stage::PretrainOnly)?.write(&dir),
        Command::Analyze {
            detections,
            groups,
            period,
        } => analyze::run(&cfg, detections, groups, *period)?.write(&dir),
        Command::Cohort {
            planted,
            subjects_per_group,
        } => analyze::cohort(&cfg, *planted, *subjects_per_group)?.write(&dir),
        Command::Netsim { hours, payload_bytes } => netsim::run(&cfg, *hours, *payload_bytes)?.write(&dir),
        Command::Pipeline { collect, pre, infer } => {
            let table = pipeline_table(&cfg, *collect, *pre, *infer)?;
            print!("{table}");
            let mut out = Outputs::default();
            out.add("pipeline.csv", table);
            out.write(&dir)
        }
        Command::Selftest => selftest().map(|_| Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_lines() {
        let text = "seed = 1\n[roster]\nnodes = 0\n[weak]\nnodes = 3\n";
        assert_eq!(key_line(text, "invalid configuration: roster.nodes must be >= 1"), Some(3));
        assert_eq!(key_line(text, "invalid configuration: data.noise_sigma must be >= 0"), None);
    }

    #[test]
    fn positive_parser() {
        assert_eq!(positive("0.5"), Ok(0.5));
        assert!(positive("0").is_err());
        assert!(positive("x").is_err());
    }

    #[test]
    fn calibrated_pipeline_table() {
        let t = pipeline_table(&ExperimentConfig::default(), Some(0.05), Some(0.03), Some(0.1058)).unwrap();
        assert!(t.contains("pipelined,9.4518"), "{t}");
    }
}
