//! Experiment runner behind the `pdsf` binary.
//!
//! Configuration is TOML. Precedence: `--seed`/`--out`/`--workers`/`--set`
//! flags, then the `--config` file, then built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::error::{DsfError, Result};
use crate::stats::{
    coalescence_experiment, coupling_experiment, donsker_test, dual_experiment, dump_paths_experiment, eta_experiment, forest_experiment,
    foster_drift_experiment, increments_experiment, renewal_tail_experiment, treeness_experiment, CoalesceParams, CouplingParams,
    DonskerParams, DualParams, DumpPathsParams, EtaParams, FieldParams, ForestParams, FosterParams, IncrementParams, Outcome,
    RenewalParams, TreenessParams,
};

pub const EXPERIMENTS: [&str; 11] =
    ["forest", "coalesce", "renewals", "increments", "donsker", "treeness", "foster", "coupling", "dual", "eta", "dump-paths"];

#[derive(Parser, Debug, Clone, Default)]
#[command(name = "pdsf", version, about = "Directed spanning forest experiments")]
pub struct Args {
    /// One of: forest, coalesce, renewals, increments, donsker, treeness,
    /// foster, coupling, dual, eta, dump-paths. Overrides `experiment` in the config.
    pub experiment: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Dotted key override, e.g. `--set field.d=3` or `--set coalesce.dx=[2,4]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub out: PathBuf,
    pub workers: usize,
    pub field: FieldParams,
    pub forest: ForestParams,
    pub coalesce: CoalesceParams,
    pub renewals: RenewalParams,
    pub increments: IncrementParams,
    pub donsker: DonskerParams,
    pub treeness: TreenessParams,
    pub foster: FosterParams,
    pub coupling: CouplingParams,
    pub dual: DualParams,
    pub eta: EtaParams,
    pub dump_paths: DumpPathsParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            out: PathBuf::from("out"),
            workers: 1,
            field: FieldParams::default(),
            forest: ForestParams::default(),
            coalesce: CoalesceParams::default(),
            renewals: RenewalParams::default(),
            increments: IncrementParams::default(),
            donsker: DonskerParams::default(),
            treeness: TreenessParams::default(),
            foster: FosterParams::default(),
            coupling: CouplingParams::default(),
            dual: DualParams::default(),
            eta: EtaParams::default(),
            dump_paths: DumpPathsParams::default(),
        }
    }
}

impl RunConfig {
    /// The config as echoed into artifacts. `workers` and `out` only affect
    /// where and how fast the run happens, so they are left out to keep
    /// reports byte-identical across worker counts and output directories.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("workers");
            m.remove("out");
        }
        v
    }

    /// Stem shared by every artifact of this run.
    pub fn stem(&self) -> String {
        format!("{}_d{}_seed{}", self.experiment, self.field.d, self.field.seed)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DsfError::Config(format!("malformed key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| DsfError::Config(format!("{key:?}: {p:?} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Merges defaults, the config text and the flag overrides.
pub fn resolve_config(file_text: Option<&str>, args: &Args) -> Result<RunConfig> {
    let mut table: toml::Table = match file_text {
        Some(text) => toml::from_str(text).map_err(|e| DsfError::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    for s in &args.set {
        let (k, v) = s.split_once('=').ok_or_else(|| DsfError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(e) = &args.experiment {
        table.insert("experiment".into(), toml::Value::String(e.clone()));
    }
    if let Some(seed) = args.seed {
        let seed = i64::try_from(seed).map_err(|_| DsfError::Config("seed must fit in a signed 64-bit TOML integer".into()))?;
        set_dotted(&mut table, "field.seed", toml::Value::Integer(seed))?;
    }
    if let Some(out) = &args.out {
        table.insert("out".into(), toml::Value::String(out.to_string_lossy().into_owned()));
    }
    if let Some(w) = args.workers {
        table.insert("workers".into(), toml::Value::Integer(w as i64));
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| DsfError::Config(e.to_string()))?;
    if !EXPERIMENTS.contains(&cfg.experiment.as_str()) {
        return Err(DsfError::Config(format!("unknown experiment {:?}; expected one of {}", cfg.experiment, EXPERIMENTS.join(", "))));
    }
    if cfg.workers == 0 {
        return Err(DsfError::Config("workers must be at least 1".into()));
    }
    if !(2..=3).contains(&cfg.field.d) {
        return Err(DsfError::Config(format!("field.d must be 2 or 3, got {}", cfg.field.d)));
    }
    Ok(cfg)
}

/// Runs the configured experiment on a pool of `cfg.workers` threads.
pub fn run_experiment(cfg: &RunConfig) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| DsfError::Config(e.to_string()))?;
    let f = &cfg.field;
    let mut outcome = pool.install(|| -> Result<Outcome> {
        Ok(match cfg.experiment.as_str() {
            "forest" => forest_experiment(f, &cfg.forest)?,
            "coalesce" => coalescence_experiment(f, &cfg.coalesce)?.into(),
            "renewals" => renewal_tail_experiment(f, &cfg.renewals)?.into(),
            "increments" => increments_experiment(f, &cfg.increments)?.into(),
            "donsker" => donsker_test(f, &cfg.donsker)?.into(),
            "treeness" => treeness_experiment(f, &cfg.treeness)?.into(),
            "foster" => foster_drift_experiment(f, &cfg.foster)?.into(),
            "coupling" => coupling_experiment(f, &cfg.coupling)?.into(),
            "dual" => dual_experiment(f, &cfg.dual)?,
            "eta" => eta_experiment(f, &cfg.eta)?.into(),
            "dump-paths" => dump_paths_experiment(f, &cfg.dump_paths)?,
            other => return Err(DsfError::Config(format!("unknown experiment {other:?}"))),
        })
    })?;
    outcome.report.config = cfg.echo();
    Ok(outcome)
}

/// Writes `<stem>.json`, one `<stem>_<table>.csv` per table and one
/// `<stem>_<dump>.ndjson` per dump. Returns the paths written.
pub fn emit_report(outcome: &Outcome, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(&outcome.report)?;
    text.push('\n');
    fs::write(&json, text)?;
    written.push(json);
    for t in &outcome.report.tables {
        let path = dir.join(format!("{stem}_{}.csv", t.name));
        t.write_csv(fs::File::create(&path)?)?;
        written.push(path);
    }
    for d in &outcome.dumps {
        let path = dir.join(format!("{stem}_{}.ndjson", d.name));
        fs::write(&path, &d.ndjson)?;
        written.push(path);
    }
    Ok(written)
}

/// Exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Passed,
    VerdictFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Passed => 0,
            Status::VerdictFailed => 2,
        }
    }
}

pub fn run(args: &Args) -> Result<Status> {
    let text = match &args.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| DsfError::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let cfg = resolve_config(text.as_deref(), args)?;
    let outcome = run_experiment(&cfg)?;
    let files = emit_report(&outcome, &cfg.out, &cfg.stem())?;
    print!("{}", outcome.report.to_text());
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(if outcome.report.passed() { Status::Passed } else { Status::VerdictFailed })
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&args) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(experiment: &str, set: &[&str]) -> Args {
        Args { experiment: Some(experiment.into()), set: set.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = resolve_config(None, &args("coalesce", &[])).unwrap();
        assert_eq!(cfg.field, FieldParams::default());
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.stem(), "coalesce_d2_seed1");
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = "experiment = \"treeness\"\n[field]\nseed = 5\nd = 3\n[treeness]\nk = 3\ntrials = 7\n";
        let cfg = resolve_config(Some(file), &Args::default()).unwrap();
        assert_eq!((cfg.field.seed, cfg.field.d, cfg.treeness.k, cfg.treeness.trials), (5, 3, 3, 7));
        assert_eq!(cfg.treeness.budgets, TreenessParams::default().budgets);
        let a = Args {
            seed: Some(9),
            workers: Some(2),
            set: vec!["treeness.k=4".into(), "treeness.budgets=[10.0, 20.0]".into()],
            ..Default::default()
        };
        let cfg = resolve_config(Some(file), &a).unwrap();
        assert_eq!((cfg.field.seed, cfg.treeness.k, cfg.workers), (9, 4, 2));
        assert_eq!(cfg.treeness.budgets, vec![10.0, 20.0]);
        assert_eq!(cfg.treeness.trials, 7);
    }

    #[test]
    fn string_values_need_no_quotes() {
        let cfg = resolve_config(None, &args("donsker", &["donsker.normalization.method=diffusive"])).unwrap();
        assert_eq!(cfg.donsker.normalization.method, "diffusive");
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(resolve_config(None, &args("nope", &[])).is_err());
        assert!(resolve_config(None, &args("forest", &["field.bogus=1"])).is_err());
        assert!(resolve_config(None, &args("forest", &["noequals"])).is_err());
        assert!(resolve_config(Some("experiment = "), &Args::default()).is_err());
        assert!(resolve_config(None, &args("forest", &["workers=0"])).is_err());
    }

    #[test]
    fn echo_drops_execution_settings() {
        let cfg = resolve_config(None, &args("forest", &["workers=3"])).unwrap();
        let echo = cfg.echo();
        assert!(echo.get("workers").is_none() && echo.get("out").is_none());
        assert_eq!(echo["field"]["d"], 2);
    }
}
