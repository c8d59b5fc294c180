//! Command-line front end: `ingest`, `run`, `sweep`, `ablate`, `eval` and
//! `report`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::data::{filter_and_split, ingest, Format, SplitConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, write_report_csv, write_report_jsonl, Split, REPORT_HEADER};
use crate::server::checkpoint::Checkpoint;
use crate::sim::{run_experiment, write_transcript_jsonl, ExperimentOutput};

#[derive(Debug, Parser)]
#[command(name = "sdfe", version, about = "Semi-decentralized federated ego-graph recommendation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter and split an interaction log.
    Ingest(IngestArgs),
    /// Run one experiment.
    Run(RunArgs),
    /// Run one experiment per parameter value and seed.
    Sweep(SweepArgs),
    /// Paired runs with and without fake items.
    Ablate(AblateArgs),
    /// Re-evaluate a checkpoint.
    Eval(EvalArgs),
    /// Merge report CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "movielens-dat")]
    pub format: Format,
    #[arg(long)]
    pub min_interactions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file plus overrides. Flags win over `--set`, which wins over the file.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let mut pairs = Vec::new();
        let mut errors = Vec::new();
        for s in &self.set {
            match s.split_once('=') {
                Some((k, v)) => pairs.push((k.trim().to_string(), v.trim().to_string())),
                None => errors.push(format!("--set {s:?}: expected KEY=VALUE")),
            }
        }
        if let Some(p) = &self.dataset {
            pairs.push(("dataset_path".into(), p.display().to_string()));
        }
        if let Some(f) = &self.format {
            pairs.push(("dataset_format".into(), f.clone()));
        }
        for (key, v) in [("seed", self.seed), ("rounds", self.rounds), ("eval_every", self.eval_every)] {
            if let Some(v) = v {
                pairs.push((key.into(), v.to_string()));
            }
        }
        if let Err(Error::Config(list)) = cfg.apply(&pairs) {
            errors.extend(list);
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// One of fake_nodes, groups, layers, neg_count.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Sweepable parameters and the config key each one sets.
pub const SWEEP_PARAMS: &[(&str, &str)] = &[
    ("fake_nodes", "fake_items"),
    ("groups", "groups"),
    ("layers", "layers"),
    ("neg_count", "neg_count"),
];

pub fn sweep_key(param: &str) -> Result<&'static str> {
    SWEEP_PARAMS.iter().find(|(p, _)| *p == param).map(|(_, k)| *k).ok_or_else(|| {
        let names: Vec<&str> = SWEEP_PARAMS.iter().map(|(p, _)| *p).collect();
        Error::Argument(format!("unknown sweep parameter {param:?}; valid: {}", names.join(", ")))
    })
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs an experiment and writes the standard output tree into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved"), cfg.resolved())?;
    let dataset = cfg.load_dataset()?;
    let out = run_experiment(dataset, cfg.sim_config(), cfg.schedule())?;
    let mut w = create(dir.join("report.csv"))?;
    write_report_csv(&mut w, &out.reports)?;
    w.flush()?;
    let mut w = create(dir.join("report.jsonl"))?;
    write_report_jsonl(&mut w, &out.reports)?;
    w.flush()?;
    let mut w = create(dir.join("ledger.csv"))?;
    out.world.ledger.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir.join("transcript.jsonl"))?;
    write_transcript_jsonl(&mut w, &out.world.transcript)?;
    w.flush()?;
    out.checkpoint.write(dir.join("checkpoint.sdfe"))?;
    Ok(out)
}

fn final_recall(out: &ExperimentOutput) -> f64 {
    out.reports.last().map_or(0.0, |r| r.recall)
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let raw = ingest(&a.input, a.format)?;
    let min = a.min_interactions.unwrap_or(match a.format {
        Format::MovielensDat => 20,
        Format::Tsv => 10,
    });
    let ds = filter_and_split(
        &raw,
        &SplitConfig {
            min_interactions: min,
            seed: a.seed,
            ..SplitConfig::default()
        },
    )?;
    ds.write_dir(&a.out)?;
    println!(
        "users={} items={} train={} valid={} test={}",
        ds.num_users,
        ds.num_items,
        ds.train_len(),
        ds.valid_len(),
        ds.test_len()
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let out = run_to_dir(&cfg, &a.out)?;
    if let Some(r) = out.reports.last() {
        println!("round={} recall@{}={} ndcg@{}={}", r.round, r.k, r.recall, r.k, r.ndcg);
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let key = sweep_key(&a.param)?;
    let base = a.config.resolve()?;
    let mut cells = Vec::new();
    for value in &a.values {
        let mut cfg = base.clone();
        cfg.set(key, value).map_err(|e| Error::Config(vec![e]))?;
        cfg.validate()?;
        for &seed in &a.seeds {
            cfg.seed = seed;
            cells.push((value.clone(), seed, cfg.clone()));
        }
    }
    fs::create_dir_all(&a.out)?;
    let mut w = create(a.out.join("sweep.csv"))?;
    writeln!(w, "param,value,seed,status,{REPORT_HEADER}")?;
    let mut failures = 0;
    for (value, seed, cfg) in cells {
        let dir = a.out.join(format!("{}={value}", a.param)).join(format!("seed={seed}"));
        match run_to_dir(&cfg, &dir) {
            Ok(out) => {
                let last = out.reports.last().expect("round 0 report");
                writeln!(w, "{},{value},{seed},ok,{}", a.param, last.csv_row())?;
            }
            Err(e) => {
                failures += 1;
                eprintln!("sweep cell {}={value} seed={seed} failed: {e}", a.param);
                writeln!(w, "{},{value},{seed},failed,,,,,,,,", a.param)?;
            }
        }
    }
    w.flush()?;
    if failures > 0 {
        return Err(Error::Argument(format!("{failures} sweep cells failed")));
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let base = a.config.resolve()?;
    fs::create_dir_all(&a.out)?;
    let mut w = create(a.out.join("ablation.csv"))?;
    writeln!(w, "seed,recall_with,recall_without,delta")?;
    for &seed in &a.seeds {
        let with = ExperimentConfig {
            seed,
            ..base.clone()
        };
        let without = ExperimentConfig {
            seed,
            fake_items: 0,
            ..base.clone()
        };
        let r_with = final_recall(&run_to_dir(&with, &a.out.join(format!("with/seed={seed}")))?);
        let r_without = final_recall(&run_to_dir(&without, &a.out.join(format!("without/seed={seed}")))?);
        writeln!(w, "{seed},{r_with},{r_without},{}", r_with - r_without)?;
        println!("seed={seed} with={r_with} without={r_without}");
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let k = a.k.unwrap_or(cfg.k);
    let split = match a.split.as_str() {
        "test" => Split::Test,
        "valid" => Split::Valid,
        other => return Err(Error::Argument(format!("unknown split {other:?}; expected test or valid"))),
    };
    let ck = Checkpoint::read(&a.checkpoint)?;
    let ds = cfg.load_dataset()?;
    if ck.num_users != ds.num_users || ck.num_items != ds.num_items {
        return Err(Error::Checkpoint(format!(
            "checkpoint has N={} M={}, dataset has N={} M={}",
            ck.num_users, ck.num_items, ds.num_users, ds.num_items
        )));
    }
    let s = evaluate(&ck.ego_registry(), &ck.item_table(), &ds, split, k)?;
    println!("{}", serde_json::json!({ "round": ck.round, "k": k, "recall": s.recall, "ndcg": s.ndcg, "users": s.users }));
    Ok(())
}

/// Concatenates CSVs sharing one header, prefixing a `source` column.
pub fn merge_reports(inputs: &[PathBuf]) -> Result<String> {
    let mut header: Option<String> = None;
    let mut out = String::new();
    for path in inputs {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let h = lines.next().unwrap_or("").to_string();
        match &header {
            None => {
                out.push_str(&format!("source,{h}\n"));
                header = Some(h);
            }
            Some(prev) if *prev != h => {
                return Err(Error::Argument(format!("{} has header {h:?}, expected {prev:?}", path.display())));
            }
            Some(_) => {}
        }
        for line in lines.filter(|l| !l.is_empty()) {
            out.push_str(&format!("{},{line}\n", path.display()));
        }
    }
    Ok(out)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    fs::write(&a.out, merge_reports(&a.inputs)?)?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Exit code for an outcome: 0 on success, 2 for configuration errors, 1
/// otherwise.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(Error::Config(_)) => 2,
        Err(_) => 1,
    }
}

/// Worker count from `SDFE_THREADS`, if set and positive.
pub fn thread_cap() -> Option<usize> {
    std::env::var("SDFE_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}
