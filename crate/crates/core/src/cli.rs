//! Command-line plumbing: manifests, flag overrides and the four commands.
//!
//! A manifest holds every setting of a run. It can be loaded from a TOML or
//! JSON file; command-line flags override individual fields. The resolved
//! manifest is written next to the outputs so a run can be replayed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::engine::{run, write_iteration_csv, IterationReport, RunConfig, RunDiagnostics};
use crate::error::{io_err, Error, Result};
use crate::metrics::{budget_report, quality, write_sweep_csv, BudgetReport, Clustering, Quality, SweepRow};
use crate::oracle::{write_transcript, HttpOracleConfig, OracleKind};
use crate::planted::{generate, PlantedConfig};
use crate::records::{load_ground_truth, load_records, write_ground_truth, write_records_csv, RecordFormat};
use crate::select::{generate_instances, simulate_threshold_policy, write_sim_csv, DensityBounds, SimOutcome};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub records: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub config: RunConfig,
}

impl RunManifest {
    /// Load from `.toml` or `.json` (by extension; anything else is tried
    /// as TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "budget-er", version, about = "Budget-constrained entity resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve one dataset.
    Run(RunFlags),
    /// Resolve one dataset at several budgets and tabulate quality.
    Sweep(SweepFlags),
    /// Write a synthetic dataset with known entities.
    GenPlanted(GenPlantedFlags),
    /// Replay random instances through the admission rule.
    KnapsackSim(KnapsackSimFlags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleChoice {
    True,
    Noisy,
    Llm,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML or JSON manifest; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleChoice>,
    /// Noise rate of the noisy oracle.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub delta_llm: Option<f64>,
    #[arg(long)]
    pub sigma_llm: Option<f64>,
    #[arg(long)]
    pub density_l: Option<f64>,
    #[arg(long)]
    pub density_u: Option<f64>,
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunFlags {
    /// Start from the config file (or defaults) and apply every flag given.
    pub fn resolve(&self) -> Result<RunManifest> {
        let mut man = match &self.config {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        let cfg = &mut man.config;
        set(&mut man.records, self.records.clone().map(Some));
        set(&mut man.truth, self.truth.clone().map(Some));
        set(&mut man.out_dir, self.out_dir.clone().map(Some));
        set(&mut cfg.budget, self.budget);
        set(&mut cfg.graph.k, self.k);
        set(&mut cfg.graph.alpha, self.alpha);
        set(&mut cfg.graph.sigma_llm, self.sigma_llm);
        set(&mut cfg.theta, self.theta);
        set(&mut cfg.m, self.m);
        set(&mut cfg.selection.delta_llm, self.delta_llm);
        set(&mut cfg.selection.bounds.lower, self.density_l);
        set(&mut cfg.selection.bounds.upper, self.density_u);
        set(&mut cfg.t_max, self.tmax);
        set(&mut cfg.seed, self.seed);
        cfg.oracle = self.resolve_oracle(&cfg.oracle)?;
        cfg.validate()?;
        Ok(man)
    }

    fn resolve_oracle(&self, current: &OracleKind) -> Result<OracleKind> {
        let choice = self.oracle.unwrap_or(match current {
            OracleKind::True => OracleChoice::True,
            OracleKind::Noisy { .. } => OracleChoice::Noisy,
            OracleKind::Llm(_) => OracleChoice::Llm,
        });
        if self.epsilon.is_some() && choice != OracleChoice::Noisy {
            return Err(Error::Config("--epsilon only applies to the noisy oracle".into()));
        }
        if (self.llm_endpoint.is_some() || self.llm_model.is_some()) && choice != OracleChoice::Llm {
            return Err(Error::Config("--llm-* flags only apply to the llm oracle".into()));
        }
        Ok(match choice {
            OracleChoice::True => OracleKind::True,
            OracleChoice::Noisy => {
                let epsilon = match (self.epsilon, current) {
                    (Some(e), _) => e,
                    (None, OracleKind::Noisy { epsilon }) => *epsilon,
                    _ => return Err(Error::Config("the noisy oracle needs --epsilon".into())),
                };
                OracleKind::Noisy { epsilon }
            }
            OracleChoice::Llm => {
                let mut c = match current {
                    OracleKind::Llm(c) => c.clone(),
                    _ => HttpOracleConfig::default(),
                };
                set(&mut c.endpoint, self.llm_endpoint.clone());
                set(&mut c.model, self.llm_model.clone());
                OracleKind::Llm(c)
            }
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepFlags {
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated budgets, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenPlantedFlags {
    #[arg(long, default_value_t = 60)]
    pub entities: usize,
    /// Records per entity, comma-separated and cycled over entities.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub sizes: Vec<usize>,
    /// Per-character corruption probability.
    #[arg(long, default_value_t = 0.1)]
    pub corruption: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KnapsackSimFlags {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 100.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 20.0)]
    pub density_l: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub density_u: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-instance ratio CSV; omitted when not given.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything a run reports, as written to `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub report: BudgetReport,
    pub quality: Option<Quality>,
    pub diagnostics: RunDiagnostics,
    pub iterations: Vec<IterationReport>,
    pub clusters: Vec<Vec<String>>,
}

impl RunOutput {
    pub fn summary(&self) -> String {
        let r = &self.report;
        let mut s = match &self.quality {
            Some(q) => format!("FP {:.4}  NMI {:.4}  ", q.fp, q.nmi),
            None => String::new(),
        };
        s.push_str(&format!(
            "clusters {}  calls {}  tokens {}/{}  cost ${:.6} of ${}",
            self.clusters.len(),
            r.calls,
            r.tokens_in,
            r.tokens_out,
            r.cost,
            r.budget
        ));
        s
    }
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Run the full pipeline for a resolved manifest. With `out_dir` set, writes
/// `run.json`, `manifest.json`, `transcript.jsonl` and `iterations.csv`.
pub fn cmd_run(man: &RunManifest) -> Result<RunOutput> {
    let records = man
        .records
        .as_deref()
        .ok_or_else(|| Error::Config("no records file given".into()))?;
    let dataset = load_records(records, RecordFormat::from_path(records))?;
    let truth = man.truth.as_deref().map(load_ground_truth).transpose()?;
    if let Some(t) = &truth {
        t.validate_against(&dataset)?;
    }
    let result = run(&dataset, &man.config, truth.as_ref())?;
    let q = match &truth {
        Some(t) => Some(quality(
            &Clustering::from_labels(&result.labels),
            &Clustering::from_truth(t, &dataset)?,
        )?),
        None => None,
    };
    let out = RunOutput {
        manifest: man.clone(),
        report: budget_report(&result, q.as_ref()),
        quality: q,
        diagnostics: result.diagnostics.clone(),
        iterations: result.reports.clone(),
        clusters: result.cluster_ids(&dataset),
    };
    if let Some(dir) = &man.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&dir.join("run.json"), &out)?;
        write_json(&dir.join("manifest.json"), man)?;
        let p = dir.join("transcript.jsonl");
        write_transcript(&result.transcript, create_file(&p)?)?;
        let p = dir.join("iterations.csv");
        write_iteration_csv(&result.reports, create_file(&p)?)?;
    }
    Ok(out)
}

/// One run per budget with everything else fixed. Needs ground truth. With
/// `out_dir` set, writes `sweep.csv` and the manifest used.
pub fn cmd_sweep(man: &RunManifest, budgets: &[f64]) -> Result<Vec<SweepRow>> {
    if budgets.len() < 2 {
        return Err(Error::Config("a sweep needs at least two budgets".into()));
    }
    if man.truth.is_none() {
        return Err(Error::Config("a sweep needs ground truth".into()));
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let mut m = man.clone();
        m.out_dir = None;
        m.config.budget = b;
        let out = cmd_run(&m)?;
        let q = out.quality.expect("truth given");
        rows.push(SweepRow {
            budget: b,
            fp: q.fp,
            nmi: q.nmi,
            cost: out.report.cost,
        });
    }
    if let Some(dir) = &man.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_sweep_csv(&rows, create_file(&dir.join("sweep.csv"))?)?;
        write_json(&dir.join("manifest.json"), man)?;
    }
    Ok(rows)
}

/// Write `records.csv` and `truth.csv` into `out_dir`.
pub fn cmd_gen_planted(cfg: &PlantedConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let planted = generate(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let records = out_dir.join("records.csv");
    let truth = out_dir.join("truth.csv");
    write_records_csv(&planted.dataset, create_file(&records)?)?;
    write_ground_truth(&planted.truth, create_file(&truth)?)?;
    Ok((records, truth))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub outcomes: Vec<SimOutcome>,
    pub max_ratio: f64,
    /// `ln(U/L) + 1`.
    pub bound: f64,
}

pub fn cmd_knapsack_sim(flags: &KnapsackSimFlags) -> Result<SimReport> {
    if flags.instances == 0 {
        return Err(Error::Config("need at least one instance".into()));
    }
    let bounds = DensityBounds::new(flags.density_l, flags.density_u)?;
    let instances = generate_instances(flags.instances, flags.budget, &bounds, flags.seed);
    let outcomes = simulate_threshold_policy(&instances, flags.budget, &bounds)?;
    if let Some(p) = &flags.out {
        write_sim_csv(&outcomes, create_file(p)?)?;
    }
    Ok(SimReport {
        max_ratio: outcomes.iter().map(|o| o.ratio).fold(0.0, f64::max),
        bound: bounds.competitive_ratio(),
        outcomes,
    })
}

/// Dispatch a parsed command line, printing summaries to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(flags) => {
            let out = cmd_run(&flags.resolve()?)?;
            println!("{}", out.summary());
        }
        Command::Sweep(flags) => {
            let rows = cmd_sweep(&flags.run.resolve()?, &flags.budgets)?;
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush().map_err(io_err("<stdout>"))?;
        }
        Command::GenPlanted(f) => {
            let cfg = PlantedConfig {
                entities: f.entities,
                sizes: f.sizes,
                corruption: f.corruption,
                seed: f.seed,
            };
            let (r, t) = cmd_gen_planted(&cfg, &f.out_dir)?;
            println!("wrote {} and {}", r.display(), t.display());
        }
        Command::KnapsackSim(f) => {
            let rep = cmd_knapsack_sim(&f)?;
            println!(
                "{} instances  max ratio {:.4}  bound ln(U/L)+1 = {:.4}",
                rep.outcomes.len(),
                rep.max_ratio,
                rep.bound
            );
        }
    }
    Ok(())
}
