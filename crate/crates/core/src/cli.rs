//! The `influence` command-line tool.
//!
//! Exit status is 0 on success, 1 when inputs fail validation or a
//! computation error occurs, and 2 for usage errors. Failures print a single
//! JSON object to stderr: `{"error": <code>, "message": ..., "file": ...,
//! "line": ...}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::diversity::{FieldPolicy, DEFAULT_K};
use crate::error::Error;
use crate::ingest::{load_all, load_manifest, load_sample_file, validate_manifest, SampleSet};
use crate::matrix::{LabeledMatrix, NumberFormat};
use crate::metric::{ablated_matrix, summarize, DatasetSummary, Factor, SummaryConfig};
use crate::rank::two_way_eval;
use crate::selection::{
    allocate, sample_allocation, select_instances, validity_filter, SelectionMode, ShortPoolPolicy, ValidityRules,
};
use crate::synth::{generate_world, WorldSpec};
use crate::FORMAT_VERSION;

/// Significant digits of matrix CSV cells.
pub const CSV_DIGITS: usize = 9;

#[derive(Debug, Parser)]
#[command(
    name = "influence",
    version,
    about = "Score source datasets by their predicted influence on targets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and every sample file it lists.
    Validate(ValidateArgs),
    /// Reduce each dataset to a summary file.
    Summarize(SummarizeArgs),
    /// Build the source × target influence matrix from summaries.
    Score(ScoreArgs),
    /// Compare predicted and observed matrices with Kendall's tau.
    EvalTau(EvalTauArgs),
    /// Split a sample budget across sources in proportion to their scores.
    Reweight(ReweightArgs),
    /// Pick the candidate records that score highest against a target.
    Select(SelectArgs),
    /// Synthetic test worlds.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory receiving `<id>.summary.json` files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value = "question", value_parser = parse_policy)]
    pub field_policy: FieldPolicy,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory of `*.summary.json` files.
    #[arg(long)]
    pub summaries: PathBuf,
    /// Directory receiving `matrix.csv` and `matrix.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Factors replaced by 1.
    #[arg(long, value_delimiter = ',', value_parser = parse_factor)]
    pub drop: Vec<Factor>,
    /// Source ids, overriding the roles recorded in the summaries.
    #[arg(long, value_delimiter = ',')]
    pub sources: Vec<String>,
    /// Target ids, overriding the roles recorded in the summaries.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalTauArgs {
    #[arg(long)]
    pub predicted: PathBuf,
    #[arg(long)]
    pub observed: PathBuf,
    /// Directory receiving `tau_report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep source == target pairs in every ranking.
    #[arg(long)]
    pub include_diagonal: bool,
}

#[derive(Debug, Args)]
pub struct ReweightArgs {
    /// Influence matrix CSV.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub budget: u64,
    /// Manifest locating the source records to draw from.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory receiving `plan.json` (and `merged.jsonl`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Reject negative scores instead of treating them as 0.
    #[arg(long)]
    pub no_floor: bool,
    /// Top up short sources by drawing with replacement.
    #[arg(long)]
    pub allow_replacement: bool,
    /// Also write the sampled records as `merged.jsonl`.
    #[arg(long)]
    pub materialize: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["top_k", "threshold"])))]
pub struct SelectArgs {
    /// Candidate records (JSON Lines).
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub target_summary: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Drop candidates with more answer tokens than this, empty texts or
    /// special-token markup before scoring.
    #[arg(long)]
    pub max_answer_tokens: Option<usize>,
    /// Directory receiving `selected.json` and `selected.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Write a synthetic world: manifest, sample files and observed.csv.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<FieldPolicy, String> {
    match s {
        "question" => Ok(FieldPolicy::Question),
        "mean" => Ok(FieldPolicy::Mean),
        _ => Err(format!("expected one of question, mean; got {s:?}")),
    }
}

fn parse_factor(s: &str) -> Result<Factor, String> {
    s.parse()
        .map_err(|_| format!("expected one of qsim, asim, isim, ppl, div; got {s:?}"))
}

/// A library error plus the file being processed when it happened.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub file: Option<PathBuf>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, file: None }
    }
}

impl Failure {
    pub fn report(&self) -> serde_json::Value {
        let file = self.error.path().map(Path::to_path_buf).or_else(|| self.file.clone());
        json!({
            "error": self.error.code(),
            "message": self.error.to_string(),
            "file": file.map(|p| p.display().to_string()),
            "line": self.error.line(),
        })
    }
}

trait InFile<T> {
    fn in_file(self, path: &Path) -> Result<T, Failure>;
}

impl<T> InFile<T> for crate::Result<T> {
    fn in_file(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|error| Failure {
            error,
            file: Some(path.to_path_buf()),
        })
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write(path: &Path, body: &str) -> CmdResult {
    fs::write(path, body).map_err(|e| Error::io(path, e).into())
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("artifacts serialize") + "\n"
}

fn jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(item).expect("records serialize"));
        body.push('\n');
    }
    body
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool, Failure> {
    let manifest = load_manifest(&args.manifest)?;
    let report = validate_manifest(&manifest);
    print!("{}", pretty(&report));
    Ok(report.is_ok())
}

fn cmd_summarize(args: &SummarizeArgs) -> CmdResult {
    if args.k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()).into());
    }
    let manifest = load_manifest(&args.manifest)?;
    let sets = load_all(&manifest)?;
    let config = SummaryConfig {
        k: args.k,
        seed: args.seed,
        field_policy: args.field_policy,
    };
    let summaries = sets
        .par_iter()
        .zip(&manifest.datasets)
        .map(|(set, entry)| {
            let mut s = summarize(set, &config).in_file(&entry.samples_path)?;
            s.role = Some(entry.role);
            Ok(s)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    ensure_dir(&args.out)?;
    for s in &summaries {
        write(&args.out.join(format!("{}.summary.json", s.dataset_id)), &pretty(s))?;
    }
    println!("wrote {} summaries ({})", summaries.len(), config.fingerprint());
    Ok(())
}

/// Every `*.summary.json` in `dir`, ordered by file name.
pub fn load_summaries(dir: &Path) -> Result<Vec<DatasetSummary>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(".summary.json"))
        {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Failure {
            error: Error::EmptyInput,
            file: Some(dir.to_path_buf()),
        });
    }
    let mut out: Vec<DatasetSummary> = Vec::with_capacity(paths.len());
    for path in &paths {
        let s = DatasetSummary::from_json_str(&read(path)?).in_file(path)?;
        if let Some(first) = out.first() {
            if first.config_fingerprint != s.config_fingerprint {
                return Err(Failure {
                    error: Error::FingerprintMismatch(first.config_fingerprint.clone(), s.config_fingerprint),
                    file: Some(path.clone()),
                });
            }
        }
        if out.iter().any(|o| o.dataset_id == s.dataset_id) {
            return Err(Failure {
                error: Error::DuplicateDatasetId(s.dataset_id),
                file: Some(path.clone()),
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// Matrix JSON: the same rounded numbers as the CSV.
#[derive(Debug, Serialize)]
struct MatrixDoc<'a> {
    format_version: &'a str,
    config_fingerprint: &'a str,
    dropped: Vec<&'static str>,
    sources: &'a [String],
    targets: &'a [String],
    values: &'a [Vec<f64>],
}

fn cmd_score(args: &ScoreArgs) -> CmdResult {
    let summaries = load_summaries(&args.summaries)?;
    let pick = |explicit: &[String], keep: fn(&DatasetSummary) -> bool| -> Vec<String> {
        if explicit.is_empty() {
            summaries
                .iter()
                .filter(|s| keep(s))
                .map(|s| s.dataset_id.clone())
                .collect()
        } else {
            explicit.to_vec()
        }
    };
    let sources = pick(&args.sources, |s| s.role.is_none_or(|r| r.is_source()));
    let targets = pick(&args.targets, |s| s.role.is_none_or(|r| r.is_target()));
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::InvalidParameter("need at least one source and one target".into()).into());
    }
    let mut drop = args.drop.clone();
    drop.sort();
    drop.dedup();
    let matrix = ablated_matrix(&summaries, &sources, &targets, &drop)?.rounded(CSV_DIGITS);
    ensure_dir(&args.out)?;
    write(
        &args.out.join("matrix.csv"),
        &matrix.to_csv_string(NumberFormat::Significant(CSV_DIGITS)),
    )?;
    let doc = MatrixDoc {
        format_version: FORMAT_VERSION,
        config_fingerprint: &summaries[0].config_fingerprint,
        dropped: drop.iter().map(|f| f.as_str()).collect(),
        sources: matrix.sources(),
        targets: matrix.targets(),
        values: matrix.values(),
    };
    write(&args.out.join("matrix.json"), &pretty(&doc))?;
    println!("wrote {}x{} matrix", sources.len(), targets.len());
    Ok(())
}

fn load_matrix(path: &Path) -> Result<LabeledMatrix, Failure> {
    LabeledMatrix::from_csv_str(&read(path)?).in_file(path)
}

fn cmd_eval_tau(args: &EvalTauArgs) -> CmdResult {
    let predicted = load_matrix(&args.predicted)?;
    let observed = load_matrix(&args.observed)?;
    let report = two_way_eval(&predicted, &observed, !args.include_diagonal)?;
    ensure_dir(&args.out)?;
    write(&args.out.join("tau_report.json"), &pretty(&report))?;
    for d in &report.degenerate {
        eprintln!("warning: {:?} {} skipped: {}", d.axis, d.id, d.reason);
    }
    println!("tau_target {:.3}", report.mean_target);
    println!("tau_source {:.3}", report.mean_source);
    println!("tau {:.3}", report.final_tau);
    Ok(())
}

fn cmd_reweight(args: &ReweightArgs) -> CmdResult {
    let matrix = load_matrix(&args.matrix)?;
    let scores: BTreeMap<String, f64> = matrix.column(&args.target).in_file(&args.matrix)?.into_iter().collect();
    let counts = allocate(&scores, args.budget, !args.no_floor)?;
    let manifest = load_manifest(&args.manifest)?;
    let mut sources = BTreeMap::new();
    for id in counts.iter().filter(|(_, &c)| c > 0).map(|(id, _)| id) {
        let entry = manifest.dataset(id).ok_or_else(|| Failure {
            error: Error::UnknownDatasetId(id.clone()),
            file: Some(args.manifest.clone()),
        })?;
        let set = load_sample_file(id, &entry.samples_path, manifest.embedding_dim)?;
        sources.insert(id.clone(), set);
    }
    let policy = if args.allow_replacement {
        ShortPoolPolicy::WithReplacementTail
    } else {
        ShortPoolPolicy::ErrorIfShort
    };
    let plan = sample_allocation(&args.target, &counts, &sources, args.seed, policy)?;
    ensure_dir(&args.out)?;
    write(&args.out.join("plan.json"), &pretty(&plan))?;
    if args.materialize {
        let merged = plan.sampled_ids.iter().flat_map(|(source, ids)| {
            let set: &SampleSet = &sources[source];
            ids.iter().map(move |id| {
                set.records()
                    .iter()
                    .find(|r| &r.id == id)
                    .expect("sampled from this set")
            })
        });
        write(&args.out.join("merged.jsonl"), &jsonl(merged))?;
    }
    for (id, n) in &plan.per_source {
        println!("{id}\t{n}");
    }
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> CmdResult {
    let target = DatasetSummary::from_json_str(&read(&args.target_summary)?).in_file(&args.target_summary)?;
    let pool_id = args
        .pool
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("pool")
        .to_string();
    let pool = load_sample_file(&pool_id, &args.pool, target.embedding_dim)?;
    let candidates = match args.max_answer_tokens {
        Some(max) => {
            let filtered = validity_filter(&pool, &ValidityRules::new(max));
            for (id, reason) in &filtered.dropped {
                eprintln!("filtered {id}: {reason}");
            }
            filtered.kept
        }
        None => pool.records().to_vec(),
    };
    let mode = match (args.top_k, args.threshold) {
        (Some(k), None) => SelectionMode::TopK(k),
        (None, Some(t)) => SelectionMode::Threshold(t),
        _ => unreachable!("clap enforces exactly one mode flag"),
    };
    let selected = select_instances(&candidates, &target, mode)?;
    ensure_dir(&args.out)?;
    write(&args.out.join("selected.json"), &pretty(&selected))?;
    let by_id: BTreeMap<&str, _> = candidates.iter().map(|r| (r.id.as_str(), r)).collect();
    write(
        &args.out.join("selected.jsonl"),
        &jsonl(selected.items.iter().map(|i| by_id[i.id.as_str()])),
    )?;
    if selected.items.is_empty() {
        eprintln!("warning: no candidate met the selection criterion");
    }
    println!("selected {} of {}", selected.items.len(), selected.pool_size);
    let composition = selected.producer_composition();
    for (producer, n) in &composition {
        let share = 100.0 * *n as f64 / selected.items.len() as f64;
        println!("{producer}\t{n}\t{share:.1}%");
    }
    Ok(())
}

fn cmd_fixtures(cmd: &FixturesCommand) -> CmdResult {
    let FixturesCommand::Generate { spec, out } = cmd;
    let spec_value = WorldSpec::from_json_str(&read(spec)?).in_file(spec)?;
    let world = generate_world(&spec_value, out)?;
    println!("wrote {}", world.manifest_path.display());
    println!("wrote {}", world.observed_path.display());
    Ok(())
}

/// Runs a parsed command. `Ok(false)` means the command completed but
/// found invalid data.
pub fn run(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Validate(a) => return cmd_validate(a),
        Command::Summarize(a) => cmd_summarize(a)?,
        Command::Score(a) => cmd_score(a)?,
        Command::EvalTau(a) => cmd_eval_tau(a)?,
        Command::Reweight(a) => cmd_reweight(a)?,
        Command::Select(a) => cmd_select(a)?,
        Command::Fixtures(c) => cmd_fixtures(c)?,
    }
    Ok(true)
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(failure) => {
            let _ = writeln!(std::io::stderr(), "{}", failure.report());
            ExitCode::from(1)
        }
    }
}
