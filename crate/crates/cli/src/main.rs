use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adseg_core::clustering::KMeansParams;
use adseg_core::features::{default_categories, parse_category_list, read_profiles, AppCatalog};
use adseg_core::ingest::timestamp::parse_timestamp;
use adseg_core::ingest::{LogFormat, ParseOptions, StudyWindow};
use adseg_core::metrics::IndexTable;
use adseg_core::mining::{read_rules_csv, select_rule_set, AdvertFilter, BasketDb, Class4From, MiningParams};
use adseg_core::synth::{generate, SynthSpec};
use anyhow::{Context, Result};
use chrono::NaiveDateTime;
use clap::{ArgGroup, Args, Parser, Subcommand};

mod artifacts;
mod config;
mod report;
mod stages;

use artifacts::{write_json, ModelFile};

/// An error in how the tool was invoked rather than in the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "adseg", version, about = "Segment users by installed apps and mine advert-interaction rules")]
struct Cli {
    /// Seed for every random choice (k-means seeding, synthetic data).
    #[arg(long, global = true, help_heading = "Global options")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, help_heading = "Global options")]
    threads: Option<usize>,
    /// Skip malformed log lines instead of stopping at the first one.
    #[arg(long, global = true, help_heading = "Global options")]
    lenient: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, help_heading = "Global options", action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse logs and keep the first occurrence of each (user, advert, stage).
    Ingest(IngestArgs),
    /// Category-percentage profiles, standardized.
    Profile(ProfileArgs),
    /// k-means over standardized profiles.
    Cluster(ClusterArgs),
    /// Per-cluster index values by genre and funnel stage.
    Index(IndexArgs),
    /// Association rules from cohort baskets.
    Mine(MineArgs),
    /// Greedy rule set reaching a basket coverage target.
    Select(SelectArgs),
    /// Generate a synthetic population with planted structure.
    Synth(SynthArgs),
    /// Run every stage from one config file.
    Pipeline(PipelineArgs),
    /// Markdown report and CSV bundle from stage outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Log files (`-` for stdin).
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: LogFormat,
    /// Advert registry, used to report unregistered adverts.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Drop events before this time (YYYY-MM-DDTHH:MM).
    #[arg(long, value_parser = parse_ts, requires = "window_end")]
    window_start: Option<NaiveDateTime>,
    /// Drop events after this time.
    #[arg(long, value_parser = parse_ts, requires = "window_start")]
    window_end: Option<NaiveDateTime>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    store: PathBuf,
    /// TSV of app id and category name.
    #[arg(long)]
    catalog: PathBuf,
    /// Category names, one per line; the order fixes the coordinates.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Accept a category count other than 22.
    #[arg(long)]
    allow_any_k: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: u64,
    #[arg(long, default_value_t = 1e-8, value_parser = non_negative)]
    tol: f64,
    /// Fit centroids on this many evenly spaced users, then label everyone.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    fit_sample: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Assignments file (default: next to the model).
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Assignments file (default: the one named in the model).
    #[arg(long)]
    assignments: Option<PathBuf>,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("scope").args(["genre", "advert"])))]
struct MineArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    assignments: Option<PathBuf>,
    #[arg(long)]
    registry: PathBuf,
    /// finance, lifestyle, entertainment or all.
    #[arg(long, default_value = "all")]
    genre: String,
    /// Restrict baskets to one advert.
    #[arg(long)]
    advert: Option<String>,
    #[arg(long, default_value_t = 1e-5, value_parser = unit_interval)]
    min_left_support: f64,
    /// Rules need lift strictly above this.
    #[arg(long, default_value_t = 1.5, value_parser = non_negative)]
    lift: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=3))]
    max_antecedent: u64,
    /// Where the top app-count class starts: sigma or 2sigma.
    #[arg(long, default_value = "sigma")]
    class4_from: Class4From,
    #[arg(long)]
    out: PathBuf,
    /// Basket database output (default: next to the rules).
    #[arg(long)]
    baskets: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    baskets: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = closed_unit)]
    coverage: f64,
    /// Write the selection as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["spec", "preset"])))]
struct SynthArgs {
    /// JSON spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in spec: planted or homogeneous.
    #[arg(long)]
    preset: Option<String>,
    /// Users for a preset.
    #[arg(long, default_value_t = 10_000, requires = "preset")]
    users: usize,
    /// Clusters for the planted preset.
    #[arg(long, default_value_t = 10, requires = "preset")]
    clusters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out` next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_ts(s: &str) -> Result<NaiveDateTime, String> {
    parse_timestamp(s)
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn closed_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("adseg: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adseg: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a).context("ingest"),
        Command::Profile(a) => profile(a).context("profile"),
        Command::Cluster(a) => cluster(cli, a).context("cluster"),
        Command::Index(a) => index(a).context("index"),
        Command::Mine(a) => mine(a).context("mine"),
        Command::Select(a) => select(a).context("select"),
        Command::Synth(a) => synth(cli, a).context("synth"),
        Command::Pipeline(a) => pipeline(cli, a).context("pipeline"),
        Command::Report(a) => report_cmd(a).context("report"),
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let window = a.window_start.zip(a.window_end).map(|(start, end)| StudyWindow { start, end });
    if window.is_some_and(|w| w.start > w.end) {
        return Err(UsageError("--window-start is after --window-end".into()).into());
    }
    let opts = ParseOptions { lenient: cli.lenient, window };
    let (store, stats) = stages::ingest(&a.logs, a.format, &opts)?;
    if let Some(path) = &a.registry {
        let registry = artifacts::read_registry(path)?;
        let unknown: BTreeSet<&str> =
            store.entries().map(|(k, _)| &*k.advert).filter(|ad| registry.genre(ad).is_none()).collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.into_iter().collect();
            log::warn!("{} adverts are not in the registry: {}", names.len(), names.join(", "));
        }
    }
    let report = store.funnel_report();
    for v in &report.violations {
        log::info!(
            "funnel: {} has {} {:?} events after {} at the previous stage",
            v.advert,
            v.count,
            v.stage,
            v.previous_count
        );
    }
    store.write_to(BufWriter::new(artifacts::create(&a.out)?))?;
    eprintln!(
        "ingest: {} records, {} skipped, {} users, {} entries -> {}",
        stats.records,
        stats.skipped,
        store.user_count(),
        store.len(),
        a.out.display()
    );
    Ok(())
}

fn profile(a: &ProfileArgs) -> Result<()> {
    let store = artifacts::read_store(&a.store)?;
    let categories = match &a.categories {
        Some(p) => parse_category_list(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => default_categories(),
    };
    let text = fs::read_to_string(&a.catalog).with_context(|| format!("reading {}", a.catalog.display()))?;
    let catalog = AppCatalog::parse(&text, &categories, a.allow_any_k)?;
    let table = stages::profile(&store, &catalog)?;
    adseg_core::features::write_profiles(&table.rows, BufWriter::new(artifacts::create(&a.out)?))?;
    write_json(&artifacts::meta_path(&a.out), &table.meta)?;
    if !table.meta.excluded_users.is_empty() {
        log::warn!("{} users have no catalogued apps and were left out", table.meta.excluded_users.len());
    }
    eprintln!("profile: {} users -> {}", table.rows.len(), a.out.display());
    Ok(())
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> Result<()> {
    let file = fs::File::open(&a.profiles).with_context(|| format!("opening {}", a.profiles.display()))?;
    let rows = read_profiles(BufReader::new(file))?;
    let categories = match artifacts::read_meta(&a.profiles)? {
        Some(meta) => meta.categories,
        None => {
            log::warn!("no metadata next to {}; assuming the default categories", a.profiles.display());
            default_categories()
        }
    };
    let params = KMeansParams {
        k: a.k as usize,
        seed: cli.seed.unwrap_or(0),
        restarts: a.restarts as usize,
        max_iter: a.max_iter as usize,
        tol: a.tol,
    };
    let c = stages::cluster(&rows, &params, a.fit_sample.map(|s| s as usize))?;
    let assignments = a.assignments.clone().unwrap_or_else(|| artifacts::default_assignments_path(&a.out));
    let model_dir = a.out.parent().unwrap_or(Path::new(""));
    let relative = assignments
        .strip_prefix(model_dir)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| std::path::absolute(&assignments).unwrap_or(assignments.clone()));
    let model = ModelFile::new(
        &c.model,
        &c.report,
        categories,
        rows.len(),
        c.sizes.clone(),
        c.fit_sample,
        relative.to_string_lossy().into_owned(),
    );
    model.write(&a.out)?;
    c.assignment.write_jsonl(BufWriter::new(artifacts::create(&assignments)?))?;
    eprintln!(
        "cluster: k={} wcss={:.4} bcss={:.4} sizes={:?} -> {}",
        params.k,
        c.report.wcss,
        c.report.bcss,
        c.sizes,
        a.out.display()
    );
    Ok(())
}

fn index(a: &IndexArgs) -> Result<()> {
    let store = artifacts::read_store(&a.store)?;
    let model = ModelFile::read(&a.model)?;
    let assignment = model.load_assignment(&a.model, a.assignments.as_deref())?;
    let registry = artifacts::read_registry(&a.registry)?;
    let table = stages::index(&store, &assignment, &registry)?;
    table.write_csv(artifacts::create(&a.out)?)?;
    let undefined = table.cells.iter().filter(|c| c.index.is_none()).count();
    eprintln!("index: {} cells ({} undefined) -> {}", table.cells.len(), undefined, a.out.display());
    Ok(())
}

fn mine(a: &MineArgs) -> Result<()> {
    let filter = match &a.advert {
        Some(ad) => AdvertFilter::Advert(ad.clone()),
        None => a.genre.parse().map_err(|e: String| UsageError(format!("--genre: {e}")))?,
    };
    let store = artifacts::read_store(&a.store)?;
    let model = ModelFile::read(&a.model)?;
    let assignment = model.load_assignment(&a.model, a.assignments.as_deref())?;
    let registry = artifacts::read_registry(&a.registry)?;
    let params = MiningParams {
        min_left_support: a.min_left_support,
        lift_floor: a.lift,
        max_antecedent: a.max_antecedent as usize,
        ..Default::default()
    };
    let mined = stages::mine(&store, &assignment, &registry, &filter, &params, a.class4_from)?;
    adseg_core::mining::write_rules_csv(&mined.rules, artifacts::create(&a.out)?)?;
    let baskets = a.baskets.clone().unwrap_or_else(|| artifacts::default_baskets_path(&a.out));
    mined.baskets.db.write_tsv(BufWriter::new(artifacts::create(&baskets)?))?;
    eprintln!(
        "mine: {} baskets, {} rules -> {} (baskets {})",
        mined.baskets.db.len(),
        mined.rules.len(),
        a.out.display(),
        baskets.display()
    );
    Ok(())
}

fn select(a: &SelectArgs) -> Result<()> {
    let rules_file = fs::File::open(&a.rules).with_context(|| format!("opening {}", a.rules.display()))?;
    let rules = read_rules_csv(rules_file)?;
    let baskets_file = fs::File::open(&a.baskets).with_context(|| format!("opening {}", a.baskets.display()))?;
    let db = BasketDb::read_tsv(BufReader::new(baskets_file))?;
    let selection = select_rule_set(&rules, &db, a.coverage)?;
    match &a.out {
        Some(path) => write_json(path, &selection)?,
        None => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &selection)?;
            writeln!(out)?;
        }
    }
    eprintln!(
        "select: {} rules, coverage {:.3}, mean lift {:.3}",
        selection.rules.len(),
        selection.coverage,
        selection.mean_lift
    );
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.preset.as_deref()) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some("planted")) => SynthSpec::planted(a.users, a.clusters, 0, 0.6),
        (None, Some("homogeneous")) => SynthSpec::homogeneous(a.users, 0, 0.6),
        (None, Some(other)) => {
            return Err(UsageError(format!("unknown preset {other:?} (planted or homogeneous)")).into())
        }
        (None, None) => unreachable!("clap requires --spec or --preset"),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let syn = generate(&spec)?;
    syn.write_to_dir(&a.out)?;
    eprintln!("synth: {} users, {} events -> {}", spec.n_users, syn.event_count(), a.out.display());
    Ok(())
}

fn pipeline(cli: &Cli, a: &PipelineArgs) -> Result<()> {
    let cfg = config::RunConfig::load(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("")).to_path_buf();
    let out = a.out.clone().unwrap_or_else(|| base.join("out"));
    let summary = config::run_pipeline(&cfg, &base, &out, cli.seed, cli.lenient)?;
    eprintln!(
        "pipeline: {} entries, k={}, {} rules -> {}",
        summary["ingest"]["entries"],
        summary["cluster"]["k"],
        summary["mine"]["rules"],
        out.display()
    );
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let model = ModelFile::read(&a.model)?;
    let index_file = fs::File::open(&a.index).with_context(|| format!("opening {}", a.index.display()))?;
    let index = IndexTable::read_csv(index_file)?;
    let rules_file = fs::File::open(&a.rules).with_context(|| format!("opening {}", a.rules.display()))?;
    let rules = read_rules_csv(rules_file)?;
    report::write_report(&a.out, &model, &index, &rules, None)?;
    eprintln!("report: {}", a.out.join("report.md").display());
    Ok(())
}
