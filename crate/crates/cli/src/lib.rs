//! Subcommands of the `exdd` binary. Each stage reads a manifest and a run
//! configuration, and writes artifacts that embed the configuration used.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use exdd::bank::{build_bank_pair, load_bank_pair, save_bank_pair, BankPair};
use exdd::evaluation::{augmentation_sweep, evaluate, scores_csv, DEFAULT_SWEEP};
use exdd::fixture::{generate_fixture, FixtureSpec};
use exdd::localization::localize_image;
use exdd::manifest::{load_manifest_with_levels, DatasetManifest, Role};
use exdd::patch::patchify;
use exdd::pipeline::{grid_path, load_feature_maps, load_patch_grid, write_patch_grid, GridSource};
use exdd::scoring::{score_image, to_bank_space, ScoreOptions, ScoreRecord};
use exdd::tensor::write_etf;
use exdd::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(exdd::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<exdd::Error> for CliError {
    fn from(e: exdd::Error) -> Self {
        match e {
            exdd::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "exdd",
    version,
    about = "Dual memory bank surface-defect detection"
)]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config field, e.g. `--set rates.negative=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic dataset (features, masks, manifest).
    Fixtures {
        /// Fixture description; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute locally aware patch grids for every manifest entry.
    Patchify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep grids that already exist in the output directory.
        #[arg(long)]
        skip_existing: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the negative and positive memory banks.
    BuildBank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of cached patch grids from `patchify`.
        #[arg(long)]
        grids: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score every test entry; writes one record per image.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grids: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write anomaly maps for every test entry.
    Localize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write 8-bit PGM heatmaps.
        #[arg(long)]
        heatmap: bool,
        #[arg(long)]
        grids: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute I-AUROC / P-AUROC, or an augmentation sweep with `--sweep`.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Bank file; required unless `--sweep` is given.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-image scores as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Synthetic-sample counts; rebuilds the positive bank per count.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sweep: Option<Vec<usize>>,
        #[arg(long)]
        grids: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn resolve_config(args: &ConfigArgs, base: Option<&RunConfig>) -> CliResult<RunConfig> {
    let mut cfg = match (&args.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(base)) => base.clone(),
        (None, None) => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.set(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid_source(grids: &Option<PathBuf>) -> GridSource {
    grids.clone().map(GridSource::Cached).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(io_err(dir, e)))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(io_err(path, e)))
}

fn io_err(path: &Path, source: std::io::Error) -> exdd::Error {
    exdd::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(io_err(path, e)))
}

fn load_manifest(path: &Path, cfg: &RunConfig) -> CliResult<DatasetManifest> {
    Ok(load_manifest_with_levels(path, &cfg.patch.levels)?)
}

#[derive(Serialize)]
struct FixtureEcho<'a> {
    spec: &'a FixtureSpec,
    config: &'a RunConfig,
}

fn cmd_fixtures(spec: &Option<PathBuf>, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve_config(args, None)?;
    let mut spec: FixtureSpec = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Data(io_err(path, e)))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => FixtureSpec::default(),
    };
    spec.seed = cfg.seeds.fixture;
    create_dir(out)?;
    let manifest = generate_fixture(&spec, out)?;
    write_json(
        &out.join("fixture.json"),
        &FixtureEcho {
            spec: &spec,
            config: &cfg,
        },
    )?;
    println!(
        "fixture: {} entries (dim {}) -> {}",
        manifest.entries.len(),
        spec.dim(),
        out.join(exdd::fixture::FIXTURE_MANIFEST).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PatchifyEcho<'a> {
    config: &'a RunConfig,
    written: usize,
    skipped: usize,
}

fn cmd_patchify(
    manifest: &Path,
    out: &Path,
    skip_existing: bool,
    args: &ConfigArgs,
) -> CliResult<()> {
    let cfg = resolve_config(args, None)?;
    let manifest = load_manifest(manifest, &cfg)?;
    create_dir(out)?;
    let results: Vec<bool> = manifest
        .entries
        .par_iter()
        .map(|e| -> exdd::Result<bool> {
            if skip_existing && grid_path(out, &e.image_id).exists() {
                return Ok(false);
            }
            let run = || -> exdd::Result<()> {
                let maps = load_feature_maps(&manifest, e, &cfg.patch.levels)?;
                let grid = patchify(&maps, &cfg.patch, e.image_size())?;
                write_patch_grid(out, &e.image_id, &grid, &cfg.patch)
            };
            run().map_err(|err| err.for_image(&e.image_id))?;
            Ok(true)
        })
        .collect::<exdd::Result<_>>()?;
    let written = results.iter().filter(|w| **w).count();
    let echo = PatchifyEcho {
        config: &cfg,
        written,
        skipped: results.len() - written,
    };
    write_json(&out.join("patchify.json"), &echo)?;
    println!("patchify: {written} written, {} skipped", echo.skipped);
    Ok(())
}

fn cmd_build_bank(
    manifest: &Path,
    out: &Path,
    grids: &Option<PathBuf>,
    args: &ConfigArgs,
) -> CliResult<()> {
    let cfg = resolve_config(args, None)?;
    let manifest = load_manifest(manifest, &cfg)?;
    let build = build_bank_pair(&manifest, &cfg, &grid_source(grids))?;
    if let Some(reason) = &build.positive_skipped {
        eprintln!("warning: positive bank not built ({reason}); writing a negative-only bank pair");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let crc = save_bank_pair(&build.pair, out)?;
    let pair = &build.pair;
    println!(
        "negative: M={} of {} (rate {}), covering radius {}",
        pair.negative.len(),
        pair.negative.source_count,
        pair.negative.subsample_rate,
        pair.negative.covering_radius
    );
    match &pair.positive {
        Some(p) => println!(
            "positive: M={} of {} (rate {}), covering radius {}",
            p.len(),
            p.source_count,
            p.subsample_rate,
            p.covering_radius
        ),
        None => println!("positive: none"),
    }
    println!("bank: {} crc32 {crc:08x}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoredImage<'a> {
    image_id: &'a str,
    label: u8,
    #[serde(flatten)]
    record: ScoreRecord,
}

#[derive(Serialize)]
struct ScoresFile<'a> {
    config: &'a RunConfig,
    scores: Vec<ScoredImage<'a>>,
}

fn bank_and_config(bank: &Path, args: &ConfigArgs) -> CliResult<(BankPair, RunConfig)> {
    let pair = load_bank_pair(bank)?;
    let cfg = resolve_config(args, Some(&pair.config))?;
    Ok((pair, cfg))
}

fn cmd_score(
    manifest: &Path,
    bank: &Path,
    out: &Path,
    grids: &Option<PathBuf>,
    args: &ConfigArgs,
) -> CliResult<()> {
    let (pair, cfg) = bank_and_config(bank, args)?;
    let manifest = load_manifest(manifest, &cfg)?;
    let source = grid_source(grids);
    let opts = ScoreOptions::from(&cfg);
    opts.check_banks(&pair)?;
    let entries: Vec<_> = manifest.with_role(Role::Test).collect();
    let records = entries
        .par_iter()
        .map(|e| {
            let run = || -> exdd::Result<ScoreRecord> {
                let grid = load_patch_grid(&manifest, e, &pair.patch, &source)?;
                score_image(&to_bank_space(&grid, &pair)?, &pair, &opts)
            };
            run().map_err(|err| match err {
                exdd::Error::Image { .. } => err,
                other => other.for_image(&e.image_id),
            })
        })
        .collect::<exdd::Result<Vec<_>>>()?;
    let scores = entries
        .iter()
        .zip(records)
        .map(|(e, record)| ScoredImage {
            image_id: &e.image_id,
            label: e.label,
            record,
        })
        .collect();
    write_json(
        out,
        &ScoresFile {
            config: &cfg,
            scores,
        },
    )?;
    println!("score: {} images -> {}", entries.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct MapInfo {
    image_id: String,
    map: String,
    size: [usize; 2],
    grid: [usize; 2],
    max: f32,
    sigma: f32,
    epsilon: f32,
}

#[derive(Serialize)]
struct LocalizeFile<'a> {
    config: &'a RunConfig,
    maps: Vec<MapInfo>,
}

fn cmd_localize(
    manifest: &Path,
    bank: &Path,
    out: &Path,
    heatmap: bool,
    grids: &Option<PathBuf>,
    args: &ConfigArgs,
) -> CliResult<()> {
    let (pair, cfg) = bank_and_config(bank, args)?;
    let manifest = load_manifest(manifest, &cfg)?;
    create_dir(out)?;
    let source = grid_source(grids);
    let opts = ScoreOptions::from(&cfg);
    opts.check_banks(&pair)?;
    let entries: Vec<_> = manifest.with_role(Role::Test).collect();
    let maps = entries
        .par_iter()
        .map(|e| {
            let run = || -> exdd::Result<MapInfo> {
                let grid = load_patch_grid(&manifest, e, &pair.patch, &source)?;
                let map = localize_image(&to_bank_space(&grid, &pair)?, &pair, &opts, cfg.sigma)?;
                let name = format!("{}.etf", e.image_id);
                write_etf(&map.to_tensor(), out.join(&name))?;
                if heatmap {
                    map.write_pgm(out.join(format!("{}.pgm", e.image_id)))?;
                }
                Ok(MapInfo {
                    image_id: e.image_id.clone(),
                    map: name,
                    size: [map.height, map.width],
                    grid: [map.grid_height, map.grid_width],
                    max: map.values.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                    sigma: map.sigma,
                    epsilon: map.epsilon,
                })
            };
            run().map_err(|err| match err {
                exdd::Error::Image { .. } => err,
                other => other.for_image(&e.image_id),
            })
        })
        .collect::<exdd::Result<Vec<_>>>()?;
    write_json(
        &out.join("localize.json"),
        &LocalizeFile { config: &cfg, maps },
    )?;
    println!("localize: {} maps -> {}", entries.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    manifest: &Path,
    bank: &Option<PathBuf>,
    out: &Path,
    csv: &Option<PathBuf>,
    sweep: &Option<Vec<usize>>,
    grids: &Option<PathBuf>,
    args: &ConfigArgs,
) -> CliResult<()> {
    let source = grid_source(grids);
    if let Some(counts) = sweep {
        let cfg = resolve_config(args, None)?;
        let manifest = load_manifest(manifest, &cfg)?;
        let counts = if counts.is_empty() {
            DEFAULT_SWEEP.to_vec()
        } else {
            counts.clone()
        };
        let report = augmentation_sweep(&manifest, &manifest, &cfg, &source, &counts)?;
        write_json(out, &report)?;
        for c in &report.columns {
            println!(
                "augmented {:>4}: I-AUROC {:.4}  P-AUROC {}",
                c.augmented_count,
                c.i_auroc,
                c.p_auroc.map_or("n/a".to_string(), |p| format!("{p:.4}"))
            );
        }
        return Ok(());
    }
    let bank = bank
        .as_ref()
        .ok_or_else(|| CliError::Usage("eval needs --bank unless --sweep is given".into()))?;
    let (pair, cfg) = bank_and_config(bank, args)?;
    let manifest = load_manifest(manifest, &cfg)?;
    let report = evaluate(&manifest, &pair, &cfg, &source)?;
    write_json(out, &report)?;
    if let Some(path) = csv {
        fs::write(path, scores_csv(&report)).map_err(|e| CliError::Data(io_err(path, e)))?;
    }
    println!(
        "I-AUROC {:.4}  P-AUROC {}",
        report.i_auroc,
        report
            .p_auroc
            .map_or("n/a".to_string(), |p| format!("{p:.4}"))
    );
    Ok(())
}

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Fixtures { spec, out, cfg } => cmd_fixtures(spec, out, cfg),
        Command::Patchify {
            manifest,
            out,
            skip_existing,
            cfg,
        } => cmd_patchify(manifest, out, *skip_existing, cfg),
        Command::BuildBank {
            manifest,
            out,
            grids,
            cfg,
        } => cmd_build_bank(manifest, out, grids, cfg),
        Command::Score {
            manifest,
            bank,
            out,
            grids,
            cfg,
        } => cmd_score(manifest, bank, out, grids, cfg),
        Command::Localize {
            manifest,
            bank,
            out,
            heatmap,
            grids,
            cfg,
        } => cmd_localize(manifest, bank, out, *heatmap, grids, cfg),
        Command::Eval {
            manifest,
            bank,
            out,
            csv,
            sweep,
            grids,
            cfg,
        } => cmd_eval(manifest, bank, out, csv, sweep, grids, cfg),
    }
}

/// Runs a parsed command on a dedicated worker pool.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| dispatch(&cli.command))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
