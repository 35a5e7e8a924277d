//! `eomwatch`: run the detection pipeline stage by stage, or serve the
//! review API over its artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eomwatch_core::models::ModelKind;
use eomwatch_core::pipeline::{self, CvMode, RunConfig, StageMeta};
use eomwatch_core::raster::{CLOUD_MAX_PERCENT, VALID_FRACTION_MIN};
use eomwatch_core::synth::{NoiseStd, ResponseModel, SynthConfig};

#[derive(Parser)]
#[command(name = "eomwatch", version, about = "Detect digestate applications on agricultural parcels from Sentinel-2 time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Parcel polygons (GeoJSON). Defaults to the synthetic corpus in OUT/corpus.
    #[arg(long, global = true)]
    parcels: Option<PathBuf>,
    /// Application events (CSV: parcel_id,application_date,quantity).
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// Directory searched recursively for scene manifest.json files.
    #[arg(long, global = true)]
    scenes: Option<PathBuf>,
    /// Output directory for all stage artifacts.
    #[arg(long, global = true, env = "EOMWATCH_OUT", default_value = "eomwatch-out")]
    out: PathBuf,
    /// Maximum scene cloud percentage (inclusive).
    #[arg(long, global = true, default_value_t = CLOUD_MAX_PERCENT)]
    cloud_max: f64,
    /// Minimum share of valid parcel pixels per observation.
    #[arg(long, global = true, default_value_t = VALID_FRACTION_MIN)]
    valid_fraction_min: f64,
    /// Half-width of the observation window in days.
    #[arg(long, global = true, default_value_t = 30)]
    window_days: i64,
    #[arg(long, global = true, value_enum, default_value_t = ModelArg::All)]
    model: ModelArg,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Cross-validate inside the training split, or over all usable parcels.
    #[arg(long, global = true, value_enum, default_value_t = CvArg::Train)]
    cv: CvArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rf,
    Knn,
    Gb,
    Nn,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum CvArg {
    Train,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into OUT/corpus.
    Synth(SynthArgs),
    /// Per-parcel index series inside each observation window.
    Extract,
    /// Before/after feature vectors.
    Features,
    /// Stratified split, feature transform and model fitting.
    Train,
    /// Hold-out metrics, cross-validation and photo-interpretation statistics.
    Eval,
    /// Markdown/JSON report and distribution charts.
    Report,
    /// Extract through report in one go.
    Run,
    /// Serve the review API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    n_parcels: usize,
    #[arg(long, default_value_t = 0.5)]
    treated_fraction: f64,
    /// Gaussian noise std on every band, in reflectance.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Generate without the post-application response.
    #[arg(long)]
    null_response: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = eomwatch_service::DEFAULT_PORT)]
    port: u16,
    /// Directory with a built review UI, served at /.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn run_config(c: &Common) -> RunConfig {
    let mut cfg = RunConfig::new(&c.out);
    cfg.parcels = c.parcels.clone();
    cfg.events = c.events.clone();
    cfg.scenes = c.scenes.clone();
    cfg.cloud_max = c.cloud_max;
    cfg.valid_fraction_min = c.valid_fraction_min;
    cfg.window_days = c.window_days;
    cfg.seed = c.seed;
    cfg.models = match c.model {
        ModelArg::Rf => vec![ModelKind::Rf],
        ModelArg::Knn => vec![ModelKind::Knn],
        ModelArg::Gb => vec![ModelKind::Gb],
        ModelArg::Nn => vec![ModelKind::Nn],
        ModelArg::All => ModelKind::ALL.to_vec(),
    };
    cfg.cv = match c.cv {
        CvArg::Train => CvMode::Train,
        CvArg::Full => CvMode::Full,
    };
    cfg
}

fn check_inputs(cfg: &RunConfig) -> Result<(), String> {
    for path in [&cfg.parcels, &cfg.events, &cfg.scenes].into_iter().flatten() {
        if !path.exists() {
            return Err(format!("input {} does not exist", path.display()));
        }
    }
    Ok(())
}

fn print_meta(meta: &StageMeta) {
    let counts: Vec<String> = meta.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{:<8} {}  {}", meta.stage, &meta.config_hash[..12], counts.join(" "));
}

fn run(cli: Cli) -> Result<(), String> {
    let mut cfg = run_config(&cli.common);
    check_inputs(&cfg)?;
    let err = |e: eomwatch_core::Error| e.to_string();
    match cli.command {
        Command::Synth(a) => {
            cfg.synth = SynthConfig {
                n_parcels: a.n_parcels,
                treated_fraction: a.treated_fraction,
                noise: NoiseStd::uniform(a.noise),
                response: if a.null_response { ResponseModel::null() } else { ResponseModel::default() },
                ..SynthConfig::default()
            };
            print_meta(&pipeline::run_synth(&cfg).map_err(err)?);
        }
        Command::Extract => print_meta(&pipeline::run_extract(&cfg).map_err(err)?),
        Command::Features => print_meta(&pipeline::run_features(&cfg).map_err(err)?),
        Command::Train => print_meta(&pipeline::run_train(&cfg).map_err(err)?),
        Command::Eval => print_meta(&pipeline::run_eval(&cfg).map_err(err)?),
        Command::Report => {
            let meta = pipeline::run_report(&cfg).map_err(err)?;
            print_meta(&meta);
            report_to_stdout(&cfg)?;
        }
        Command::Run => {
            for meta in pipeline::run_all(&cfg).map_err(err)? {
                print_meta(&meta);
            }
            report_to_stdout(&cfg)?;
        }
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime
                .block_on(eomwatch_service::serve(cfg, a.port, a.static_dir))
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn report_to_stdout(cfg: &RunConfig) -> Result<(), String> {
    let path = cfg.stage_dir(pipeline::Stage::Report).join("report.md");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("\n{text}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
