//! `sasa`: generate scenes, train scorers, run samplers and benchmark them.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
//! invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sasa_core::evalmetrics::{aggregate, evaluate_scene, format_table, write_csv, RecallAverage};
use sasa_core::experiments::{
    generate_scene_set, load_scene_dir, point_descriptors, read_indices, run_bench, run_sampler,
    scene_score_seed, train_on_scenes, write_indices, BenchConfig, SampleDiagnostics, SamplerKind,
    SamplerSpec, ScoreSource, DEFAULT_HIDDEN_WIDTH, DEFAULT_ORACLE_NOISE,
};
use sasa_core::sceneio::{read_kitti_bin, scene_load, SceneGenConfig, SceneSample};
use sasa_core::scorer::{mlp_forward, SegTrainConfig};
use sasa_core::{Error, Mlp};

const DATA_DIR_ENV: &str = "SASA_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "sasa",
    version,
    about = "Semantics-guided point cloud down-sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene set with a manifest.
    Gen(GenArgs),
    /// Train a foreground scorer on a scene directory.
    Train(TrainArgs),
    /// Run one sampler on one scene or KITTI .bin file.
    Sample(SampleArgs),
    /// Compute metrics for saved sample indices.
    Eval(EvalArgs),
    /// Compare samplers across a scene directory.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory (defaults to $SASA_DATA_DIR).
    #[arg(long, env = DATA_DIR_ENV)]
    out: PathBuf,
    #[arg(long)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4096)]
    points: usize,
    #[arg(long, default_value_t = 8)]
    objects: usize,
    #[arg(long, default_value_t = 0.044)]
    fg_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    clutter: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Scene directory (defaults to $SASA_DATA_DIR).
    #[arg(long, env = DATA_DIR_ENV)]
    scenes: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10.0)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN_WIDTH)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1])]
    level_weights: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pos_weight: f64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// `oracle` (labels blended with noise) or `model:PATH`.
    #[arg(long)]
    scores: Option<String>,
    /// Uniform noise blended into oracle scores.
    #[arg(long, default_value_t = DEFAULT_ORACLE_NOISE)]
    noise: f64,
    /// Seed of the oracle noise streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// A native `.scene` file or a KITTI `.bin` file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_sampler)]
    sampler: SamplerKind,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_c: f64,
    #[command(flatten)]
    score: ScoreArgs,
    /// Index file, one selected index per line.
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON (defaults to `<out>.json`).
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    indices: PathBuf,
    /// Print the per-scene record as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scene directory (defaults to $SASA_DATA_DIR).
    #[arg(long, env = DATA_DIR_ENV)]
    scenes: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_sampler, default_values_t = [SamplerKind::Fps, SamplerKind::Sfps])]
    samplers: Vec<SamplerKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [4096usize, 512, 256])]
    levels: Vec<usize>,
    #[command(flatten)]
    score: ScoreArgs,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Micro-average recall over all boxes instead of per scene.
    #[arg(long)]
    micro: bool,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::BudgetRule(_) | Error::InvalidBudget { .. } => 1,
                Error::Invariant(_) => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sasa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Timestamps live only in this sidecar so the outputs stay reproducible.
fn append_log(path: &Path, line: &str) {
    use std::io::Write;
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
    {
        let _ = writeln!(f, "{} {line}", unix_time());
    }
}

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    if a.scenes == 0 {
        return Err(CliError::Usage("--scenes must be at least 1".into()));
    }
    let cfg = SceneGenConfig {
        n_points: a.points,
        n_objects: a.objects,
        foreground_fraction: a.fg_fraction,
        clutter_fraction: a.clutter,
        ..SceneGenConfig::default()
    };
    let manifest = generate_scene_set(&a.out, a.scenes, a.seed, &cfg)?;
    append_log(
        &a.out.join("gen.log"),
        &format!(
            "generated {} scenes seed {} hash {}",
            a.scenes, a.seed, manifest.config_hash
        ),
    );
    println!(
        "wrote {} scenes to {} (config hash {})",
        manifest.scenes.len(),
        a.out.display(),
        manifest.config_hash
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let scenes: Vec<SceneSample> = load_scene_dir(&a.scenes)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let cfg = SegTrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        level_weights: a.level_weights,
        rng_seed: a.seed,
        positive_class_weight: a.pos_weight,
    };
    let out = train_on_scenes(&scenes, a.hidden, &cfg)?;
    out.mlp.save(&a.out)?;
    let first = out.loss_history.first().copied().unwrap_or(f64::NAN);
    let last = out.loss_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained on {} scenes for {} epochs: loss {first:.6} -> {last:.6}; saved {}",
        scenes.len(),
        a.epochs,
        a.out.display()
    );
    Ok(())
}

enum ScoreChoice {
    Oracle,
    Model(Mlp),
}

fn parse_scores(spec: &Option<String>) -> CliResult<Option<ScoreChoice>> {
    match spec.as_deref() {
        None => Ok(None),
        Some("oracle") => Ok(Some(ScoreChoice::Oracle)),
        Some(s) => match s.strip_prefix("model:") {
            Some(path) => Ok(Some(ScoreChoice::Model(Mlp::load(Path::new(path))?))),
            None => Err(CliError::Usage(format!(
                "--scores must be 'oracle' or 'model:PATH', got '{s}'"
            ))),
        },
    }
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let is_kitti = a.input.extension().is_some_and(|e| e == "bin");
    if a.sampler.needs_scores() && a.score.scores.is_none() {
        return Err(CliError::Usage(format!(
            "sampler {} needs --scores",
            a.sampler
        )));
    }
    if is_kitti && a.score.scores.as_deref() == Some("oracle") {
        return Err(CliError::Usage(
            "oracle scores need a labelled .scene input, not a KITTI file".into(),
        ));
    }
    let choice = parse_scores(&a.score.scores)?;
    let (cloud, scene) = if is_kitti {
        (read_kitti_bin(&a.input)?, None)
    } else {
        let s = scene_load(&a.input)?;
        (s.cloud.clone(), Some(s))
    };
    let scores = match choice {
        None => None,
        Some(ScoreChoice::Model(mlp)) => Some(mlp_forward(&mlp, &point_descriptors(&cloud))?),
        Some(ScoreChoice::Oracle) => {
            let scene = scene.as_ref().expect("KITTI input rejected above");
            let seed = scene_score_seed(a.score.seed, scene.seed);
            Some(
                ScoreSource::Oracle {
                    noise: a.score.noise,
                }
                .scores(scene, seed)?,
            )
        }
    };
    let spec = SamplerSpec {
        kind: a.sampler,
        gamma: a.gamma,
        lambda_c: a.lambda_c,
        start_index: a.start,
    };
    let picks = run_sampler(&spec, &cloud, scores.as_ref(), a.budget)?;
    let all: Vec<usize> = picks
        .iter()
        .flat_map(|p| p.result.indices.iter().copied())
        .collect();
    write_indices(&a.out, &all)?;
    let diag: Vec<SampleDiagnostics> = picks
        .iter()
        .map(|p| SampleDiagnostics::new(p, a.budget, cloud.len()))
        .collect();
    let diag_path = a.diag.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    });
    let json = if diag.len() == 1 {
        serde_json::to_string_pretty(&diag[0])
    } else {
        serde_json::to_string_pretty(&diag)
    }
    .map_err(|e| CliError::Core(Error::Invariant(e.to_string())))?;
    std::fs::write(&diag_path, json + "\n").map_err(|e| Error::Io {
        path: diag_path.clone(),
        source: e,
    })?;
    println!(
        "selected {} of {} points -> {}",
        all.len(),
        cloud.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let scene = scene_load(&a.scene)?;
    let indices = read_indices(&a.indices)?;
    let name = a
        .scene
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let metrics = evaluate_scene(name, &indices, &scene.cloud, &scene.boxes)?;
    if a.json {
        let text = serde_json::to_string_pretty(&metrics)
            .map_err(|e| CliError::Core(Error::Invariant(e.to_string())))?;
        println!("{text}");
    } else {
        let report = aggregate(
            "indices",
            1,
            indices.len(),
            vec![metrics],
            RecallAverage::Macro,
        )?;
        print!("{}", format_table(&[report]));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    if let Some(k) = a.samplers.iter().find(|k| k.needs_scores()) {
        if a.score.scores.is_none() {
            return Err(CliError::Usage(format!(
                "sampler {k} needs --scores oracle or --scores model:PATH"
            )));
        }
    }
    let choice = parse_scores(&a.score.scores)?;
    let scenes = load_scene_dir(&a.scenes)?;
    let mut samplers = Vec::new();
    for &kind in &a.samplers {
        if kind.uses_gamma() {
            samplers.extend(
                a.gammas
                    .iter()
                    .map(|&g| SamplerSpec::new(kind).with_gamma(g)),
            );
        } else {
            samplers.push(SamplerSpec::new(kind));
        }
    }
    let scores = choice.map(|c| match c {
        ScoreChoice::Oracle => ScoreSource::Oracle {
            noise: a.score.noise,
        },
        ScoreChoice::Model(m) => ScoreSource::Model(m),
    });
    let cfg = BenchConfig {
        samplers,
        levels: a.levels,
        scores,
        seed: a.score.seed,
        averaging: if a.micro {
            RecallAverage::Micro
        } else {
            RecallAverage::Macro
        },
    };
    let reports = run_bench(&scenes, &cfg)?;
    print!("{}", format_table(&reports));
    if let Some(path) = a.csv {
        let file = std::fs::File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        write_csv(&reports, std::io::BufWriter::new(file))
            .map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}
