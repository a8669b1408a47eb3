//! `arch`: data preparation, training, sampling, editing, detailisation,
//! metrics, clean-up and the HTTP service from one binary.
//!
//! Every generation command goes through [`arch_core::pipeline::Models`],
//! the same code path the service's jobs use.

mod overlay;
mod plan;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use arch_core::dataprep::{prepare_corpus, DatasetManifest, PrepOptions, Split, SynthConfig, DEFAULT_CONFIG};
use arch_core::metrics::novelty_histogram;
use arch_core::pipeline::{evaluate, point_sets, Models, Shape};
use arch_core::prior::{Half, PriorConfig, PriorTrainer, SamplingParams, TokenSequence, DESK_PRIOR, FULL_PRIOR};
use arch_core::upsampler::{level_pairs, DetailOptions, UpsamplerConfig, UpsamplerTrainer, DESK_UPSAMPLER, FULL_UPSAMPLER};
use arch_core::voxcore::{clean_up, read_vxg1, write_vxg1, VoxelGrid, DEFAULT_CLEAN_ITERATIONS};
use arch_core::vqgan::{VqganConfig, DESK_CONFIG, FULL_CONFIG};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use plan::read_plan;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser, Debug)]
#[command(name = "arch", version, about = "Voxel house generation: prepare data, train, sample, edit, detailise and evaluate")]
pub struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file of `key = value` overrides for the `prep` or `train` configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long, global = true, env = "ARCH_CKPT_DIR", default_value = "checkpoints")]
    pub ckpt_dir: PathBuf,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus: meshes, stage-1 grids, chunk hierarchies, manifest.
    Prep(PrepArgs),
    /// Train one network from the corpus and write its checkpoint.
    Train(TrainArgs),
    /// Sample new stage-1 shapes from the prior.
    Sample(SampleArgs),
    /// Complete a grid from one kept half.
    Complete(CompleteArgs),
    /// Complete from a top-view floor plan image.
    #[command(name = "plan-complete")]
    PlanComplete(PlanArgs),
    /// Uniform token crossover of two shapes.
    Interpolate(InterpolateArgs),
    /// Swap-mutation variations of one shape.
    Vary(VaryArgs),
    /// Upsample a grid through the diffusion levels.
    Detailise(DetailArgs),
    /// Remove floating and sticking voxels.
    Clean(CleanArgs),
    /// COV / MMD / 1-NNA (plus UHD / TMD and novelty) between two grid directories.
    Metrics(MetricsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Corpus directory to write.
    #[arg(long, default_value = "corpus")]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub models: usize,
    /// Stage-1 grid side.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Chunks sampled per model.
    #[arg(long, default_value_t = 20)]
    pub chunks: usize,
    /// Fraction of models held out for validation and again for test.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Vqgan,
    Prior,
    Upsampler,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub stage: Stage,
    /// Upsampler level (required for `upsampler`).
    #[arg(long, required_if_eq("stage", "upsampler"), value_parser = clap::value_parser!(u8).range(1..=3))]
    pub level: Option<u8>,
    /// Corpus directory written by `prep`.
    #[arg(long, default_value = "corpus")]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Sampling {
    /// Keep the k most likely tokens; defaults to the prior's setting.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f32,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=4096))]
    pub count: u64,
    #[command(flatten)]
    pub sampling: Sampling,
    /// Output directory.
    #[arg(long, default_value = "samples")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompleteArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Half to keep; the other half is resampled.
    #[arg(long, value_parser = parse_half)]
    pub half: Half,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub sampling: Sampling,
    #[arg(long, default_value = "completions")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// R x R PNG (dark below 50% gray is filled) or PBM; top row is the far (+y) edge.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub sampling: Sampling,
    #[arg(long, default_value = "plan_completions")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value = "interpolated.vxg")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VaryArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Token swaps per variation.
    #[arg(long, default_value_t = 128)]
    pub swaps: usize,
    #[arg(long, default_value = "variations")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetailArgs {
    pub input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub level: u8,
    #[arg(long, default_value_t = 100)]
    pub ddim_steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Output file; defaults to `<input>.l<level>.vxg`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CleanArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLEAN_ITERATIONS)]
    pub iters: usize,
    /// Output file; defaults to `<input>.clean.vxg`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Partial input the generated grids complete; adds UHD and TMD.
    #[arg(long)]
    pub partial: Option<PathBuf>,
    /// Nearest reference shapes listed per generated shape.
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value = "metrics")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Model store and journal.
    #[arg(long, env = "ARCH_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "ARCH_PORT", default_value_t = arch_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "ARCH_WORKERS", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
}

fn parse_half(s: &str) -> Result<Half, String> {
    s.parse().map_err(|e: arch_core::prior::PriorError| e.to_string())
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.config.is_some() && !matches!(cli.command, Command::Prep(_) | Command::Train(_)) {
        eprintln!("error: --config applies to `prep` and `train` only\n\nFor more information, try '--help'.");
        return 2;
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), BoxError> {
    match &cli.command {
        Command::Prep(a) => prep(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Complete(a) => complete(cli, a),
        Command::PlanComplete(a) => plan_complete(cli, a),
        Command::Interpolate(a) => interpolate(cli, a),
        Command::Vary(a) => vary(cli, a),
        Command::Detailise(a) => detail(cli, a),
        Command::Clean(a) => clean(a),
        Command::Metrics(a) => metrics(cli, a),
        Command::Serve(a) => serve(cli, a),
    }
}

fn prep(cli: &Cli, a: &PrepArgs) -> Result<(), BoxError> {
    let synth: SynthConfig = overlay::load(DEFAULT_CONFIG, cli.config.as_deref(), SynthConfig::from_toml)?;
    let opts = PrepOptions {
        models: a.models,
        resolution: a.resolution,
        chunks_per_model: a.chunks,
        seed: cli.seed,
        holdout_fraction: a.holdout,
        synth,
    };
    let m = prepare_corpus(&a.data_dir, &opts)?;
    let chunks: usize = m.models.iter().map(|e| e.chunks).sum();
    println!("{} models, {chunks} chunk sets -> {}", m.models.len(), a.data_dir.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), BoxError> {
    let manifest = DatasetManifest::load(&a.data_dir)?;
    let ckpt = &cli.ckpt_dir;
    let full = a.preset == Preset::Full;
    match a.stage {
        Stage::Vqgan => {
            let base = if full { FULL_CONFIG } else { DESK_CONFIG };
            let mut cfg: VqganConfig = overlay::load(base, cli.config.as_deref(), VqganConfig::from_toml)?;
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            let grids = manifest.load_grids(&a.data_dir, Split::Train)?;
            let mut t = arch_core::vqgan::Trainer::new(cfg)?;
            t.fit(&grids, |l| {
                log::info!("epoch {} step {} recon {:.4} usage {:.2}", l.epoch, l.step, l.losses.reconstruction, l.codebook_usage);
                true
            })?;
            let iou = arch_core::vqgan::reconstruction_iou(&t.model, &grids)?;
            arch_core::vqgan::save_checkpoint(ckpt, &t)?;
            println!("vqgan: {} epochs, train reconstruction IoU {iou:.3} -> {}", t.epoch, ckpt.display());
        }
        Stage::Prior => {
            let base = if full { FULL_PRIOR } else { DESK_PRIOR };
            let mut cfg: PriorConfig = overlay::load(base, cli.config.as_deref(), PriorConfig::from_toml)?;
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            let models = Models::load(ckpt)?;
            let grids = manifest.load_grids(&a.data_dir, Split::Train)?;
            let seqs = grids.iter().map(|g| models.tokens_of(g)).collect::<Result<Vec<_>, _>>()?;
            let mut t = PriorTrainer::new(cfg)?;
            t.fit(&seqs, |l| {
                log::info!("epoch {} step {} loss {:.4} lr {:.2e}", l.epoch, l.step, l.loss, l.lr);
                true
            })?;
            let acc = arch_core::prior::teacher_forced_accuracy(&t.gpt, &seqs);
            arch_core::prior::save_prior(ckpt, &t)?;
            println!("prior: {} epochs, teacher-forced accuracy {acc:.3} -> {}", t.epoch, ckpt.display());
        }
        Stage::Upsampler => {
            let level = a.level.ok_or("train upsampler needs --level")? as usize;
            let base = if full { FULL_UPSAMPLER } else { DESK_UPSAMPLER };
            let mut cfg: UpsamplerConfig = overlay::load(base, cli.config.as_deref(), UpsamplerConfig::from_toml)?;
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            let chunks = manifest.load_chunks(&a.data_dir, Split::Train)?;
            let pairs = level_pairs(&chunks, level)?;
            if pairs.is_empty() {
                return Err("corpus has no training chunks; run prep with --chunks > 0".into());
            }
            let mut t = UpsamplerTrainer::new(level, cfg)?;
            let logs = t.fit(&pairs, |l| {
                log::info!("level {} epoch {} step {} loss {:.4}", l.level, l.epoch, l.step, l.loss);
                true
            })?;
            arch_core::upsampler::save_upsampler(ckpt, &t)?;
            let last = logs.last().map(|l| l.loss).unwrap_or(f32::NAN);
            println!("upsampler level {level}: {} pairs, {} epochs, final loss {last:.4} -> {}", pairs.len(), t.epoch, ckpt.display());
        }
    }
    Ok(())
}

/// Sibling file holding a grid's tokens.
pub fn tokens_path(grid: &Path) -> PathBuf {
    grid.with_extension("tokens.json")
}

fn read_shape(path: &Path) -> Result<Shape, BoxError> {
    let grid = read_vxg1(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let tp = tokens_path(path);
    let tokens = if tp.exists() { Some(TokenSequence::from_json(&std::fs::read_to_string(&tp)?)?) } else { None };
    Ok(Shape { grid, tokens })
}

fn write_shape(path: &Path, s: &Shape) -> Result<(), BoxError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_vxg1(path, &s.grid)?;
    if let Some(t) = &s.tokens {
        std::fs::write(tokens_path(path), t.to_json())?;
    }
    println!("{}", path.display());
    Ok(())
}

fn write_all(dir: &Path, stem: &str, shapes: &[Shape]) -> Result<(), BoxError> {
    for (i, s) in shapes.iter().enumerate() {
        write_shape(&dir.join(format!("{stem}_{i:03}.vxg")), s)?;
    }
    Ok(())
}

fn sampling(models: &Models, s: &Sampling, seed: u64) -> Result<SamplingParams, BoxError> {
    let top_k = match s.top_k {
        Some(k) => k,
        None => models.prior()?.config.top_k,
    };
    Ok(SamplingParams { top_k, temperature: s.temperature, seed })
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let params = sampling(&models, &a.sampling, cli.seed)?;
    let shapes = models.generate(a.count as usize, &params, &mut |_| ())?;
    write_all(&a.out, "sample", &shapes)
}

fn complete(cli: &Cli, a: &CompleteArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let params = sampling(&models, &a.sampling, cli.seed)?;
    let grid = read_vxg1(&a.input)?;
    let mask = models.half_mask(a.half)?;
    let shapes = models.complete(&grid, &mask, a.k, &params, &mut |_| ())?;
    write_all(&a.out, "completion", &shapes)
}

fn plan_complete(cli: &Cli, a: &PlanArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let params = sampling(&models, &a.sampling, cli.seed)?;
    let r = models.resolution().ok_or("no vqgan checkpoint loaded")?;
    let plan = read_plan(&a.plan, r)?;
    let (partial, shapes) = models.plan_complete(&plan, a.k, &params, &mut |_| ())?;
    write_shape(&a.out.join("partial.vxg"), &Shape { grid: partial, tokens: None })?;
    write_all(&a.out, "completion", &shapes)
}

fn interpolate(cli: &Cli, a: &InterpolateArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let child = models.interpolate(&read_shape(&a.a)?, &read_shape(&a.b)?, cli.seed)?;
    write_shape(&a.out, &child)
}

fn vary(cli: &Cli, a: &VaryArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let shapes = models.vary(&read_shape(&a.input)?, a.n, a.swaps, cli.seed)?;
    write_all(&a.out, "variation", &shapes)
}

/// `dir/name.vxg` -> `dir/name.<tag>.vxg`.
pub fn sibling(input: &Path, tag: &str) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}.{tag}.vxg"))
}

fn detail(cli: &Cli, a: &DetailArgs) -> Result<(), BoxError> {
    let models = Models::load(&cli.ckpt_dir)?;
    let grid = read_vxg1(&a.input)?;
    let level = a.level as usize;
    let opts = DetailOptions { batch_size: a.batch_size, seed: cli.seed, ddim_steps: a.ddim_steps, soft_chain: false };
    let fine = models.detailise(&grid, level, &opts, &mut |p| log::debug!("level {} patches {}/{}", p.level, p.done, p.total))?;
    let out = a.out.clone().unwrap_or_else(|| sibling(&a.input, &format!("l{level}")));
    write_shape(&out, &Shape { grid: fine, tokens: None })
}

fn clean(a: &CleanArgs) -> Result<(), BoxError> {
    let grid = read_vxg1(&a.input)?;
    let cleaned = clean_up(&grid, a.iters);
    let out = a.out.clone().unwrap_or_else(|| sibling(&a.input, "clean"));
    log::info!("removed {} voxels", grid.occupied_count() - cleaned.occupied_count());
    write_shape(&out, &Shape { grid: cleaned, tokens: None })
}

/// Every `.vxg` directly inside `dir`, sorted by name.
pub fn read_dir_grids(dir: &Path) -> Result<Vec<(PathBuf, VoxelGrid)>, BoxError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vxg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no .vxg files in {}", dir.display()).into());
    }
    paths.into_iter().map(|p| Ok((p.clone(), read_vxg1(&p)?))).collect()
}

fn metrics(cli: &Cli, a: &MetricsArgs) -> Result<(), BoxError> {
    let generated: Vec<VoxelGrid> = read_dir_grids(&a.generated)?.into_iter().map(|(_, g)| g).collect();
    let reference: Vec<VoxelGrid> = read_dir_grids(&a.reference)?.into_iter().map(|(_, g)| g).collect();
    let partial = a.partial.as_deref().map(read_vxg1).transpose()?;
    let report = evaluate(&generated, &reference, partial.as_ref(), cli.seed)?;
    let g = point_sets(&generated, cli.seed)?;
    let r = point_sets(&reference, cli.seed.wrapping_add(generated.len() as u64))?;
    let novelty = novelty_histogram(&g, &r, a.top_n, a.bins)?;
    std::fs::create_dir_all(&a.out)?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(a.out.join("report.json"), &json)?;
    std::fs::write(a.out.join("report.csv"), report.to_csv())?;
    std::fs::write(a.out.join("novelty.csv"), novelty.rows_csv())?;
    std::fs::write(a.out.join("novelty_histogram.csv"), novelty.histogram_csv())?;
    println!("{json}");
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<(), BoxError> {
    let mut config = arch_service::ServiceConfig::from_env()?;
    config.data_dir = a.data_dir.clone();
    config.ckpt_dir = cli.ckpt_dir.clone();
    config.port = a.port;
    config.workers = a.workers as usize;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(arch_service::serve(config))
}
