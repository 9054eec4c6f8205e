use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prism_core::backend::{BackendSpec, DenoiseBackend, RemoteConfig};
use prism_core::imagecore::{load_mask, save_image, save_mask};
use prism_core::pipeline::{
    emit_report, evaluate_manifest, generate_dataset, plan_sample, render_sample, run_ablation, run_noise_sweep,
    run_noise_type_study, synthetic_dendrite, write_config_echo, JobConfig, NoiseMean, Report, ResolvedStyle,
    RunOptions, StyleSource, Treatment, CONFIG_ECHO_FILE, REPORT_CSV,
};
use prism_core::prism::{apply_prism, ChromaMode, NoiseKind};
use prism_core::{Error, Result};

const EXIT_PARTIAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "prism", version, about = "Style binary masks and turn them into synthetic images with img2img diffusion")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Style one mask (and optionally run img2img on it).
    Apply(ApplyArgs),
    /// Generate a dataset from a job config.
    Generate {
        #[command(flatten)]
        job: JobArgs,
        /// Replace an existing run in the output directory.
        #[arg(long, conflicts_with = "resume")]
        force: bool,
        /// Continue an interrupted run, skipping completed samples.
        #[arg(long)]
        resume: bool,
    },
    /// Sweep the noise standard deviation.
    Sweep {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
    },
    /// Run the none / noise-only / chroma-only / noise+chroma ablation.
    Ablate {
        #[command(flatten)]
        job: JobArgs,
    },
    /// Compare noise kinds by input and output entropy.
    NoiseStudy {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long, value_delimiter = ',', default_value = "gaussian,salt_pepper,perlin")]
        kinds: Vec<NoiseKind>,
    },
    /// Score the completed samples of a manifest.
    Eval(EvalArgs),
    /// Render CSV and SVG plots from a saved report.json.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic dendrite masks.
    SynthMasks {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct JobArgs {
    /// Job config, TOML or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Use the remote backend at this URL instead of the configured one.
    #[arg(long)]
    backend_url: Option<String>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    mask: PathBuf,
    /// `random` or a reference image.
    #[arg(long, default_value = "random")]
    style: String,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value = "gaussian")]
    noise: NoiseKind,
    /// Noise mean when not set in the config: zero or the style mean.
    #[arg(long, value_parser = ["zero", "style"])]
    noise_mean: Option<String>,
    #[arg(long, default_value = "pixel_shuffle")]
    chroma: ChromaMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also run img2img on the styled image.
    #[arg(long)]
    diffuse: bool,
    /// Job config supplying diffusion and backend settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Reference image directory; enables FID.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    nfid_normalizer: Option<f64>,
    /// Job config; defaults to the config echo next to the manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the metrics JSON; defaults to eval.json next to the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Apply(args) => apply(args),
        Command::Generate { job, force, resume } => {
            let cfg = job.load()?;
            let backend = build_backend(&cfg)?;
            let manifest = generate_dataset(&cfg, backend.as_ref(), RunOptions { force, resume })?;
            let ids: BTreeSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
            let done = manifest.completed_ids();
            let missing = ids.len() - done.len();
            println!(
                "{} of {} samples ok, {missing} failed; manifest {}",
                done.len(),
                ids.len(),
                manifest.path.display()
            );
            Ok(if missing > 0 { Outcome::Partial } else { Outcome::Done })
        }
        Command::Sweep { job, sigmas } => {
            let cfg = job.load()?;
            let backend = build_backend(&cfg)?;
            let report = run_noise_sweep(&cfg, &sigmas, backend.as_ref())?;
            finish_study(&cfg, Report::Sweep(report))
        }
        Command::Ablate { job } => {
            let cfg = job.load()?;
            let backend = build_backend(&cfg)?;
            let report = run_ablation(&cfg, backend.as_ref())?;
            finish_study(&cfg, Report::Ablation(report))
        }
        Command::NoiseStudy { job, kinds } => {
            let cfg = job.load()?;
            let backend = build_backend(&cfg)?;
            let report = run_noise_type_study(&cfg, &kinds, backend.as_ref())?;
            finish_study(&cfg, Report::NoiseType(report))
        }
        Command::Eval(args) => eval(args),
        Command::Report { input, out } => {
            let files = emit_report(&Report::read(&input)?, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(Outcome::Done)
        }
        Command::SynthMasks { out, count, size, seed } => {
            if size == 0 || count == 0 {
                return Err(Error::Config("count and size must be positive".into()));
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for i in 0..count {
                let path = out.join(format!("dendrite_{i:04}.png"));
                save_mask(&synthetic_dendrite(size, size, seed + i as u64), &path)?;
            }
            println!("wrote {count} masks to {}", out.display());
            Ok(Outcome::Done)
        }
    }
}

impl JobArgs {
    fn load(&self) -> Result<JobConfig> {
        let mut cfg = JobConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(url) = &self.backend_url {
            cfg.backend = BackendSpec::Remote(RemoteConfig::new(url.clone()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn build_backend(cfg: &JobConfig) -> Result<Box<dyn DenoiseBackend>> {
    let backend = cfg.backend.build()?;
    log::info!("backend {}", backend.model_id());
    Ok(backend)
}

fn finish_study(cfg: &JobConfig, report: Report) -> Result<Outcome> {
    write_config_echo(cfg, &cfg.output_dir)?;
    emit_report(&report, &cfg.output_dir)?;
    println!("{}", cfg.output_dir.join(REPORT_CSV).display());
    Ok(Outcome::Done)
}

fn apply(args: ApplyArgs) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    cfg.masks = vec![args.mask.clone()];
    cfg.style = StyleSource::from(args.style.as_str());
    cfg.noise.kind = args.noise;
    cfg.noise.sigma = args.sigma;
    cfg.chroma.mode = args.chroma;
    cfg.seed = args.seed;
    cfg.samples_per_mask = 1;
    cfg.output_dir = args.out.clone();
    match args.noise_mean.as_deref() {
        Some("style") => cfg.noise_mean = NoiseMean::Style,
        Some(_) => cfg.noise_mean = NoiseMean::Zero,
        None => {}
    }
    cfg.validate()?;

    let mask = load_mask(&args.mask, cfg.mask_threshold)?;
    let style = ResolvedStyle::resolve(&cfg.style)?;
    let plan = plan_sample(&cfg, 0, 0);
    let stem = args.mask.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_config_echo(&cfg, &args.out)?;

    let styled = apply_prism(&mask, &style.for_sample(&mask, plan.seeds.style), &plan.noise, &plan.chroma)?;
    let styled_path = args.out.join(format!("{stem}_prism.png"));
    save_image(&styled, &styled_path)?;
    println!("{}", styled_path.display());
    if args.diffuse {
        let backend = build_backend(&cfg)?;
        let sched = cfg.schedule.build()?;
        let rendered = render_sample(&mask, &plan, &style, Treatment::FULL, backend.as_ref(), &sched)?;
        let out_path = args.out.join(format!("{stem}_generated.png"));
        save_image(&rendered.output, &out_path)?;
        println!("{}", out_path.display());
    }
    Ok(Outcome::Done)
}

fn eval(args: EvalArgs) -> Result<Outcome> {
    let manifest_dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let echo = manifest_dir.join(CONFIG_ECHO_FILE);
    let mut cfg = match &args.config {
        Some(path) => JobConfig::load(path)?,
        None if echo.exists() => JobConfig::load(&echo)?,
        None => JobConfig::default(),
    };
    if let Some(reference) = &args.reference {
        cfg.eval.fid = true;
        cfg.eval.reference = Some(reference.clone());
    }
    if args.nfid_normalizer.is_some() {
        cfg.eval.nfid_normalizer = args.nfid_normalizer;
    }
    cfg.validate()?;
    let backend = build_backend(&cfg)?;
    let metrics = evaluate_manifest(&args.manifest, &cfg.eval, cfg.mask_threshold, cfg.seed, backend.as_ref())?;
    let out = args.out.unwrap_or_else(|| manifest_dir.join("eval.json"));
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(&out, &(json.clone() + "\n"))?;
    let echo_out = out.with_file_name("eval-config.json");
    write_file(&echo_out, &(cfg.to_json() + "\n"))?;
    println!("{json}");
    Ok(Outcome::Done)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
