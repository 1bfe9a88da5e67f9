use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use viewmerge::denoiser::{sample_ddim, write_loss_log, ModelWeights};
use viewmerge::experiments::{
    self as exp, ablate_background, ablate_linear_weights, ablate_multiview, background_trend, multiview_trend,
    pretrain_base, run_experiment, stage, write_ablation, write_csv, ExperimentManifest, Method, TrialSetup,
};
use viewmerge::lora::{alignment, load_adapter, load_weights, save_adapter, save_weights};
use viewmerge::merge::{merge_linear, write_merge_log, MergeGates, MergeMode};
use viewmerge::metrics::MetricReport;
use viewmerge::scenegen::{io::read_pgm, io::write_data, io::write_pgm, pretrain_split};

const BASE_FILE: &str = "base.model";
const VIEW_FILE: &str = "view.lora";
const OBJECT_FILE: &str = "object.lora";
const GATES_FILE: &str = "gates.bin";
const LINEAR_FILE: &str = "linear.lora";

#[derive(Parser)]
#[command(name = "viewmerge", version, about = "Train, merge and evaluate view and object adapters on a toy diffusion model")]
struct Cli {
    /// Experiment manifest (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Trial seed; replaces the manifest's seed list with this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Working directory for checkpoints, adapters, images and CSVs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the pretraining split and one trial's concept splits as PGM files.
    GenerateData {
        /// Skip the (large) pretraining split.
        #[arg(long)]
        concept_only: bool,
    },
    /// Pretrain the base denoiser.
    Pretrain,
    /// Train the view adapter on the trial's single view shot.
    TrainView,
    /// Train the object adapter on the trial's object shots.
    TrainObject,
    /// Merge the two adapters.
    Merge {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Weight on the view adapter for the linear merge.
        #[arg(long, default_value_t = 0.5)]
        w: f32,
    },
    /// Sample the transfer prompt with one method.
    Sample {
        #[arg(long, value_enum, default_value_t = MethodArg::Gated)]
        method: MethodArg,
        #[arg(long, default_value_t = 0.5)]
        w: f32,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score sample images in the output directory against the held-out render.
    Evaluate,
    /// Run every trial of the manifest end to end.
    Run,
    /// Ablation studies.
    Ablate {
        #[arg(value_enum)]
        study: StudyArg,
    },
    /// Column-alignment of the trained view and object adapters.
    DiagnoseAlignment {
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Gated,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Base,
    View,
    Object,
    Linear,
    Gated,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Linear,
    Multiview,
    Background,
}

struct Ctx {
    manifest: ExperimentManifest,
    out: PathBuf,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.manifest.seeds[0]
    }

    fn setup(&self) -> Result<TrialSetup> {
        Ok(TrialSetup::new(&self.manifest, 0, self.seed(), self.manifest.background)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn base(&self, stage_name: &str) -> Result<ModelWeights> {
        let path = self.path(BASE_FILE);
        load_weights(&path).with_context(|| {
            format!("stage {stage_name} failed: loading base checkpoint {} (run `pretrain` first)", path.display())
        })
    }

    fn adapter(&self, stage_name: &str, name: &str) -> Result<viewmerge::lora::LoraAdapter> {
        let path = self.path(name);
        load_adapter(&path).with_context(|| format!("stage {stage_name} failed: loading adapter {}", path.display()))
    }
}

fn load_manifest(cli: &Cli) -> Result<ExperimentManifest> {
    let mut manifest = match &cli.config {
        Some(path) => ExperimentManifest::load(path)
            .with_context(|| format!("stage config failed: reading {}", path.display()))?,
        None => ExperimentManifest::default(),
    };
    if let Some(seed) = cli.seed {
        manifest.seeds = vec![seed];
        manifest.ablation_seeds = vec![seed];
    }
    manifest.output_dir = Some(cli.out.clone());
    manifest.validate().context("stage config failed")?;
    Ok(manifest)
}

fn tagged<T>(stage_name: &str, r: viewmerge::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        viewmerge::Error::Stage { .. } => e,
        other => other.in_stage(stage_name),
    })
    .map_err(anyhow::Error::from)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let manifest = load_manifest(&cli)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx { manifest, out: cli.out.clone() };
    match cli.command {
        Command::GenerateData { concept_only } => generate_data(&ctx, concept_only),
        Command::Pretrain => pretrain_cmd(&ctx),
        Command::TrainView => {
            let base = ctx.base(stage::VIEW)?;
            let (adapter, log) = exp::train_view_adapter(&base, &ctx.manifest, &ctx.setup()?)?;
            tagged(stage::VIEW, save_adapter(&adapter, &ctx.path(VIEW_FILE)))?;
            tagged(stage::VIEW, write_loss_log(&ctx.path("view_loss.csv"), &log))?;
            println!("wrote {}", ctx.path(VIEW_FILE).display());
            Ok(())
        }
        Command::TrainObject => {
            let base = ctx.base(stage::OBJECT)?;
            let (adapter, log) = exp::train_object_adapter(&base, &ctx.manifest, &ctx.setup()?)?;
            tagged(stage::OBJECT, save_adapter(&adapter, &ctx.path(OBJECT_FILE)))?;
            tagged(stage::OBJECT, write_loss_log(&ctx.path("object_loss.csv"), &log))?;
            println!("wrote {}", ctx.path(OBJECT_FILE).display());
            Ok(())
        }
        Command::Merge { mode, w } => merge_cmd(&ctx, mode, w),
        Command::Sample { method, w, count } => sample_cmd(&ctx, method, w, count),
        Command::Evaluate => evaluate_cmd(&ctx),
        Command::Run => {
            let base = ctx.base("run")?;
            let report = run_experiment(&base, &ctx.manifest)?;
            for s in &report.summary {
                println!(
                    "{:<12} masked SSIM {:.3}  masked PSNR {:.2}  leak rate {:.2}",
                    s.method, s.mean_masked_ssim, s.mean_masked_psnr, s.leak_rate
                );
            }
            Ok(())
        }
        Command::Ablate { study } => ablate_cmd(&ctx, study),
        Command::DiagnoseAlignment { trials } => {
            let view = ctx.adapter("diagnose-alignment", VIEW_FILE)?;
            let object = ctx.adapter("diagnose-alignment", OBJECT_FILE)?;
            let report = tagged("diagnose-alignment", alignment(&view, &object, trials, ctx.seed()))?;
            tagged("diagnose-alignment", write_csv(&ctx.path("alignment.csv"), &report.layers))?;
            println!(
                "mean |cos| {:.4}  random baseline mean {:.4}  p95 {:.4}  exceeds baseline: {}",
                report.mean_abs_cos,
                report.baseline_mean,
                report.baseline_p95,
                report.exceeds_baseline()
            );
            Ok(())
        }
    }
}

fn generate_data(ctx: &Ctx, concept_only: bool) -> Result<()> {
    let pretrain = if concept_only {
        None
    } else {
        let mut spec = ctx.manifest.pretrain_data.clone();
        spec.grid = ctx.manifest.denoiser.grid;
        Some(tagged(stage::DATA, pretrain_split(&spec, ctx.manifest.pretrain.seed))?)
    };
    let setup = ctx.setup()?;
    let dir = ctx.path("data");
    let manifest = tagged(stage::DATA, write_data(&dir, pretrain.as_ref(), Some(&setup.splits)))?;
    println!("wrote {} images to {}", manifest.entries.len(), dir.display());
    Ok(())
}

fn pretrain_cmd(ctx: &Ctx) -> Result<()> {
    let (weights, log) = pretrain_base(&ctx.manifest)?;
    tagged(stage::PRETRAIN, save_weights(&weights, &ctx.path(BASE_FILE)))?;
    tagged(stage::PRETRAIN, write_loss_log(&ctx.path("pretrain_loss.csv"), &log))?;
    println!("wrote {} (fingerprint {:08x})", ctx.path(BASE_FILE).display(), weights.fingerprint());
    Ok(())
}

fn merge_cmd(ctx: &Ctx, mode: ModeArg, w: f32) -> Result<()> {
    let view = ctx.adapter(stage::MERGE, VIEW_FILE)?;
    let object = ctx.adapter(stage::MERGE, OBJECT_FILE)?;
    match mode {
        ModeArg::Linear => {
            let merged = tagged(stage::MERGE, merge_linear(&view, &object, w))?;
            tagged(stage::MERGE, save_adapter(&merged, &ctx.path(LINEAR_FILE)))?;
            println!("wrote {}", ctx.path(LINEAR_FILE).display());
        }
        ModeArg::Gated => {
            let base = ctx.base(stage::MERGE)?;
            let mut manifest = ctx.manifest.clone();
            manifest.merge.mode = MergeMode::Gated;
            let (gates, log) = exp::train_gates(&base, &manifest, &ctx.setup()?, &view, &object)?;
            tagged(stage::MERGE, gates.save(&ctx.path(GATES_FILE)))?;
            tagged(stage::MERGE, write_merge_log(&ctx.path("merge_log.csv"), &log))?;
            println!("wrote {}", ctx.path(GATES_FILE).display());
        }
    }
    Ok(())
}

fn method_of(arg: MethodArg, w: f32) -> Method {
    match arg {
        MethodArg::Base => Method::Base,
        MethodArg::View => Method::ViewOnly,
        MethodArg::Object => Method::ObjectOnly,
        MethodArg::Linear => Method::Linear(w),
        MethodArg::Gated => Method::Gated,
    }
}

fn sample_cmd(ctx: &Ctx, arg: MethodArg, w: f32, count: Option<usize>) -> Result<()> {
    let base = ctx.base(stage::SAMPLE)?;
    let setup = ctx.setup()?;
    let method = method_of(arg, w);
    let (view, object) = (ctx.adapter(stage::SAMPLE, VIEW_FILE)?, ctx.adapter(stage::SAMPLE, OBJECT_FILE)?);
    let gates = match method {
        Method::Gated => Some(
            MergeGates::load(&ctx.path(GATES_FILE))
                .with_context(|| format!("stage {} failed: loading gates {}", stage::SAMPLE, ctx.path(GATES_FILE).display()))?,
        ),
        _ => None,
    };
    let deltas = tagged(stage::SAMPLE, exp::method_deltas(method, &view, &object, gates.as_ref()))?;
    let prompt = tagged(stage::SAMPLE, setup.splits.tokens.transfer_prompt(setup.concept.novel_object))?;
    let dir = ctx.path("samples");
    std::fs::create_dir_all(&dir)?;
    let n = count.unwrap_or(ctx.manifest.samples_per_method);
    for k in 0..n {
        let seed = exp::sample_seed(setup.seed, k);
        let img = tagged(stage::SAMPLE, sample_ddim(&base, deltas.as_ref(), &prompt, ctx.manifest.sample_steps, seed))?;
        let path = dir.join(format!("{}-{k}.pgm", method.label()));
        tagged(stage::SAMPLE, write_pgm(&path, &img))?;
        println!("wrote {} ({prompt})", path.display());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRow {
    trial_id: String,
    object: String,
    view: String,
    mode: String,
    file: String,
    psnr: f64,
    ssim: f64,
    masked_psnr: f64,
    masked_ssim: f64,
}

fn evaluate_cmd(ctx: &Ctx) -> Result<()> {
    let setup = ctx.setup()?;
    let truth = &setup.splits.heldout;
    let dir = ctx.path("samples");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("stage {} failed: listing {} (run `sample` first)", stage::EVALUATE, dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("stage {} failed: no samples in {}", stage::EVALUATE, dir.display());
    }
    let mut rows = Vec::with_capacity(files.len());
    for f in &files {
        let img = tagged(stage::EVALUATE, read_pgm(f))?;
        let m = tagged(stage::EVALUATE, MetricReport::compute(&img, &truth.image, &truth.mask))?;
        println!("{:<28} masked SSIM {:.3}  masked PSNR {:.2}", file_name(f), m.masked_ssim, m.masked_psnr);
        let file = file_name(f);
        let mode = file.trim_end_matches(".pgm").rsplit_once('-').map_or(file.as_str(), |(m, _)| m).to_string();
        rows.push(EvalRow {
            trial_id: setup.trial_id.clone(),
            object: setup.concept.novel_object.name().into(),
            view: setup.concept.target_view.name(),
            mode,
            file,
            psnr: m.psnr,
            ssim: m.ssim,
            masked_psnr: m.masked_psnr,
            masked_ssim: m.masked_ssim,
        });
    }
    tagged(stage::EVALUATE, write_csv(&ctx.path("evaluation.csv"), &rows))?;
    tagged(stage::EVALUATE, write_pgm(&ctx.path("truth.pgm"), &truth.image))?;
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ablate_cmd(ctx: &Ctx, study: StudyArg) -> Result<()> {
    let base = ctx.base(stage::ABLATE)?;
    let m = &ctx.manifest;
    let dir = ctx.path("ablations");
    match study {
        StudyArg::Linear => {
            let rows = tagged(stage::ABLATE, ablate_linear_weights(&base, m, &m.sweep_weights))?;
            tagged(stage::ABLATE, write_ablation(&dir, "linear_weights", &rows, None))?;
            for r in &rows {
                println!(
                    "seed {} w {:.2}: vs view object {:.3}  vs novel object {:.3}",
                    r.seed, r.w_view, r.ssim_view_object, r.ssim_novel_object
                );
            }
        }
        StudyArg::Multiview => {
            let rows = tagged(stage::ABLATE, ablate_multiview(&base, m, &m.views_per_lora))?;
            let trend = multiview_trend(&rows);
            tagged(stage::ABLATE, write_ablation(&dir, "multiview", &rows, trend.as_ref()))?;
            for r in &rows {
                println!("seed {} views {:>2}: consistency {:.3}", r.seed, r.views_per_lora, r.consistency);
            }
            if let Some(t) = trend {
                println!("trend {}: {:.3} vs {:.3} -> {}", t.name, t.left, t.right, if t.holds { "holds" } else { "does not hold" });
            }
        }
        StudyArg::Background => {
            let rows = tagged(stage::ABLATE, ablate_background(&base, m, &m.ablation_backgrounds))?;
            let trend = background_trend(&rows);
            tagged(stage::ABLATE, write_ablation(&dir, "background", &rows, trend.as_ref()))?;
            for r in &rows {
                println!("seed {} {:<15} masked SSIM {:.3}", r.seed, r.background, r.masked_ssim);
            }
            if let Some(t) = trend {
                println!("trend {}: {:.3} vs {:.3} -> {}", t.name, t.left, t.right, if t.holds { "holds" } else { "does not hold" });
            }
        }
    }
    Ok(())
}
