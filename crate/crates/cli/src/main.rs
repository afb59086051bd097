use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use histofuse::framecls::{classify_frame, ClassifierParams};
use histofuse::fusion::{fuse_tissue, tissue_label, FusionRuleSet};
use histofuse::imgio::{
    argmax, read_instances, read_label_png, read_pmap, write_instances, write_label_png, write_pmap,
    LabelMap,
};
use histofuse::nucfuse::{border_correct, majority_vote_classify, BorderParams, VoteParams};
use histofuse::panmetrics::{format_percent, MetricReport};
use histofuse::par;
use histofuse::pipeline::{
    eval_metric, eval_report, run_pipeline_with, synth_fixtures, Defects, EvalOptions, MetricKind,
    PipelineConfig, SynthSpec,
};
use histofuse::rescue::{necrosis_rescue, RescueParams};
use histofuse::schemes::{Registry, PUMA_EXT11, PUMA_TISSUE6};
use histofuse::{Error, Result};

#[derive(Parser)]
#[command(name = "histofuse", version, about = "Auto-context tissue and nuclei fusion for histology model outputs")]
struct Cli {
    /// Extra class scheme definitions (JSON), usable wherever a scheme id is expected.
    #[arg(long = "scheme-file", global = true, value_name = "FILE")]
    scheme_files: Vec<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide primary vs metastatic from an extended 11-class tissue map.
    Classify(ClassifyArgs),
    /// Fuse SegFormer and U-Net tissue scores.
    Fuse(FuseArgs),
    /// Classify nuclei instances by majority vote and correct the border band.
    Nuclei(NucleiArgs),
    /// Copy stage-1 necrosis regions that overlap the stage-4 prediction.
    Rescue(RescueArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the full pipeline over a manifest.
    Pipeline(PipelineArgs),
    /// Generate a synthetic manifest with ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ClassifyInput {
    /// Extended tissue scores; argmax is taken internally.
    #[arg(long)]
    pmap: Option<PathBuf>,
    /// Extended tissue labels as a 16-bit PNG.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: ClassifyInput,
    #[arg(long, default_value_t = 1)]
    epidermis_min_pixels: u64,
    /// Decide by pixel majority alone.
    #[arg(long)]
    no_epidermis_rule: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    segformer: PathBuf,
    #[arg(long)]
    unet: PathBuf,
    /// Preset (`default`, `unet_vessel`, `segformer_only`) or a JSON rule file.
    #[arg(long, default_value = "default")]
    rules: String,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the argmax label map.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct NucleiArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    inst_classes: PathBuf,
    /// Semantic class map, either scores (`.pmap`) or labels (`.png`).
    #[arg(long)]
    classmap: PathBuf,
    #[arg(long, default_value_t = 16)]
    margin: usize,
    /// Skip border correction.
    #[arg(long)]
    no_border: bool,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, alias = "o-classes")]
    out_classes: PathBuf,
}

#[derive(Args)]
struct RescueArgs {
    #[arg(long)]
    stage1: PathBuf,
    #[arg(long)]
    stage4: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "necrosis")]
    class: String,
    #[arg(long, default_value = PUMA_TISSUE6)]
    scheme: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMetric {
    Dice,
    F1,
    Pq,
    Micropq,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(value_enum)]
    metric: EvalMetric,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Scheme of the tissue label PNGs.
    #[arg(long, default_value = PUMA_TISSUE6)]
    scheme: String,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frames processed concurrently; 1 runs everything on the calling thread.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    nuclei: usize,
    #[arg(long, default_value_t = 2)]
    track: u8,
    /// Comma-separated: border, necrosis, noise, vessel, routing, or all.
    #[arg(long, default_value = "")]
    defects: String,
    #[arg(short, long)]
    out: PathBuf,
}

fn registry(files: &[PathBuf]) -> Result<Registry> {
    let mut reg = Registry::builtin();
    for f in files {
        reg.register_file(f)?;
    }
    Ok(reg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push(b'\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn classify(reg: &Registry, args: ClassifyArgs) -> Result<()> {
    let labels = match (&args.input.pmap, &args.input.labels) {
        (Some(p), _) => argmax(&read_pmap(p, reg)?),
        (None, Some(l)) => read_label_png(l, reg.get(PUMA_EXT11)?)?,
        (None, None) => return Err(Error::Usage("give --pmap or --labels".into())),
    };
    let params = ClassifierParams {
        epidermis_min_pixels: args.epidermis_min_pixels,
        epidermis_rule: !args.no_epidermis_rule,
    };
    println!("{}", classify_frame(&labels, &params)?);
    Ok(())
}

fn fuse(reg: &Registry, args: FuseArgs) -> Result<()> {
    let rules = FusionRuleSet::from_name_or_path(&args.rules)?;
    let fused = fuse_tissue(&read_pmap(&args.segformer, reg)?, &read_pmap(&args.unet, reg)?, &rules)?;
    write_pmap(&fused, &args.out)?;
    if let Some(path) = &args.labels {
        write_label_png(&tissue_label(&fused), path)?;
    }
    Ok(())
}

fn read_classmap(path: &Path, reg: &Registry, scheme_id: &str) -> Result<LabelMap> {
    if path.extension().is_some_and(|e| e == "pmap") {
        let map = read_pmap(path, reg)?;
        Ok(argmax(&map))
    } else {
        read_label_png(path, reg.get(scheme_id)?)
    }
}

fn nuclei(reg: &Registry, args: NucleiArgs) -> Result<()> {
    let inst = read_instances(&args.instances, &args.inst_classes, reg)?;
    let classmap = read_classmap(&args.classmap, reg, inst.scheme().id())?;
    let mut out = majority_vote_classify(&inst, &classmap, &VoteParams::default())?;
    if !args.no_border {
        out = border_correct(&out, &classmap, &BorderParams { margin: args.margin })?;
    }
    write_instances(&out, &args.out, &args.out_classes)?;
    println!("{} instances", out.len());
    Ok(())
}

fn rescue(reg: &Registry, args: RescueArgs) -> Result<()> {
    let scheme = reg.get(&args.scheme)?;
    let target_class = scheme.index_of(&args.class).ok_or_else(|| {
        Error::Usage(format!("class `{}` is not in scheme `{}`", args.class, scheme.id()))
    })?;
    let s1 = read_label_png(&args.stage1, scheme.clone())?;
    let s4 = read_label_png(&args.stage4, scheme)?;
    let params = RescueParams {
        enabled: true,
        target_class,
    };
    write_label_png(&necrosis_rescue(&s1, &s4, &params)?, &args.out)
}

fn print_metric(r: &MetricReport) {
    println!("{}: {}", r.metric, format_percent(r.aggregate));
    for (class, v) in &r.per_class {
        println!("  {class}: {}", format_percent(*v));
    }
    if !r.excluded.is_empty() {
        println!("  excluded: {}", r.excluded.join(", "));
    }
}

fn eval(reg: &Registry, args: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        tissue_scheme: args.scheme,
        radius: args.radius,
        iou_threshold: args.iou,
    };
    let exec = par::Exec::auto();
    let kind = match args.metric {
        EvalMetric::Dice => MetricKind::Dice,
        EvalMetric::F1 => MetricKind::F1,
        EvalMetric::Pq => MetricKind::Pq,
        EvalMetric::Micropq => MetricKind::MicroPq,
        EvalMetric::All => {
            let report = eval_report(exec, &args.pred, &args.gt, &opts, reg)?;
            for r in [&report.micro_dice, &report.detection_f1, &report.pq, &report.micro_pq]
                .into_iter()
                .flatten()
            {
                print_metric(r);
            }
            if let Some(m) = report.mean_track_score {
                println!("mean: {}", format_percent(m));
            }
            if let Some(path) = &args.report {
                write_json(path, &report)?;
            }
            return Ok(());
        }
    };
    let report = eval_metric(exec, kind, &args.pred, &args.gt, &opts, reg)?;
    print_metric(&report);
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn pipeline(reg: &Registry, args: PipelineArgs) -> Result<()> {
    if args.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let config = PipelineConfig::load(&args.config)?;
    let report = par::with_jobs(args.jobs, |exec| run_pipeline_with(exec, &config, reg, &args.out))?;
    println!("{} frames, config {}", report.frames.len(), &report.config_hash[..12]);
    let m = &report.metrics;
    if let Some(d) = &m.micro_dice {
        println!("micro dice: {}", format_percent(d.aggregate));
    }
    if let Some(f) = &m.detection_f1 {
        println!("detection f1: {}", format_percent(f.aggregate));
    }
    if let Some(mean) = m.mean_track_score {
        println!("mean: {}", format_percent(mean));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        frames: args.frames,
        size: args.size,
        nuclei: args.nuclei,
        track: args.track,
        defects: args.defects.parse::<Defects>()?,
    };
    let config = synth_fixtures(args.seed, &spec, &args.out)?;
    println!("{}", config.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let reg = registry(&cli.scheme_files)?;
    match cli.command {
        Command::Classify(a) => classify(&reg, a),
        Command::Fuse(a) => fuse(&reg, a),
        Command::Nuclei(a) => nuclei(&reg, a),
        Command::Rescue(a) => rescue(&reg, a),
        Command::Eval(a) => eval(&reg, a),
        Command::Pipeline(a) => pipeline(&reg, a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
