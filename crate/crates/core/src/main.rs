use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hemofuse::data::generate_synthetic;
use hemofuse::fusion::PlanEvaluation;
use hemofuse::pipeline::{
    compare_manifests, run_pipeline, write_comparison, write_dca, RunConfig, Stage, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "hemofuse", version, about = "Multimodal PAWP prediction pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (config `out_dir` otherwise).
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Study directory (config `data_dir` otherwise).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Turn a stage on (repeatable).
    #[arg(long = "stage-on", value_name = "STAGE", global = true)]
    stage_on: Vec<Stage>,
    /// Turn a stage off (repeatable).
    #[arg(long = "stage-off", value_name = "STAGE", global = true)]
    stage_off: Vec<Stage>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic study into the data directory.
    Generate,
    /// Registration and uncertainty filtering.
    Preprocess,
    /// Everything up to graph-attention feature selection.
    SelectFeatures,
    /// Everything up to training the fusion plan.
    Train,
    /// Evaluate on the test split, reusing earlier checkpoints.
    Evaluate,
    /// Re-render the decision curve from the evaluation report.
    Dca,
    /// Every enabled stage from scratch.
    Run,
    /// Tabulate several runs side by side.
    Compare {
        /// Manifest files (`manifest.json`) of finished runs.
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
        /// Output prefix for `<prefix>.csv` and `<prefix>.svg`.
        #[arg(long, default_value = "comparison")]
        output: PathBuf,
    },
}

fn set_stage(cfg: &mut RunConfig, stage: Stage, on: bool) {
    let s = &mut cfg.stages;
    match stage {
        Stage::Registration => s.registration = on,
        Stage::Filtering => s.filtering = on,
        Stage::Mpca => s.mpca = on,
        Stage::Gat => s.gat = on,
        Stage::Fusion => s.fusion = on,
        Stage::Evaluation => s.evaluation = on,
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    for &s in &cli.stage_on {
        set_stage(&mut cfg, s, true);
    }
    for &s in &cli.stage_off {
        set_stage(&mut cfg, s, false);
    }
    cfg.resolve_seeds();
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let report = |m: hemofuse::pipeline::RunManifest| {
        for s in &m.stages {
            println!("{:<13} {:>8.2} s{}", s.stage.as_str(), s.seconds, if s.reused { "  (checkpoint)" } else { "" });
        }
        println!("manifest: {}", cfg.out_dir.join("manifest.json").display());
    };
    match cli.command {
        Command::Generate => {
            let summary = generate_synthetic(&cfg.synthetic, &cfg.data_dir)?;
            let positives = summary.labels.iter().filter(|&&l| l == 1).count();
            let corrupted = summary.corrupted.iter().filter(|&&c| c).count();
            println!(
                "wrote {} subjects ({positives} positive, {corrupted} corrupted) to {}",
                summary.labels.len(),
                cfg.data_dir.display()
            );
        }
        Command::Preprocess => report(run_pipeline(&cfg, Stage::Filtering, true)?),
        Command::SelectFeatures => report(run_pipeline(&cfg, Stage::Gat, true)?),
        Command::Train => report(run_pipeline(&cfg, Stage::Fusion, true)?),
        Command::Evaluate => report(run_pipeline(&cfg, Stage::Evaluation, true)?),
        Command::Run => {
            let manifest = run_pipeline(&cfg, Stage::Evaluation, false)?;
            if let Some(path) = &manifest.eval_report {
                let eval: PlanEvaluation = serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join(path))?)?;
                println!(
                    "{}: test AUROC {:.4} (segments {:.4} +/- {:.4}), accuracy {:.4}, MCC {:.4}",
                    eval.plan,
                    eval.overall.auroc,
                    eval.segment_auroc.mean,
                    eval.segment_auroc.std,
                    eval.overall.accuracy,
                    eval.overall.mcc
                );
            }
            report(manifest);
        }
        Command::Dca => {
            let path = cfg.out_dir.join("evaluation").join("eval_report.json");
            if !path.is_file() {
                report(run_pipeline(&cfg, Stage::Evaluation, true)?);
            }
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let eval: PlanEvaluation = serde_json::from_str(&text)?;
            let (csv, svg) = write_dca(&eval.overall.dca_curve, &cfg.out_dir.join("evaluation"), &eval.plan)?;
            println!("wrote {csv} and {svg} in {}", cfg.out_dir.join("evaluation").display());
        }
        Command::Compare { manifests, output } => {
            if manifests.len() < 2 {
                bail!("compare needs at least two manifests");
            }
            let rows = compare_manifests(&manifests)?;
            let csv = output.with_extension("csv");
            let svg = output.with_extension("svg");
            write_comparison(&rows, &csv, &svg)?;
            println!("{:<34} {:>8} {:>8} {:>8} {:>8} {:>9}", "plan", "AUROC", "std", "acc", "MCC", "dAUROC");
            for r in &rows {
                println!(
                    "{:<34} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>+9.4}",
                    r.label, r.auroc_mean, r.auroc_std, r.accuracy_mean, r.mcc_mean, r.delta_auroc
                );
            }
            println!("wrote {} and {}", csv.display(), svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
