use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use lidkit_core::augment::{augment_manifest, Resources};
use lidkit_core::backend::{fit_backend, BackendModel};
use lidkit_core::data::{read_manifest, write_embeddings, ScoreMatrix, TrialLabels};
use lidkit_core::fewshot::{fewshot_data_file, run_fewshot_experiment, FewshotConfig};
use lidkit_core::fusion::{fuse_scores, train_fusion, FusionModel};
use lidkit_core::gradcheck::run_suite;
use lidkit_core::metrics::{format_fixed, render_table, MetricReport};
use lidkit_core::model_io::{load_model, save_model};
use lidkit_core::pipeline::{run_evaluate, run_pipeline, PipelineConfig, SplitPaths};
use lidkit_core::synthetic::{splits, ClassCounts, SyntheticSpec};
use serde::Serialize;
use serde_json::json;

use crate::config::{languages_in_manifest, load, require_languages, Section};
use crate::{
    AugmentArgs, CalibrateArgs, Cli, Command, EvaluateArgs, FewshotArgs, FuseArgs, GradcheckArgs, PipelineArgs,
    ScoreArgs, SynthArgs, TrainArgs,
};

pub const AUGMENT_LOG_FILE: &str = "augment_log.jsonl";
pub const FEWSHOT_DATA_FILE: &str = "fewshot.dat";

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let (stage, result) = match &cli.command {
        Command::Augment(a) => ("augment", augment(cli, a)),
        Command::TrainBackend(a) => ("train-backend", train_backend(cli, a)),
        Command::Score(a) => ("score", score(cli, a)),
        Command::Calibrate(a) => ("calibrate", calibrate(cli, a)),
        Command::Fuse(a) => ("fuse", fuse(cli, a)),
        Command::Evaluate(a) => ("evaluate", evaluate(cli, a)),
        Command::Gradcheck(a) => ("gradcheck", gradcheck(cli, a)),
        Command::Fewshot(a) => ("fewshot", fewshot(cli, a)),
        Command::Pipeline(a) => ("pipeline", pipeline(cli, a)),
        Command::Synth(a) => ("synth", synth(cli, a)),
    };
    result.context(stage)
}

fn config(cli: &Cli, section: Section) -> Result<PipelineConfig> {
    load(cli, section).context("config")
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn out_path(cli: &Cli, explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => {
            fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
            Ok(cli.out_dir.join(default))
        }
    }
}

fn split(manifest: &Path, embeddings: &Option<PathBuf>) -> SplitPaths {
    let mut paths = SplitPaths::from_manifest(manifest);
    if let Some(e) = embeddings {
        paths.embeddings = e.clone();
    }
    paths
}

fn read_scores(paths: &[PathBuf]) -> Result<Vec<ScoreMatrix>> {
    paths
        .iter()
        .map(|p| ScoreMatrix::read(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn augment(cli: &Cli, args: &AugmentArgs) -> Result<ExitCode> {
    let config = config(cli, Section::Augment)?;
    let languages = match &config.languages {
        Some(l) => l.clone(),
        None => languages_in_manifest(&args.manifest).context("load")?,
    };
    let utts = read_manifest(&args.manifest, &languages)
        .with_context(|| format!("load: {}", args.manifest.display()))?;
    let resources = Resources::load(&config.augment).context("load resources")?;
    let base = args.manifest.parent().unwrap_or(Path::new(""));
    let log = augment_manifest(&utts, base, &config.augment, &resources, &cli.out_dir).context("augment")?;
    let log_path = cli.out_dir.join(AUGMENT_LOG_FILE);
    let mut text = String::new();
    for entry in &log {
        text.push_str(&serde_json::to_string(entry)?);
        text.push('\n');
    }
    fs::write(&log_path, text).with_context(|| format!("write: {}", log_path.display()))?;
    if cli.json {
        print_json(&json!({ "outputs": log.len(), "log": log_path }))?;
    } else {
        println!("augmented {} utterances; plans in {}", log.len(), log_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn train_backend(cli: &Cli, args: &TrainArgs) -> Result<ExitCode> {
    let config = config(cli, Section::Backend)?;
    let languages = require_languages(&config).context("config")?;
    let train = split(&args.train, &args.embeddings).load(languages).context("load")?;
    let fit = fit_backend(&train, languages, &config.backend).context("fit")?;
    warn_all(&fit.warnings);
    let out = out_path(cli, &args.out, "backend.json")?;
    save_model(&fit.model, &out).context("write")?;
    let stages: Vec<String> = fit.stages.iter().map(|s| format!("{s:?}").to_lowercase()).collect();
    if cli.json {
        print_json(&json!({ "model": out, "stages": stages, "warnings": fit.warnings }))?;
    } else {
        println!("stages: {}", stages.join(" -> "));
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn score(cli: &Cli, args: &ScoreArgs) -> Result<ExitCode> {
    let model: BackendModel = load_model(&args.model).context("load model")?;
    let set = split(&args.manifest, &args.embeddings).load(&model.languages).context("load")?;
    let scores = model.score(&set).context("score")?;
    let out = out_path(cli, &args.out, "scores.tsv")?;
    scores.write(&out).context("write")?;
    if cli.json {
        print_json(&json!({ "scores": out, "trials": scores.n_trials() }))?;
    } else {
        println!("scored {} trials; wrote {}", scores.n_trials(), out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<ExitCode> {
    let config = config(cli, Section::Fusion)?;
    let systems = read_scores(&args.scores).context("load")?;
    let utts = read_manifest(&args.labels, systems[0].languages())
        .with_context(|| format!("load: {}", args.labels.display()))?;
    let labels = TrialLabels::from_utterances(&utts, systems[0].n_languages()).context("load")?;
    let trained = train_fusion(&systems, &labels, &config.fusion).context("train")?;
    if !trained.optimum.converged() {
        eprintln!("warning: optimizer stopped with status {:?}", trained.optimum.status);
    }
    let out = out_path(cli, &args.out, "calibration.json")?;
    save_model(&trained.model, &out).context("write")?;
    if cli.json {
        print_json(&json!({
            "model": out,
            "cllr_initial": trained.initial_cllr,
            "cllr_trained": trained.trained_cllr,
            "iterations": trained.optimum.iterations,
        }))?;
    } else {
        println!(
            "dev Cllr {} -> {} bits",
            format_fixed(trained.initial_cllr, 4),
            format_fixed(trained.trained_cllr, 4)
        );
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn fuse(cli: &Cli, args: &FuseArgs) -> Result<ExitCode> {
    let model: FusionModel = load_model(&args.model).context("load model")?;
    let systems = read_scores(&args.scores).context("load")?;
    let fused = fuse_scores(&model, &systems).context("fuse")?;
    let out = out_path(cli, &args.out, "fused.tsv")?;
    fused.write(&out).context("write")?;
    if cli.json {
        print_json(&json!({ "scores": out, "trials": fused.n_trials() }))?;
    } else {
        println!("fused {} systems over {} trials; wrote {}", systems.len(), fused.n_trials(), out.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct NamedReport {
    name: String,
    report: MetricReport,
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<ExitCode> {
    let mut config = config(cli, Section::Metrics)?;
    if let Some(p) = args.p_target {
        config.metrics.p_target = p;
        config.metrics.validate().context("config")?;
    }
    let p_target = config.metrics.p_target;
    let mut rows = Vec::new();
    for path in &args.scores {
        let report = run_evaluate(path, &args.labels, p_target)?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push(NamedReport { name, report });
    }
    if cli.json {
        print_json(&json!({ "p_target": p_target, "systems": rows }))?;
    } else {
        let table: Vec<(&str, &MetricReport)> = rows.iter().map(|r| (r.name.as_str(), &r.report)).collect();
        print!("{}", render_table(&table));
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<ExitCode> {
    if args.instances == 0 {
        bail!("--instances must be >= 1");
    }
    if !(args.step > 0.0 && args.step.is_finite()) {
        bail!("--step must be > 0");
    }
    let rows = run_suite(cli.seed.unwrap_or(0), args.instances, args.step);
    let all_passed = rows.iter().all(|r| r.passed());
    if cli.json {
        let rows: Vec<_> = rows
            .iter()
            .map(|r| json!({
                "name": r.name,
                "instances": r.instances,
                "max_rel_error": r.max_rel_error,
                "max_rel_error_double": r.max_rel_error_double,
                "threshold": r.threshold,
                "passed": r.passed(),
            }))
            .collect();
        print_json(&json!({ "step": args.step, "passed": all_passed, "checks": rows }))?;
    } else {
        println!("{:<18}  {:>9}  {:>12}  {:>12}  {:>9}  result", "check", "instances", "max rel err", "f64 only", "threshold");
        for r in &rows {
            println!(
                "{:<18}  {:>9}  {:>12.3e}  {:>12.3e}  {:>9.0e}  {}",
                r.name,
                r.instances,
                r.max_rel_error,
                r.max_rel_error_double,
                r.threshold,
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        eprintln!("error: gradcheck: failed checks: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

fn fewshot(cli: &Cli, args: &FewshotArgs) -> Result<ExitCode> {
    let config = config(cli, Section::Backend)?;
    if args.n_seeds == 0 {
        bail!("--n-seeds must be >= 1");
    }
    let experiment = FewshotConfig {
        spec: SyntheticSpec {
            n_languages: args.n_languages,
            dim: args.dim,
            counts: ClassCounts::Uniform(args.pool),
            class_separation: args.separation,
            noise_scale: args.noise,
            seed: config.seed,
        },
        sizes: args.sizes.clone(),
        seeds: (config.seed..config.seed + args.n_seeds).collect(),
        test_per_class: args.test_per_class,
        backend: config.backend.clone(),
        p_target: config.metrics.p_target,
    };
    let rows = run_fewshot_experiment(&experiment).context("experiment")?;
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("write: {}", cli.out_dir.display()))?;
    let data = cli.out_dir.join(FEWSHOT_DATA_FILE);
    fs::write(&data, fewshot_data_file(&rows)).with_context(|| format!("write: {}", data.display()))?;
    if cli.json {
        print_json(&json!({ "data_file": data, "rows": rows }))?;
    } else {
        println!("{:>5}  {:>6}  {:>6}  {:>7}", "size", "EER", "Cavg", "minCavg");
        for r in &rows {
            println!(
                "{:>5}  {:>6}  {:>6}  {:>7}",
                r.size,
                format_fixed(r.eer_percent, 2),
                format_fixed(r.c_avg, 4),
                format_fixed(r.min_c_avg, 4)
            );
        }
        println!("wrote {}", data.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn pipeline(cli: &Cli, args: &PipelineArgs) -> Result<ExitCode> {
    let config = config(cli, Section::Full)?;
    let (run, files) = run_pipeline(
        &config,
        &SplitPaths::from_manifest(&args.train),
        &SplitPaths::from_manifest(&args.dev),
        &SplitPaths::from_manifest(&args.test),
        &cli.out_dir,
    )?;
    warn_all(&run.warnings);
    if cli.json {
        print_json(&json!({
            "stages": run.stages,
            "raw": run.raw_report,
            "calibrated": run.report,
            "warnings": run.warnings,
            "files": files,
        }))?;
    } else {
        println!("stages: {}", run.stages.join(" -> "));
        print!("{}", render_table(&[("raw", &run.raw_report), ("calibrated", &run.report)]));
        println!("wrote {} files to {}", files.len(), cli.out_dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        n_languages: args.n_languages,
        dim: args.dim,
        counts: ClassCounts::Uniform(args.train_per_class),
        class_separation: args.separation,
        noise_scale: args.noise,
        seed: cli.seed.unwrap_or(0),
    };
    if args.eval_per_class == 0 {
        bail!("--eval-per-class must be >= 1");
    }
    let sets = splits(&spec, args.eval_per_class).context("generate")?;
    let languages = spec.languages();
    let dir = &cli.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("write: {}", dir.display()))?;
    let names: String = languages.names().iter().map(|n| format!("{n}\n")).collect();
    fs::write(dir.join("languages.txt"), names).context("write")?;
    for (name, set) in ["train", "dev", "test"].iter().zip(&sets) {
        let labels = set.labels().expect("generated sets are labelled");
        let mut manifest = fs::File::create(dir.join(format!("{name}.jsonl"))).context("write")?;
        for (id, &y) in set.ids().iter().zip(labels) {
            writeln!(manifest, "{}", json!({ "id": id, "label": languages.name(y) }))?;
        }
        write_embeddings(set, dir.join(format!("{name}.emb"))).context("write")?;
    }
    let config = PipelineConfig { languages: Some(languages), seed: spec.seed, ..PipelineConfig::default() };
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    fs::write(dir.join("config.json"), text).context("write")?;
    if cli.json {
        print_json(&json!({ "dir": dir, "spec": spec }))?;
    } else {
        println!("wrote synthetic corpus to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}
