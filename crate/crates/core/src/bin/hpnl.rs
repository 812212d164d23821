use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hybrid_pn::config::{ExperimentConfig, Objective};
use hybrid_pn::datagen::{generate_benchmark, load_benchmark, save_benchmark, Benchmark};
use hybrid_pn::error::{Error, Result};
use hybrid_pn::experiment::{
    self, baseline_variants, evaluate, lambda_variants, loss_ablation_variants, outcomes_csv,
    summarize, summary_csv, sweep, Variant, VariantOutcome, LAMBDA_GRID,
};
use hybrid_pn::localize::{
    detections_to_ground_truth, format_detections, mean_average_precision, parse_detections,
    MapReport,
};
use hybrid_pn::model::{load_checkpoint, save_checkpoint, ModelParams};
use hybrid_pn::selftrain::{model_shape, pretrain, self_train, EpochLog, PseudoLabelAudit};

const BUILD_ID: &str = env!("HPNL_BUILD_ID");

#[derive(Parser)]
#[command(name = "hpnl", version, about = "Hybrid positive-negative self-training for action localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; flags below override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: <out-root>/<subcommand>-seed<N>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, env = "HPNL_OUT_ROOT", default_value = "runs", value_name = "DIR")]
    out_root: PathBuf,
    #[arg(long)]
    labeled_ratio: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// hybrid | target-negative | target-only | soft-pseudo | complementary
    #[arg(long)]
    objective: Option<Objective>,
    /// Worker threads (1 = single-threaded).
    #[arg(long, env = "HPNL_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory written by `generate`; generated in memory when absent.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic benchmark and write it as a dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised pre-training on the labeled split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Self-training from a pre-trained checkpoint (pre-trains first when absent).
    Selftrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// mAP tables for a checkpoint on the test split, or for a detection file
    /// against a ground-truth file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "PATH", conflicts_with = "detections")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "ground_truth")]
        detections: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "detections")]
        ground_truth: Option<PathBuf>,
    },
    /// Target only vs. target + negative vs. hybrid.
    AblateLosses {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Hybrid objective over a grid of positive thresholds.
    AblateLambda {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
        grid: Vec<f64>,
    },
    /// Hybrid vs. soft pseudo-label and complementary-label baselines.
    CompareBaselines {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Where the hidden ground truth of unlabeled snippets falls among the
    /// label subspaces, per self-training epoch.
    SubspaceAudit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Pretrain { .. } => "pretrain",
            Command::Selftrain { .. } => "selftrain",
            Command::Evaluate { .. } => "evaluate",
            Command::AblateLosses { .. } => "ablate-losses",
            Command::AblateLambda { .. } => "ablate-lambda",
            Command::CompareBaselines { .. } => "compare-baselines",
            Command::SubspaceAudit { .. } => "subspace-audit",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Pretrain { common, .. }
            | Command::Selftrain { common, .. }
            | Command::Evaluate { common, .. }
            | Command::AblateLosses { common, .. }
            | Command::AblateLambda { common, .. }
            | Command::CompareBaselines { common, .. }
            | Command::SubspaceAudit { common, .. } => common,
        }
    }
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = common.labeled_ratio {
        config.labeled_ratio = v;
    }
    if let Some(v) = common.lambda {
        config.lambda = v;
    }
    if let Some(v) = common.alpha {
        config.alpha = v;
    }
    if let Some(v) = common.objective {
        config.objective = v;
    }
    config.validate()?;
    Ok(config)
}

/// Run context: resolved config, output directory and the manifest fields
/// recorded alongside every artifact set.
struct Run {
    command: &'static str,
    config: ExperimentConfig,
    out: PathBuf,
    inputs: Vec<(&'static str, PathBuf)>,
    seeds: Vec<u64>,
    started: Instant,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_jsonl<T: serde::Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).expect("metrics serialize"));
            text.push('\n');
        }
        self.write(name, text)
    }

    fn finish(&self) -> Result<()> {
        let mut inputs = toml::Table::new();
        for (k, v) in &self.inputs {
            inputs.insert((*k).into(), v.display().to_string().into());
        }
        let mut manifest = toml::Table::new();
        manifest.insert("command".into(), self.command.into());
        manifest.insert("build_id".into(), BUILD_ID.into());
        manifest.insert(
            "version".into(),
            env!("CARGO_PKG_VERSION").into(),
        );
        manifest.insert(
            "seeds".into(),
            toml::Value::Array(self.seeds.iter().map(|&s| (s as i64).into()).collect()),
        );
        manifest.insert("inputs".into(), inputs.into());
        manifest.insert(
            "wall_time_seconds".into(),
            self.started.elapsed().as_secs_f64().into(),
        );
        let config: toml::Table = toml::from_str(&self.config.to_toml_string())
            .expect("config round-trips through toml");
        manifest.insert("config".into(), config.into());
        self.write("config.toml", self.config.to_toml_string())?;
        self.write(
            "manifest.toml",
            toml::to_string(&manifest).expect("manifest serializes"),
        )
    }
}

fn map_json(report: &MapReport) -> serde_json::Value {
    json!({
        "average_map": report.average,
        "map_per_tiou": report
            .thresholds
            .iter()
            .zip(&report.per_threshold)
            .map(|(t, m)| json!({"tiou": t, "map": m}))
            .collect::<Vec<_>>(),
        "classes_without_ground_truth": report
            .skipped
            .iter()
            .map(|e| match e {
                Error::EmptyGroundTruth { class } => *class,
                _ => 0,
            })
            .collect::<Vec<_>>(),
    })
}

fn map_csv(report: &MapReport) -> String {
    let mut out = String::from("tiou,map\n");
    for (t, m) in report.thresholds.iter().zip(&report.per_threshold) {
        out.push_str(&format!("{t:.2},{m:.6}\n"));
    }
    out.push_str(&format!("average,{:.6}\n", report.average));
    out
}

fn print_map(report: &MapReport) {
    for (t, m) in report.thresholds.iter().zip(&report.per_threshold) {
        println!("mAP@{t:.2}\t{:.2}", 100.0 * m);
    }
    println!("average\t{:.2}", 100.0 * report.average);
}

fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(
        "phase,epoch,learning_rate,total,labeled_target,labeled_negative,unlabeled_target,unlabeled_negative,unlabeled_positive,mask,pseudo_accuracy\n",
    );
    for l in logs {
        out.push_str(&format!(
            "{},{},{:.8},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            l.phase,
            l.epoch,
            l.learning_rate,
            l.loss.total,
            l.loss.labeled.target,
            l.loss.labeled.negative,
            l.loss.unlabeled.target,
            l.loss.unlabeled.negative,
            l.loss.unlabeled.positive,
            l.loss.mask,
            l.audit
                .map(|a| format!("{:.6}", a.pseudo_accuracy))
                .unwrap_or_default()
        ));
    }
    out
}

/// Loads the dataset directory, or generates the benchmark from the config.
fn dataset(run: &mut Run, data: &DataArgs) -> Result<Benchmark> {
    match &data.data {
        Some(dir) => {
            let (bench, dim, classes) = load_benchmark(dir)?;
            if dim != run.config.feature_dim {
                return Err(Error::bad_config(
                    "feature_dim",
                    format!("dataset has {dim}-d features, config says {}", run.config.feature_dim),
                ));
            }
            if classes != run.config.class_count {
                return Err(Error::bad_config(
                    "class_count",
                    format!("dataset has {classes} classes, config says {}", run.config.class_count),
                ));
            }
            run.inputs.push(("data", dir.clone()));
            Ok(bench)
        }
        None => generate_benchmark(&run.config),
    }
}

fn guard_inputs(out: &Path, inputs: &[&Option<PathBuf>]) -> Result<()> {
    let out_abs = std::path::absolute(out).unwrap_or_else(|_| out.to_path_buf());
    for input in inputs.iter().copied().flatten() {
        let abs = std::path::absolute(input).unwrap_or_else(|_| input.clone());
        if abs == out_abs || (abs.is_file() && abs.parent() == Some(out_abs.as_path())) {
            return Err(Error::bad_config(
                "out",
                format!("output directory {} would overwrite input {}", out.display(), input.display()),
            ));
        }
    }
    Ok(())
}

fn run_sweep(run: &Run, sweep_args: &SweepArgs, variants: &[Variant], audited: bool) -> Result<Vec<VariantOutcome>> {
    let seeds: Vec<u64> = (0..sweep_args.seeds).map(|k| run.config.seed + k).collect();
    let outcomes = sweep(&run.config, &seeds, variants, audited, |o| {
        eprintln!(
            "seed {} {:<18} average mAP {:6.2}  snippet acc {:.3}",
            o.seed,
            o.variant,
            100.0 * o.average_map,
            o.test_snippet_accuracy
        );
    })?;
    run.write_jsonl("metrics.jsonl", &outcomes)?;
    run.write("outcomes.csv", outcomes_csv(&outcomes))?;
    let summary = summarize(&outcomes);
    run.write("summary.csv", summary_csv(&summary))?;
    println!("variant\tseeds\tmean avg mAP\tstd");
    for s in &summary {
        println!(
            "{}\t{}\t{:.2}\t{:.2}",
            s.variant,
            s.seeds,
            100.0 * s.mean_average_map,
            100.0 * s.std_average_map
        );
    }
    Ok(outcomes)
}

fn execute(command: Command) -> Result<()> {
    let common = command.common().clone();
    let config = resolve_config(&common)?;
    if let Some(n) = common.threads {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let name = command.name();
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| common.out_root.join(format!("{name}-seed{}", config.seed)));
    let mut run = Run {
        command: name,
        out,
        inputs: common.config.iter().map(|p| ("config", p.clone())).collect(),
        seeds: vec![config.seed],
        config,
        started: Instant::now(),
    };

    let input_paths: Vec<&Option<PathBuf>> = match &command {
        Command::Pretrain { data, .. } => vec![&data.data],
        Command::Selftrain { data, checkpoint, .. } => vec![&data.data, checkpoint],
        Command::Evaluate {
            data,
            checkpoint,
            detections,
            ground_truth,
            ..
        } => vec![&data.data, checkpoint, detections, ground_truth],
        _ => vec![],
    };
    guard_inputs(&run.out, &input_paths)?;
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;

    match command {
        Command::Generate { .. } => {
            let bench = generate_benchmark(&run.config)?;
            save_benchmark(&run.out, &bench, run.config.feature_dim, run.config.class_count)?;
            let stats = json!({
                "labeled_videos": bench.labeled.len(),
                "unlabeled_videos": bench.unlabeled.len(),
                "test_videos": bench.test.len(),
                "test_instances": experiment::ground_truth(&bench.test).len(),
            });
            run.write("metrics.json", format!("{stats:#}\n"))?;
            println!("{stats:#}");
        }
        Command::Pretrain { data, .. } => {
            let bench = dataset(&mut run, &data)?;
            let (params, logs) = pretrain(&bench.labeled, &run.config)?;
            save_checkpoint(&params, &run.path("pretrained.ckpt"))?;
            let eval = evaluate(&params, &bench.test, &run.config)?;
            write_training_metrics(&run, &logs, &eval)?;
        }
        Command::Selftrain {
            data, checkpoint, ..
        } => {
            let bench = dataset(&mut run, &data)?;
            let mut logs = Vec::new();
            let start = match &checkpoint {
                Some(path) => {
                    run.inputs.push(("checkpoint", path.clone()));
                    load_checkpoint(path, model_shape(&run.config))?
                }
                None => {
                    let (params, pre_logs) = pretrain(&bench.labeled, &run.config)?;
                    logs.extend(pre_logs);
                    params
                }
            };
            let audit = (!bench.sealed.is_empty()).then_some(&bench.sealed as &dyn PseudoLabelAudit);
            let (params, self_logs) = self_train(&start, &bench.labeled, &bench.unlabeled, &run.config, audit)?;
            logs.extend(self_logs);
            save_checkpoint(&params, &run.path("selftrained.ckpt"))?;
            let eval = evaluate(&params, &bench.test, &run.config)?;
            write_training_metrics(&run, &logs, &eval)?;
        }
        Command::Evaluate {
            data,
            checkpoint,
            detections,
            ground_truth,
            ..
        } => {
            let report = match (detections, ground_truth) {
                (Some(det_path), Some(gt_path)) => {
                    let dets = parse_detections(&read_input(&det_path)?)?;
                    let gt = detections_to_ground_truth(&parse_detections(&read_input(&gt_path)?)?)?;
                    run.inputs.push(("detections", det_path));
                    run.inputs.push(("ground_truth", gt_path));
                    mean_average_precision(&dets, &gt, &run.config.tiou_grid, run.config.class_count)
                }
                _ => {
                    let path = checkpoint.ok_or_else(|| Error::MissingArtifact {
                        path: PathBuf::from("--checkpoint"),
                    })?;
                    let params: ModelParams = load_checkpoint(&path, model_shape(&run.config))?;
                    run.inputs.push(("checkpoint", path));
                    let bench = dataset(&mut run, &data)?;
                    let eval = evaluate(&params, &bench.test, &run.config)?;
                    run.write("detections.tsv", format_detections(&eval.detections))?;
                    eval.map
                }
            };
            run.write("metrics.json", format!("{:#}\n", map_json(&report)))?;
            run.write("map.csv", map_csv(&report))?;
            print_map(&report);
        }
        Command::AblateLosses { sweep, .. } => {
            run.seeds = seed_list(&run.config, &sweep);
            run_sweep(&run, &sweep, &loss_ablation_variants(), false)?;
        }
        Command::AblateLambda { sweep, grid, .. } => {
            run.seeds = seed_list(&run.config, &sweep);
            let outcomes = run_sweep(&run, &sweep, &lambda_variants(&grid), false)?;
            let mut csv = String::from("lambda,mean_average_map\n");
            for s in summarize(&outcomes) {
                let lambda = outcomes
                    .iter()
                    .find(|o| o.variant == s.variant)
                    .map(|o| o.lambda)
                    .unwrap_or_default();
                csv.push_str(&format!("{lambda:.2},{:.6}\n", s.mean_average_map));
            }
            run.write("lambda.csv", csv)?;
        }
        Command::CompareBaselines { sweep, .. } => {
            run.seeds = seed_list(&run.config, &sweep);
            run_sweep(&run, &sweep, &baseline_variants(), false)?;
        }
        Command::SubspaceAudit { sweep, .. } => {
            run.seeds = seed_list(&run.config, &sweep);
            let hybrid = vec![experiment::objective_variant(run.config.objective)];
            let outcomes = run_sweep(&run, &sweep, &hybrid, true)?;
            let mut csv = String::from(
                "seed,epoch,pseudo_accuracy,p_target,p_positive,p_ambiguous,p_negative,p_positive_given_mistake,p_ambiguous_given_mistake,p_negative_given_mistake,mean_positives,mean_negatives\n",
            );
            for o in &outcomes {
                for (epoch, a) in o.audits.iter().enumerate() {
                    let s = &a.subspaces;
                    csv.push_str(&format!(
                        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}\n",
                        o.seed,
                        epoch,
                        a.pseudo_accuracy,
                        s.target,
                        s.positive,
                        s.ambiguous,
                        s.negative,
                        s.positive_given_mistake,
                        s.ambiguous_given_mistake,
                        s.negative_given_mistake,
                        s.mean_positives,
                        s.mean_negatives
                    ));
                }
            }
            run.write("subspaces.csv", csv)?;
        }
    }
    run.finish()?;
    eprintln!("artifacts written to {}", run.out.display());
    Ok(())
}

fn seed_list(config: &ExperimentConfig, sweep: &SweepArgs) -> Vec<u64> {
    (0..sweep.seeds).map(|k| config.seed + k).collect()
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn write_training_metrics(run: &Run, logs: &[EpochLog], eval: &experiment::Evaluation) -> Result<()> {
    run.write_jsonl("metrics.jsonl", logs)?;
    run.write("epochs.csv", epoch_csv(logs))?;
    let mut summary = map_json(&eval.map);
    summary["test_snippet_accuracy"] = json!(eval.snippet_accuracy);
    run.write("metrics.json", format!("{summary:#}\n"))?;
    run.write("map.csv", map_csv(&eval.map))?;
    run.write("detections.tsv", format_detections(&eval.detections))?;
    print_map(&eval.map);
    println!("test snippet accuracy\t{:.4}", eval.snippet_accuracy);
    Ok(())
}

/// Exit status for an error: 1 for configuration and missing-input problems,
/// 2 for failures while running.
fn exit_status(err: &Error) -> u8 {
    match err {
        Error::BadConfig { .. } | Error::MissingArtifact { .. } => 1,
        _ => 2,
    }
}

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
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
