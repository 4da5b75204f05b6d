//! `relpipe` — command-line pipeline for human-centric visual relationship
//! prediction: validate datasets, cluster labels into pseudo groups, train
//! the boosted relation classifier, predict, evaluate, and run the
//! four-configuration ablation.
//!
//! Configuration lives in a single JSON file (`--config`); any field can be
//! overridden with flat `--section.key=value` flags. All outputs land under
//! `--out` and are written atomically. Log verbosity comes from the
//! `RELPIPE_LOG` environment variable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use relpipe::config::PipelineConfig;
use relpipe::dataset::{
    load_split, read_depth_raster, read_split_unvalidated, read_vocabulary, LabelVocabulary,
    SceneRecord,
};
use relpipe::depth::masked_depth_stats;
use relpipe::error::{Error, Result};
use relpipe::eval::{evaluate, run_ablation, write_report_csv, EvalReport, ScenePrediction};
use relpipe::pipeline::{
    predict_split, read_predictions_csv, run_cluster_stage, run_train_stage,
    train_ablation_artifacts, write_predictions_csv, ClusterStage,
};
use relpipe::predict::{BoostedModel, RoutingMode};
use relpipe::synthetic::{generate, SynthSpec};
use relpipe::util::atomic_write;

#[derive(Parser)]
#[command(name = "relpipe", version, about = "Human-centric relationship prediction pipeline")]
struct Cli {
    /// Pipeline configuration JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for data-parallel stages; 0 uses all cores. Outputs
    /// are identical for every thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every scene invariant (and depth rasters) of a dataset.
    Validate {
        /// Split to validate; defaults to every `*.jsonl` under the root.
        #[arg(long)]
        split: Option<String>,
        /// Also dump per-instance filtered depth statistics as CSV.
        #[arg(long)]
        dump_depth_stats: bool,
    },
    /// Build the frequency matrix, sweep k, and write the routed cluster model.
    Cluster,
    /// Train the gradient-boosted relation classifier.
    Train {
        /// Cluster model path; defaults to `<out>/cluster_model.json`.
        #[arg(long)]
        cluster_model: Option<PathBuf>,
    },
    /// Predict relations for a split with the trained models.
    Predict {
        /// Split to predict; defaults to the configured eval split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        cluster_model: Option<PathBuf>,
        /// Boosted model path; defaults to `<out>/boosted_model.json` when
        /// present. Required only if some group routes to the boosted path.
        #[arg(long)]
        boosted_model: Option<PathBuf>,
        /// Also dump the per-candidate feature vectors as CSV.
        #[arg(long)]
        dump_features: bool,
    },
    /// Score a predictions CSV against ground truth.
    Eval {
        /// Predictions CSV; defaults to `<out>/predictions.csv`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Split providing ground truth; defaults to the configured eval split.
        #[arg(long)]
        split: Option<String>,
        /// Also write per-scene hit counts as CSV.
        #[arg(long)]
        per_scene: bool,
    },
    /// Train and score the four-way ablation (freq_full, freq_clustered, gb, gb_depth).
    Ablate,
    /// Generate a synthetic dataset from a spec file into `--out`.
    Synth {
        /// Synthetic dataset spec JSON.
        #[arg(long)]
        spec: PathBuf,
    },
}

/// Splits `--section.key=value` override flags out of the raw argument list
/// so clap only sees its own flags.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        let candidate = arg
            .strip_prefix("--")
            .and_then(|body| body.split_once('='))
            .filter(|(key, _)| {
                key.contains('.')
                    && key
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            });
        match candidate {
            Some((key, value)) => overrides.push((key.to_string(), value.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELPIPE_LOG", "warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(&cli, &overrides) {
        Ok(code) => code,
        Err(err) => {
            let payload = serde_json::json!({
                "error": {"category": err.category(), "message": err.to_string()}
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli, overrides: &[(String, String)]) -> Result<ExitCode> {
    #[cfg(feature = "parallel")]
    {
        if cli.threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            return pool.install(|| dispatch(cli, overrides));
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 1 {
        log::warn!("built without the parallel feature; --threads ignored");
    }
    dispatch(cli, overrides)
}

fn dispatch(cli: &Cli, overrides: &[(String, String)]) -> Result<ExitCode> {
    match &cli.command {
        Command::Validate { split, dump_depth_stats } => {
            cmd_validate(cli, overrides, split.as_deref(), *dump_depth_stats)
        }
        Command::Cluster => cmd_cluster(cli, overrides).map(|_| ExitCode::SUCCESS),
        Command::Train { cluster_model } => {
            cmd_train(cli, overrides, cluster_model.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Predict { split, cluster_model, boosted_model, dump_features } => cmd_predict(
            cli,
            overrides,
            split.as_deref(),
            cluster_model.as_deref(),
            boosted_model.as_deref(),
            *dump_features,
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Eval { predictions, split, per_scene } => {
            cmd_eval(cli, overrides, predictions.as_deref(), split.as_deref(), *per_scene)
                .map(|_| ExitCode::SUCCESS)
        }
        Command::Ablate => cmd_ablate(cli, overrides).map(|_| ExitCode::SUCCESS),
        Command::Synth { spec } => cmd_synth(cli, spec).map(|_| ExitCode::SUCCESS),
    }
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let config = PipelineConfig::load(path, overrides)?;
    config.check_paths()?;
    Ok(config)
}

fn load_named_split(config: &PipelineConfig, split: &str) -> Result<(Vec<SceneRecord>, LabelVocabulary)> {
    let vocab = read_vocabulary(&config.dataset.vocab)?;
    let scenes = load_split(&config.dataset.root, split, &vocab)?;
    Ok((scenes, vocab))
}

fn ensure_out(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))
}

fn cmd_validate(
    cli: &Cli,
    overrides: &[(String, String)],
    split: Option<&str>,
    dump_depth_stats: bool,
) -> Result<ExitCode> {
    let config = load_config(cli, overrides)?;
    let vocab = read_vocabulary(&config.dataset.vocab)?;
    let root = &config.dataset.root;
    let splits: Vec<String> = match split {
        Some(s) => vec![s.to_string()],
        None => {
            let mut found: Vec<String> = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            found.sort();
            found
        }
    };
    let mut scene_count = 0usize;
    let mut errors = Vec::new();
    let mut depth_rows: Vec<String> = Vec::new();
    for split in &splits {
        let scenes = read_split_unvalidated(&root.join(format!("{split}.jsonl")))?;
        scene_count += scenes.len();
        for scene in &scenes {
            if let Err(e) = scene.validate(&vocab) {
                errors.push(e.to_string());
                continue;
            }
            if let Some(rel) = &scene.depth_path {
                match read_depth_raster(&root.join(rel)) {
                    Err(e) => errors.push(format!("scene '{}': depth raster: {e}", scene.scene_id)),
                    Ok(raster) => {
                        if raster.height != scene.height || raster.width != scene.width {
                            errors.push(format!(
                                "scene '{}': depth raster {}x{} does not match image {}x{}",
                                scene.scene_id,
                                raster.height,
                                raster.width,
                                scene.height,
                                scene.width
                            ));
                        } else if dump_depth_stats {
                            for inst in &scene.instances {
                                let stats = masked_depth_stats(&raster, &inst.mask)?;
                                depth_rows.push(format!(
                                    "{},{},{},{},{},{},{}",
                                    scene.scene_id,
                                    inst.instance_id,
                                    stats.raw_pixel_count,
                                    stats.pixel_count,
                                    stats.mean,
                                    stats.median,
                                    stats.valid
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    if dump_depth_stats {
        ensure_out(cli)?;
        let mut csv = String::from(
            "scene_id,instance_id,raw_pixel_count,pixel_count,mean,median,valid\n",
        );
        for row in &depth_rows {
            csv.push_str(row);
            csv.push('\n');
        }
        atomic_write(&cli.out.join("depth_stats.csv"), csv.as_bytes())?;
    }
    for e in &errors {
        println!("error: {e}");
    }
    println!(
        "validated {scene_count} scenes across {} split(s): {} error(s)",
        splits.len(),
        errors.len()
    );
    Ok(if errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn write_cluster_outputs(cli: &Cli, stage: &ClusterStage) -> Result<()> {
    ensure_out(cli)?;
    stage.model.save(&cli.out.join("cluster_model.json"))?;
    let mut cohesion = String::from("group_id,member_count,group_support,sigma\n");
    for (g, sigma) in stage.report.per_cluster_sigma.iter().enumerate() {
        cohesion.push_str(&format!(
            "{g},{},{},{sigma}\n",
            stage.model.members(g).len(),
            stage.model.group_support[g]
        ));
    }
    cohesion.push_str(&format!(
        "aggregate,,{},{}\n",
        stage.model.group_support.iter().sum::<u64>(),
        stage.report.aggregate_sigma
    ));
    atomic_write(&cli.out.join("cohesion.csv"), cohesion.as_bytes())?;
    let mut trace = String::from("k,wcss,aggregate_sigma,min_group_support,feasible\n");
    for entry in &stage.trace.entries {
        trace.push_str(&format!(
            "{},{},{},{},{}\n",
            entry.k, entry.wcss, entry.aggregate_sigma, entry.min_group_support, entry.feasible
        ));
    }
    atomic_write(&cli.out.join("selection_trace.csv"), trace.as_bytes())?;
    Ok(())
}

fn cmd_cluster(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    let config = load_config(cli, overrides)?;
    let (scenes, vocab) = load_named_split(&config, &config.dataset.train_split)?;
    let stage = run_cluster_stage(&scenes, &vocab, &config)?;
    write_cluster_outputs(cli, &stage)?;
    info!(
        "selected k={} (feasible={}) aggregate_sigma={:.6}",
        stage.trace.selected_k, stage.trace.any_feasible, stage.report.aggregate_sigma
    );
    println!(
        "k={} groups, aggregate sigma {:.6}, min group support {}",
        stage.model.k, stage.report.aggregate_sigma, stage.report.min_group_support
    );
    Ok(())
}

fn write_training_log(path: &Path, log_loss: &[f64]) -> Result<()> {
    let mut csv = String::from("round,train_log_loss\n");
    for (round, loss) in log_loss.iter().enumerate() {
        csv.push_str(&format!("{round},{loss}\n"));
    }
    atomic_write(path, csv.as_bytes())
}

fn cmd_train(cli: &Cli, overrides: &[(String, String)], cluster_model: Option<&Path>) -> Result<()> {
    let config = load_config(cli, overrides)?;
    let (scenes, vocab) = load_named_split(&config, &config.dataset.train_split)?;
    let model_path = cluster_model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join("cluster_model.json"));
    let cluster = relpipe::clustering::ClusterModel::load(&model_path)?;
    let (model, summary) = run_train_stage(
        &scenes,
        &vocab,
        &cluster,
        &config.dataset.root,
        &config,
        config.boosting.use_depth,
    )?;
    ensure_out(cli)?;
    model.save(&cli.out.join("boosted_model.json"))?;
    write_training_log(&cli.out.join("training_log.csv"), &summary.log_loss)?;
    println!(
        "trained {} rounds (depth={}), log-loss {:.6} -> {:.6}",
        config.boosting.rounds,
        config.boosting.use_depth,
        summary.log_loss.first().unwrap(),
        summary.log_loss.last().unwrap()
    );
    Ok(())
}

fn cmd_predict(
    cli: &Cli,
    overrides: &[(String, String)],
    split: Option<&str>,
    cluster_model: Option<&Path>,
    boosted_model: Option<&Path>,
    dump_features: bool,
) -> Result<()> {
    let config = load_config(cli, overrides)?;
    let split = split.unwrap_or(&config.dataset.eval_split);
    let (scenes, vocab) = load_named_split(&config, split)?;
    let cluster_path = cluster_model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join("cluster_model.json"));
    let cluster = relpipe::clustering::ClusterModel::load(&cluster_path)?;
    let boosted = match boosted_model {
        Some(path) => Some(BoostedModel::load(path)?),
        None => {
            let default = cli.out.join("boosted_model.json");
            if default.is_file() {
                Some(BoostedModel::load(&default)?)
            } else if cluster.routing.contains(&RoutingMode::Boosted) {
                return Err(Error::ModelState(format!(
                    "routing requires a boosted model but '{}' does not exist",
                    default.display()
                )));
            } else {
                None
            }
        }
    };
    let predictions = predict_split(
        &scenes,
        &vocab,
        &cluster,
        boosted.as_ref(),
        &config.dataset.root,
        config.prediction_seed(),
    )?;
    ensure_out(cli)?;
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, &predictions, &vocab)?;
    atomic_write(&cli.out.join("predictions.csv"), &buf)?;
    if dump_features {
        let use_depth = boosted.as_ref().is_some_and(|m| m.uses_depth);
        let rows = relpipe::pipeline::dump_split_features(
            &scenes,
            &vocab,
            &cluster,
            &config.dataset.root,
            use_depth,
        )?;
        let mut buf = Vec::new();
        relpipe::features::write_feature_csv(&mut buf, &rows)?;
        atomic_write(&cli.out.join("features.csv"), &buf)?;
    }
    println!("predicted {} candidate pairs over {} scenes", predictions.len(), scenes.len());
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    overrides: &[(String, String)],
    predictions: Option<&Path>,
    split: Option<&str>,
    per_scene: bool,
) -> Result<()> {
    let config = load_config(cli, overrides)?;
    let split = split.unwrap_or(&config.dataset.eval_split);
    let (scenes, vocab) = load_named_split(&config, split)?;
    let predictions_path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join("predictions.csv"));
    let by_scene = read_predictions_csv(&predictions_path, &vocab)?;
    let scene_predictions: Vec<ScenePrediction> = by_scene
        .into_iter()
        .map(|(scene_id, triples)| ScenePrediction { scene_id, instances: None, triples })
        .collect();
    let report = evaluate(&scenes, &scene_predictions, &config.evaluation)?;
    ensure_out(cli)?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &[("predictions".to_string(), report.clone())])?;
    atomic_write(&cli.out.join("eval_report.csv"), &buf)?;
    if per_scene {
        let diagnostics =
            relpipe::eval::evaluate_per_scene(&scenes, &scene_predictions, &config.evaluation)?;
        let mut buf = Vec::new();
        relpipe::eval::write_scene_diagnostics_csv(
            &mut buf,
            &diagnostics,
            &config.evaluation.thresholds,
        )?;
        atomic_write(&cli.out.join("eval_scenes.csv"), &buf)?;
    }
    print_report("predictions", &report);
    Ok(())
}

fn print_report(name: &str, report: &EvalReport) {
    let cells: Vec<String> = report
        .per_threshold
        .iter()
        .map(|t| format!("iou_{}={:.4}", t.threshold, t.accuracy))
        .collect();
    println!("{name}: {} average={:.4}", cells.join(" "), report.average);
}

fn cmd_ablate(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    let config = load_config(cli, overrides)?;
    let (train_scenes, vocab) = load_named_split(&config, &config.dataset.train_split)?;
    let eval_scenes = load_split(&config.dataset.root, &config.dataset.eval_split, &vocab)?;
    let (artifacts, stage, gb_log, gb_depth_log) =
        train_ablation_artifacts(&train_scenes, &vocab, &config.dataset.root, &config)?;
    ensure_out(cli)?;
    write_cluster_outputs(cli, &stage)?;
    artifacts.gb.save(&cli.out.join("gb_model.json"))?;
    artifacts.gb_depth.save(&cli.out.join("gb_depth_model.json"))?;
    write_training_log(&cli.out.join("gb_training_log.csv"), &gb_log.log_loss)?;
    write_training_log(&cli.out.join("gb_depth_training_log.csv"), &gb_depth_log.log_loss)?;
    let rows = run_ablation(
        &eval_scenes,
        &vocab,
        &config.dataset.root,
        &artifacts,
        &config.evaluation,
        config.prediction.frequency_mode,
        config.prediction_seed(),
    )?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows)?;
    atomic_write(&cli.out.join("ablation.csv"), &buf)?;
    for (name, report) in &rows {
        print_report(name, report);
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, spec_path: &Path) -> Result<()> {
    let spec = SynthSpec::load(spec_path)?;
    ensure_out(cli)?;
    let dataset = generate(&spec, &cli.out)?;
    println!(
        "generated {} train + {} val scenes, {} categories, {} relations -> {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.vocab.n_categories(),
        dataset.vocab.n_relations(),
        cli.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_flags_are_split_out() {
        let args: Vec<String> = [
            "relpipe",
            "--config",
            "c.json",
            "--clustering.k_min=2",
            "cluster",
            "--boosting.use_depth=false",
            "--out",
            "o",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (rest, overrides) = split_overrides(args);
        assert_eq!(rest, vec!["relpipe", "--config", "c.json", "cluster", "--out", "o"]);
        assert_eq!(
            overrides,
            vec![
                ("clustering.k_min".to_string(), "2".to_string()),
                ("boosting.use_depth".to_string(), "false".to_string()),
            ]
        );
    }

    #[test]
    fn plain_flags_are_untouched() {
        let args: Vec<String> =
            ["relpipe", "--threads", "4", "synth", "--spec", "s.json"].iter().map(|s| s.to_string()).collect();
        let (rest, overrides) = split_overrides(args.clone());
        assert_eq!(rest, args);
        assert!(overrides.is_empty());
    }
}
