//! Command-line front end. Every command writes its tabular result to the
//! supplied writer so tests can drive it without spawning a process.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use foldpack_core::experiments::{chamfer_study, evaluate_emkd, ChamferStudyConfig};
use foldpack_core::matching::MatchingState;
use foldpack_core::metrics::{self, EmkdParams, DEFAULT_LEAF_SIZE};
use foldpack_core::net::{FoldingNet, NetConfig};
use foldpack_core::synth::{self, SynthKind};
use foldpack_core::trainer::{init_instance, Trainer};
use foldpack_core::{Dataset, PointCloud};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, DataConfig, DataSource, RunConfig, StudyTarget};
use crate::error::{Error, Result};
use crate::io::{self, CloudFormat};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "foldpack", version, about = "Point-cloud folding compression, assignment metrics, and studies")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output format for results printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Chamfer,
    AugChamfer,
    EmdExact,
    Emkd,
    NormLogAugChamfer,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance between two clouds; prints one row.
    Metric {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Emkd)]
        kind: MetricArg,
        /// k-d depth for emkd (default: leaves of 1024 points).
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, default_value_t = foldpack_core::lap::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = foldpack_core::lap::DEFAULT_ROUNDS)]
        iterations: usize,
        /// Neighbor count for the sampling-rate normalizer.
        #[arg(long, default_value_t = metrics::DEFAULT_NORMALIZER_K)]
        k: usize,
    },
    /// Train from an INI config; writes manifest, log, and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write the full-resolution reconstruction of one instance.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instance: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-instance and mean EM-kD of a checkpoint against its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (alternative to --config).
        #[arg(long, conflicts_with = "config")]
        data: Option<PathBuf>,
        /// Training config whose [data] section names the dataset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Normalize --data clouds to the unit sphere.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, default_value_t = foldpack_core::lap::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = foldpack_core::lap::DEFAULT_ROUNDS)]
        iterations: usize,
    },
    /// Sampling-density study; writes the curve CSV named in the config.
    Study {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic cloud, or a dataset directory with --instances.
    Gen {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        normalize: bool,
    },
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn emkd_params(m: usize, depth: Option<u32>, epsilon: f64, iterations: usize) -> EmkdParams {
    EmkdParams {
        depth: depth.unwrap_or_else(|| EmkdParams::for_leaf_size(m, DEFAULT_LEAF_SIZE).depth),
        epsilon,
        max_iterations: iterations,
    }
}

/// Run one parsed command; returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    if let Some(t) = cli.threads {
        // a second initialization (tests) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Metric {
            a,
            b,
            kind,
            depth,
            epsilon,
            iterations,
            k,
        } => cmd_metric(a, b, *kind, *depth, *epsilon, *iterations, *k, cli.format, out),
        Command::Train { config, resume } => cmd_train(config, resume.as_deref(), cli.seed).map(|_| ()),
        Command::Reconstruct {
            checkpoint,
            instance,
            out: path,
        } => cmd_reconstruct(checkpoint, *instance, path),
        Command::Eval {
            checkpoint,
            data,
            config,
            normalize,
            depth,
            epsilon,
            iterations,
        } => {
            let dataset = match (data, config) {
                (Some(d), _) => io::load_dataset_dir(d, *normalize)?,
                (None, Some(c)) => {
                    let mut rc = config::load_run_config(c)?;
                    if let Some(s) = cli.seed {
                        rc.seed = s;
                    }
                    load_data(&rc.data, rc.seed)?.0
                }
                (None, None) => return Err(Error::Usage("eval needs --data or --config".into())),
            };
            cmd_eval(checkpoint, &dataset, *depth, *epsilon, *iterations, cli.format, out)
        }
        Command::Study { config } => cmd_study(config, cli.seed, out),
        Command::Gen {
            kind,
            points,
            out: path,
            instances,
            normalize,
        } => cmd_gen(kind, *points, cli.seed.unwrap_or(0), path, *instances, *normalize),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_metric(
    a: &Path,
    b: &Path,
    kind: MetricArg,
    depth: Option<u32>,
    epsilon: f64,
    iterations: usize,
    k: usize,
    format: Format,
    out: &mut dyn Write,
) -> Result<()> {
    let p = io::load_cloud(a)?;
    let q = io::load_cloud(b)?;
    let (name, value, d, eps, norm) = match kind {
        MetricArg::Chamfer => ("chamfer", metrics::chamfer(&p, &q), None, None, None),
        MetricArg::AugChamfer => ("aug_chamfer", metrics::aug_chamfer(&p, &q), None, None, None),
        MetricArg::EmdExact => ("emd_exact_mean", metrics::emd_exact_mean(&p, &q)?, None, None, None),
        MetricArg::Emkd => {
            let params = emkd_params(p.len(), depth, epsilon, iterations);
            let r = metrics::emkd(&p, &q, &params)?;
            ("emkd", r.value, r.depth, r.epsilon, None)
        }
        MetricArg::NormLogAugChamfer => {
            let t = metrics::sampling_normalizer(&q, k)?;
            (
                "norm_log_aug_chamfer",
                metrics::normalized_log(metrics::aug_chamfer(&p, &q), t),
                None,
                None,
                Some(t),
            )
        }
    };
    let line = match format {
        Format::Csv => format!(
            "{name},{},{},{},{}",
            fmt_f64(value),
            d.map(|v| v.to_string()).unwrap_or_default(),
            eps.map(fmt_f64).unwrap_or_default(),
            norm.map(fmt_f64).unwrap_or_default()
        ),
        Format::Json => serde_json::json!({
            "kind": name,
            "value": json_f64(value),
            "depth": d,
            "epsilon": eps.map(json_f64),
            "normalizer": norm.map(json_f64),
        })
        .to_string(),
    };
    emit(out, &line)
}

/// Dataset named by a `[data]` section, plus the files it was read from.
pub fn load_data(data: &DataConfig, seed: u64) -> Result<(Dataset, Vec<PathBuf>)> {
    match &data.source {
        DataSource::Dir(dir) => {
            let ds = io::load_dataset_dir(dir, data.normalize)?;
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("xyz" | "ply")))
                .collect();
            files.sort();
            Ok((ds, files))
        }
        DataSource::Synthetic {
            kind,
            instances,
            points,
        } => Ok((
            synth::synthetic_dataset(*kind, *instances, *points, seed, data.normalize)?,
            Vec::new(),
        )),
    }
}

pub const LOG_HEADER: &str = "epoch,batch,loss,swaps,elapsed_ms";

/// Keep the header and the rows of epochs already covered by a checkpoint.
fn truncate_log(path: &Path, epochs_done: usize) -> Result<Vec<String>> {
    let mut keep = vec![LOG_HEADER.to_string()];
    if let Ok(f) = fs::File::open(path) {
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let epoch: Option<usize> = line.split(',').next().and_then(|s| s.parse().ok());
            if epoch.is_some_and(|e| e < epochs_done) {
                keep.push(line);
            }
        }
    }
    Ok(keep)
}

pub fn checkpoint_of(trainer: &Trainer<'_>) -> Checkpoint {
    Checkpoint {
        net: trainer.net().clone(),
        adam: trainer.adam().clone(),
        train: *trainer.config(),
        epochs_done: trainer.epochs_done(),
        greedy_done: trainer.greedy_done(),
        permutations: trainer.matchings().iter().map(|m| m.permutation().to_vec()).collect(),
    }
}

/// Train per config; returns the path of the final checkpoint.
pub fn cmd_train(config_path: &Path, resume: Option<&Path>, seed_override: Option<u64>) -> Result<PathBuf> {
    let mut rc: RunConfig = config::load_run_config(config_path)?;
    if let Some(s) = seed_override {
        rc.seed = s;
        rc.train.seed = s;
        rc.resolved.insert("seed".into(), s.to_string());
    }
    let (dataset, files) = load_data(&rc.data, rc.seed)?;
    let out_dir = &rc.output.dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut inputs = vec![config_path.to_path_buf()];
    inputs.extend(files);
    inputs.extend(resume.map(Path::to_path_buf));
    RunManifest::new("train", rc.seed, rc.resolved.clone(), &inputs)?.write(&out_dir.join("manifest.json"))?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.train != rc.train {
                log::warn!("{}: training settings differ from the config; using the config", path.display());
            }
            let matchings = ck
                .permutations
                .into_iter()
                .zip(dataset.clouds())
                .map(|(p, c)| MatchingState::from_permutation(c, p))
                .collect::<foldpack_core::Result<Vec<_>>>()?;
            if matchings.len() != dataset.len() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!("holds {} matchings, dataset has {} instances", matchings.len(), dataset.len()),
                });
            }
            Trainer::from_parts(&dataset, ck.net, ck.adam, matchings, rc.train, ck.epochs_done, ck.greedy_done)?
        }
        None => {
            let nc = NetConfig {
                points: dataset.points_per_cloud(),
                patches: rc.model.patches,
                latent_dim: rc.model.latent_dim,
                instances: dataset.len(),
                width: rc.model.width,
                seed: rc.seed,
            };
            let pick = init_instance(rc.seed, dataset.len());
            log::info!("source initialized from instance {} ({})", pick, dataset.names()[pick]);
            Trainer::new(&dataset, FoldingNet::init(nc, dataset.cloud(pick))?, rc.train)?
        }
    };

    let log_path = out_dir.join("train_log.csv");
    let kept = truncate_log(&log_path, trainer.epochs_done())?;
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", kept.join("\n")).map_err(|e| Error::io(&log_path, e))?;

    for r in trainer.ensure_greedy()? {
        if r.incomplete_leaves > 0 {
            log::info!(
                "initial matching: {}/{} leaves hit the round cap, {} rows randomly filled",
                r.incomplete_leaves,
                r.leaves,
                r.randomly_matched
            );
        }
    }
    while !trainer.is_finished() {
        let start = Instant::now();
        let timing = rc.output.log_timing;
        let mut rows = String::new();
        let stats = trainer.run_epoch(|b| {
            let ms = if timing { start.elapsed().as_millis() } else { 0 };
            rows.push_str(&format!("{},{},{},{},{}\n", b.epoch, b.batch, fmt_f64(b.loss), b.swaps, ms));
        })?;
        log.write_all(rows.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        log::info!(
            "epoch {}: mean loss {:.6}, {} swaps",
            stats.epoch,
            stats.mean_loss,
            stats.swaps
        );
        let every = rc.output.checkpoint_every;
        if every > 0 && trainer.epochs_done() % every == 0 {
            let p = out_dir.join(format!("checkpoint_{:04}.fpk", trainer.epochs_done()));
            checkpoint::save(&checkpoint_of(&trainer), &p)?;
        }
    }
    let final_path = out_dir.join("final.fpk");
    checkpoint::save(&checkpoint_of(&trainer), &final_path)?;

    if let Some(params) = rc.eval {
        let ev = evaluate_emkd(&dataset, trainer.net(), &params)?;
        let mut csv = String::from("instance,name,emkd\n");
        csv.push_str(&eval_rows(&dataset, &ev.per_instance, ev.mean));
        let p = out_dir.join("eval.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    Ok(final_path)
}

pub fn cmd_reconstruct(ckpt: &Path, instance: usize, out_path: &Path) -> Result<()> {
    let ck = checkpoint::load(ckpt)?;
    let cloud = ck.net.reconstruct(instance)?;
    io::save_cloud(&cloud, out_path, CloudFormat::from_path(out_path))
}

fn eval_rows(dataset: &Dataset, values: &[f64], mean: f64) -> String {
    let mut s = String::new();
    for (i, (v, name)) in values.iter().zip(dataset.names()).enumerate() {
        s.push_str(&format!("{i},{name},{}\n", fmt_f64(*v)));
    }
    s.push_str(&format!("mean,,{}\n", fmt_f64(mean)));
    s
}

pub fn cmd_eval(
    ckpt: &Path,
    dataset: &Dataset,
    depth: Option<u32>,
    epsilon: f64,
    iterations: usize,
    format: Format,
    out: &mut dyn Write,
) -> Result<()> {
    let ck = checkpoint::load(ckpt)?;
    let params = emkd_params(dataset.points_per_cloud(), depth, epsilon, iterations);
    let ev = evaluate_emkd(dataset, &ck.net, &params)?;
    let text = match format {
        Format::Csv => eval_rows(dataset, &ev.per_instance, ev.mean),
        Format::Json => {
            let rows: Vec<_> = ev
                .per_instance
                .iter()
                .zip(dataset.names())
                .enumerate()
                .map(|(i, (v, n))| serde_json::json!({"instance": i, "name": n, "emkd": json_f64(*v)}))
                .collect();
            serde_json::json!({"instances": rows, "mean": json_f64(ev.mean), "depth": params.depth}).to_string() + "\n"
        }
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

pub const STUDY_HEADER: &str = "step,objective,fraction,value";

pub fn cmd_study(config_path: &Path, seed_override: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut sc = config::load_study_config(config_path)?;
    if let Some(s) = seed_override {
        sc.seed = s;
        sc.resolved.insert("seed".into(), s.to_string());
    }
    let mut inputs = vec![config_path.to_path_buf()];
    let target: PointCloud = match &sc.target {
        StudyTarget::File(p) => {
            inputs.push(p.clone());
            io::load_cloud(p)?
        }
        StudyTarget::Synthetic { kind, points } => synth::gen_synthetic(*kind, *points, sc.seed)?,
    };
    if let Some(dir) = sc.csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    RunManifest::new("study", sc.seed, sc.resolved.clone(), &inputs)?
        .write(&sc.csv.with_extension("manifest.json"))?;

    let cfg = ChamferStudyConfig {
        target,
        fractions: sc.fractions.clone(),
        objectives: sc.objectives.clone(),
        steps: sc.steps,
        lr: sc.lr,
        k: sc.k,
        seed: sc.seed,
    };
    let curves = chamfer_study(&cfg)?;
    let mut csv = String::from(STUDY_HEADER);
    csv.push('\n');
    for c in &curves {
        for (step, v) in c.values.iter().enumerate() {
            csv.push_str(&format!("{step},{},{},{}\n", c.objective.name(), c.fraction, fmt_f64(*v)));
        }
    }
    fs::write(&sc.csv, csv).map_err(|e| Error::io(&sc.csv, e))?;
    for c in &curves {
        let mse = c.final_mse.map(fmt_f64).unwrap_or_default();
        emit(
            out,
            &format!("{},{},{},{},{mse}", c.objective.name(), c.fraction, c.points, fmt_f64(c.final_value())),
        )?;
    }
    Ok(())
}

pub fn cmd_gen(kind: &str, points: usize, seed: u64, out_path: &Path, instances: Option<usize>, normalize: bool) -> Result<()> {
    let kind = SynthKind::parse(kind).ok_or_else(|| Error::Usage(format!("unknown synthetic kind {kind:?}")))?;
    match instances {
        Some(n) => io::save_dataset_dir(&synth::synthetic_dataset(kind, n, points, seed, normalize)?, out_path),
        None => {
            let c = synth::gen_synthetic(kind, points, seed)?;
            let c = if normalize { c.normalized_unit_sphere() } else { c };
            io::save_cloud(&c, out_path, CloudFormat::from_path(out_path))
        }
    }
}
