//! INI run configuration.
//!
//! ```ini
//! seed = 7
//!
//! [data]
//! dir = clouds/            ; or: synthetic = two_scale_teeth
//! instances = 8            ; synthetic only
//! points = 4096            ; synthetic only
//! normalize = true
//!
//! [model]
//! patches = 8
//! latent_dim = 8
//! width = 256
//!
//! [train]
//! epochs = 100
//! batch_size = 16
//! sample_size = 2048
//! depth = 3
//! epsilon = 1.0
//! max_iterations = 100
//! loss = aligned_l2        ; or aug_chamfer_sample
//! reassignment = true
//! lr = 0.001
//!
//! [output]
//! dir = run/
//! checkpoint_every = 10
//! log_timing = false
//!
//! [eval]
//! depth = 2
//! epsilon = 0.001
//! max_iterations = 1000000
//!
//! [study]
//! target = skull.xyz       ; or: synthetic = two_scale_teeth, points = 8192
//! fractions = 1.0, 0.1, 0.01
//! objectives = aug_chamfer_direct, chamfer_proxy, mse_random_perfect
//! steps = 2000
//! lr = 0.1
//! k = 5
//!
//! [output]
//! csv = study.csv         ; study curves; the manifest goes beside it
//! ```
//!
//! Keys are addressed as `section.key` in errors; unknown keys are rejected.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use foldpack_core::experiments::StudyObjective;
use foldpack_core::metrics::EmkdParams;
use foldpack_core::synth::SynthKind;
use foldpack_core::trainer::{LossKind, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic { kind: SynthKind, instances: usize, points: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub patches: usize,
    pub latent_dim: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Record wall-clock milliseconds in the training log. Off by default so
    /// repeated runs produce identical logs.
    pub log_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
    pub eval: Option<EmkdParams>,
    /// Every resolved key, defaults included, for the run manifest.
    pub resolved: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StudyTarget {
    File(PathBuf),
    Synthetic { kind: SynthKind, points: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRunConfig {
    pub seed: u64,
    pub target: StudyTarget,
    pub fractions: Vec<f64>,
    pub objectives: Vec<StudyObjective>,
    pub steps: usize,
    pub lr: f64,
    pub k: usize,
    pub csv: PathBuf,
    pub resolved: BTreeMap<String, String>,
}

/// Flat `section.key → value` view with consumption tracking.
struct Table {
    values: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
    base: PathBuf,
}

impl Table {
    fn parse(text: &str, base: &Path) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::config(format!("line {}", e.line), e.msg.to_string()))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                values.insert(key, strip_comment(v).to_string());
            }
        }
        Ok(Self {
            values,
            used: BTreeMap::new(),
            base: base.to_path_buf(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.values.remove(key)?;
        self.used.insert(key.to_string(), v.clone());
        Some(v)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: ToString,
    {
        match self.raw(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse {v:?} as {}", std::any::type_name::<T>()))),
            None => {
                self.used.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.raw(key).ok_or_else(|| Error::config(key, "missing"))?;
        v.parse()
            .map_err(|_| Error::config(key, format!("cannot parse {v:?} as {}", std::any::type_name::<T>())))
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| self.base.join(v))
    }

    fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.values.keys().next() {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        Ok(self.used)
    }
}

/// INI values may carry trailing `;` or `#` comments.
fn strip_comment(v: &str) -> &str {
    let cut = v.find([';', '#']).unwrap_or(v.len());
    v[..cut].trim()
}

fn read(path: &Path) -> Result<(String, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((text, base))
}

fn synth_kind(key: &str, v: &str) -> Result<SynthKind> {
    SynthKind::parse(v).ok_or_else(|| Error::config(key, format!("unknown synthetic kind {v:?}")))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let (text, base) = read(path)?;
    parse_run_config(&text, &base)
}

pub fn parse_run_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut t = Table::parse(text, base)?;
    let seed = t.get("seed", 0u64)?;

    let source = match (t.path("data.dir"), t.raw("data.synthetic")) {
        (Some(dir), None) => DataSource::Dir(dir),
        (None, Some(kind)) => DataSource::Synthetic {
            kind: synth_kind("data.synthetic", &kind)?,
            instances: t.required("data.instances")?,
            points: t.required("data.points")?,
        },
        (Some(_), Some(_)) => return Err(Error::config("data", "set exactly one of dir and synthetic")),
        (None, None) => return Err(Error::config("data.dir", "missing (or set data.synthetic)")),
    };
    let data = DataConfig {
        source,
        normalize: t.get("data.normalize", false)?,
    };
    let model = ModelConfig {
        patches: t.get("model.patches", 8usize)?,
        latent_dim: t.get("model.latent_dim", 8usize)?,
        width: t.get("model.width", foldpack_core::net::DEFAULT_WIDTH)?,
    };
    let d = TrainConfig::default();
    let loss_name = t.get("train.loss", d.loss.name().to_string())?;
    let train = TrainConfig {
        epochs: t.get("train.epochs", d.epochs)?,
        batch_size: t.get("train.batch_size", d.batch_size)?,
        sample_size: t.get("train.sample_size", d.sample_size)?,
        depth: t.get("train.depth", d.depth)?,
        epsilon: t.get("train.epsilon", d.epsilon)?,
        max_iterations: t.get("train.max_iterations", d.max_iterations)?,
        loss: LossKind::parse(&loss_name)
            .ok_or_else(|| Error::config("train.loss", format!("unknown loss {loss_name:?}")))?,
        reassignment: t.get("train.reassignment", d.reassignment)?,
        lr: t.get("train.lr", d.lr)?,
        seed,
    };
    if model.patches == 0 {
        return Err(Error::config("model.patches", "must be positive"));
    }
    if !train.sample_size.is_multiple_of(model.patches) {
        return Err(Error::config(
            "train.sample_size",
            format!(
                "sample_size {} is not divisible by model.patches {}",
                train.sample_size, model.patches
            ),
        ));
    }
    let output = OutputConfig {
        dir: t.path("output.dir").unwrap_or_else(|| base.join("run")),
        checkpoint_every: t.get("output.checkpoint_every", 0usize)?,
        log_timing: t.get("output.log_timing", false)?,
    };
    let eval = if t.values.keys().any(|k| k.starts_with("eval.")) {
        Some(EmkdParams {
            depth: t.get("eval.depth", 0u32)?,
            epsilon: t.get("eval.epsilon", foldpack_core::lap::DEFAULT_EPSILON)?,
            max_iterations: t.get("eval.max_iterations", foldpack_core::lap::DEFAULT_ROUNDS)?,
        })
    } else {
        None
    };
    let mut resolved = t.finish()?;
    if let Some(p) = resolved.get_mut("output.dir") {
        *p = output.dir.display().to_string();
    }
    Ok(RunConfig {
        seed,
        data,
        model,
        train,
        output,
        eval,
        resolved,
    })
}

fn list<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).ok_or_else(|| Error::config(key, format!("bad list entry {s:?}"))))
        .collect()
}

pub fn load_study_config(path: &Path) -> Result<StudyRunConfig> {
    let (text, base) = read(path)?;
    parse_study_config(&text, &base)
}

pub fn parse_study_config(text: &str, base: &Path) -> Result<StudyRunConfig> {
    let mut t = Table::parse(text, base)?;
    let seed = t.get("seed", 0u64)?;
    let target = match (t.path("study.target"), t.raw("study.synthetic")) {
        (Some(p), None) => StudyTarget::File(p),
        (None, Some(kind)) => StudyTarget::Synthetic {
            kind: synth_kind("study.synthetic", &kind)?,
            points: t.required("study.points")?,
        },
        (Some(_), Some(_)) => return Err(Error::config("study", "set exactly one of target and synthetic")),
        (None, None) => return Err(Error::config("study.target", "missing (or set study.synthetic)")),
    };
    let fr = t.get("study.fractions", "1.0, 0.1, 0.01".to_string())?;
    let fractions = list("study.fractions", &fr, |s| s.parse::<f64>().ok().filter(|f| *f > 0.0 && *f <= 1.0))?;
    let ob = t.get(
        "study.objectives",
        "aug_chamfer_direct, chamfer_proxy, mse_random_perfect".to_string(),
    )?;
    let objectives = list("study.objectives", &ob, StudyObjective::parse)?;
    let steps = t.get("study.steps", 2000usize)?;
    let lr = t.get("study.lr", 0.1f64)?;
    let k = t.get("study.k", foldpack_core::metrics::DEFAULT_NORMALIZER_K)?;
    let csv = t.path("output.csv").unwrap_or_else(|| base.join("study.csv"));
    let resolved = t.finish()?;
    Ok(StudyRunConfig {
        seed,
        target,
        fractions,
        objectives,
        steps,
        lr,
        k,
        csv,
        resolved,
    })
}
