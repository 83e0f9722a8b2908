use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DataMode, DataSource, DataSpec, SYNTHETIC_CLASSES};
use crate::error::{Error, Result};
use crate::losses::{Distance, LossWeights};
use crate::networks::{NetConfig, MIN_COARSE_EXTENT};
use crate::optim::AdamConfig;

/// Which target the perceptual loss uses and how data is paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// Perceptual target: the content image.
    StyleTransfer,
    /// Content is a label map; perceptual target: the real image.
    SemanticSynthesis,
    /// As style transfer, trained on unpaired data.
    Multimodal,
}

/// Optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskMode,
    #[serde(default = "lr_g")]
    pub lr_g: f64,
    #[serde(default = "lr_d")]
    pub lr_d: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub adam_eps: f64,
    /// Generator updates to run.
    pub steps: u64,
    /// If set, overrides `steps` with `epochs * ceil(items / batch_size)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Seeds weight initialization and the noise stream.
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn lr_g() -> f64 {
    1e-4
}
fn lr_d() -> f64 {
    4e-4
}
fn beta2() -> f64 {
    0.9
}
fn adam_eps() -> f64 {
    1e-8
}
fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(task: TaskMode, steps: u64, seed: u64) -> Self {
        TrainConfig {
            task,
            lr_g: lr_g(),
            lr_d: lr_d(),
            beta1: 0.0,
            beta2: beta2(),
            adam_eps: adam_eps(),
            steps,
            epochs: None,
            batch_size: 1,
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_g, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_d, ..self.adam_g() }
    }

    /// Total steps for a dataset of `items` content items.
    pub fn total_steps(&self, items: usize) -> u64 {
        match self.epochs {
            Some(e) => e * (items as u64).div_ceil(self.batch_size as u64),
            None => self.steps,
        }
    }
}

/// Loss weights and the perceptual feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_p: f64,
    pub lambda_fm: f64,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub extractor_seed: u64,
    /// Tensor file with `extractor.stage{i}.weight|bias` entries; replaces
    /// the seeded random extractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor_weights: Option<PathBuf>,
}

impl LossConfig {
    pub fn new(weights: LossWeights) -> Self {
        LossConfig {
            lambda_p: weights.lambda_p,
            lambda_fm: weights.lambda_fm,
            distance: Distance::L1,
            extractor_seed: 0,
            extractor_weights: None,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_p: self.lambda_p, lambda_fm: self.lambda_fm }
    }
}

/// Everything that determines a training run: `[net]`, `[train]`, `[data]`,
/// `[loss]` sections of one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub data: DataSpec,
    pub loss: LossConfig,
}

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "desk-style-transfer",
    "desk-convergence",
    "desk-multimodal",
    "desk-semantic",
    "paper-style-transfer",
    "paper-semantic",
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let desk = |task, mode, steps| RunConfig {
            net: NetConfig::desk(3, 16),
            train: TrainConfig::new(task, steps, 0),
            data: DataSpec::synthetic(mode, 8, 32, 32, 0),
            loss: LossConfig::new(LossWeights::STYLE_TRANSFER),
        };
        let cfg = match name {
            "desk-style-transfer" => desk(TaskMode::StyleTransfer, DataMode::Paired, 500),
            "desk-convergence" => desk(TaskMode::StyleTransfer, DataMode::Paired, 2000),
            "desk-multimodal" => {
                // widths plateau at the coarse end as in the full ladder, so the
                // coarsest block keeps the identity shortcut style passes through
                let mut c = desk(TaskMode::Multimodal, DataMode::Unpaired, 500);
                c.net.schedule = vec![32, 64, 64];
                c
            }
            "desk-semantic" => {
                let mut c = desk(TaskMode::SemanticSynthesis, DataMode::Semantic, 500);
                c.net.content_channels = SYNTHETIC_CLASSES;
                c.loss = LossConfig::new(LossWeights::SEMANTIC);
                c
            }
            "paper-style-transfer" => {
                let mut c = desk(TaskMode::StyleTransfer, DataMode::Unpaired, 0);
                c.net = NetConfig::paper();
                c.train.epochs = Some(200);
                c.data = DataSpec {
                    source: DataSource::Directory,
                    content_dir: Some("data/content".into()),
                    style_dir: Some("data/style".into()),
                    ..DataSpec::synthetic(DataMode::Unpaired, 0, 256, 256, 0)
                };
                c
            }
            "paper-semantic" => {
                let mut c = desk(TaskMode::SemanticSynthesis, DataMode::Semantic, 0);
                c.net = NetConfig::paper();
                c.train.epochs = Some(200);
                c.train.batch_size = 16;
                c.loss = LossConfig::new(LossWeights::SEMANTIC);
                c.data = DataSpec {
                    source: DataSource::Directory,
                    label_dir: Some("data/labels".into()),
                    image_dir: Some("data/images".into()),
                    ..DataSpec::synthetic(DataMode::Semantic, 0, 256, 512, 0)
                };
                c.net.content_channels = 35;
                c.data.classes = Some(35);
                c
            }
            other => {
                return Err(Error::Config(format!("unknown preset {other:?}; known: {}", PRESETS.join(", "))))
            }
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Applies `section.key=value` on top of the current values, with the
    /// same strictness as the file format.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own output parses");
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", value.trim())) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        let (last, parents) = keys.split_last().expect("split yields one item");
        let mut table = &mut doc;
        for k in parents {
            table = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{path}: {k} is not a section")))?;
        }
        table.insert(last.to_string(), parsed);
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        *self = toml::from_str(&text).map_err(|e| Error::Config(format!("override {path}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.weights().validate()?;
        self.train.adam_g().validate()?;
        self.train.adam_d().validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        let (h, w) = (self.data.height, self.data.width);
        self.net.plan(h, w)?;
        let f = 1usize << (self.net.d_scales - 1);
        if h % f != 0 || w % f != 0 || h / f < MIN_COARSE_EXTENT || w / f < MIN_COARSE_EXTENT {
            return Err(Error::Config(format!(
                "{h}x{w} images are too small for {} discriminator scales",
                self.net.d_scales
            )));
        }
        let semantic_task = self.train.task == TaskMode::SemanticSynthesis;
        if semantic_task != (self.data.mode == DataMode::Semantic) {
            return Err(Error::Config("semantic_synthesis task and semantic data mode go together".into()));
        }
        if self.data.mode == DataMode::Semantic {
            if let Some(c) = self.data.classes {
                if c != self.net.content_channels {
                    return Err(Error::Config(format!(
                        "data.classes = {c} but net.content_channels = {}",
                        self.net.content_channels
                    )));
                }
            }
        } else if self.net.content_channels != 3 {
            return Err(Error::Config("image content requires net.content_channels = 3".into()));
        }
        if self.net.style_channels != 3 {
            return Err(Error::Config("net.style_channels must be 3 for RGB style images".into()));
        }
        Ok(())
    }
}

/// Output locations of a run, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifacts {
    pub metrics: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub final_checkpoint: PathBuf,
}

impl Default for Artifacts {
    fn default() -> Self {
        Artifacts {
            metrics: "metrics.tsv".into(),
            checkpoint_dir: "checkpoints".into(),
            final_checkpoint: "final.tsit".into(),
        }
    }
}

/// The resolved config plus an `[artifacts]` table, written at run start.
/// Feeding it back as a config file reproduces the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        let mut doc: toml::Table = toml::from_str(&self.config.to_toml()).expect("own output parses");
        let artifacts = toml::Table::try_from(&self.artifacts).expect("artifacts serialize");
        doc.insert("artifacts".into(), toml::Value::Table(artifacts));
        toml::to_string(&doc).expect("manifest serializes")
    }

    /// Reads either a plain run config or a manifest.
    pub fn parse(text: &str) -> Result<(RunConfig, Option<Artifacts>)> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let artifacts = match doc.remove("artifacts") {
            None => None,
            Some(v) => Some(v.try_into::<Artifacts>().map_err(|e| Error::Config(format!("[artifacts]: {e}")))?),
        };
        let rest = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Ok((RunConfig::from_toml(&rest)?, artifacts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c, "{name}");
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn ttur_defaults() {
        let c = RunConfig::preset("desk-style-transfer").unwrap();
        assert_eq!(c.train.lr_g, 1e-4);
        assert_eq!(c.train.lr_d, 4.0 * c.train.lr_g);
        assert_eq!((c.train.beta1, c.train.beta2), (0.0, 0.9));
        assert_eq!(c.loss.weights(), LossWeights::STYLE_TRANSFER);
        assert_eq!(RunConfig::preset("desk-semantic").unwrap().loss.weights(), LossWeights::SEMANTIC);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = RunConfig::preset("desk-style-transfer").unwrap().to_toml();
        let typo = text.replacen("lambda_p", "lamda_p", 1);
        assert!(matches!(RunConfig::from_toml(&typo), Err(Error::Config(m)) if m.contains("lamda_p")));
        let extra = format!("{text}\n[extra]\nx = 1\n");
        assert!(RunConfig::from_toml(&extra).is_err());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::preset("desk-style-transfer").unwrap();
        c.apply_override("train.seed=9").unwrap();
        c.apply_override("net.ablations.no_ss = true").unwrap();
        c.apply_override("data.content_dir=some/dir").unwrap();
        assert_eq!(c.train.seed, 9);
        assert!(c.net.ablations.no_ss);
        assert_eq!(c.data.content_dir, Some(PathBuf::from("some/dir")));
        assert!(c.apply_override("train.sed=1").is_err());
        assert!(c.apply_override("noequals").is_err());
    }

    #[test]
    fn invalid_combinations() {
        let mut c = RunConfig::preset("desk-style-transfer").unwrap();
        c.data.height = 36;
        assert!(c.validate().is_err());
        let mut c = RunConfig::preset("desk-style-transfer").unwrap();
        c.train.task = TaskMode::SemanticSynthesis;
        assert!(c.validate().is_err());
        let mut c = RunConfig::preset("desk-style-transfer").unwrap();
        c.net.d_scales = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn manifest_round_trips_and_reads_as_config() {
        let m = RunManifest { config: RunConfig::preset("desk-semantic").unwrap(), artifacts: Artifacts::default() };
        let text = m.to_toml();
        let (c, a) = RunManifest::parse(&text).unwrap();
        assert_eq!(c, m.config);
        assert_eq!(a, Some(Artifacts::default()));
        let (plain, none) = RunManifest::parse(&m.config.to_toml()).unwrap();
        assert_eq!((plain, none), (m.config, None));
        assert!(RunManifest::parse(&format!("{text}\n[artifacts.extra]\nx = 1\n")).is_err());
    }
}
