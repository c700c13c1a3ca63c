//! Flat `key=value` experiment configuration with dotted sections.
//!
//! ```text
//! # comments start with '#'
//! model.preset=standard
//! model.enh_channels=16
//! train.lr=0.01
//! scene.t60=0.2,0.3,0.4,0.5,0.6,0.7
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rtsdoa_acoustics::{ArrayGeometry, ReflectionModel, RoomSpec, SceneConfig, SourceCatalog};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputMode, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub batch: usize,
    pub epochs: usize,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            plateau_patience: 2,
            lr_factor: 0.5,
            batch: 16,
            epochs: 100,
            min_lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub room_dims: [f64; 3],
    pub speed_of_sound: f64,
    pub reflection: ReflectionModel,
    pub max_order: Option<usize>,
    pub array_radius: f64,
    pub array_height: f64,
    pub source_distance: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            room_dims: [5.0, 6.0, 3.0],
            speed_of_sound: 343.0,
            reflection: ReflectionModel::Calibrated,
            max_order: None,
            array_radius: 0.05,
            array_height: 1.5,
            source_distance: 1.5,
        }
    }
}

impl GeometryConfig {
    pub fn room(&self, t60: f64) -> RoomSpec {
        RoomSpec {
            dims: self.room_dims,
            t60,
            speed_of_sound: self.speed_of_sound,
            max_order: self.max_order,
            reflection: self.reflection,
        }
    }

    pub fn array(&self) -> ArrayGeometry {
        let [x, y, _] = self.room_dims;
        ArrayGeometry::circular([x / 2.0, y / 2.0, self.array_height], self.array_radius)
    }

    pub fn catalog(&self) -> SourceCatalog {
        SourceCatalog::around(&self.array(), self.source_distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub synthetic_speakers: usize,
    pub utterances_per_speaker: usize,
    pub noise_clips: usize,
    pub dev_speakers: usize,
    pub test_speakers: usize,
    pub anchor_spatial: bool,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 20_000,
            dev: 600,
            test: 1_000,
            min_seconds: 3.0,
            max_seconds: 16.0,
            speech_dir: None,
            noise_dir: None,
            synthetic_speakers: 40,
            utterances_per_speaker: 4,
            noise_clips: 8,
            dev_speakers: 4,
            test_speakers: 8,
            anchor_spatial: false,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pooled: bool,
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pooled: false,
            split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub geometry: GeometryConfig,
    pub eval: EvalConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        let g = &mut self.geometry;
        match key {
            "model.preset" => {
                *m = match v {
                    "standard" => ModelConfig::standard(),
                    "large" => ModelConfig::large(),
                    "mini" => ModelConfig::mini(),
                    _ => return Err(Error::Config(format!("unknown model preset `{v}`"))),
                }
            }
            "model.mics" => m.mics = parse(key, v)?,
            "model.freq_bins" => m.freq_bins = parse(key, v)?,
            "model.enh_channels" => m.enh_channels = parse(key, v)?,
            "model.enh_layers" => m.enh_layers = parse(key, v)?,
            "model.spatial_channels" => m.spatial_channels = parse(key, v)?,
            "model.hidden" => m.hidden = parse(key, v)?,
            "model.ffn_hidden" => m.ffn_hidden = parse(key, v)?,
            "model.blocks" => m.blocks = parse(key, v)?,
            "model.classes" => m.classes = parse(key, v)?,
            "model.heads" => m.heads = parse(key, v)?,
            "model.fconv_kernel" => m.fconv_kernel = parse(key, v)?,
            "model.tconv_kernel" => m.tconv_kernel = parse(key, v)?,
            "model.glu_kernel" => {
                let k: Vec<usize> = parse_list(key, v)?;
                if k.len() != 2 {
                    return Err(Error::Config(format!("`{key}` needs two values (time,freq)")));
                }
                m.glu_kernel = (k[0], k[1]);
            }
            "model.speaker_kernel_t" => m.speaker_kernel_t = parse(key, v)?,
            "model.input_mode" => {
                m.input_mode = match v {
                    "complex" => InputMode::Complex,
                    "magnitude" => InputMode::Magnitude,
                    _ => return Err(Error::Config(format!("`{key}`: expected complex or magnitude"))),
                }
            }
            "model.use_enhancement" => m.use_enhancement = parse_bool(key, v)?,
            "model.use_speaker" => m.use_speaker = parse_bool(key, v)?,
            "model.fband_shared" => m.fband_shared = parse_bool(key, v)?,
            "model.causal_attention" => m.causal_attention = parse_bool(key, v)?,
            "model.causal_ffn" => m.causal_ffn = parse_bool(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.plateau_patience" => t.plateau_patience = parse(key, v)?,
            "train.lr_factor" => t.lr_factor = parse(key, v)?,
            "train.batch" => t.batch = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.min_lr" => t.min_lr = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "data.train" => d.train = parse(key, v)?,
            "data.dev" => d.dev = parse(key, v)?,
            "data.test" => d.test = parse(key, v)?,
            "data.min_seconds" => d.min_seconds = parse(key, v)?,
            "data.max_seconds" => d.max_seconds = parse(key, v)?,
            "data.speech_dir" => d.speech_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.noise_dir" => d.noise_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.synthetic_speakers" => d.synthetic_speakers = parse(key, v)?,
            "data.utterances_per_speaker" => d.utterances_per_speaker = parse(key, v)?,
            "data.noise_clips" => d.noise_clips = parse(key, v)?,
            "data.dev_speakers" => d.dev_speakers = parse(key, v)?,
            "data.test_speakers" => d.test_speakers = parse(key, v)?,
            "data.anchor_spatial" => d.anchor_spatial = parse_bool(key, v)?,
            "scene.t60" => d.scene.t60_choices = parse_list(key, v)?,
            "scene.sir_min" => d.scene.sir_range.0 = parse(key, v)?,
            "scene.sir_max" => d.scene.sir_range.1 = parse(key, v)?,
            "scene.snr_min" => d.scene.snr_range.0 = parse(key, v)?,
            "scene.snr_max" => d.scene.snr_range.1 = parse(key, v)?,
            "scene.interferer" => d.scene.interferer = parse_bool(key, v)?,
            "scene.noise" => d.scene.noise = parse_bool(key, v)?,
            "scene.moving" => d.scene.moving = parse_bool(key, v)?,
            "scene.target_directions" => {
                 d.scene.target_directions = if v.is_empty() || v == "all" { None } else { Some(parse_list(key, v)?) }
            }
            "room.dims" => {
                let x: Vec<f64> = parse_list(key, v)?;
                if x.len() != 3 {
                    return Err(Error::Config(format!("`{key}` needs three values")));
                }
                g.room_dims = [x[0], x[1], x[2]];
            }
            "room.speed_of_sound" => g.speed_of_sound = parse(key, v)?,
            "room.reflection" => {
                g.reflection = match v {
                    "calibrated" => ReflectionModel::Calibrated,
                    "sabine" => ReflectionModel::Sabine,
                    _ => return Err(Error::Config(format!("`{key}`: expected calibrated or sabine"))),
                }
            }
            "room.max_order" => g.max_order = if v == "none" || v.is_empty() { None } else { Some(parse(key, v)?) },
            "array.radius" => g.array_radius = parse(key, v)?,
            "array.height" => g.array_height = parse(key, v)?,
            "array.source_distance" => g.source_distance = parse(key, v)?,
            "eval.pooled" => self.eval.pooled = parse_bool(key, v)?,
            "eval.split" => self.eval.split = v.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch == 0 || !(t.lr_factor > 0.0 && t.lr_factor < 1.0) {
            return Err(Error::Config("train: lr > 0, batch >= 1 and 0 < lr_factor < 1 required".into()));
        }
        let d = &self.data;
        if !(d.min_seconds > 0.0 && d.max_seconds >= d.min_seconds) {
            return Err(Error::Config("data: need 0 < min_seconds <= max_seconds".into()));
        }
        let s = &d.scene;
        if s.sir_range.0 > s.sir_range.1 || s.snr_range.0 > s.snr_range.1 || s.t60_choices.is_empty() {
            return Err(Error::Config("scene: empty SIR/SNR range or T60 list".into()));
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`FromStr`] accepts.
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        let s = &d.scene;
        let g = &self.geometry;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k}={v}");
        };
        kv("model.mics", m.mics.to_string());
        kv("model.freq_bins", m.freq_bins.to_string());
        kv("model.enh_channels", m.enh_channels.to_string());
        kv("model.enh_layers", m.enh_layers.to_string());
        kv("model.spatial_channels", m.spatial_channels.to_string());
        kv("model.hidden", m.hidden.to_string());
        kv("model.ffn_hidden", m.ffn_hidden.to_string());
        kv("model.blocks", m.blocks.to_string());
        kv("model.classes", m.classes.to_string());
        kv("model.heads", m.heads.to_string());
        kv("model.fconv_kernel", m.fconv_kernel.to_string());
        kv("model.tconv_kernel", m.tconv_kernel.to_string());
        kv("model.glu_kernel", format!("{},{}", m.glu_kernel.0, m.glu_kernel.1));
        kv("model.speaker_kernel_t", m.speaker_kernel_t.to_string());
        kv(
            "model.input_mode",
            match m.input_mode {
                InputMode::Complex => "complex",
                InputMode::Magnitude => "magnitude",
            }
            .into(),
        );
        kv("model.use_enhancement", m.use_enhancement.to_string());
        kv("model.use_speaker", m.use_speaker.to_string());
        kv("model.fband_shared", m.fband_shared.to_string());
        kv("model.causal_attention", m.causal_attention.to_string());
        kv("model.causal_ffn", m.causal_ffn.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.plateau_patience", t.plateau_patience.to_string());
        kv("train.lr_factor", t.lr_factor.to_string());
        kv("train.batch", t.batch.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.min_lr", t.min_lr.to_string());
        kv("train.seed", t.seed.to_string());
        kv("data.train", d.train.to_string());
        kv("data.dev", d.dev.to_string());
        kv("data.test", d.test.to_string());
        kv("data.min_seconds", d.min_seconds.to_string());
        kv("data.max_seconds", d.max_seconds.to_string());
        kv("data.speech_dir", d.speech_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("data.noise_dir", d.noise_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("data.synthetic_speakers", d.synthetic_speakers.to_string());
        kv("data.utterances_per_speaker", d.utterances_per_speaker.to_string());
        kv("data.noise_clips", d.noise_clips.to_string());
        kv("data.dev_speakers", d.dev_speakers.to_string());
        kv("data.test_speakers", d.test_speakers.to_string());
        kv("data.anchor_spatial", d.anchor_spatial.to_string());
        kv("scene.t60", join(&s.t60_choices));
        kv("scene.sir_min", s.sir_range.0.to_string());
        kv("scene.sir_max", s.sir_range.1.to_string());
        kv("scene.snr_min", s.snr_range.0.to_string());
        kv("scene.snr_max", s.snr_range.1.to_string());
        kv("scene.interferer", s.interferer.to_string());
        kv("scene.noise", s.noise.to_string());
        kv("scene.moving", s.moving.to_string());
        kv("scene.target_directions", s.target_directions.as_deref().map(join).unwrap_or_else(|| "all".into()));
        kv("room.dims", join(&g.room_dims));
        kv("room.speed_of_sound", g.speed_of_sound.to_string());
        kv(
            "room.reflection",
            match g.reflection {
                ReflectionModel::Calibrated => "calibrated",
                ReflectionModel::Sabine => "sabine",
            }
            .into(),
        );
        kv("room.max_order", g.max_order.map_or("none".into(), |o| o.to_string()));
        kv("array.radius", g.array_radius.to_string());
        kv("array.height", g.array_height.to_string());
        kv("array.source_distance", g.source_distance.to_string());
        kv("eval.pooled", self.eval.pooled.to_string());
        kv("eval.split", self.eval.split.clone());
        o
    }
}

impl FromStr for Config {
    type Err = Error;

    /// Presets are applied before any other `model.*` key, wherever they appear.
    fn from_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Config::default();
        for (k, v) in pairs.iter().filter(|(k, _)| k == "model.preset") {
            cfg.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "model.preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
