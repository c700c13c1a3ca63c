//! Dataset synthesis on disk and feature loading for training and evaluation.
//!
//! Layout of a synthesized dataset:
//!
//! ```text
//! DIR/config.txt
//! DIR/{train,dev,test}/manifest.jsonl
//! DIR/{split}/{idx}_mix.wav      6-channel mixture
//! DIR/{split}/{idx}_target.wav   6-channel reverberant target image
//! DIR/{split}/{idx}_anchor.wav   mono enrollment utterance
//! DIR/{split}/{idx}_labels.txt   one class index per frame
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rtsdoa_acoustics::labels::{doa_frame_labels, switch_frame, vad_labels};
use rtsdoa_acoustics::wav::{read_wav, write_wav};
use rtsdoa_acoustics::{
    magnitude_features, mix_scene, render_moving_source, render_static, sample_scene, stack_spectrogram, stft,
    stft_multi, ClipPool, DoaFrameLabels, FeatureStack, MultichannelWaveform, SceneSpec, SAMPLE_RATE,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, DataConfig, GeometryConfig};
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: String,
    pub speaker: String,
    pub scene: SceneSpec,
    pub samples: usize,
    pub frames: usize,
    pub voiced_frames: usize,
    pub interferer_gain: f64,
    pub noise_gain: f64,
}

impl ManifestEntry {
    pub fn stem(&self) -> String {
        format!("{:06}", self.index)
    }

    pub fn mix_path(&self, split_dir: &Path) -> PathBuf {
        split_dir.join(format!("{}_mix.wav", self.stem()))
    }

    pub fn target_path(&self, split_dir: &Path) -> PathBuf {
        split_dir.join(format!("{}_target.wav", self.stem()))
    }

    pub fn anchor_path(&self, split_dir: &Path) -> PathBuf {
        split_dir.join(format!("{}_anchor.wav", self.stem()))
    }

    pub fn labels_path(&self, split_dir: &Path) -> PathBuf {
        split_dir.join(format!("{}_labels.txt", self.stem()))
    }
}

/// A scene rendered in memory, with its separate components kept.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub scene: SceneSpec,
    pub mixture: MultichannelWaveform,
    /// Reverberant target image at every microphone.
    pub target: MultichannelWaveform,
    /// Interferer and noise images before scaling.
    pub interferer: Option<MultichannelWaveform>,
    pub noise: Option<MultichannelWaveform>,
    pub interferer_gain: f64,
    pub noise_gain: f64,
    pub anchor: Vec<f64>,
    pub labels: DoaFrameLabels,
}

#[derive(Debug, Clone)]
pub struct SplitPools {
    pub train: ClipPool,
    pub dev: ClipPool,
    pub test: ClipPool,
    pub noise: ClipPool,
}

impl SplitPools {
    pub fn speech(&self, split: &str) -> Result<&ClipPool> {
        match split {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(Error::Data(format!("unknown split `{split}`"))),
        }
    }

    /// Errors if any speaker appears in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let sets: Vec<BTreeSet<String>> = [&self.train, &self.dev, &self.test]
            .iter()
            .map(|p| p.speakers().into_iter().collect())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                if let Some(s) = sets[i].intersection(&sets[j]).next() {
                    return Err(Error::Data(format!(
                        "speaker `{s}` appears in both {} and {}",
                        SPLITS[i], SPLITS[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Speech and noise pools, with speakers partitioned into train/dev/test.
pub fn build_pools(cfg: &DataConfig, seed: u64) -> Result<SplitPools> {
    let speech = match &cfg.speech_dir {
        Some(dir) => {
            let pool = ClipPool::from_dir(dir)?;
            ClipPool {
                clips: pool
                    .clips
                    .into_iter()
                    .filter(|c| c.seconds >= cfg.min_seconds && c.seconds <= cfg.max_seconds)
                    .collect(),
            }
        }
        None => ClipPool::synthetic_speech(
            cfg.synthetic_speakers,
            cfg.utterances_per_speaker,
            (cfg.min_seconds, cfg.max_seconds),
            seed,
        ),
    };
    let noise = match &cfg.noise_dir {
        Some(dir) => ClipPool::from_dir(dir)?,
        None => ClipPool::synthetic_noise(cfg.noise_clips, cfg.max_seconds, seed ^ 0x6e6f_6973_65),
    };
    let mut speakers = speech.speakers();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7370_6c69_74));
    let need = cfg.dev_speakers + cfg.test_speakers;
    if speakers.len() < need + 2 {
        return Err(Error::Data(format!(
            "{} speakers cannot cover {} dev + {} test speakers and a training set",
            speakers.len(),
            cfg.dev_speakers,
            cfg.test_speakers
        )));
    }
    let test = speakers.split_off(speakers.len() - cfg.test_speakers);
    let dev = speakers.split_off(speakers.len() - cfg.dev_speakers);
    let pools = SplitPools {
        train: speech.restricted_to(&speakers),
        dev: speech.restricted_to(&dev),
        test: speech.restricted_to(&test),
        noise,
    };
    pools.check_disjoint()?;
    Ok(pools)
}

/// Per-scene seed, unique for each `(seed, split, index)`.
pub fn scene_seed(seed: u64, split: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((split as u64) << 40)
        .wrapping_add(index as u64)
}

/// Repeat `x` cyclically (or cut it) to exactly `len` samples.
pub fn fit_length(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    x.iter().cycle().take(len).copied().collect()
}

/// Render every component of `scene` and mix them.
pub fn render_scene(
    scene: &SceneSpec,
    speech: &ClipPool,
    noise: &ClipPool,
    geometry: &GeometryConfig,
    anchor_spatial: bool,
) -> Result<RenderedScene> {
    let clip = |pool: &ClipPool, id: &str| -> Result<Vec<f64>> {
        pool.get(id)
            .ok_or_else(|| Error::Data(format!("clip `{id}` not in pool")))?
            .load()
            .map_err(Error::from)
    };
    let room = geometry.room(scene.t60);
    let array = geometry.array();
    let catalog = geometry.catalog();
    let dry = clip(speech, &scene.target_clip)?;
    let len = dry.len();
    let target = render_moving_source(&dry, scene, &catalog, &room, &array)?;
    let interferer = scene
        .interferer_clip
        .as_deref()
        .map(|id| -> Result<_> {
            let x = fit_length(&clip(speech, id)?, len);
            Ok(render_static(&x, catalog.positions[scene.interferer_idx], &room, &array)?)
        })
        .transpose()?;
    let noise_img = scene
        .noise_clip
        .as_deref()
        .map(|id| -> Result<_> {
            let x = fit_length(&clip(noise, id)?, len);
            Ok(render_static(&x, catalog.positions[scene.noise_idx], &room, &array)?)
        })
        .transpose()?;
    let mixed = mix_scene(&target, interferer.as_ref(), noise_img.as_ref(), scene.sir_db, scene.snr_db)?;
    let anchor_dry = clip(speech, &scene.anchor_clip)?;
    let anchor = if anchor_spatial {
        render_static(&anchor_dry, catalog.positions[scene.anchor_idx], &room, &array)?
            .channels
            .swap_remove(0)
    } else {
        anchor_dry
    };
    let vad = vad_labels(&dry);
    let labels = doa_frame_labels(
        &vad,
        scene.target_initial_idx,
        scene.target_second_idx,
        switch_frame(scene.switch_time),
    );
    Ok(RenderedScene {
        scene: scene.clone(),
        mixture: mixed.mixture,
        target,
        interferer,
        noise: noise_img,
        interferer_gain: mixed.interferer_gain,
        noise_gain: mixed.noise_gain,
        anchor,
        labels,
    })
}

/// Number of scenes requested for `split`.
fn split_count(cfg: &DataConfig, split: &str) -> usize {
    match split {
        "train" => cfg.train,
        "dev" => cfg.dev,
        _ => cfg.test,
    }
}

/// Synthesize all three splits under `out`. Identical `(cfg, seed)` give
/// byte-identical output.
pub fn synthesize_dataset(cfg: &Config, seed: u64, out: &Path) -> Result<Vec<(String, usize)>> {
    cfg.validate()?;
    let pools = build_pools(&cfg.data, seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_kv())?;
    let mut summary = Vec::new();
    for (si, split) in SPLITS.iter().enumerate() {
        let dir = out.join(split);
        fs::create_dir_all(&dir)?;
        let speech = pools.speech(split)?;
        let n = split_count(&cfg.data, split);
        let entries: Vec<ManifestEntry> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<ManifestEntry> {
                let scene = sample_scene(scene_seed(seed, si, i), speech, &pools.noise, &cfg.data.scene)?;
                let r = render_scene(&scene, speech, &pools.noise, &cfg.geometry, cfg.data.anchor_spatial)?;
                let speaker = speech.get(&scene.target_clip).map(|c| c.speaker.clone()).unwrap_or_default();
                let entry = ManifestEntry {
                    index: i,
                    split: split.to_string(),
                    speaker,
                    samples: r.mixture.len(),
                    frames: r.labels.len(),
                    voiced_frames: r.labels.voiced(),
                    interferer_gain: r.interferer_gain,
                    noise_gain: r.noise_gain,
                    scene,
                };
                write_wav(&entry.mix_path(&dir), &r.mixture)?;
                write_wav(&entry.target_path(&dir), &r.target)?;
                write_wav(&entry.anchor_path(&dir), &MultichannelWaveform::mono(r.anchor))?;
                fs::write(entry.labels_path(&dir), r.labels.to_text())?;
                Ok(entry)
            })
            .collect::<Result<_>>()?;
        let mut f = fs::File::create(dir.join("manifest.jsonl"))?;
        for e in &entries {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        summary.push((split.to_string(), entries.len()));
    }
    Ok(summary)
}

pub fn read_manifest(split_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = split_dir.join("manifest.jsonl");
    let f = fs::File::open(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Network-ready features for one scene.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub sir_db: i32,
    /// Mixture stack `[2M, T, F]`, scaled to unit mean square.
    pub mixture: FeatureStack,
    /// Target stack scaled by the same factor as the mixture.
    pub target: Option<FeatureStack>,
    /// Anchor magnitude `[1, Ta, F]` scaled to unit mean square.
    pub anchor: FeatureStack,
    pub labels: DoaFrameLabels,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.mixture.frames
    }

    pub fn truncate(&self, frames: usize) -> Example {
        let mut labels = self.labels.clone();
        labels.0.truncate(frames);
        Example {
            id: self.id.clone(),
            sir_db: self.sir_db,
            mixture: self.mixture.truncate(frames),
            target: self.target.as_ref().map(|t| t.truncate(frames)),
            anchor: self.anchor.clone(),
            labels,
        }
    }
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn scale(stack: &mut FeatureStack, s: f64) {
    stack.data.iter_mut().for_each(|v| *v *= s);
}

/// Build features from waveforms. `labels` must match the mixture's frame count.
pub fn example_from_waves(
    id: impl Into<String>,
    sir_db: i32,
    mixture: &MultichannelWaveform,
    target: Option<&MultichannelWaveform>,
    anchor: &[f64],
    labels: DoaFrameLabels,
) -> Result<Example> {
    let mut mix = stack_spectrogram(&stft_multi(&mixture.channels)?);
    if labels.len() != mix.frames {
        return Err(Error::Data(format!(
            "{} labels for {} frames",
            labels.len(),
            mix.frames
        )));
    }
    let ms = mean_square(&mix.data);
    let s = if ms > 0.0 { ms.sqrt().recip() } else { 1.0 };
    scale(&mut mix, s);
    let target = target
        .map(|t| -> Result<FeatureStack> {
            let mut st = stack_spectrogram(&stft_multi(&t.channels)?);
            if st.frames != mix.frames || st.channels != mix.channels {
                return Err(Error::Data("target and mixture shapes differ".into()));
            }
            scale(&mut st, s);
            Ok(st)
        })
        .transpose()?;
    let mut anc = magnitude_features(&stft(anchor)?);
    let ams = mean_square(&anc.data);
    if ams > 0.0 {
        scale(&mut anc, ams.sqrt().recip());
    }
    Ok(Example {
        id: id.into(),
        sir_db,
        mixture: mix,
        target,
        anchor: anc,
        labels,
    })
}

impl RenderedScene {
    pub fn example(&self, id: impl Into<String>) -> Result<Example> {
        example_from_waves(
            id,
            self.scene.sir_db,
            &self.mixture,
            Some(&self.target),
            &self.anchor,
            self.labels.clone(),
        )
    }
}

/// Load one scene from a split directory.
pub fn load_example(split_dir: &Path, entry: &ManifestEntry, with_target: bool) -> Result<Example> {
    let mix = read_wav(&entry.mix_path(split_dir))?;
    let target = if with_target {
        Some(read_wav(&entry.target_path(split_dir))?)
    } else {
        None
    };
    let anchor = read_wav(&entry.anchor_path(split_dir))?;
    let anchor = anchor
        .channels
        .first()
        .ok_or_else(|| Error::Data("empty anchor".into()))?;
    let text = fs::read_to_string(entry.labels_path(split_dir))?;
    let labels = DoaFrameLabels::parse(&text)
        .ok_or_else(|| Error::Data(format!("bad labels for scene {}", entry.index)))?;
    example_from_waves(
        format!("{}/{}", entry.split, entry.stem()),
        entry.scene.sir_db,
        &mix,
        target.as_ref(),
        anchor,
        labels,
    )
}

/// Duration of the anchor and mixture in seconds, for logs.
pub fn seconds(samples: usize) -> f64 {
    samples as f64 / SAMPLE_RATE as f64
}

/// Scenes available to the trainer or evaluator.
#[derive(Debug, Clone)]
pub enum ExampleSource {
    Disk { dir: PathBuf, entries: Vec<ManifestEntry> },
    Memory(Vec<Example>),
}

impl ExampleSource {
    pub fn open(data_dir: &Path, split: &str) -> Result<Self> {
        let dir = data_dir.join(split);
        let entries = read_manifest(&dir)?;
        Ok(ExampleSource::Disk { dir, entries })
    }

    pub fn len(&self) -> usize {
        match self {
            ExampleSource::Disk { entries, .. } => entries.len(),
            ExampleSource::Memory(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self, i: usize) -> usize {
        match self {
            ExampleSource::Disk { entries, .. } => entries[i].frames,
            ExampleSource::Memory(v) => v[i].frames(),
        }
    }

    pub fn get(&self, i: usize, with_target: bool) -> Result<Example> {
        match self {
            ExampleSource::Disk { dir, entries } => load_example(dir, &entries[i], with_target),
            ExampleSource::Memory(v) => {
                let mut e = v[i].clone();
                if !with_target {
                    e.target = None;
                }
                Ok(e)
            }
        }
    }
}
