//! Test-set evaluation, single-clip inference and baseline scoring.

use std::path::Path;

use rayon::prelude::*;
use rtsdoa_acoustics::wav::read_wav;
use rtsdoa_acoustics::{srp_phat_clip, DoaFrameLabels, SteeringGrid, HOP, SAMPLE_RATE, SILENCE};
use rtsdoa_autograd::{ParamStore, Real};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{example_from_waves, read_manifest, Example, ExampleSource};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, decode, MetricsReport, Scored};
use crate::model::ModelConfig;
use crate::train::{load_checkpoint, scene_step};

/// Frame-level class predictions for one scene.
pub fn predict<S: Real>(cfg: &ModelConfig, params: &ParamStore<S>, ex: &Example) -> Result<DoaFrameLabels> {
    let mut ex = ex.clone();
    ex.target = None;
    let (_, logits, _) = scene_step(cfg, params, &ex, false)?;
    Ok(decode(&logits, cfg.classes))
}

/// Score any per-scene predictor over a source.
pub fn evaluate_with<F>(source: &ExampleSource, pooled: bool, predictor: F) -> Result<MetricsReport>
where
    F: Fn(&Example) -> Result<DoaFrameLabels> + Sync,
{
    let scored: Vec<Scored> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let ex = source.get(i, false)?;
            let pred = predictor(&ex)?;
            if pred.len() != ex.labels.len() {
                return Err(Error::Metrics(format!(
                    "{}: {} predictions for {} frames",
                    ex.id,
                    pred.len(),
                    ex.labels.len()
                )));
            }
            Ok(Scored {
                sir_db: ex.sir_db,
                pred,
                truth: ex.labels,
            })
        })
        .collect::<Result<_>>()?;
    aggregate(&scored, pooled)
}

pub fn evaluate<S: Real>(
    cfg: &ModelConfig,
    params: &ParamStore<S>,
    source: &ExampleSource,
    pooled: bool,
) -> Result<MetricsReport> {
    evaluate_with(source, pooled, |ex| predict(cfg, params, ex))
}

/// Evaluate a saved checkpoint on `split` of a dataset directory.
pub fn evaluate_checkpoint(ckpt: &Path, data: &Path, split: &str) -> Result<MetricsReport> {
    let (cfg, params) = load_checkpoint::<f32>(ckpt)?;
    let source = ExampleSource::open(data, split)?;
    evaluate(&cfg.model, &params, &source, cfg.eval.pooled)
}

/// Per-frame output of [`infer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Centre of the analysis frame in seconds.
    pub time_s: f64,
    pub class: u8,
    /// `None` for the silence class.
    pub angle_deg: Option<f64>,
}

pub fn frame_records(pred: &DoaFrameLabels, classes: usize) -> Vec<FrameRecord> {
    let step = 360.0 / (classes - 1) as f64;
    pred.0
        .iter()
        .enumerate()
        .map(|(t, &c)| FrameRecord {
            frame: t,
            time_s: (HOP * t + HOP) as f64 / SAMPLE_RATE as f64,
            class: c,
            angle_deg: (c != SILENCE).then(|| c as f64 * step),
        })
        .collect()
}

/// Localize the anchor's speaker in a 6-channel mixture WAV.
pub fn infer(ckpt: &Path, mix: &Path, anchor: &Path) -> Result<Vec<FrameRecord>> {
    let (cfg, params) = load_checkpoint::<f32>(ckpt)?;
    infer_with(&cfg, &params, mix, anchor)
}

pub fn infer_with<S: Real>(cfg: &Config, params: &ParamStore<S>, mix: &Path, anchor: &Path) -> Result<Vec<FrameRecord>> {
    let mix = read_wav(mix)?;
    if mix.channels.len() != cfg.model.mics {
        return Err(Error::Data(format!(
            "mixture has {} channels, model expects {}",
            mix.channels.len(),
            cfg.model.mics
        )));
    }
    let anchor = read_wav(anchor)?;
    let anchor = anchor.channels.first().ok_or_else(|| Error::Data("empty anchor".into()))?;
    let frames = rtsdoa_acoustics::stft::frame_count(mix.len());
    let placeholder = DoaFrameLabels(vec![SILENCE; frames]);
    let ex = example_from_waves("infer", 0, &mix, None, anchor, placeholder)?;
    let pred = predict(&cfg.model, params, &ex)?;
    Ok(frame_records(&pred, cfg.model.classes))
}

/// SRP-PHAT on every mixture of `split`, scored against the frame labels.
pub fn evaluate_baseline(data: &Path, split: &str, cfg: &Config) -> Result<MetricsReport> {
    let dir = data.join(split);
    let entries = read_manifest(&dir)?;
    let geo = &cfg.geometry;
    let grid = SteeringGrid::new(&geo.array(), &geo.catalog(), geo.speed_of_sound);
    let scored: Vec<Scored> = entries
        .par_iter()
        .map(|e| {
            let mix = read_wav(&e.mix_path(&dir))?;
            let text = std::fs::read_to_string(e.labels_path(&dir))?;
            let truth = DoaFrameLabels::parse(&text)
                .ok_or_else(|| Error::Data(format!("bad labels for scene {}", e.index)))?;
            let pred = srp_phat_clip(&mix, &grid)?;
            Ok(Scored {
                sir_db: e.scene.sir_db,
                pred,
                truth,
            })
        })
        .collect::<Result<_>>()?;
    aggregate(&scored, cfg.eval.pooled)
}
