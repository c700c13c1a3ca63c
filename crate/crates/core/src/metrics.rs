use std::collections::BTreeMap;

use rtsdoa_acoustics::{DoaFrameLabels, SourceCatalog, SILENCE};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame argmax; ties go to the lowest class index.
pub fn decode(logits: &[f64], classes: usize) -> DoaFrameLabels {
    DoaFrameLabels(
        logits
            .chunks(classes)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect(),
    )
}

fn check_len(pred: &DoaFrameLabels, truth: &DoaFrameLabels) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn voicing_errors(pred: &DoaFrameLabels, truth: &DoaFrameLabels) -> usize {
    pred.0
        .iter()
        .zip(&truth.0)
        .filter(|(p, t)| (**p == SILENCE) != (**t == SILENCE))
        .count()
}

/// Fraction of frames whose speech/silence decision differs.
pub fn vde(pred: &DoaFrameLabels, truth: &DoaFrameLabels) -> Result<f64> {
    check_len(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::Metrics("vde of an empty sequence".into()));
    }
    Ok(voicing_errors(pred, truth) as f64 / truth.len() as f64)
}

/// Angular distance on the circle between two direction classes, degrees.
pub fn circular_distance_deg(a: u8, b: u8) -> f64 {
    let d = (SourceCatalog::angle_deg(a as usize) - SourceCatalog::angle_deg(b as usize)).abs() % 360.0;
    d.min(360.0 - d)
}

fn ar_counts(pred: &DoaFrameLabels, truth: &DoaFrameLabels) -> (usize, usize) {
    let mut correct = 0;
    let mut voiced = 0;
    for (&p, &t) in pred.0.iter().zip(&truth.0) {
        if t == SILENCE {
            continue;
        }
        voiced += 1;
        if p != SILENCE && circular_distance_deg(p, t) <= 10.0 + 1e-9 {
            correct += 1;
        }
    }
    (correct, voiced)
}

/// Fraction of voiced reference frames with an estimate within ±10°.
pub fn ar(pred: &DoaFrameLabels, truth: &DoaFrameLabels) -> Result<f64> {
    check_len(pred, truth)?;
    let (correct, voiced) = ar_counts(pred, truth);
    if voiced == 0 {
        return Err(Error::Metrics("accuracy rate needs at least one voiced frame".into()));
    }
    Ok(correct as f64 / voiced as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub vde: f64,
    pub ar: f64,
    pub utterances: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vde: f64,
    pub ar: f64,
    pub per_sir: BTreeMap<String, BucketMetrics>,
    pub utterances: usize,
    pub frames: usize,
    pub pooled: bool,
}

/// One evaluated utterance.
#[derive(Debug, Clone)]
pub struct Scored {
    pub sir_db: i32,
    pub pred: DoaFrameLabels,
    pub truth: DoaFrameLabels,
}

#[derive(Default)]
struct Acc {
    utterances: usize,
    frames: usize,
    voicing_errors: usize,
    correct: usize,
    voiced: usize,
    vde_sum: f64,
    ar_sum: f64,
    ar_utts: usize,
}

impl Acc {
    fn add(&mut self, s: &Scored) {
        let (c, v) = ar_counts(&s.pred, &s.truth);
        let e = voicing_errors(&s.pred, &s.truth);
        self.utterances += 1;
        self.frames += s.truth.len();
        self.voicing_errors += e;
        self.correct += c;
        self.voiced += v;
        if !s.truth.is_empty() {
            self.vde_sum += e as f64 / s.truth.len() as f64;
        }
        if v > 0 {
            self.ar_sum += c as f64 / v as f64;
            self.ar_utts += 1;
        }
    }

    fn finish(&self, pooled: bool) -> BucketMetrics {
        let div = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        let (vde, ar) = if pooled {
            (div(self.voicing_errors as f64, self.frames), div(self.correct as f64, self.voiced))
        } else {
            (div(self.vde_sum, self.utterances), div(self.ar_sum, self.ar_utts))
        };
        BucketMetrics {
            vde,
            ar,
            utterances: self.utterances,
            frames: self.frames,
        }
    }
}

/// VDE/AR overall and per SIR bucket; per-utterance means unless `pooled`.
pub fn aggregate(results: &[Scored], pooled: bool) -> Result<MetricsReport> {
    let mut all = Acc::default();
    let mut buckets: BTreeMap<i32, Acc> = BTreeMap::new();
    for s in results {
        check_len(&s.pred, &s.truth)?;
        all.add(s);
        buckets.entry(s.sir_db).or_default().add(s);
    }
    let overall = all.finish(pooled);
    Ok(MetricsReport {
        vde: overall.vde,
        ar: overall.ar,
        per_sir: buckets.iter().map(|(k, a)| (k.to_string(), a.finish(pooled))).collect(),
        utterances: overall.utterances,
        frames: overall.frames,
        pooled,
    })
}
