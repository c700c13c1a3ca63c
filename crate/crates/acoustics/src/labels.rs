use serde::{Deserialize, Serialize};

use crate::stft::{frame_count, FRAME_LEN, HOP};
use crate::SAMPLE_RATE;

pub const SILENCE: u8 = 36;
pub const CLASSES: usize = 37;
const VAD_FLOOR_DB: f64 = -40.0;

/// Per-frame DOA class: `k < 36` is `10k` degrees, 36 is silence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoaFrameLabels(pub Vec<u8>);

impl DoaFrameLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn voiced(&self) -> usize {
        self.0.iter().filter(|&&c| c != SILENCE).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 3);
        for c in &self.0 {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Option<DoaFrameLabels> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<u8>().ok().filter(|&c| (c as usize) < CLASSES))
            .collect::<Option<Vec<_>>>()
            .map(DoaFrameLabels)
    }
}

/// RMS of each raw (unwindowed) frame on the STFT grid.
pub fn frame_rms(x: &[f64]) -> Vec<f64> {
    (0..frame_count(x.len()))
        .map(|t| {
            let seg = &x[t * HOP..t * HOP + FRAME_LEN];
            (seg.iter().map(|v| v * v).sum::<f64>() / FRAME_LEN as f64).sqrt()
        })
        .collect()
}

/// A frame is voiced when its RMS exceeds the loudest frame's RMS minus 40 dB.
pub fn vad_labels(clean: &[f64]) -> Vec<bool> {
    let rms = frame_rms(clean);
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return vec![false; rms.len()];
    }
    let floor = peak * 10f64.powf(VAD_FLOOR_DB / 20.0);
    rms.iter().map(|&r| r > floor).collect()
}

/// Samples covered by at least one voiced frame of `clean`.
pub fn active_samples(clean: &[f64]) -> Vec<bool> {
    let mut mask = vec![false; clean.len()];
    for (t, v) in vad_labels(clean).into_iter().enumerate() {
        if v {
            mask[t * HOP..t * HOP + FRAME_LEN].fill(true);
        }
    }
    mask
}

/// First frame whose centre lies at or after the switch instant.
pub fn switch_frame(switch_time: f64) -> usize {
    let s = (switch_time * SAMPLE_RATE as f64).round();
    ((s - (FRAME_LEN / 2) as f64) / HOP as f64).ceil().max(0.0) as usize
}

/// Frame labels for a target moving from `initial` to `second` at `switch`.
pub fn doa_frame_labels(vad: &[bool], initial: usize, second: usize, switch: usize) -> DoaFrameLabels {
    DoaFrameLabels(
        vad.iter()
            .enumerate()
            .map(|(t, &v)| match (v, t < switch) {
                (false, _) => SILENCE,
                (true, true) => initial as u8,
                (true, false) => second as u8,
            })
            .collect(),
    )
}
