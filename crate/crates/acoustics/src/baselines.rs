use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{distance, ArrayGeometry, SourceCatalog};
use crate::labels::{vad_labels, DoaFrameLabels, SILENCE};
use crate::stft::{frame_count, hann_window, FRAME_LEN, HOP};
use crate::{MultichannelWaveform, SAMPLE_RATE};

/// Baseline analysis frame (32 ms).
pub const BASELINE_FRAME: usize = 512;
const SILENT_ENERGY: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccEstimate {
    /// Lag of `x_j` behind `x_i` in samples.
    pub delay: f64,
    /// PHAT correlation at the peak; 1 for identical frames.
    pub peak: f64,
}

fn spectrum(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

fn phat(z: Complex64) -> Complex64 {
    let m = z.norm();
    if m > 1e-12 {
        z / m
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Generalised cross-correlation with phase transform on Hann-windowed
/// frames, with parabolic peak refinement.
pub fn gcc_phat(xi: &[f64], xj: &[f64]) -> Result<GccEstimate> {
    if xi.len() != xj.len() {
        return Err(Error::Shape(format!("frames of {} and {} samples", xi.len(), xj.len())));
    }
    if xi.len() < 256 {
        return Err(Error::TooShort { len: xi.len(), frame: 256 });
    }
    if xi.iter().all(|&v| v == 0.0) || xj.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroFrame);
    }
    let len = xi.len();
    let n = (2 * len).next_power_of_two();
    let window = hann_window(len);
    let mut planner = FftPlanner::new();
    let windowed = |x: &[f64]| x.iter().zip(&window).map(|(a, b)| a * b).collect::<Vec<_>>();
    let a = spectrum(&windowed(xi), n, &mut planner);
    let b = spectrum(&windowed(xj), n, &mut planner);
    let mut g: Vec<Complex64> = a.iter().zip(&b).map(|(p, q)| phat(p * q.conj())).collect();
    planner.plan_fft_inverse(n).process(&mut g);
    let r = |lag: i64| g[lag.rem_euclid(n as i64) as usize].re / n as f64;
    let max_lag = len as i64 - 1;
    let (mut best, mut best_v) = (0i64, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let v = r(lag);
        if v > best_v {
            best = lag;
            best_v = v;
        }
    }
    let (l, c, rr) = (r(best - 1), best_v, r(best + 1));
    let denom = l - 2.0 * c + rr;
    let frac = if denom.abs() > 1e-15 && best.abs() < max_lag {
        (0.5 * (l - rr) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(GccEstimate {
        delay: -(best as f64 + frac),
        peak: best_v,
    })
}

/// Candidate directions with per-pair TDOAs and precomputed steering phasors.
#[derive(Debug, Clone)]
pub struct SteeringGrid {
    pub angles_deg: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `tdoa[angle][pair]` in seconds.
    pub tdoa: Vec<Vec<f64>>,
    frame: usize,
    phasors: Vec<Complex64>,
}

impl SteeringGrid {
    pub fn new(array: &ArrayGeometry, catalog: &SourceCatalog, speed_of_sound: f64) -> Self {
        let m = array.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let tdoa: Vec<Vec<f64>> = catalog
            .positions
            .iter()
            .map(|&s| {
                pairs
                    .iter()
                    .map(|&(i, j)| {
                        (distance(array.mic_positions[i], s) - distance(array.mic_positions[j], s)) / speed_of_sound
                    })
                    .collect()
            })
            .collect();
        let frame = BASELINE_FRAME;
        let bins = frame / 2 + 1;
        let mut phasors = Vec::with_capacity(tdoa.len() * pairs.len() * bins);
        for row in &tdoa {
            for &tau in row {
                for k in 0..bins {
                    let w = 2.0 * PI * k as f64 * SAMPLE_RATE as f64 / frame as f64;
                    phasors.push(Complex64::from_polar(1.0, w * tau));
                }
            }
        }
        SteeringGrid {
            angles_deg: (0..catalog.len()).map(SourceCatalog::angle_deg).collect(),
            pairs,
            tdoa,
            frame,
            phasors,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.frame
    }
}

/// Steered response power for each grid direction.
pub fn srp_power(frame: &[&[f64]], grid: &SteeringGrid) -> Result<Vec<f64>> {
    let n = grid.frame;
    if frame.iter().any(|c| c.len() != n) {
        return Err(Error::Shape(format!("srp-phat expects {n}-sample frames")));
    }
    let window = hann_window(n);
    let mut planner = FftPlanner::new();
    let specs: Vec<Vec<Complex64>> = frame
        .iter()
        .map(|c| {
            let w: Vec<f64> = c.iter().zip(&window).map(|(a, b)| a * b).collect();
            spectrum(&w, n, &mut planner)
        })
        .collect();
    let bins = n / 2 + 1;
    let cross: Vec<Vec<Complex64>> = grid
        .pairs
        .iter()
        .map(|&(i, j)| (0..bins).map(|k| phat(specs[i][k] * specs[j][k].conj())).collect())
        .collect();
    let per_angle = grid.pairs.len() * bins;
    Ok((0..grid.angles_deg.len())
        .map(|a| {
            let ph = &grid.phasors[a * per_angle..(a + 1) * per_angle];
            cross
                .iter()
                .enumerate()
                .map(|(p, g)| {
                    g.iter()
                        .zip(&ph[p * bins..(p + 1) * bins])
                        .skip(1)
                        .map(|(x, y)| (x * y).re)
                        .sum::<f64>()
                })
                .sum()
        })
        .collect())
}

/// Direction class maximising SRP-PHAT; silence for an empty frame.
pub fn srp_phat(frame: &[&[f64]], grid: &SteeringGrid) -> Result<u8> {
    let energy: f64 = frame.iter().flat_map(|c| c.iter()).map(|v| v * v).sum();
    if energy < SILENT_ENERGY {
        return Ok(SILENCE);
    }
    let p = srp_power(frame, grid)?;
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    Ok(best as u8)
}

/// SRP-PHAT on the network's frame grid: each label frame is analysed with a
/// 512-sample window centred on it, and frames the mixture VAD marks as
/// silent are labelled silence.
pub fn srp_phat_clip(mix: &MultichannelWaveform, grid: &SteeringGrid) -> Result<DoaFrameLabels> {
    let len = mix.len();
    let n = grid.frame;
    if len < n {
        return Err(Error::TooShort { len, frame: n });
    }
    let voiced = vad_labels(&mix.channels[0]);
    let mut out = Vec::with_capacity(frame_count(len));
    for (t, v) in voiced.into_iter().enumerate() {
        if !v {
            out.push(SILENCE);
            continue;
        }
        let centre = t * HOP + FRAME_LEN / 2;
        let start = centre.saturating_sub(n / 2).min(len - n);
        let frame: Vec<&[f64]> = mix.channels.iter().map(|c| &c[start..start + n]).collect();
        out.push(srp_phat(&frame, grid)?);
    }
    Ok(DoaFrameLabels(out))
}
