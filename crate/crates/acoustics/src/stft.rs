use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const FRAME_LEN: usize = 320;
pub const HOP: usize = 160;
pub const BINS: usize = FRAME_LEN / 2 + 1;

/// Periodic Hann window of length [`FRAME_LEN`].
pub fn hann() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| hann_window(FRAME_LEN))
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        (len - FRAME_LEN) / HOP + 1
    }
}

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plans() -> &'static Plans {
    static P: OnceLock<Plans> = OnceLock::new();
    P.get_or_init(|| {
        let mut planner = FftPlanner::new();
        Plans {
            fwd: planner.plan_fft_forward(FRAME_LEN),
            inv: planner.plan_fft_inverse(FRAME_LEN),
        }
    })
}

/// Complex spectrogram indexed `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        ComplexSpectrogram {
            channels,
            frames,
            bins,
            values: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn index(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.frames + t) * self.bins + f
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.values[self.index(c, t, f)]
    }

    pub fn channel(&self, c: usize) -> ComplexSpectrogram {
        let n = self.frames * self.bins;
        ComplexSpectrogram {
            channels: 1,
            frames: self.frames,
            bins: self.bins,
            values: self.values[c * n..(c + 1) * n].to_vec(),
        }
    }

    pub fn frame(&self, c: usize, t: usize) -> &[Complex64] {
        let i = self.index(c, t, 0);
        &self.values[i..i + self.bins]
    }

    /// Concatenate single-or-multi channel spectrograms along the channel axis.
    pub fn stack(specs: &[ComplexSpectrogram]) -> Result<ComplexSpectrogram> {
        let first = specs.first().ok_or_else(|| Error::Shape("no spectrograms to stack".into()))?;
        let mut values = Vec::new();
        let mut channels = 0;
        for s in specs {
            if s.frames != first.frames || s.bins != first.bins {
                return Err(Error::Shape(format!(
                    "spectrogram ({}, {}) does not match ({}, {})",
                    s.frames, s.bins, first.frames, first.bins
                )));
            }
            channels += s.channels;
            values.extend_from_slice(&s.values);
        }
        Ok(ComplexSpectrogram {
            channels,
            frames: first.frames,
            bins: first.bins,
            values,
        })
    }
}

/// One-sided STFT of a single channel; frames lie fully inside the signal.
pub fn stft(x: &[f64]) -> Result<ComplexSpectrogram> {
    let frames = frame_count(x.len());
    if frames == 0 {
        return Err(Error::TooShort {
            len: x.len(),
            frame: FRAME_LEN,
        });
    }
    let w = hann();
    let fft = &plans().fwd;
    let mut out = ComplexSpectrogram::zeros(1, frames, BINS);
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let seg = &x[t * HOP..t * HOP + FRAME_LEN];
        for ((b, &s), &wi) in buf.iter_mut().zip(seg).zip(w) {
            *b = Complex64::new(s * wi, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let i = out.index(0, t, 0);
        out.values[i..i + BINS].copy_from_slice(&buf[..BINS]);
    }
    Ok(out)
}

/// STFT of every channel, stacked in channel order.
pub fn stft_multi(channels: &[Vec<f64>]) -> Result<ComplexSpectrogram> {
    let specs = channels.iter().map(|c| stft(c)).collect::<Result<Vec<_>>>()?;
    ComplexSpectrogram::stack(&specs)
}

/// Weighted overlap-add inverse of [`stft`] for one channel of `spec`.
///
/// Each sample is divided by the summed squared window of the frames covering
/// it, so samples covered by at least one nonzero window value are restored
/// exactly; samples where that sum vanishes are zero.
pub fn istft(spec: &ComplexSpectrogram, channel: usize) -> Vec<f64> {
    let frames = spec.frames;
    if frames == 0 {
        return Vec::new();
    }
    let len = (frames - 1) * HOP + FRAME_LEN;
    let w = hann();
    let fft = &plans().inv;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let half = spec.frame(channel, t);
        buf[..BINS].copy_from_slice(half);
        buf[0].im = 0.0;
        buf[BINS - 1].im = 0.0;
        for k in 1..FRAME_LEN - BINS + 1 {
            buf[FRAME_LEN - k] = half[k].conj();
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for n in 0..FRAME_LEN {
            out[t * HOP + n] += buf[n].re / FRAME_LEN as f64 * w[n];
            norm[t * HOP + n] += w[n] * w[n];
        }
    }
    for (o, &z) in out.iter_mut().zip(&norm) {
        *o = if z > 1e-10 { *o / z } else { 0.0 };
    }
    out
}

/// Per-bin magnitude, laid out like `spec.values`.
pub fn magnitude(spec: &ComplexSpectrogram) -> Vec<f64> {
    spec.values.iter().map(|z| z.norm()).collect()
}
