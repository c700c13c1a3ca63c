use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::ComplexSpectrogram;

/// Real-valued network input laid out `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStack {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn at(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[(c * self.frames + t) * self.bins + f]
    }

    /// Keep only the first `frames` frames.
    pub fn truncate(&self, frames: usize) -> FeatureStack {
        let frames = frames.min(self.frames);
        let mut data = Vec::with_capacity(self.channels * frames * self.bins);
        for c in 0..self.channels {
            let s = c * self.frames * self.bins;
            data.extend_from_slice(&self.data[s..s + frames * self.bins]);
        }
        FeatureStack {
            channels: self.channels,
            frames,
            bins: self.bins,
            data,
        }
    }
}

/// Interleave real and imaginary parts per microphone:
/// `[Re(M1), Im(M1), Re(M2), Im(M2), ...]`.
pub fn stack_features(specs: &[ComplexSpectrogram]) -> Result<FeatureStack> {
    let spec = ComplexSpectrogram::stack(specs)?;
    Ok(stack_spectrogram(&spec))
}

pub fn stack_spectrogram(spec: &ComplexSpectrogram) -> FeatureStack {
    let plane = spec.frames * spec.bins;
    let mut data = vec![0.0; 2 * spec.channels * plane];
    for c in 0..spec.channels {
        let src = &spec.values[c * plane..(c + 1) * plane];
        let (re, im) = data[2 * c * plane..(2 * c + 2) * plane].split_at_mut(plane);
        for ((r, i), z) in re.iter_mut().zip(im.iter_mut()).zip(src) {
            *r = z.re;
            *i = z.im;
        }
    }
    FeatureStack {
        channels: 2 * spec.channels,
        frames: spec.frames,
        bins: spec.bins,
        data,
    }
}

/// Inverse of [`stack_spectrogram`].
pub fn unstack_features(stack: &FeatureStack) -> Result<ComplexSpectrogram> {
    if stack.channels % 2 != 0 {
        return Err(Error::Shape(format!(
            "feature stack has {} channels, expected an even count",
            stack.channels
        )));
    }
    let plane = stack.frames * stack.bins;
    let channels = stack.channels / 2;
    let mut values = Vec::with_capacity(channels * plane);
    for c in 0..channels {
        let re = &stack.data[2 * c * plane..(2 * c + 1) * plane];
        let im = &stack.data[(2 * c + 1) * plane..(2 * c + 2) * plane];
        values.extend(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)));
    }
    Ok(ComplexSpectrogram {
        channels,
        frames: stack.frames,
        bins: stack.bins,
        values,
    })
}

/// One magnitude channel per spectrogram channel.
pub fn magnitude_features(spec: &ComplexSpectrogram) -> FeatureStack {
    FeatureStack {
        channels: spec.channels,
        frames: spec.frames,
        bins: spec.bins,
        data: crate::stft::magnitude(spec),
    }
}
