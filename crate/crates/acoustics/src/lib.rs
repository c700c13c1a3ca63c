//! Acoustic scene simulation and signal front end for a six-microphone
//! circular array: image-method room impulse responses, moving-source
//! rendering and mixing, STFT features, VAD-based frame labels, and
//! GCC-PHAT / SRP-PHAT direction baselines.

pub mod baselines;
pub mod error;
pub mod features;
pub mod geometry;
pub mod labels;
pub mod render;
pub mod rir;
pub mod scene;
pub mod stft;
pub mod synth;
pub mod wav;

pub use baselines::{gcc_phat, srp_phat, srp_phat_clip, GccEstimate, SteeringGrid};
pub use error::{Error, Result};
pub use features::{magnitude_features, stack_features, stack_spectrogram, unstack_features, FeatureStack};
pub use geometry::{distance, ArrayGeometry, Point, ReflectionModel, RoomSpec, SourceCatalog};
pub use labels::{doa_frame_labels, switch_frame, vad_labels, DoaFrameLabels, CLASSES, SILENCE};
pub use render::{mix_scene, render_moving_source, render_static, render_trajectory, Mixture};
pub use rir::{image_method_rir, reflection_coefficient, schroeder_t60, t60_to_reflection};
pub use rustfft::num_complex::Complex64;
pub use scene::{sample_scene, Clip, ClipPool, ClipSource, SceneConfig, SceneSpec};
pub use stft::{istft, magnitude, stft, stft_multi, ComplexSpectrogram, BINS, FRAME_LEN, HOP};

pub const SAMPLE_RATE: u32 = 16_000;

/// Per-channel time-domain samples at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    pub channels: Vec<Vec<f64>>,
}

impl MultichannelWaveform {
    pub fn new(channels: Vec<Vec<f64>>) -> Self {
        MultichannelWaveform { channels }
    }

    pub fn mono(samples: Vec<f64>) -> Self {
        MultichannelWaveform { channels: vec![samples] }
    }

    /// Samples per channel (the longest channel).
    pub fn len(&self) -> usize {
        self.channels.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn padded(&self, len: usize) -> Self {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(len, 0.0);
                c
            })
            .collect();
        MultichannelWaveform { channels }
    }

    pub fn truncated(&self, len: usize) -> Self {
        let channels = self.channels.iter().map(|c| c[..len.min(c.len())].to_vec()).collect();
        MultichannelWaveform { channels }
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().flatten().all(|v| v.is_finite())
    }
}
