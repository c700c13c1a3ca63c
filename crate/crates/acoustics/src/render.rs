use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Point, RoomSpec, SourceCatalog};
use crate::labels::active_samples;
use crate::rir::{image_method_rir, rir_length};
use crate::scene::SceneSpec;
use crate::{MultichannelWaveform, SAMPLE_RATE};

pub const CROSSFADE_SECONDS: f64 = 0.010;

/// Linear convolution of `x` with each filter, truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], filters: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let longest = filters.iter().map(Vec::len).max().unwrap_or(0);
    if x.is_empty() || longest == 0 {
        return vec![vec![0.0; x.len()]; filters.len()];
    }
    let n = (x.len() + longest - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let xs = spectrum(x);
    filters
        .iter()
        .map(|h| {
            let mut buf = spectrum(h);
            for (b, a) in buf.iter_mut().zip(&xs) {
                *b *= a;
            }
            inv.process(&mut buf);
            buf[..x.len()].iter().map(|z| z.re / n as f64).collect()
        })
        .collect()
}

pub fn array_rirs(room: &RoomSpec, src: Point, array: &ArrayGeometry) -> Result<Vec<Vec<f64>>> {
    let len = rir_length(room);
    array
        .mic_positions
        .iter()
        .map(|&m| image_method_rir(room, src, m, len))
        .collect()
}

/// Source at a fixed position, captured by every microphone.
pub fn render_static(
    signal: &[f64],
    src: Point,
    room: &RoomSpec,
    array: &ArrayGeometry,
) -> Result<MultichannelWaveform> {
    let rirs = array_rirs(room, src, array)?;
    Ok(MultichannelWaveform::new(fft_convolve(signal, &rirs)))
}

/// Weight of the pre-switch segment at sample `n`: 1 before the crossfade,
/// 0 after it, linear in between and 0.5 at the switch instant.
pub fn crossfade_weight(n: usize, switch_time: f64) -> f64 {
    let fs = SAMPLE_RATE as f64;
    let centre = switch_time * fs;
    let half = 0.5 * CROSSFADE_SECONDS * fs;
    ((centre + half - n as f64) / (2.0 * half)).clamp(0.0, 1.0)
}

/// Source that jumps from `from` to `to` at `switch_time`, joined by a
/// 10 ms linear crossfade.
pub fn render_trajectory(
    signal: &[f64],
    from: Point,
    to: Point,
    switch_time: f64,
    room: &RoomSpec,
    array: &ArrayGeometry,
) -> Result<MultichannelWaveform> {
    if from == to {
        return render_static(signal, from, room, array);
    }
    let (mut before, mut after) = (signal.to_vec(), signal.to_vec());
    for (n, (b, a)) in before.iter_mut().zip(after.iter_mut()).enumerate() {
        let w = crossfade_weight(n, switch_time);
        *b *= w;
        *a *= 1.0 - w;
    }
    let first = render_static(&before, from, room, array)?;
    let second = render_static(&after, to, room, array)?;
    let channels = first
        .channels
        .into_iter()
        .zip(second.channels)
        .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
        .collect();
    Ok(MultichannelWaveform::new(channels))
}

/// Render the scene's target utterance along its two-position trajectory.
pub fn render_moving_source(
    clip: &[f64],
    scene: &SceneSpec,
    catalog: &SourceCatalog,
    room: &RoomSpec,
    array: &ArrayGeometry,
) -> Result<MultichannelWaveform> {
    render_trajectory(
        clip,
        catalog.positions[scene.target_initial_idx],
        catalog.positions[scene.target_second_idx],
        scene.switch_time,
        room,
        array,
    )
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: MultichannelWaveform,
    pub interferer_gain: f64,
    pub noise_gain: f64,
}

fn masked_power(x: &[f64], mask: &[bool]) -> f64 {
    let (sum, n) = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `10 log10(P_a / P_b)` on the first channel over samples where `reference`
/// is speech-active.
pub fn power_ratio_db(a: &[f64], b: &[f64], reference: &[f64]) -> f64 {
    let mask = active_samples(reference);
    10.0 * (masked_power(a, &mask) / masked_power(b, &mask)).log10()
}

fn component_gain(target_power: f64, other: &[f64], mask: &[bool], ratio_db: i32) -> f64 {
    let p = masked_power(other, mask);
    if p <= 0.0 {
        return 0.0;
    }
    (target_power / (p * 10f64.powf(ratio_db as f64 / 10.0))).sqrt()
}

/// Scale the interferer and noise so that, on the first microphone and over
/// target-active samples, they sit `sir_db` and `snr_db` below the target.
pub fn mix_scene(
    target: &MultichannelWaveform,
    interferer: Option<&MultichannelWaveform>,
    noise: Option<&MultichannelWaveform>,
    sir_db: i32,
    snr_db: i32,
) -> Result<Mixture> {
    let channels = target.channels.len();
    let mut len = target.len();
    for other in [interferer, noise].into_iter().flatten() {
        if other.channels.len() != channels {
            return Err(Error::Shape(format!(
                "mixing {} channels with {}",
                channels,
                other.channels.len()
            )));
        }
        len = len.max(other.len());
    }
    let target = target.padded(len);
    let interferer = interferer.map(|w| w.padded(len));
    let noise = noise.map(|w| w.padded(len));
    let mask = active_samples(&target.channels[0]);
    let tp = masked_power(&target.channels[0], &mask);
    if tp <= 0.0 {
        return Err(Error::SilentTarget);
    }
    let ig = interferer
        .as_ref()
        .map_or(0.0, |w| component_gain(tp, &w.channels[0], &mask, sir_db));
    let ng = noise
        .as_ref()
        .map_or(0.0, |w| component_gain(tp, &w.channels[0], &mask, snr_db));
    let mut out = target;
    for (c, ch) in out.channels.iter_mut().enumerate() {
        for (n, v) in ch.iter_mut().enumerate() {
            if let Some(w) = &interferer {
                *v += ig * w.channels[c][n];
            }
            if let Some(w) = &noise {
                *v += ng * w.channels[c][n];
            }
        }
    }
    Ok(Mixture {
        mixture: out,
        interferer_gain: ig,
        noise_gain: ng,
    })
}
