//! Deterministic stand-ins for speech and noise corpora.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::SAMPLE_RATE;

/// Vowel formant centres (Hz) for an average adult tract.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceProfile {
    pub f0: f64,
    pub tract: f64,
    pub tilt: f64,
}

impl VoiceProfile {
    pub fn for_speaker(speaker_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(speaker_seed ^ 0x5eed_5eed);
        VoiceProfile {
            f0: rng.gen_range(90.0..260.0),
            tract: rng.gen_range(0.82..1.2),
            tilt: rng.gen_range(0.8..1.4),
        }
    }
}

fn envelope(i: usize, n: usize) -> f64 {
    let ramp = (n / 5).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i + ramp > n {
        0.5 - 0.5 * (PI * (n - i) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

fn harmonic_gains(profile: &VoiceProfile, f0: f64, vowel: &[f64; 3], out: &mut Vec<f64>) {
    out.clear();
    let nyq = 0.45 * SAMPLE_RATE as f64;
    let mut k = 1;
    while k as f64 * f0 < nyq.min(7000.0) {
        let f = k as f64 * f0;
        let mut g = 0.0;
        for (fi, bw) in vowel.iter().zip(BANDWIDTHS) {
            let centre = fi * profile.tract;
            g += 1.0 / (1.0 + ((f - centre) / bw).powi(2));
        }
        out.push(g / (k as f64).powf(profile.tilt * 0.5));
        k += 1;
    }
}

fn syllable(profile: &VoiceProfile, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
    let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
    let base = profile.f0 * rng.gen_range(0.9..1.12);
    let glide = rng.gen_range(-0.12..0.12);
    let vibrato = rng.gen_range(3.0..6.0);
    let aspiration = 0.3 * rng.gen_range(0.5..1.5);
    let fs = SAMPLE_RATE as f64;
    let mut gains = Vec::new();
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut f0 = base;
    for i in 0..n {
        if i % 80 == 0 {
            let u = i as f64 / n as f64;
            f0 = base * (1.0 + glide * u + 0.02 * (2.0 * PI * vibrato * i as f64 / fs).sin());
            harmonic_gains(profile, f0, &vowel, &mut gains);
        }
        phase += 2.0 * PI * f0 / fs;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let s: f64 = gains
            .iter()
            .enumerate()
            .map(|(k, g)| g * ((k + 1) as f64 * phase).sin())
            .sum();
        let breath = aspiration * rng.gen_range(-1.0..1.0);
        out.push((s + breath) * envelope(i, n));
    }
}

fn fricative(rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
    let mut prev = 0.0;
    for i in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        out.push(0.25 * (w - prev) * envelope(i, n));
        prev = w;
    }
}

/// A speech-like utterance: voiced syllables with formant structure, occasional
/// fricatives, short inter-syllable gaps and longer pauses between words.
pub fn synth_utterance(profile: &VoiceProfile, seed: u64, seconds: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let total = (seconds * fs).round() as usize;
    let ms = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo..hi) * fs / 1000.0) as usize;
    let mut out = Vec::with_capacity(total + SAMPLE_RATE as usize);
    out.resize(ms(&mut rng, 80.0, 250.0), 0.0);
    let tail = (0.1 * fs) as usize;
    while out.len() + tail < total {
        for _ in 0..rng.gen_range(1..=4) {
            if rng.gen_bool(0.3) {
                let n = ms(&mut rng, 40.0, 90.0);
                fricative(&mut rng, n, &mut out);
            }
            let n = ms(&mut rng, 120.0, 300.0);
            syllable(profile, &mut rng, n, &mut out);
            let gap = ms(&mut rng, 15.0, 50.0);
            out.resize(out.len() + gap, 0.0);
        }
        let pause = ms(&mut rng, 150.0, 450.0);
        out.resize(out.len() + pause, 0.0);
    }
    out.resize(total, 0.0);
    let end = total.saturating_sub(tail);
    out[end..].fill(0.0);
    normalize_peak(&mut out, 0.5);
    out
}

/// Slowly modulated coloured noise.
pub fn synth_noise(seed: u64, seconds: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let n = (seconds * fs).round() as usize;
    let pole = rng.gen_range(0.6..0.97);
    let rate = rng.gen_range(0.2..1.5);
    let mut lp = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            lp = pole * lp + (1.0 - pole) * w;
            let am = 1.0 + 0.3 * (2.0 * PI * rate * i as f64 / fs).sin();
            (lp + 0.1 * w) * am
        })
        .collect();
    normalize_peak(&mut out, 0.5);
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v *= peak / m;
        }
    }
}
