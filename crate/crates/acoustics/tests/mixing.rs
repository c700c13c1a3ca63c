use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsdoa_acoustics::render::power_ratio_db;
use rtsdoa_acoustics::*;

fn wave(seed: u64, len: usize) -> MultichannelWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MultichannelWaveform::new((0..6).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
}

fn speechy(seed: u64) -> MultichannelWaveform {
    let mut w = wave(seed, 16000);
    for c in w.channels.iter_mut() {
        c[5000..9000].fill(0.0);
    }
    w
}

fn scaled(w: &MultichannelWaveform, g: f64) -> MultichannelWaveform {
    MultichannelWaveform::new(w.channels.iter().map(|c| c.iter().map(|v| v * g).collect()).collect())
}

#[test]
fn sir_zero_equalises_powers() {
    let t = speechy(1);
    let i = wave(2, 16000);
    let m = mix_scene(&t, Some(&i), None, 0, 0).unwrap();
    let scaled_i: Vec<f64> = i.channels[0].iter().map(|v| v * m.interferer_gain).collect();
    let r = power_ratio_db(&t.channels[0], &scaled_i, &t.channels[0]);
    assert!((10f64.powf(r / 10.0) - 1.0).abs() < 1e-6);
}

#[test]
fn requested_ratios_are_met() {
    for (k, (sir, snr)) in [(-5, 5), (3, -2), (5, -5), (0, 1)].into_iter().enumerate() {
        let t = speechy(10 + k as u64);
        let i = wave(20 + k as u64, 14000);
        let n = wave(30 + k as u64, 16000);
        let m = mix_scene(&t, Some(&i), Some(&n), sir, snr).unwrap();
        assert_eq!(m.mixture.len(), 16000);
        let ip = i.padded(16000);
        let si: Vec<f64> = ip.channels[0].iter().map(|v| v * m.interferer_gain).collect();
        let sn: Vec<f64> = n.channels[0].iter().map(|v| v * m.noise_gain).collect();
        assert!((power_ratio_db(&t.channels[0], &si, &t.channels[0]) - sir as f64).abs() < 0.01);
        assert!((power_ratio_db(&t.channels[0], &sn, &t.channels[0]) - snr as f64).abs() < 0.01);
    }
}

#[test]
fn noise_only_mix() {
    let t = speechy(3);
    let n = wave(4, 16000);
    let zero = scaled(&n, 0.0);
    let m = mix_scene(&t, Some(&zero), Some(&n), 0, 5).unwrap();
    assert_eq!(m.interferer_gain, 0.0);
    let resid: Vec<f64> = m.mixture.channels[0].iter().zip(&t.channels[0]).map(|(a, b)| a - b).collect();
    assert!((power_ratio_db(&t.channels[0], &resid, &t.channels[0]) - 5.0).abs() < 0.01);
}

#[test]
fn mixing_is_scale_invariant() {
    let t = speechy(5);
    let i = wave(6, 16000);
    let a = mix_scene(&t, Some(&i), None, 2, 0).unwrap();
    let b = mix_scene(&t, Some(&scaled(&i, 2.0)), None, 2, 0).unwrap();
    for (x, y) in a.mixture.channels.iter().flatten().zip(b.mixture.channels.iter().flatten()) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn silent_target_is_rejected() {
    let t = scaled(&wave(7, 1000), 0.0);
    assert!(matches!(mix_scene(&t, None, None, 0, 0), Err(Error::SilentTarget)));
}

#[test]
fn channel_mismatch_is_rejected() {
    let t = wave(8, 1000);
    let i = MultichannelWaveform::mono(vec![1.0; 1000]);
    assert!(matches!(mix_scene(&t, Some(&i), None, 0, 0), Err(Error::Shape(_))));
}
