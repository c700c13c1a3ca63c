use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsdoa_acoustics::render::{crossfade_weight, fft_convolve};
use rtsdoa_acoustics::rir::{energy_decay_curve, rir_length};
use rtsdoa_acoustics::*;

fn room() -> RoomSpec {
    RoomSpec::new([5.0, 6.0, 3.0], 0.4)
}

fn array(room: &RoomSpec) -> ArrayGeometry {
    let c = room.center();
    ArrayGeometry::circular([c[0], c[1], 1.5], 0.05)
}

#[test]
fn order_zero_tap_matches_geometry() {
    let r = RoomSpec::anechoic([5.0, 6.0, 3.0]);
    let mic = [2.0, 3.0, 1.5];
    let src = [2.0 + 1.715, 3.0, 1.5];
    let h = image_method_rir(&r, src, mic, 200).unwrap();
    let nz: Vec<usize> = (0..h.len()).filter(|&i| h[i] != 0.0).collect();
    assert_eq!(nz, vec![80]);
    assert!((h[80] - 1.0 / (4.0 * PI * 1.715)).abs() < 1e-15);
}

#[test]
fn coincident_source_and_mic_is_rejected() {
    let r = room();
    let p = [1.0, 1.0, 1.0];
    assert!(matches!(image_method_rir(&r, p, p, 100), Err(Error::TooClose(_))));
}

#[test]
fn source_outside_room_is_rejected() {
    let r = room();
    assert!(matches!(
        image_method_rir(&r, [6.0, 1.0, 1.0], [1.0, 1.0, 1.0], 100),
        Err(Error::OutsideRoom(_))
    ));
}

#[test]
fn sabine_arithmetic() {
    let r = RoomSpec::new([5.0, 6.0, 3.0], 0.5);
    assert_eq!(r.volume(), 90.0);
    assert_eq!(r.surface(), 126.0);
    let beta = t60_to_reflection(&r).unwrap();
    let alpha = 1.0 - beta * beta;
    assert!((alpha - 0.2300).abs() < 5e-5, "alpha {alpha}");
    assert!((beta - 0.8775).abs() < 5e-5, "beta {beta}");
}

#[test]
fn sabine_limits() {
    let long = RoomSpec::new([5.0, 6.0, 3.0], 1e9);
    assert!(t60_to_reflection(&long).unwrap() > 0.999_999);
    let short = RoomSpec::new([5.0, 6.0, 3.0], 0.05);
    assert!(matches!(t60_to_reflection(&short), Err(Error::T60TooShort { .. })));
}

#[test]
fn direct_path_delay_within_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = RoomSpec::anechoic([5.0, 6.0, 3.0]);
    for _ in 0..100 {
        let mut p = || [rng.gen_range(0.1..4.9), rng.gen_range(0.1..5.9), rng.gen_range(0.1..2.9)];
        let (src, mic) = (p(), p());
        let d = distance(src, mic);
        if d < 0.01 {
            continue;
        }
        let h = image_method_rir(&r, src, mic, 2000).unwrap();
        let first = h.iter().position(|&v| v != 0.0).unwrap() as f64;
        assert!((first - d / 343.0 * 16000.0).abs() <= 1.0);
    }
}

#[test]
fn calibrated_decay_matches_requested_t60() {
    let a = array(&RoomSpec::new([5.0, 6.0, 3.0], 0.2));
    for t60 in [0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let r = RoomSpec::new([5.0, 6.0, 3.0], t60);
        let catalog = SourceCatalog::around(&a, 1.5);
        for k in [0, 9, 22] {
            let h = image_method_rir(&r, catalog.positions[k], a.mic_positions[0], rir_length(&r)).unwrap();
            let est = schroeder_t60(&h).unwrap();
            assert!((est / t60 - 1.0).abs() <= 0.2, "t60 {t60}: estimated {est}");
        }
    }
}

#[test]
fn schroeder_curve_monotone() {
    let r = room();
    let a = array(&r);
    let h = image_method_rir(&r, [1.0, 1.0, 1.0], a.mic_positions[2], rir_length(&r)).unwrap();
    assert!(h.iter().all(|v| v.is_finite()));
    let edc = energy_decay_curve(&h);
    assert!(edc.windows(2).all(|w| w[1] <= w[0]));
    assert!(edc[0].abs() < 1e-12);
}

#[test]
fn static_trajectory_equals_static_render() {
    let r = room();
    let a = array(&r);
    let x: Vec<f64> = (0..4000).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
    let p = [1.0, 2.0, 1.5];
    let moving = render_trajectory(&x, p, p, 0.1, &r, &a).unwrap();
    let fixed = render_static(&x, p, &r, &a).unwrap();
    assert_eq!(moving, fixed);
    assert_eq!(moving.channels.len(), 6);
}

#[test]
fn zero_clip_renders_zero() {
    let r = room();
    let a = array(&r);
    let out = render_trajectory(&vec![0.0; 3000], [1.0, 2.0, 1.5], [4.0, 1.0, 1.5], 0.1, &r, &a).unwrap();
    assert!(out.channels.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn moving_source_changes_only_after_crossfade_start() {
    let r = RoomSpec::new([5.0, 6.0, 3.0], 0.3);
    let a = array(&r);
    let x: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.37).sin() + (i as f64 * 0.051).cos()).collect();
    let (p, q) = ([1.0, 2.0, 1.5], [4.0, 5.0, 1.5]);
    let switch = 0.5;
    let moving = render_trajectory(&x, p, q, switch, &r, &a).unwrap();
    let fixed = render_static(&x, p, &r, &a).unwrap();
    let onset = (switch * 16000.0) as usize - 80;
    for (m, f) in moving.channels.iter().zip(&fixed.channels) {
        let before = m[..onset].iter().zip(&f[..onset]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(before < 1e-9, "difference {before} before the crossfade");
        let after: f64 = m[onset + 1000..].iter().zip(&f[onset + 1000..]).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(after > 1e-3);
    }
    assert_eq!(crossfade_weight(8000, 0.5), 0.5);
    assert_eq!(crossfade_weight(8000 - 80, 0.5), 1.0);
    assert_eq!(crossfade_weight(8000 + 80, 0.5), 0.0);
}

#[test]
fn fft_convolution_matches_direct() {
    let x: Vec<f64> = (0..300).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
    let h: Vec<f64> = (0..40).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let y = &fft_convolve(&x, &[h.clone()])[0];
    for n in 0..x.len() {
        let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
        assert!((y[n] - direct).abs() < 1e-9);
    }
}

#[test]
fn catalog_and_array_geometry() {
    let r = room();
    let a = array(&r);
    assert_eq!(a.len(), 6);
    for (m, p) in a.mic_positions.iter().enumerate() {
        assert!((distance(*p, a.center) - 0.05).abs() < 1e-12);
        let ang = (p[1] - a.center[1]).atan2(p[0] - a.center[0]).to_degrees().rem_euclid(360.0);
        assert!((ang - 60.0 * m as f64).abs() < 1e-9 || (ang - 360.0).abs() < 1e-9);
    }
    let cat = SourceCatalog::around(&a, 1.5);
    assert_eq!(cat.len(), 36);
    for (k, p) in cat.positions.iter().enumerate() {
        assert!((distance(*p, a.center) - 1.5).abs() < 1e-12);
        let ang = (p[1] - a.center[1]).atan2(p[0] - a.center[0]).to_degrees().rem_euclid(360.0);
        let diff = (ang - 10.0 * k as f64).abs();
        assert!(diff < 1e-9 || (diff - 360.0).abs() < 1e-9);
        assert!(r.contains(*p));
    }
}
