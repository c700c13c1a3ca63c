use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsdoa::loss::{cross_entropy, joint_loss, mse_complex};
use rtsdoa::metrics::{aggregate, ar, circular_distance_deg, decode, vde, Scored};
use rtsdoa_acoustics::{Complex64, ComplexSpectrogram, DoaFrameLabels, SILENCE};
use rtsdoa_autograd::{Graph, Tensor};

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> DoaFrameLabels {
    DoaFrameLabels(
        (0..n)
            .map(|_| if rng.gen_bool(0.3) { SILENCE } else { rng.gen_range(0..36) })
            .collect(),
    )
}

fn vde_loop(p: &[u8], t: &[u8]) -> f64 {
    let mut wrong = 0;
    for i in 0..t.len() {
        let ps = p[i] == 36;
        let ts = t[i] == 36;
        if ps != ts {
            wrong += 1;
        }
    }
    wrong as f64 / t.len() as f64
}

fn ar_loop(p: &[u8], t: &[u8]) -> Option<f64> {
    let (mut ok, mut voiced) = (0, 0);
    for i in 0..t.len() {
        if t[i] == 36 {
            continue;
        }
        voiced += 1;
        if p[i] == 36 {
            continue;
        }
        let mut d = (p[i] as i32 - t[i] as i32).abs() * 10;
        if d > 180 {
            d = 360 - d;
        }
        if d <= 10 {
            ok += 1;
        }
    }
    (voiced > 0).then(|| ok as f64 / voiced as f64)
}

fn ce_loop(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut s = 0.0;
        for &v in row {
            s += (v - m).exp();
        }
        total += -(row[l] - m - s.ln());
    }
    total / labels.len() as f64
}

#[test]
fn metrics_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let t = random_labels(&mut rng, n);
        let mut p = random_labels(&mut rng, n);
        // bias towards near misses so the ±10° rule is exercised
        for i in 0..n {
            if t.0[i] != SILENCE && rng.gen_bool(0.4) {
                p.0[i] = ((t.0[i] as i32 + rng.gen_range(-2..=2)).rem_euclid(36)) as u8;
            }
        }
        assert_eq!(vde(&p, &t).unwrap(), vde_loop(&p.0, &t.0));
        match ar_loop(&p.0, &t.0) {
            Some(want) => assert_eq!(ar(&p, &t).unwrap(), want),
            None => assert!(ar(&p, &t).is_err()),
        }
    }
}

#[test]
fn cross_entropy_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let classes = 37;
        let logits: Vec<f64> = (0..n * classes).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let got = cross_entropy(&logits, classes, &labels).unwrap();
        let want = ce_loop(&logits, classes, &labels);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::new(vec![n, classes], logits.clone()).unwrap());
        let ce = g.cross_entropy(l, &labels).unwrap();
        assert!((g.value(ce).item() - want).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_rejects_bad_input() {
    assert!(cross_entropy(&[0.0; 6], 3, &[0]).is_err());
    assert!(cross_entropy(&[0.0; 3], 3, &[3]).is_err());
}

#[test]
fn circular_boundaries() {
    let t = DoaFrameLabels(vec![0]);
    assert_eq!(ar(&DoaFrameLabels(vec![35]), &t).unwrap(), 1.0);
    assert_eq!(ar(&DoaFrameLabels(vec![1]), &t).unwrap(), 1.0);
    assert_eq!(ar(&DoaFrameLabels(vec![2]), &t).unwrap(), 0.0);
    assert_eq!(ar(&DoaFrameLabels(vec![34]), &t).unwrap(), 0.0);
    assert_eq!(ar(&DoaFrameLabels(vec![SILENCE]), &t).unwrap(), 0.0);
    assert_eq!(circular_distance_deg(0, 35), 10.0);
    assert_eq!(circular_distance_deg(9, 27), 180.0);
    assert_eq!(circular_distance_deg(3, 3), 0.0);
}

#[test]
fn decode_breaks_ties_low() {
    let logits = [1.0, 3.0, 3.0, 0.0, -1.0, -1.0];
    assert_eq!(decode(&logits, 3).0, vec![1, 0]);
}

#[test]
fn mse_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = ComplexSpectrogram::zeros(2, 3, 4);
    let mut b = ComplexSpectrogram::zeros(2, 3, 4);
    for (x, y) in a.values.iter_mut().zip(b.values.iter_mut()) {
        *x = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        *y = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let mut want = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        want += (x.re - y.re).powi(2) + (x.im - y.im).powi(2);
    }
    want /= 24.0;
    assert!((mse_complex(&a, &b).unwrap() - want).abs() < 1e-14);
    assert!(mse_complex(&a, &ComplexSpectrogram::zeros(1, 3, 4)).is_err());

    // graph loss on the real/imaginary stack agrees with the complex definition
    let stack = |s: &ComplexSpectrogram| {
        let fs = rtsdoa_acoustics::stack_spectrogram(s);
        Tensor::new(vec![1, fs.channels, fs.frames, fs.bins], fs.data).unwrap()
    };
    let mut g = Graph::<f64>::new();
    let ya = g.input(stack(&a));
    let yb = g.input(stack(&b));
    let logits = g.input(Tensor::zeros(vec![1, 37]));
    let j = joint_loss(&mut g, Some(ya), Some(yb), logits, &[0]).unwrap();
    let r = j.report(&g);
    assert!((r.mse - want).abs() < 1e-14);
    assert!((r.ce - 37f64.ln()).abs() < 1e-12);
    assert!((r.total - r.mse - r.ce).abs() < 1e-15);
}

#[test]
fn aggregate_per_utterance_and_pooled() {
    let s1 = Scored {
        sir_db: -5,
        pred: DoaFrameLabels(vec![0, 0, 36, 36]),
        truth: DoaFrameLabels(vec![0, 18, 36, 5]),
    };
    let s2 = Scored {
        sir_db: 5,
        pred: DoaFrameLabels(vec![3, 36]),
        truth: DoaFrameLabels(vec![3, 36]),
    };
    let r = aggregate(&[s1.clone(), s2.clone()], false).unwrap();
    // utterance 1: AR 1/3, VDE 1/4; utterance 2: AR 1, VDE 0
    assert!((r.ar - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    assert!((r.vde - 0.125).abs() < 1e-15);
    assert_eq!(r.per_sir.len(), 2);
    assert_eq!(r.per_sir["-5"].utterances, 1);
    let p = aggregate(&[s1, s2], true).unwrap();
    assert!((p.ar - 2.0 / 4.0).abs() < 1e-15);
    assert!((p.vde - 1.0 / 6.0).abs() < 1e-15);
    assert!(aggregate(
        &[Scored {
            sir_db: 0,
            pred: DoaFrameLabels(vec![1]),
            truth: DoaFrameLabels(vec![1, 2]),
        }],
        false
    )
    .is_err());
}
