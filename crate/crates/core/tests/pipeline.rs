use std::fs;
use std::path::Path;
use std::process::Command;

use rtsdoa::config::Config;
use rtsdoa::data::{build_pools, load_example, read_manifest, render_scene, synthesize_dataset, ExampleSource, SplitPools};
use rtsdoa::eval::{evaluate_baseline, evaluate_with, infer};
use rtsdoa::model::{init_params, ModelConfig};
use rtsdoa::train::save_checkpoint;
use rtsdoa::Error;
use rtsdoa_acoustics::render::power_ratio_db;
use rtsdoa_acoustics::{sample_scene, ClipPool, DoaFrameLabels, SILENCE};

const TINY: &str = "
# small dataset for tests
data.train=3
data.dev=2
data.test=2
data.min_seconds=1.0
data.max_seconds=1.2
data.synthetic_speakers=8
data.utterances_per_speaker=2
data.dev_speakers=2
data.test_speakers=2
data.noise_clips=2
scene.t60=0.2,0.3
";

fn tiny() -> Config {
    TINY.parse().unwrap()
}

#[test]
fn config_parses_keys_comments_and_presets() {
    let cfg: Config = "train.lr = 0.002  # trailing comment\nmodel.enh_channels=32\nmodel.preset=large\n"
        .parse()
        .unwrap();
    assert_eq!(cfg.train.lr, 0.002);
    assert_eq!(cfg.model.ffn_hidden, 96);
    assert_eq!(cfg.model.enh_channels, 32, "explicit keys override the preset");
    assert_eq!(cfg.data.train, 20_000);
    assert_eq!(cfg.data.scene.sir_range, (-5, 5));
    let t = tiny();
    assert_eq!(t.data.scene.t60_choices, vec![0.2, 0.3]);
    let again: Config = t.to_kv().parse().unwrap();
    assert_eq!(again, t);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    for text in [
        "model.colour=blue",
        "train.lr=fast",
        "model.preset=huge",
        "scene.moving=maybe",
        "room.dims=1,2",
        "no equals sign",
        "model.heads=3",
    ] {
        assert!(matches!(text.parse::<Config>(), Err(Error::Config(_))), "{text}");
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for split in ["train", "dev", "test"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(split)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn dataset_is_deterministic_and_speaker_disjoint() {
    let cfg = tiny();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let summary = synthesize_dataset(&cfg, 11, a.path()).unwrap();
    assert_eq!(summary, vec![("train".into(), 3), ("dev".into(), 2), ("test".into(), 2)]);
    synthesize_dataset(&cfg, 11, b.path()).unwrap();
    synthesize_dataset(&cfg, 12, c.path()).unwrap();
    let fa = files(a.path());
    assert_eq!(fa.len(), 3 + 4 * 7);
    assert_eq!(fa, files(b.path()));
    assert_ne!(fa, files(c.path()));

    let mut speakers = Vec::new();
    for split in ["train", "dev", "test"] {
        let m = read_manifest(&a.path().join(split)).unwrap();
        let s: std::collections::BTreeSet<String> = m.iter().map(|e| e.speaker.clone()).collect();
        for e in &m {
            assert!(e.voiced_frames > 0 && e.voiced_frames <= e.frames);
            assert!(!e.scene.is_moving() || e.scene.target_initial_idx != e.scene.target_second_idx);
        }
        speakers.push(s);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(speakers[i].is_disjoint(&speakers[j]));
        }
    }

    let dir = a.path().join("train");
    let m = read_manifest(&dir).unwrap();
    let ex = load_example(&dir, &m[0], true).unwrap();
    assert_eq!(ex.frames(), m[0].frames);
    assert_eq!(ex.mixture.channels, 12);
    let ms = ex.mixture.data.iter().map(|v| v * v).sum::<f64>() / ex.mixture.data.len() as f64;
    assert!((ms - 1.0).abs() < 1e-9);
    assert_eq!(ex.anchor.channels, 1);

    let truth = evaluate_with(&ExampleSource::open(a.path(), "test").unwrap(), false, |e| Ok(e.labels.clone())).unwrap();
    assert_eq!((truth.ar, truth.vde), (1.0, 0.0));
    let silent = evaluate_with(&ExampleSource::open(a.path(), "test").unwrap(), false, |e| {
        Ok(DoaFrameLabels(vec![SILENCE; e.labels.len()]))
    })
    .unwrap();
    assert_eq!(silent.ar, 0.0);

    let baseline = evaluate_baseline(a.path(), "test", &cfg).unwrap();
    assert!((0.0..=1.0).contains(&baseline.ar));
    assert_eq!(baseline.utterances, 2);
}

#[test]
fn overlapping_speakers_are_an_error() {
    let pool = ClipPool::synthetic_speech(3, 2, (1.0, 1.0), 1);
    let pools = SplitPools {
        train: pool.clone(),
        dev: pool.restricted_to(&["voice001".to_string()]),
        test: ClipPool::default(),
        noise: ClipPool::default(),
    };
    assert!(matches!(pools.check_disjoint(), Err(Error::Data(_))));
    let mut cfg = tiny().data;
    cfg.synthetic_speakers = 4;
    assert!(build_pools(&cfg, 0).is_err());
}

#[test]
fn rendered_levels_match_requested_sir_and_snr() {
    let cfg = tiny();
    let pools = build_pools(&cfg.data, 3).unwrap();
    for i in 0..6 {
        let scene = sample_scene(100 + i, &pools.train, &pools.noise, &cfg.data.scene).unwrap();
        let r = render_scene(&scene, &pools.train, &pools.noise, &cfg.geometry, false).unwrap();
        let t = &r.target.channels[0];
        let scaled = |w: &rtsdoa_acoustics::MultichannelWaveform, g: f64| -> Vec<f64> {
            w.channels[0].iter().map(|v| v * g).collect()
        };
        let sir = power_ratio_db(t, &scaled(r.interferer.as_ref().unwrap(), r.interferer_gain), t);
        let snr = power_ratio_db(t, &scaled(r.noise.as_ref().unwrap(), r.noise_gain), t);
        assert!((sir - scene.sir_db as f64).abs() < 0.01, "SIR {sir} vs {}", scene.sir_db);
        assert!((snr - scene.snr_db as f64).abs() < 0.01, "SNR {snr} vs {}", scene.snr_db);
        assert_eq!(r.labels.len(), rtsdoa_acoustics::stft::frame_count(r.mixture.len()));
        assert!(r.mixture.is_finite());
    }
}

#[test]
fn inference_emits_one_record_per_frame() {
    let cfg = tiny();
    let data = tempfile::tempdir().unwrap();
    synthesize_dataset(&cfg, 4, data.path()).unwrap();
    let ckpt = data.path().join("init.ckpt");
    let params = init_params::<f32>(&ModelConfig::standard(), 0).unwrap();
    save_checkpoint(&ckpt, &cfg, &params).unwrap();
    let dir = data.path().join("test");
    let m = read_manifest(&dir).unwrap();
    let (mix, anchor) = (m[0].mix_path(&dir), m[0].anchor_path(&dir));
    let a = infer(&ckpt, &mix, &anchor).unwrap();
    let b = infer(&ckpt, &mix, &anchor).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), m[0].frames);
    assert!((a[0].time_s - 0.01).abs() < 1e-12);
    for (t, r) in a.iter().enumerate() {
        assert_eq!(r.frame, t);
        assert!(r.class <= SILENCE);
        assert_eq!(r.angle_deg.is_none(), r.class == SILENCE);
    }
    // a single-channel file is not a valid array recording
    assert!(infer(&ckpt, &anchor, &anchor).is_err());
}

#[test]
fn command_line_simulate_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    fs::write(&conf, format!("{TINY}scene.interferer=false\nscene.noise=false\nroom.max_order=0\n")).unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_rtsdoa");
    let out = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&conf)
        .args(["--seed", "2", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = dir.path().join("srp.json");
    let out = Command::new(bin)
        .args(["baseline", "--method", "srp-phat", "--data"])
        .arg(&data)
        .arg("--json")
        .arg(&json)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report["ar"].as_f64().unwrap() >= 0.9, "anechoic single-source AR {}", report["ar"]);

    let out = Command::new(bin).args(["simulate", "--config", "/nonexistent.conf", "--out"]).arg(&data).output().unwrap();
    assert!(!out.status.success());
}
