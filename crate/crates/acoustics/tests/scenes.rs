use rtsdoa_acoustics::*;

fn pools() -> (ClipPool, ClipPool) {
    (
        ClipPool::synthetic_speech(6, 3, (3.0, 5.0), 11),
        ClipPool::synthetic_noise(4, 16.0, 12),
    )
}

#[test]
fn sampling_is_deterministic() {
    let (s, n) = pools();
    let cfg = SceneConfig::default();
    assert_eq!(sample_scene(42, &s, &n, &cfg).unwrap(), sample_scene(42, &s, &n, &cfg).unwrap());
    assert_ne!(sample_scene(42, &s, &n, &cfg).unwrap(), sample_scene(43, &s, &n, &cfg).unwrap());
}

#[test]
fn invariants_hold_over_many_draws() {
    let (s, n) = pools();
    let cfg = SceneConfig::default();
    let mut sir_seen = [0usize; 11];
    let mut snr_seen = [0usize; 11];
    for seed in 0..10_000 {
        let sc = sample_scene(seed, &s, &n, &cfg).unwrap();
        let mut idx = [sc.target_initial_idx, sc.target_second_idx, sc.interferer_idx, sc.anchor_idx, sc.noise_idx];
        idx.sort_unstable();
        assert!(idx.windows(2).all(|w| w[0] != w[1]));
        assert!(idx.iter().all(|&i| i < 36));
        assert!((-5..=5).contains(&sc.sir_db) && (-5..=5).contains(&sc.snr_db));
        assert!(sc.switch_time > 0.0 && sc.switch_time < sc.duration);
        assert!(cfg.t60_choices.contains(&sc.t60));
        let target = s.get(&sc.target_clip).unwrap();
        let anchor = s.get(&sc.anchor_clip).unwrap();
        assert_eq!(target.speaker, anchor.speaker);
        assert_ne!(target.id, anchor.id);
        assert_ne!(s.get(sc.interferer_clip.as_deref().unwrap()).unwrap().speaker, target.speaker);
        sir_seen[(sc.sir_db + 5) as usize] += 1;
        snr_seen[(sc.snr_db + 5) as usize] += 1;
    }
    assert!(sir_seen.iter().all(|&c| c > 0));
    assert!(snr_seen.iter().all(|&c| c > 0));
}

#[test]
fn pool_without_second_utterance_errors() {
    let s = ClipPool::synthetic_speech(3, 1, (3.0, 4.0), 1);
    let n = ClipPool::synthetic_noise(1, 4.0, 1);
    assert!(matches!(sample_scene(0, &s, &n, &SceneConfig::default()), Err(Error::Pool(_))));
}

#[test]
fn static_scenes_restricted_directions() {
    let (s, n) = pools();
    let cfg = SceneConfig {
        moving: false,
        interferer: false,
        noise: false,
        target_directions: Some(vec![0, 9, 18, 27]),
        ..SceneConfig::default()
    };
    for seed in 0..200 {
        let sc = sample_scene(seed, &s, &n, &cfg).unwrap();
        assert_eq!(sc.target_initial_idx, sc.target_second_idx);
        assert!([0, 9, 18, 27].contains(&sc.target_initial_idx));
        assert!(sc.interferer_clip.is_none() && sc.noise_clip.is_none());
    }
}

#[test]
fn synthetic_speech_has_pauses_and_is_deterministic() {
    let (s, _) = pools();
    let clip = &s.clips[0];
    let a = clip.load().unwrap();
    assert_eq!(a, clip.load().unwrap());
    assert_eq!(a.len(), (clip.seconds * 16000.0).round() as usize);
    let vad = vad_labels(&a);
    let voiced = vad.iter().filter(|&&v| v).count();
    assert!(voiced > vad.len() / 3 && voiced < vad.len());
}

#[test]
fn wav_round_trip_and_dir_pool() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = pools();
    for c in s.clips.iter().take(4) {
        let path = dir.path().join(format!("{}.wav", c.id));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        wav::write_wav(&path, &MultichannelWaveform::mono(c.load().unwrap())).unwrap();
    }
    let pool = ClipPool::from_dir(dir.path()).unwrap();
    assert_eq!(pool.clips.len(), 4);
    assert_eq!(pool.speakers(), vec!["voice000".to_string(), "voice001".to_string()]);
    let back = pool.clips[0].load().unwrap();
    let orig = s.clips[0].load().unwrap();
    assert_eq!(back.len(), orig.len());
    assert!(back.iter().zip(&orig).all(|(a, b)| (a - b).abs() < 1e-7));
    let mc = MultichannelWaveform::new(vec![vec![0.25; 10], vec![-0.5; 10]]);
    let p = dir.path().join("mc.wav");
    wav::write_wav(&p, &mc).unwrap();
    assert_eq!(wav::read_wav(&p).unwrap(), mc);
}
