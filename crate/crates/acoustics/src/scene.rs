use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{synth_noise, synth_utterance, VoiceProfile};
use crate::SAMPLE_RATE;

/// A sampled acoustic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub target_initial_idx: usize,
    pub target_second_idx: usize,
    pub interferer_idx: usize,
    pub anchor_idx: usize,
    pub noise_idx: usize,
    pub switch_time: f64,
    pub sir_db: i32,
    pub snr_db: i32,
    pub t60: f64,
    pub duration: f64,
    pub target_clip: String,
    pub interferer_clip: Option<String>,
    pub anchor_clip: String,
    pub noise_clip: Option<String>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn is_moving(&self) -> bool {
        self.target_initial_idx != self.target_second_idx
    }

    pub fn validate(&self, directions: usize) -> Result<()> {
        let mut idx = vec![self.target_initial_idx, self.interferer_idx, self.anchor_idx, self.noise_idx];
        if self.is_moving() {
            idx.push(self.target_second_idx);
        }
        if idx.iter().any(|&i| i >= directions) {
            return Err(Error::Pool(format!("position index out of range in {idx:?}")));
        }
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != idx.len() {
            return Err(Error::Pool(format!("positions {idx:?} are not distinct")));
        }
        if !(self.switch_time > 0.0 && self.switch_time < self.duration) {
            return Err(Error::Pool(format!(
                "switch time {} outside clip of {} s",
                self.switch_time, self.duration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClipSource {
    File(PathBuf),
    SyntheticSpeech { speaker_seed: u64, seed: u64 },
    SyntheticNoise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub id: String,
    pub speaker: String,
    pub seconds: f64,
    pub source: ClipSource,
}

impl Clip {
    pub fn load(&self) -> Result<Vec<f64>> {
        match &self.source {
            ClipSource::File(p) => {
                let w = crate::wav::read_wav(p)?;
                if w.channels.len() != 1 {
                    return Err(Error::Pool(format!("{} is not mono", p.display())));
                }
                Ok(w.channels.into_iter().next().unwrap())
            }
            ClipSource::SyntheticSpeech { speaker_seed, seed } => Ok(synth_utterance(
                &VoiceProfile::for_speaker(*speaker_seed),
                *seed,
                self.seconds,
            )),
            ClipSource::SyntheticNoise { seed } => Ok(synth_noise(*seed, self.seconds)),
        }
    }
}

/// Audio clips grouped by speaker.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipPool {
    pub clips: Vec<Clip>,
}

impl ClipPool {
    /// Every `.wav` below `dir`; the first path component names the speaker.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut clips = Vec::new();
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Pool(e.to_string()))?;
            let path = entry.path();
            if !entry.file_type().is_file()
                || path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref()
                    != Some("wav")
            {
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap_or(path);
            let speaker = match rel.components().next() {
                Some(c) if rel.components().count() > 1 => c.as_os_str().to_string_lossy().into_owned(),
                _ => continue,
            };
            let reader = hound::WavReader::open(path)?;
            let spec = reader.spec();
            if spec.sample_rate != SAMPLE_RATE {
                return Err(Error::Pool(format!(
                    "{} has sample rate {} (expected {SAMPLE_RATE})",
                    path.display(),
                    spec.sample_rate
                )));
            }
            clips.push(Clip {
                id: rel.to_string_lossy().into_owned(),
                speaker,
                seconds: reader.duration() as f64 / SAMPLE_RATE as f64,
                source: ClipSource::File(path.to_path_buf()),
            });
        }
        if clips.is_empty() {
            return Err(Error::Pool(format!("no wav files under {}", dir.display())));
        }
        Ok(ClipPool { clips })
    }

    /// Synthetic voices, `per_speaker` utterances each, durations uniform in `seconds`.
    pub fn synthetic_speech(speakers: usize, per_speaker: usize, seconds: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clips = Vec::new();
        for s in 0..speakers {
            let speaker_seed: u64 = rng.gen();
            for u in 0..per_speaker {
                let secs = if seconds.1 > seconds.0 {
                    rng.gen_range(seconds.0..seconds.1)
                } else {
                    seconds.0
                };
                clips.push(Clip {
                    id: format!("voice{s:03}/utt{u:02}"),
                    speaker: format!("voice{s:03}"),
                    seconds: (secs * 100.0).round() / 100.0,
                    source: ClipSource::SyntheticSpeech {
                        speaker_seed,
                        seed: rng.gen(),
                    },
                });
            }
        }
        ClipPool { clips }
    }

    pub fn synthetic_noise(count: usize, seconds: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clips = (0..count)
            .map(|i| Clip {
                id: format!("noise/n{i:03}"),
                speaker: "noise".into(),
                seconds,
                source: ClipSource::SyntheticNoise { seed: rng.gen() },
            })
            .collect();
        ClipPool { clips }
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<&Clip>> {
        let mut m: BTreeMap<&str, Vec<&Clip>> = BTreeMap::new();
        for c in &self.clips {
            m.entry(c.speaker.as_str()).or_default().push(c);
        }
        m
    }

    pub fn speakers(&self) -> Vec<String> {
        self.by_speaker().keys().map(|s| s.to_string()).collect()
    }

    pub fn restricted_to(&self, speakers: &[String]) -> ClipPool {
        ClipPool {
            clips: self
                .clips
                .iter()
                .filter(|c| speakers.contains(&c.speaker))
                .cloned()
                .collect(),
        }
    }
}

/// Sampling ranges for [`sample_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub t60_choices: Vec<f64>,
    pub sir_range: (i32, i32),
    pub snr_range: (i32, i32),
    pub interferer: bool,
    pub noise: bool,
    pub moving: bool,
    /// Restrict target positions to these catalog indices.
    pub target_directions: Option<Vec<usize>>,
    pub directions: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            t60_choices: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            sir_range: (-5, 5),
            snr_range: (-5, 5),
            interferer: true,
            noise: true,
            moving: true,
            target_directions: None,
            directions: 36,
        }
    }
}

/// Draw one scene; identical seeds give identical scenes.
///
/// When `cfg.moving` is false the target stays put and
/// `target_second_idx == target_initial_idx`.
pub fn sample_scene(seed: u64, speech: &ClipPool, noise: &ClipPool, cfg: &SceneConfig) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = speech.by_speaker();
    let eligible: Vec<&str> = groups
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(k, _)| *k)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Pool("no speaker has a second utterance for the anchor".into()));
    }
    let speaker = *eligible.choose(&mut rng).unwrap();
    let mine = &groups[speaker];
    let picks: Vec<&&Clip> = mine.choose_multiple(&mut rng, 2).collect();
    let (target, anchor) = (picks[0], picks[1]);

    let interferer_clip = if cfg.interferer {
        let others: Vec<&Clip> = speech.clips.iter().filter(|c| c.speaker != speaker).collect();
        let c = others
            .choose(&mut rng)
            .ok_or_else(|| Error::Pool("no other speaker available as interferer".into()))?;
        Some(c.id.clone())
    } else {
        None
    };
    let noise_clip = if cfg.noise {
        Some(
            noise
                .clips
                .choose(&mut rng)
                .ok_or_else(|| Error::Pool("noise pool is empty".into()))?
                .id
                .clone(),
        )
    } else {
        None
    };

    let all: Vec<usize> = (0..cfg.directions).collect();
    let allowed = cfg.target_directions.clone().unwrap_or_else(|| all.clone());
    let need_second = cfg.moving;
    if allowed.len() < 1 + need_second as usize || cfg.directions < 5 {
        return Err(Error::Pool("not enough directions for five distinct positions".into()));
    }
    let targets: Vec<usize> = allowed
        .choose_multiple(&mut rng, 1 + need_second as usize)
        .cloned()
        .collect();
    let initial = targets[0];
    let second = if need_second { targets[1] } else { initial };
    let rest: Vec<usize> = all.into_iter().filter(|i| *i != initial && *i != second).collect();
    let others: Vec<usize> = rest.choose_multiple(&mut rng, 3).cloned().collect();

    let duration = target.seconds;
    let switch_time = if need_second {
        (duration * rng.gen_range(0.25..0.75) * 1000.0).round() / 1000.0
    } else {
        (duration * 500.0).round() / 1000.0
    };
    let sir_db = rng.gen_range(cfg.sir_range.0..=cfg.sir_range.1);
    let snr_db = rng.gen_range(cfg.snr_range.0..=cfg.snr_range.1);
    let t60 = *cfg
        .t60_choices
        .choose(&mut rng)
        .ok_or_else(|| Error::Pool("no t60 choices".into()))?;
    let scene = SceneSpec {
        target_initial_idx: initial,
        target_second_idx: second,
        interferer_idx: others[0],
        anchor_idx: others[1],
        noise_idx: others[2],
        switch_time,
        sir_db,
        snr_db,
        t60,
        duration,
        target_clip: target.id.clone(),
        interferer_clip,
        anchor_clip: anchor.id.clone(),
        noise_clip,
        seed,
    };
    scene.validate(cfg.directions)?;
    Ok(scene)
}
