use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::geometry::{distance, Point, ReflectionModel, RoomSpec};
use crate::SAMPLE_RATE;

/// Uniform wall reflection coefficient from Sabine absorption.
pub fn t60_to_reflection(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    let alpha = 0.161 * room.volume() / (room.surface() * room.t60);
    if alpha >= 1.0 {
        return Err(Error::T60TooShort {
            t60: room.t60,
            alpha,
        });
    }
    Ok((1.0 - alpha).sqrt().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// Reflection coefficient used by [`image_method_rir`] for this room.
pub fn reflection_coefficient(room: &RoomSpec) -> Result<f64> {
    match room.reflection {
        ReflectionModel::Sabine => t60_to_reflection(room),
        ReflectionModel::Calibrated => calibrated_reflection(room),
    }
}

/// Samples needed to hold the decay of `room`; for a direct-path-only room,
/// enough to reach across the room diagonal.
pub fn rir_length(room: &RoomSpec) -> usize {
    let fs = SAMPLE_RATE as f64;
    if room.max_order == Some(0) {
        let diag = room.dims.iter().map(|d| d * d).sum::<f64>().sqrt();
        return (diag / room.speed_of_sound * fs).ceil() as usize + 2;
    }
    (room.t60 * fs).ceil() as usize
}

type CacheKey = [u64; 5];

fn calibration_cache() -> &'static Mutex<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Reflection coefficient whose simulated Schroeder decay matches the
/// requested T60 for a reference source/microphone pair near the room centre.
pub fn calibrated_reflection(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    let key = [
        room.dims[0].to_bits(),
        room.dims[1].to_bits(),
        room.dims[2].to_bits(),
        room.t60.to_bits(),
        room.speed_of_sound.to_bits(),
    ];
    if let Some(&b) = calibration_cache().lock().unwrap().get(&key) {
        return Ok(b);
    }
    let mic = room.center();
    let offset = 1.5f64.min(0.3 * room.dims[0].min(room.dims[1]));
    let src = [mic[0] + offset, mic[1], mic[2]];
    let len = 2 * rir_length(room);
    let measure = |beta: f64| -> Result<f64> {
        let h = rir_with_beta(room, src, mic, len, beta, None)?;
        Ok(schroeder_t60(&h).unwrap_or(0.0))
    };
    let (mut lo, mut hi) = (0.05f64, 0.995f64);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if measure(mid)? < room.t60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let reached = measure(beta)?;
    if (reached - room.t60).abs() > 0.05 * room.t60 {
        return Err(Error::InvalidRoom(format!(
            "cannot reach t60 {} s in this room (closest {reached:.3} s)",
            room.t60
        )));
    }
    calibration_cache().lock().unwrap().insert(key, beta);
    Ok(beta)
}

/// Room impulse response from `src` to `mic` by the image-source method.
pub fn image_method_rir(room: &RoomSpec, src: Point, mic: Point, length: usize) -> Result<Vec<f64>> {
    room.validate()?;
    let beta = if room.max_order == Some(0) {
        0.0
    } else {
        reflection_coefficient(room)?
    };
    rir_with_beta(room, src, mic, length, beta, room.max_order)
}

struct AxisTerm {
    offset_sq: f64,
    order: usize,
}

fn axis_terms(src: f64, mic: f64, len: f64, max_dist: f64) -> Vec<AxisTerm> {
    let reach = (max_dist / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -reach..=reach {
        for q in 0..2i64 {
            let img = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            let off = img - mic;
            if off.abs() > max_dist {
                continue;
            }
            out.push(AxisTerm {
                offset_sq: off * off,
                order: ((n - q).abs() + n.abs()) as usize,
            });
        }
    }
    out.sort_by(|a, b| a.offset_sq.total_cmp(&b.offset_sq));
    out
}

fn rir_with_beta(
    room: &RoomSpec,
    src: Point,
    mic: Point,
    length: usize,
    beta: f64,
    max_order: Option<usize>,
) -> Result<Vec<f64>> {
    for p in [src, mic] {
        if !room.contains(p) {
            return Err(Error::OutsideRoom(p));
        }
    }
    let direct = distance(src, mic);
    if direct < 0.01 {
        return Err(Error::TooClose(direct));
    }
    let fs = SAMPLE_RATE as f64;
    let c = room.speed_of_sound;
    let mut h = vec![0.0; length];
    if length == 0 {
        return Ok(h);
    }
    let max_dist = (length as f64 - 0.5) / fs * c;
    let ax: Vec<Vec<AxisTerm>> = (0..3)
        .map(|i| axis_terms(src[i], mic[i], room.dims[i], max_dist))
        .collect();
    let top = ax.iter().map(|a| a.iter().map(|t| t.order).max().unwrap_or(0)).sum::<usize>();
    let pow: Vec<f64> = (0..=top).map(|k| beta.powi(k as i32)).collect();
    let max_sq = max_dist * max_dist;
    let limit = max_order.unwrap_or(usize::MAX);
    for x in &ax[0] {
        for y in &ax[1] {
            let xy = x.offset_sq + y.offset_sq;
            if xy > max_sq {
                break;
            }
            for z in &ax[2] {
                let d2 = xy + z.offset_sq;
                if d2 > max_sq {
                    break;
                }
                let order = x.order + y.order + z.order;
                if order > limit {
                    continue;
                }
                let d = d2.sqrt();
                let k = (d / c * fs).round() as usize;
                if k < length {
                    let gain = if order == 0 { 1.0 } else { pow[order] };
                    h[k] += gain / (4.0 * PI * d);
                }
            }
        }
    }
    Ok(h)
}

/// Energy decay curve in dB (Schroeder backward integration), normalised to 0 dB.
pub fn energy_decay_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; h.len()];
    let mut s = 0.0;
    for i in (0..h.len()).rev() {
        s += h[i] * h[i];
        acc[i] = s;
    }
    let total = s.max(f64::MIN_POSITIVE);
    acc.iter().map(|&e| 10.0 * (e / total).max(1e-300).log10()).collect()
}

/// Decay time estimated from a straight-line fit to the -5..-25 dB span of the
/// energy decay curve, extrapolated to 60 dB. `None` if the span is not reached.
pub fn schroeder_t60(h: &[f64]) -> Option<f64> {
    let edc = energy_decay_curve(h);
    let start = edc.iter().position(|&e| e <= -5.0)?;
    let end = edc.iter().position(|&e| e <= -25.0)?;
    if end <= start + 1 {
        return None;
    }
    let fs = SAMPLE_RATE as f64;
    let n = (end - start) as f64;
    let (mut st, mut se, mut stt, mut ste) = (0.0, 0.0, 0.0, 0.0);
    for (i, &e) in edc[start..end].iter().enumerate() {
        let t = (start + i) as f64 / fs;
        st += t;
        se += e;
        stt += t * t;
        ste += t * e;
    }
    let slope = (n * ste - st * se) / (n * stt - st * st);
    (slope < 0.0).then(|| -60.0 / slope)
}
