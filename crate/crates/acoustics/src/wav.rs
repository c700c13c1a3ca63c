use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::{MultichannelWaveform, SAMPLE_RATE};

/// Write 32-bit float PCM at 16 kHz.
pub fn write_wav(path: &Path, wave: &MultichannelWaveform) -> Result<()> {
    let spec = WavSpec {
        channels: wave.channels.len() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for n in 0..wave.len() {
        for ch in &wave.channels {
            w.write_sample(ch[n] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Read a 16 kHz WAV (float or integer PCM) into per-channel samples.
pub fn read_wav(path: &Path) -> Result<MultichannelWaveform> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Shape(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            path.display(),
            spec.sample_rate
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let c = spec.channels as usize;
    let channels = (0..c)
        .map(|k| interleaved.iter().skip(k).step_by(c).cloned().collect())
        .collect();
    Ok(MultichannelWaveform::new(channels))
}
