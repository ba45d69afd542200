//! WAV ingest and export, resampling, and the in-memory clip type.

use std::io::{Cursor, Read, Seek};
use std::path::Path;

use rubato::audioadapter_buffers::direct::InterleavedSlice;
use rubato::{
    Async, FixedAsync, Resampler, SincInterpolationParameters, SincInterpolationType,
    WindowFunction,
};

use crate::corpus::Imt;
use crate::error::{Error, Result};

/// Mono PCM samples with their rate and identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub imt: Option<Imt>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: f64) -> Self {
        AudioClip {
            id: id.into(),
            samples,
            sample_rate,
            imt: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Scales the clip so its largest absolute sample is one. Silent clips
    /// are left untouched.
    pub fn peak_normalize(&mut self) {
        let peak = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for v in &mut self.samples {
                *v /= peak;
            }
        }
    }
}

fn decode<R: Read>(reader: hound::WavReader<R>) -> Result<(Vec<f64>, u32)> {
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved.iter().step_by(channels).copied().collect();
    Ok((mono, spec.sample_rate))
}

/// Reads a PCM or float WAV file; multichannel files keep the first channel.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    decode(reader)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Audio(e.to_string()))?;
    decode(reader)
}

fn encode<W: std::io::Write + Seek>(writer: W, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec)?;
    for &v in samples {
        let q = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(q)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit mono PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode(file, samples, sample_rate)
}

pub fn wav_bytes(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode(&mut cursor, samples, sample_rate)?;
    Ok(cursor.into_inner())
}

/// Band-limited sample-rate conversion with a windowed-sinc interpolator.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let params = SincInterpolationParameters {
        sinc_len: 256,
        f_cutoff: None,
        oversampling_factor: 256,
        interpolation: SincInterpolationType::Cubic,
        window: WindowFunction::BlackmanHarris2,
    };
    let ratio = to as f64 / from as f64;
    let mut resampler = Async::<f64>::new_sinc(ratio, 1.0, &params, 1024, 1, FixedAsync::Input)
        .map_err(|e| Error::Audio(format!("resampler: {e}")))?;
    let input = InterleavedSlice::new(samples, 1, samples.len())
        .map_err(|e| Error::Audio(format!("resampler input: {e}")))?;
    let capacity = resampler.process_all_needed_output_len(samples.len());
    let mut out = vec![0.0; capacity];
    let mut output = InterleavedSlice::new_mut(&mut out, 1, capacity)
        .map_err(|e| Error::Audio(format!("resampler output: {e}")))?;
    let (_, produced) = resampler
        .process_all_into_buffer(&input, &mut output, samples.len(), None)
        .map_err(|e| Error::Audio(format!("resampling failed: {e}")))?;
    out.truncate(produced);
    Ok(out)
}

/// Loads a WAV file as a clip at `target_rate`, resampling when needed.
pub fn load_clip(
    path: &Path,
    id: impl Into<String>,
    target_rate: u32,
    normalize: bool,
) -> Result<AudioClip> {
    let (samples, rate) = read_wav(path)?;
    clip_from_samples(samples, rate, id, target_rate, normalize)
}

pub fn clip_from_samples(
    samples: Vec<f64>,
    rate: u32,
    id: impl Into<String>,
    target_rate: u32,
    normalize: bool,
) -> Result<AudioClip> {
    let samples = resample(&samples, rate, target_rate)?;
    let mut clip = AudioClip::new(id, samples, target_rate as f64);
    if normalize {
        clip.peak_normalize();
    }
    Ok(clip)
}
