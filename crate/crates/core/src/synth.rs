//! Deterministic test signals and the planted-cluster corpus.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::corpus::{Corpus, CorpusEntry, Imt};
use crate::error::{Error, Result};
use crate::perceptual::ClusterGraph;

fn samples(duration: f64, sample_rate: f64) -> usize {
    (duration * sample_rate).round() as usize
}

/// Sum of `partials` harmonics of `f0` with 1/k amplitudes, peak-normalized
/// to 0.5. Partials above Nyquist are dropped.
pub fn harmonic_tone(f0: f64, partials: usize, duration: f64, sample_rate: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..samples(duration, sample_rate))
        .map(|i| {
            let t = i as f64 / sample_rate;
            (1..=partials)
                .filter(|&k| (k as f64) * f0 < sample_rate / 2.0)
                .map(|k| (2.0 * PI * k as f64 * f0 * t).sin() / k as f64)
                .sum()
        })
        .collect();
    scale_peak(&mut x, 0.5);
    x
}

/// Sinusoidal amplitude modulation `(1 + depth sin(2 pi rate t + phase))` of
/// `carrier`.
pub fn amplitude_modulate(carrier: &mut [f64], rate: f64, depth: f64, phase: f64, sample_rate: f64) {
    for (i, v) in carrier.iter_mut().enumerate() {
        let t = i as f64 / sample_rate;
        *v *= (1.0 + depth * (2.0 * PI * rate * t + phase).sin()) / (1.0 + depth);
    }
}

pub fn am_tone(carrier: f64, rate: f64, duration: f64, sample_rate: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..samples(duration, sample_rate))
        .map(|i| 0.5 * (2.0 * PI * carrier * i as f64 / sample_rate).sin())
        .collect();
    amplitude_modulate(&mut x, rate, 1.0, 0.0, sample_rate);
    x
}

/// Exponential sweep starting at `f_start` and moving
/// `octaves_per_second` (negative for a descending sweep), with `partials`
/// harmonics.
pub fn chirp(
    f_start: f64,
    octaves_per_second: f64,
    partials: usize,
    duration: f64,
    sample_rate: f64,
) -> Vec<f64> {
    let k = octaves_per_second * LN_2;
    let mut x: Vec<f64> = (0..samples(duration, sample_rate))
        .map(|i| {
            let t = i as f64 / sample_rate;
            let phase = if k.abs() < 1e-12 {
                2.0 * PI * f_start * t
            } else {
                2.0 * PI * f_start * ((k * t).exp() - 1.0) / k
            };
            let inst = f_start * (k * t).exp();
            (1..=partials)
                .filter(|&p| p as f64 * inst < 0.45 * sample_rate)
                .map(|p| (p as f64 * phase).sin() / p as f64)
                .sum()
        })
        .collect();
    scale_peak(&mut x, 0.5);
    x
}

/// Unit impulses every `1 / rate` seconds, starting at zero.
pub fn impulse_train(rate: f64, duration: f64, sample_rate: f64) -> Vec<f64> {
    let n = samples(duration, sample_rate);
    let mut x = vec![0.0; n];
    let mut k = 0;
    loop {
        let i = (k as f64 * sample_rate / rate).round() as usize;
        if i >= n {
            break;
        }
        x[i] = 1.0;
        k += 1;
    }
    x
}

/// Sine burst of length `burst` seconds placed at `onset` inside a silent
/// buffer of `total` seconds, with 5 ms raised-cosine ramps.
pub fn tone_burst(freq: f64, burst: f64, onset: f64, total: f64, sample_rate: f64) -> Vec<f64> {
    let mut x = vec![0.0; samples(total, sample_rate)];
    let start = samples(onset, sample_rate);
    let len = samples(burst, sample_rate);
    let ramp = samples(0.005, sample_rate).max(1);
    for j in 0..len.min(x.len().saturating_sub(start)) {
        let env = if j < ramp {
            0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
        } else if j >= len - ramp {
            0.5 - 0.5 * (PI * (len - j) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        x[start + j] = 0.5 * env * (2.0 * PI * freq * j as f64 / sample_rate).sin();
    }
    x
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn scale_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// One planted cluster: what every variant shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prototype {
    /// Harmonic tone with sinusoidal amplitude modulation at `rate` Hz.
    Am { rate: f64 },
    /// Harmonic exponential sweep.
    Chirp { octaves_per_second: f64 },
    /// Harmonic tone gated by clicks at `rate` Hz.
    Impulses { rate: f64 },
}

impl Prototype {
    pub fn name(&self) -> String {
        match self {
            Prototype::Am { rate } => format!("am{rate}hz"),
            Prototype::Chirp { octaves_per_second } if *octaves_per_second >= 0.0 => {
                format!("chirpup{octaves_per_second}")
            }
            Prototype::Chirp { octaves_per_second } => format!("chirpdown{}", -octaves_per_second),
            Prototype::Impulses { rate } => format!("clicks{rate}hz"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedCorpusSpec {
    pub sample_rate: u32,
    pub duration: f64,
    pub clips_per_cluster: usize,
    /// Carrier fundamentals are drawn log-uniformly from this range for
    /// every cluster alike, so pitch carries no cluster information.
    pub f0_range: (f64, f64),
    pub prototypes: Vec<Prototype>,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        PlantedCorpusSpec {
            sample_rate: 16_000,
            duration: 1.0,
            clips_per_cluster: 10,
            f0_range: (150.0, 400.0),
            prototypes: vec![
                Prototype::Am { rate: 4.0 },
                Prototype::Am { rate: 16.0 },
                Prototype::Chirp {
                    octaves_per_second: 2.0,
                },
                Prototype::Chirp {
                    octaves_per_second: -2.0,
                },
            ],
        }
    }
}

pub struct PlantedClip {
    pub id: String,
    pub cluster: usize,
    pub imt: Imt,
    pub samples: Vec<f64>,
}

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

fn note_name(freq: f64) -> String {
    let midi = (69.0 + 12.0 * (freq / 440.0).log2()).round() as i64;
    format!("{}{}", NOTE_NAMES[midi.rem_euclid(12) as usize], midi.div_euclid(12) - 1)
}

fn variant(proto: &Prototype, spec: &PlantedCorpusSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let sr = spec.sample_rate as f64;
    let (lo, hi) = spec.f0_range;
    let f0 = lo * (hi / lo).powf(rng.random::<f64>());
    let partials = rng.random_range(3..=6);
    let jitter = 1.0 + rng.random_range(-0.1..0.1);
    let mut x = match proto {
        Prototype::Am { rate } => {
            let mut x = harmonic_tone(f0, partials, spec.duration, sr);
            let depth = rng.random_range(0.7..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            amplitude_modulate(&mut x, rate * jitter, depth, phase, sr);
            x
        }
        Prototype::Chirp { octaves_per_second } => {
            // The sweep is centered on f0 so both directions cover the same
            // range.
            let speed = octaves_per_second * jitter;
            let start = f0 * 2f64.powf(-speed * spec.duration / 2.0);
            chirp(start, speed, partials, spec.duration, sr)
        }
        Prototype::Impulses { rate } => {
            let mut x = harmonic_tone(f0, partials, spec.duration, sr);
            let period = sr / (rate * jitter);
            let decay = rng.random_range(0.01..0.03) * sr;
            for (i, v) in x.iter_mut().enumerate() {
                let since = (i as f64) % period;
                *v *= (-since / decay).exp();
            }
            x
        }
    };
    let gain = rng.random_range(0.5..1.0);
    x.iter_mut().for_each(|v| *v *= gain);
    (x, f0)
}

/// Generates the clips of a planted corpus. The same seed always gives
/// bit-identical audio.
pub fn planted_clips(spec: &PlantedCorpusSpec, seed: u64) -> Result<Vec<PlantedClip>> {
    if spec.prototypes.is_empty() || spec.clips_per_cluster == 0 {
        return Err(Error::InvalidParameter(
            "a planted corpus needs at least one prototype and one clip per cluster".into(),
        ));
    }
    if !(spec.duration > 0.0) || !(spec.f0_range.0 > 0.0 && spec.f0_range.1 >= spec.f0_range.0) {
        return Err(Error::InvalidParameter("bad duration or f0 range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for (c, proto) in spec.prototypes.iter().enumerate() {
        for i in 0..spec.clips_per_cluster {
            let (samples, f0) = variant(proto, spec, &mut rng);
            let imt = Imt {
                instrument: "Synth".into(),
                mute: None,
                technique: proto.name(),
                pitch: Some(note_name(f0)),
                dynamics: Some("mf".into()),
                string: None,
                suffix: vec![format!("{i:02}")],
            };
            clips.push(PlantedClip {
                id: format!("{}-{i:02}", proto.name()),
                cluster: c,
                imt,
                samples,
            });
        }
    }
    Ok(clips)
}

pub fn planted_graph(clips: &[PlantedClip]) -> Result<ClusterGraph> {
    let count = clips.iter().map(|c| c.cluster + 1).max().unwrap_or(0);
    let mut clusters = vec![Vec::new(); count];
    for c in clips {
        clusters[c.cluster].push(c.id.clone());
    }
    ClusterGraph::new(clusters)
}

/// Writes the planted corpus under `dir`: one WAV per clip in `audio/`,
/// `manifest.jsonl` and the ground-truth `clusters.json`.
pub fn make_synthetic_corpus(
    spec: &PlantedCorpusSpec,
    seed: u64,
    dir: &Path,
) -> Result<(Corpus, ClusterGraph)> {
    let clips = planted_clips(spec, seed)?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio)?;
    let mut entries = Vec::with_capacity(clips.len());
    for clip in &clips {
        let rel = Path::new("audio").join(format!("{}.wav", clip.id));
        write_wav(&dir.join(&rel), &clip.samples, spec.sample_rate)?;
        entries.push(CorpusEntry {
            id: clip.id.clone(),
            path: rel,
            imt: clip.imt.clone(),
        });
    }
    let corpus = Corpus::new(dir, entries)?;
    corpus.write_manifest(&dir.join("manifest.jsonl"))?;
    let graph = planted_graph(&clips)?.with_provenance(serde_json::json!({
        "planted": spec,
        "seed": seed,
    }));
    graph.write(&dir.join("clusters.json"))?;
    Ok((corpus, graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_graph() {
        let clips = planted_clips(&PlantedCorpusSpec::default(), 7).unwrap();
        assert_eq!(clips.len(), 40);
        let g = planted_graph(&clips).unwrap();
        assert_eq!(g.cluster_count(), 4);
        assert!(g.clusters.iter().all(|c| c.len() == 10));
        assert!(clips.iter().all(|c| c.samples.len() == 16_000));
        assert!(clips.iter().all(|c| c.samples.iter().all(|v| v.abs() <= 0.5 + 1e-12)));
    }

    #[test]
    fn same_seed_same_audio() {
        let spec = PlantedCorpusSpec {
            clips_per_cluster: 2,
            ..Default::default()
        };
        let a = planted_clips(&spec, 3).unwrap();
        let b = planted_clips(&spec, 3).unwrap();
        let c = planted_clips(&spec, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.samples, y.samples);
        }
        assert_ne!(a[0].samples, c[0].samples);
    }

    #[test]
    fn written_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PlantedCorpusSpec {
            clips_per_cluster: 2,
            duration: 0.2,
            ..Default::default()
        };
        let (corpus, graph) = make_synthetic_corpus(&spec, 1, dir.path()).unwrap();
        let again = Corpus::read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(again.entries, corpus.entries);
        let g = ClusterGraph::read(&dir.path().join("clusters.json")).unwrap();
        assert!(g.same_partition(&graph));
        for e in &corpus.entries {
            assert!(corpus.resolve(e).exists());
        }
    }

    #[test]
    fn impulse_spacing() {
        let x = impulse_train(8.0, 1.0, 8000.0);
        let idx: Vec<usize> = x.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(idx, (0..8).map(|k| k * 1000).collect::<Vec<_>>());
    }

    #[test]
    fn note_names() {
        assert_eq!(note_name(440.0), "A4");
        assert_eq!(note_name(261.63), "C4");
    }
}
