//! Synthetic soundscapes: Gaussian noise shaped by band-pass resonances
//! whose centre frequency depends on the class. Used to exercise the full
//! pipeline where real recordings are unavailable.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio_io::{self, SampleBuffer};
use crate::dataset::COLUMNS;
use crate::error::{Error, Result};

/// Second-order band-pass section (constant 0 dB peak gain).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn band_pass(centre_hz: f64, q: f64, sample_rate: u32) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * centre_hz / f64::from(sample_rate);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// One resonance of a spectral envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub centre_hz: f64,
    pub gain: f64,
}

const Q: f64 = 4.0;
const BROADBAND_GAIN: f64 = 0.05;

/// `seconds` of noise through the given resonances plus a faint broadband
/// floor, scaled to a peak of 0.5.
pub fn filtered_noise(
    resonances: &[Resonance],
    seconds: f64,
    sample_rate: u32,
    seed: u64,
    source_id: &str,
) -> Result<SampleBuffer> {
    let n = audio_io::unit_length(seconds, sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut white = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut out: Vec<f64> = white().into_iter().map(|v| BROADBAND_GAIN * v).collect();
    let nyquist = f64::from(sample_rate) / 2.0;
    for r in resonances {
        let centre = r.centre_hz.clamp(20.0, 0.95 * nyquist);
        let band = Biquad::band_pass(centre, Q, sample_rate).run(&white());
        for (o, b) in out.iter_mut().zip(band) {
            *o += r.gain * b;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    SampleBuffer::new(out, sample_rate, source_id)
}

/// Family of synthetic scene classes. Class `c` resonates around
/// `base_hz * 2^(separation_octaves * c)` with a weaker partial at 2.3×;
/// every recording jitters that centre by a normal draw of
/// `jitter_octaves` standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFamily {
    pub classes: usize,
    pub base_hz: f64,
    pub separation_octaves: f64,
    pub jitter_octaves: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SceneFamily {
    fn default() -> Self {
        Self {
            classes: 4,
            base_hz: 300.0,
            separation_octaves: 1.0,
            jitter_octaves: 0.05,
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub class_label: String,
    pub recording_id: String,
    pub buffer: SampleBuffer,
}

impl SceneFamily {
    pub fn class_label(&self, class: usize) -> String {
        format!("class{class}")
    }

    fn envelope(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<Resonance> {
        let z: f64 = StandardNormal.sample(rng);
        let octaves = self.separation_octaves * class as f64 + self.jitter_octaves * z;
        let centre = self.base_hz * 2f64.powf(octaves);
        let gain_jitter = 1.0 + 0.1 * rng.gen::<f64>();
        vec![
            Resonance {
                centre_hz: centre,
                gain: gain_jitter,
            },
            Resonance {
                centre_hz: 2.3 * centre,
                gain: 0.5,
            },
        ]
    }

    /// `per_class` independent recordings of `seconds` for every class.
    /// Recording `r` of class `c` depends only on `(seed, c, r)`.
    pub fn recordings(&self, per_class: usize, seconds: f64) -> Result<Vec<SyntheticRecording>> {
        let mut out = Vec::with_capacity(self.classes * per_class);
        for c in 0..self.classes {
            for r in 0..per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(((c as u64) << 32) | r as u64);
                let envelope = self.envelope(c, &mut rng);
                let id = format!("{}_rec{r:02}", self.class_label(c));
                let noise_seed = rng.gen();
                out.push(SyntheticRecording {
                    class_label: self.class_label(c),
                    recording_id: id.clone(),
                    buffer: filtered_noise(&envelope, seconds, self.sample_rate, noise_seed, &id)?,
                });
            }
        }
        Ok(out)
    }
}

/// Write each recording as `<dir>/<recording_id>.wav` (16-bit) and a
/// manifest listing them as whole recordings, one location per recording.
pub fn write_dataset(dir: &Path, name: &str, recordings: &[SyntheticRecording]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(format!("{name}.csv"));
    let mut f = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut text = format!("{}\n", COLUMNS.join(","));
    for r in recordings {
        let file = format!("{}.wav", r.recording_id);
        audio_io::write_wav_i16(dir.join(&file), &r.buffer)?;
        text.push_str(&format!(
            "{id},{file},{class},{id},{id},\n",
            id = r.recording_id,
            class = r.class_label
        ));
    }
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
