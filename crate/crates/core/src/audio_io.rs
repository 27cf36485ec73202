//! WAV decoding, peak normalization and fixed-length segmentation.
//!
//! Buffers are always mono `f64` in `[-1, 1]` at the file's native sample
//! rate. Stereo input is mixed down by averaging the two channels.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
    segment_index: Option<usize>,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("sample buffer"));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
            segment_index: None,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Position of this unit within its source recording, if it was cut by
    /// [`segment`].
    pub fn segment_index(&self) -> Option<usize> {
        self.segment_index
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Header-level facts about a WAV file, read without decoding the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub frames: u64,
}

impl WavInfo {
    pub fn duration_seconds(&self) -> f64 {
        self.frames as f64 / f64::from(self.sample_rate)
    }
}

fn open(path: &Path) -> Result<WavReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "format not supported by the WAV reader".into(),
        },
        other => Error::Unreadable {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn check_spec(path: &Path, spec: &WavSpec) -> Result<()> {
    let unsupported = |detail: String| Error::UnsupportedEncoding {
        path: path.to_path_buf(),
        detail,
    };
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 8 | 16 | 24) | (SampleFormat::Float, 32) => {}
        (format, bits) => return Err(unsupported(format!("{bits}-bit {format:?} samples"))),
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    if spec.sample_rate == 0 {
        return Err(unsupported("zero sample rate".into()));
    }
    Ok(())
}

pub fn probe(path: impl AsRef<Path>) -> Result<WavInfo> {
    let path = path.as_ref();
    let reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        channels: spec.channels,
        frames: u64::from(reader.duration()),
    })
}

/// Decode a PCM WAV file (8/16/24-bit integer or 32-bit float, mono or
/// stereo) into a mono buffer. The source id is the path as given.
pub fn decode(path: impl AsRef<Path>) -> Result<SampleBuffer> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, &spec)?;

    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
    };

    let channels = usize::from(spec.channels);
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    if samples.is_empty() {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Unreadable {
            path: path.to_path_buf(),
            reason: "non-finite float sample".into(),
        });
    }
    Ok(SampleBuffer {
        samples,
        sample_rate: spec.sample_rate,
        source_id: path.display().to_string(),
        segment_index: None,
    })
}

/// Write a mono 16-bit PCM WAV file. Samples outside `[-1, 1]` are clipped.
pub fn write_wav_i16(path: impl AsRef<Path>, buf: &SampleBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &buf.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0)
            .round()
            .clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Scale so the peak absolute amplitude is 1. An all-zero buffer is returned
/// unchanged.
pub fn normalize(buf: &SampleBuffer) -> SampleBuffer {
    let peak = buf.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak == 0.0 || peak == 1.0 {
        return buf.clone();
    }
    SampleBuffer {
        samples: buf.samples.iter().map(|s| s / peak).collect(),
        ..buf.clone()
    }
}

/// Number of samples in one unit of `unit_seconds` at `sample_rate`.
pub fn unit_length(unit_seconds: f64, sample_rate: u32) -> usize {
    (unit_seconds * f64::from(sample_rate)).round() as usize
}

/// Units produced by [`segment`] for a recording of `total` samples: every
/// full unit, plus a trailing shorter unit when the remainder is at least
/// half a unit long.
pub fn segment_count(total: usize, unit: usize) -> usize {
    assert!(unit > 0, "unit length must be positive");
    let full = total / unit;
    let rem = total % unit;
    full + usize::from(rem > 0 && 2 * rem >= unit)
}

/// Cut a recording into consecutive non-overlapping units.
pub fn segment(buf: &SampleBuffer, unit_seconds: f64) -> Result<Vec<SampleBuffer>> {
    if !(unit_seconds > 0.0 && unit_seconds.is_finite()) {
        return Err(Error::Config(format!(
            "unit length must be positive, got {unit_seconds} s"
        )));
    }
    let unit = unit_length(unit_seconds, buf.sample_rate).max(1);
    let count = segment_count(buf.samples.len(), unit);
    if count == 0 {
        log::warn!(
            "{}: {:.1} s is shorter than half a {unit_seconds} s unit; no units produced",
            buf.source_id,
            buf.duration_seconds()
        );
    }
    Ok((0..count)
        .map(|i| {
            let start = i * unit;
            let end = (start + unit).min(buf.samples.len());
            SampleBuffer {
                samples: buf.samples[start..end].to_vec(),
                sample_rate: buf.sample_rate,
                source_id: buf.source_id.clone(),
                segment_index: Some(i),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: Vec<f64>, rate: u32) -> SampleBuffer {
        SampleBuffer::new(samples, rate, "test").unwrap()
    }

    fn write_int(path: &Path, bits: u16, channels: u16, values: &[i32]) {
        let spec = WavSpec {
            channels,
            sample_rate: 8000,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &v in values {
            match bits {
                8 => w.write_sample(v as i8).unwrap(),
                16 => w.write_sample(v as i16).unwrap(),
                _ => w.write_sample(v).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn decode_scales_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_int(&path, 16, 1, &[16384, -32768, 0]);
        let b = decode(&path).unwrap();
        assert_eq!(b.samples(), &[0.5, -1.0, 0.0]);
        assert_eq!(b.sample_rate(), 8000);
    }

    #[test]
    fn decode_8_and_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("8.wav");
        write_int(&p8, 8, 1, &[64, -128]);
        assert_eq!(decode(&p8).unwrap().samples(), &[0.5, -1.0]);
        let p24 = dir.path().join("24.wav");
        write_int(&p24, 24, 1, &[1 << 22, -(1 << 23)]);
        assert_eq!(decode(&p24).unwrap().samples(), &[0.5, -1.0]);
    }

    #[test]
    fn decode_float_stereo_mixes_down() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [0.25f32, 0.75, -0.5, 0.5] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(decode(&path).unwrap().samples(), &[0.5, 0.0]);
    }

    #[test]
    fn stereo_frame_is_channel_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        // 0.2 and 0.6 are not representable in 16 bits; pick exact values.
        write_int(&path, 16, 2, &[6554, 19661]);
        let got = decode(&path).unwrap().samples()[0];
        assert!((got - 0.4).abs() < 1.0 / 32768.0);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.wav");
        assert!(matches!(decode(&missing), Err(Error::Io { .. })));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not RIFF data").unwrap();
        assert!(matches!(decode(&junk), Err(Error::Unreadable { .. })));

        let wide = dir.path().join("wide.wav");
        write_int(&wide, 32, 1, &[1]);
        assert!(matches!(
            decode(&wide),
            Err(Error::UnsupportedEncoding { .. })
        ));

        let empty = dir.path().join("empty.wav");
        write_int(&empty, 16, 1, &[]);
        assert!(matches!(decode(&empty), Err(Error::EmptyAudio { .. })));
    }

    #[test]
    fn duration_times_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ten.wav");
        write_wav_i16(&path, &buf(vec![0.0; 441_000], 44100)).unwrap();
        assert_eq!(decode(&path).unwrap().len(), 441_000);
        let info = probe(&path).unwrap();
        assert_eq!(info.frames, 441_000);
        assert_eq!(info.duration_seconds(), 10.0);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&buf(vec![0.1, -0.5], 10));
        assert_eq!(n.samples(), &[0.2, -1.0]);
        let unit = buf(vec![1.0, -1.0], 10);
        assert_eq!(normalize(&unit), unit);
        let zero = buf(vec![0.0; 3], 10);
        assert_eq!(normalize(&zero), zero);
    }

    #[test]
    fn segment_long_recording_drops_short_tail() {
        // 947 s at 10 Hz: five 180 s units, 47 s tail (< 90 s) discarded.
        let b = buf(vec![0.0; 9470], 10);
        let units = segment(&b, 180.0).unwrap();
        assert_eq!(units.len(), 5);
        assert!(units.iter().all(|u| u.len() == 1800));
        assert_eq!(9470 - units.iter().map(|u| u.len()).sum::<usize>(), 470);
    }

    #[test]
    fn segment_exact_and_short() {
        let units = segment(&buf(vec![0.0; 3600], 10), 180.0).unwrap();
        assert_eq!(
            units.iter().map(|u| u.segment_index()).collect::<Vec<_>>(),
            vec![Some(0), Some(1)]
        );
        assert!(segment(&buf(vec![0.0; 300], 10), 180.0).unwrap().is_empty());
        // A 100 s tail is at least half a unit and is kept.
        let units = segment(&buf(vec![0.0; 2800], 10), 180.0).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[1].len(), 1000);
        assert!(segment(&buf(vec![0.0; 10], 10), 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent(v in proptest::collection::vec(-4.0f64..4.0, 1..64)) {
                let once = normalize(&buf(v, 100));
                let twice = normalize(&once);
                for (a, b) in once.samples().iter().zip(twice.samples()) {
                    prop_assert!((a - b).abs() <= f64::EPSILON * a.abs().max(1e-300));
                }
            }

            #[test]
            fn segment_keeps_less_than_a_unit_out(len in 1usize..5000, unit_s in 1u32..200) {
                let b = buf(vec![0.0; len], 10);
                let unit = unit_length(f64::from(unit_s), 10);
                let units = segment(&b, f64::from(unit_s)).unwrap();
                let kept: usize = units.iter().map(|u| u.len()).sum();
                prop_assert!(kept <= len);
                prop_assert!(len - kept < unit);
                prop_assert_eq!(units.len(), segment_count(len, unit));
            }

            #[test]
            fn i16_round_trip(v in proptest::collection::vec(-1.0f64..1.0, 1..256)) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("rt.wav");
                write_wav_i16(&path, &buf(v.clone(), 16000)).unwrap();
                let back = decode(&path).unwrap();
                prop_assert_eq!(back.len(), v.len());
                for (a, b) in v.iter().zip(back.samples()) {
                    prop_assert!((a - b).abs() <= 1.0 / 32768.0);
                }
            }
        }
    }
}
