//! MFCC extraction.
//!
//! Per 2048-sample window (hop 1024): Hann weighting, magnitude spectrum,
//! 40 unit-area triangular mel filters between 20 Hz and Nyquist on a scale
//! that is linear below 1 kHz and logarithmic above, natural log with a
//! 1e-10 floor, orthonormal DCT-II, first 20 coefficients kept.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock, RwLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::SampleBuffer;
use crate::error::{Error, Result};

pub const WINDOW: usize = 2048;
pub const HOP: usize = 1024;
pub const N_COEFFS: usize = 20;
pub const N_FILTERS: usize = 40;
pub const LOW_HZ: f64 = 20.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// A time series of equal-length feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    dim: usize,
    source_id: String,
    segment_index: Option<usize>,
}

impl FeatureSequence {
    pub fn new(data: Vec<f64>, dim: usize, source_id: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if data.len() % dim != 0 {
            return Err(Error::Format {
                what: "feature sequence",
                reason: format!("{} values do not divide into rows of {dim}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence"));
        }
        Ok(Self {
            data,
            dim,
            source_id: source_id.into(),
            segment_index: None,
        })
    }

    pub fn from_frames<F: AsRef<[f64]>>(
        frames: &[F],
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let dim = frames.first().map_or(0, |f| f.as_ref().len());
        let mut data = Vec::with_capacity(dim * frames.len());
        for f in frames {
            let f = f.as_ref();
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(data, dim.max(1), source_id)
    }

    pub fn with_segment_index(mut self, index: Option<usize>) -> Self {
        self.segment_index = index;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn segment_index(&self) -> Option<usize> {
        self.segment_index
    }

    /// Binary layout: `d` and `N_T` as little-endian u64, followed by
    /// `d * N_T` little-endian f64 values in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, source_id: impl Into<String>) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "feature file",
            reason,
        };
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let frames = u64::from_le_bytes(next(&mut r)?) as usize;
        let total = dim
            .checked_mul(frames)
            .filter(|&t| t <= (1 << 34))
            .ok_or_else(|| bad(format!("implausible shape {dim} x {frames}")))?;
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(next(&mut r)?));
        }
        Self::new(data, dim, source_id)
    }

    /// One row per frame, header `c0..c{d-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.dim).map(|i| format!("c{i}")).collect();
        let csv_err = |e: csv::Error| Error::Format {
            what: "feature csv",
            reason: e.to_string(),
        };
        out.write_record(&header).map_err(csv_err)?;
        for f in self.frames() {
            out.write_record(f.iter().map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Format {
            what: "feature csv",
            reason: e.to_string(),
        })
    }
}

/// `floor((sample_count - window) / hop) + 1`.
pub fn frame_count(sample_count: usize, window: usize, hop: usize) -> Result<usize> {
    if sample_count < window {
        return Err(Error::TooShort {
            samples: sample_count,
            window,
        });
    }
    assert!(hop > 0, "hop must be positive");
    Ok((sample_count - window) / hop + 1)
}

const LINEAR_HZ_PER_MEL: f64 = 200.0 / 3.0;
const BREAK_HZ: f64 = 1000.0;
const BREAK_MEL: f64 = BREAK_HZ / LINEAR_HZ_PER_MEL;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Mel scale with linear spacing below 1 kHz and logarithmic spacing above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < BREAK_HZ {
        hz / LINEAR_HZ_PER_MEL
    } else {
        BREAK_MEL + (hz / BREAK_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < BREAK_MEL {
        mel * LINEAR_HZ_PER_MEL
    } else {
        BREAK_HZ * ((mel - BREAK_MEL) * log_step()).exp()
    }
}

/// Sparse triangular filters over the bins of a one-sided spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(
        n_filters: usize,
        fft_size: usize,
        sample_rate: u32,
        low_hz: f64,
        high_hz: f64,
    ) -> Self {
        let bin_hz = f64::from(sample_rate) / fft_size as f64;
        let n_bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
            .collect();

        let filters = edges
            .windows(3)
            .map(|e| {
                let (left, centre, right) = (e[0], e[1], e[2]);
                let height = 2.0 / (right - left);
                let first = (left / bin_hz).ceil() as usize;
                let last = ((right / bin_hz).floor() as usize).min(n_bins - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let rise = (f - left) / (centre - left);
                        let fall = (right - f) / (right - centre);
                        rise.min(fall).max(0.0) * height
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Self { filters }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        for ((first, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&spectrum[(*first).min(spectrum.len())..])
                .map(|(w, s)| w * s)
                .sum();
        }
    }
}

/// Orthonormal DCT-II basis, `n_out` rows of length `n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let n = n_in as f64;
    let mut m = Vec::with_capacity(n_out * n_in);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for i in 0..n_in {
            let angle = std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n);
            m.push(scale * angle.cos());
        }
    }
    m
}

pub struct MfccExtractor {
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("sample_rate", &self.sample_rate)
            .field("filters", &self.filterbank.len())
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(sample_rate: u32) -> Self {
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect();
        Self {
            sample_rate,
            window,
            filterbank: MelFilterbank::new(
                N_FILTERS,
                WINDOW,
                sample_rate,
                LOW_HZ,
                f64::from(sample_rate) / 2.0,
            ),
            dct: dct_matrix(N_COEFFS, N_FILTERS),
            fft: FftPlanner::new().plan_fft_forward(WINDOW),
        }
    }

    /// Extractor for `sample_rate`, built once per rate and shared.
    pub fn shared(sample_rate: u32) -> Arc<Self> {
        static CACHE: OnceLock<RwLock<HashMap<u32, Arc<MfccExtractor>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(e) = cache
            .read()
            .expect("extractor cache poisoned")
            .get(&sample_rate)
        {
            return Arc::clone(e);
        }
        let mut map = cache.write().expect("extractor cache poisoned");
        Arc::clone(
            map.entry(sample_rate)
                .or_insert_with(|| Arc::new(Self::new(sample_rate))),
        )
    }

    pub fn extract(&self, buf: &SampleBuffer, include_c0: bool) -> Result<FeatureSequence> {
        if buf.sample_rate() != self.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz applied to {} Hz audio",
                self.sample_rate,
                buf.sample_rate()
            )));
        }
        let samples = buf.samples();
        let n_frames = frame_count(samples.len(), WINDOW, HOP)?;
        let first = usize::from(!include_c0);
        let dim = N_COEFFS - first;

        let mut data = Vec::with_capacity(n_frames * dim);
        let mut spectrum = vec![Complex::new(0.0, 0.0); WINDOW];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut magnitude = vec![0.0; WINDOW / 2 + 1];
        let mut energies = vec![0.0; N_FILTERS];

        for t in 0..n_frames {
            let frame = &samples[t * HOP..t * HOP + WINDOW];
            for ((s, x), w) in spectrum.iter_mut().zip(frame).zip(&self.window) {
                *s = Complex::new(x * w, 0.0);
            }
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (m, s) in magnitude.iter_mut().zip(&spectrum) {
                *m = s.norm();
            }
            self.filterbank.apply(&magnitude, &mut energies);
            for e in energies.iter_mut() {
                *e = e.max(LOG_FLOOR).ln();
            }
            for row in self.dct.chunks_exact(N_FILTERS).skip(first) {
                data.push(row.iter().zip(&energies).map(|(b, e)| b * e).sum());
            }
        }
        Ok(FeatureSequence {
            data,
            dim,
            source_id: buf.source_id().to_string(),
            segment_index: buf.segment_index(),
        })
    }
}

/// MFCC time series of `buf`; 20 coefficients, or 19 with coefficient 0
/// dropped.
pub fn mfcc(buf: &SampleBuffer, include_c0: bool) -> Result<FeatureSequence> {
    MfccExtractor::shared(buf.sample_rate()).extract(buf, include_c0)
}
