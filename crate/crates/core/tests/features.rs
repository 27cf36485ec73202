//! MFCC checks against a slow reference written from the textbook
//! definitions (direct DFT, explicit triangles, DCT by formula).

use bof_core::features::{mfcc, FeatureSequence};
use bof_core::SampleBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const WINDOW: usize = 2048;
const HOP: usize = 1024;

fn mel(hz: f64) -> f64 {
    if hz < 1000.0 {
        3.0 * hz / 200.0
    } else {
        15.0 + 27.0 * (hz / 1000.0).ln() / 6.4f64.ln()
    }
}

fn inv_mel(m: f64) -> f64 {
    if m < 15.0 {
        200.0 * m / 3.0
    } else {
        1000.0 * (6.4f64.ln() * (m - 15.0) / 27.0).exp()
    }
}

/// Slow reference MFCC for a single frame starting at `start`.
fn reference_frame(x: &[f64], start: usize, rate: f64) -> Vec<f64> {
    let n = WINDOW;
    let frame: Vec<f64> = (0..n)
        .map(|i| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
            w * x[start + i]
        })
        .collect();
    let mags: Vec<f64> = (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in frame.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * i) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect();
    let filters = 40;
    let (lo, hi) = (mel(20.0), mel(rate / 2.0));
    let edge = |i: usize| inv_mel(lo + (hi - lo) * i as f64 / (filters + 1) as f64);
    let log_e: Vec<f64> = (0..filters)
        .map(|f| {
            let (l, c, r) = (edge(f), edge(f + 1), edge(f + 2));
            let mut e = 0.0;
            for (k, m) in mags.iter().enumerate() {
                let hz = k as f64 * rate / n as f64;
                let tri = if hz > l && hz <= c {
                    (hz - l) / (c - l)
                } else if hz > c && hz < r {
                    (r - hz) / (r - c)
                } else {
                    0.0
                };
                e += tri * 2.0 / (r - l) * m;
            }
            e.max(1e-10).ln()
        })
        .collect();
    (0..20)
        .map(|q| {
            let s = if q == 0 {
                (1.0 / 40.0f64).sqrt()
            } else {
                (2.0 / 40.0f64).sqrt()
            };
            s * log_e
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * q as f64 * (i as f64 + 0.5) / 40.0).cos())
                .sum::<f64>()
        })
        .collect()
}

fn sine(hz: f64, rate: u32, seconds: f64, amp: f64) -> SampleBuffer {
    let n = (seconds * f64::from(rate)) as usize;
    let s = (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / f64::from(rate)).sin())
        .collect();
    SampleBuffer::new(s, rate, "sine").unwrap()
}

fn noise(n: usize, rate: u32, seed: u64) -> SampleBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (0..n)
        .map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    SampleBuffer::new(s, rate, "noise").unwrap()
}

#[test]
fn matches_slow_reference() {
    for (buf, rate) in [
        (sine(1000.0, 44100, 0.2, 0.5), 44100.0),
        (noise(8192, 16000, 4), 16000.0),
    ] {
        let fast = mfcc(&buf, true).unwrap();
        for t in [0, 2, fast.len() - 1] {
            let slow = reference_frame(buf.samples(), t * HOP, rate);
            for (a, b) in fast.frame(t).iter().zip(&slow) {
                assert!(
                    (a - b).abs() < 1e-8 * (1.0 + b.abs()),
                    "frame {t}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn silence_gives_constant_floor_cepstrum() {
    let buf = SampleBuffer::new(vec![0.0; 3 * WINDOW], 22050, "silence").unwrap();
    let seq = mfcc(&buf, true).unwrap();
    let c0 = (40.0f64).sqrt() * 1e-10f64.ln();
    for f in seq.frames() {
        assert_eq!(f, seq.frame(0));
        assert!((f[0] - c0).abs() < 1e-9);
        assert!(f[1..].iter().all(|c| c.abs() < 1e-9));
    }
}

#[test]
fn pure_tone_is_stationary() {
    // 23 whole cycles per hop, so every frame sees the same phase.
    let hz = 44100.0 * 23.0 / HOP as f64;
    let seq = mfcc(&sine(hz, 44100, 2.0, 0.5), true).unwrap();
    let frames: Vec<&[f64]> = seq.frames().skip(1).collect();
    let n = frames.len() as f64;
    for j in 0..20 {
        let mean = frames.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = frames.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
        assert!(
            var < 1e-6 * mean.abs(),
            "coefficient {j}: var {var}, mean {mean}"
        );
    }
}

#[test]
fn white_noise_halves_agree() {
    let seq = mfcc(&noise(16000 * 20, 16000, 11), true).unwrap();
    let half = seq.len() / 2;
    for j in 0..20 {
        let col = |r: std::ops::Range<usize>| -> Vec<f64> { r.map(|t| seq.frame(t)[j]).collect() };
        let (a, b) = (col(0..half), col(half..2 * half));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
        assert!((mean(&a) - mean(&b)).abs() < 3.0 * se, "coefficient {j}");
    }
}

#[test]
fn gain_moves_only_c0() {
    let buf = noise(16000, 16000, 2);
    let s = 3.7;
    let scaled =
        SampleBuffer::new(buf.samples().iter().map(|v| v * s).collect(), 16000, "x").unwrap();
    let a = mfcc(&buf, true).unwrap();
    let b = mfcc(&scaled, true).unwrap();
    let offset = s.ln() * 40f64.sqrt();
    for (fa, fb) in a.frames().zip(b.frames()) {
        assert!((fb[0] - fa[0] - offset).abs() < 1e-9);
        for j in 1..20 {
            assert!((fb[j] - fa[j]).abs() < 1e-9, "coefficient {j}");
        }
    }
}

#[test]
fn deterministic_and_rate_adaptive() {
    let buf = noise(30000, 8000, 5);
    assert_eq!(mfcc(&buf, true).unwrap(), mfcc(&buf, true).unwrap());
    let seq: FeatureSequence = mfcc(&noise(30000, 48000, 5), false).unwrap();
    assert_eq!(seq.dim(), 19);
    assert_eq!(seq.len(), (30000 - 2048) / 1024 + 1);
}
