//! Fixtures shared by the benchmarks.

use bof_core::features::mfcc;
use bof_core::synthetic::{filtered_noise, Resonance};
use bof_core::{FeatureSequence, SampleBuffer};

/// `seconds` of band-limited noise at 22.05 kHz.
pub fn audio(seconds: f64, seed: u64) -> SampleBuffer {
    let bands = [
        Resonance {
            centre_hz: 400.0,
            gain: 1.0,
        },
        Resonance {
            centre_hz: 2500.0,
            gain: 0.4,
        },
    ];
    filtered_noise(&bands, seconds, 22_050, seed, "bench").expect("valid synthetic audio")
}

/// MFCC sequence (c0 kept) of `seconds` of audio.
pub fn features(seconds: f64, seed: u64) -> FeatureSequence {
    mfcc(&audio(seconds, seed), true).expect("audio longer than one window")
}
