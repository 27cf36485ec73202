//! Bag-of-frames soundscape retrieval.
//!
//! Audio recordings are turned into MFCC frame sequences and modelled
//! either as a Gaussian mixture (compared by Kullback-Leibler divergence) or
//! as a single mean vector (compared by Euclidean distance). Models are
//! evaluated by nearest-neighbour retrieval with class-size-bounded
//! precision at rank 5 and mean average precision.

pub mod audio_io;
pub mod baseline;
pub mod bof_model;
pub mod compare;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod synthetic;

pub use audio_io::SampleBuffer;
pub use baseline::MeanFeature;
pub use bof_model::{DistanceConfig, DistanceMethod, GmmModel};
pub use dataset::{DatasetManifest, ManifestEntry, UnitPolicy};
pub use error::{Error, ErrorKind, Result};
pub use eval::{DistanceMatrix, EvalReport};
pub use experiment::{ExperimentConfig, Method};
pub use features::FeatureSequence;
