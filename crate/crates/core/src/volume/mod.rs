//! MRI volume handling and the denoising autoencoder feature extractor.

mod autoencoder;
mod features;
mod rvt;
mod slices;
mod synth;

pub use autoencoder::{
    extract_features, train_autoencoder, AeTrainConfig, AutoencoderConfig, AutoencoderModel,
    AE_MAGIC,
};
pub use features::{FeatureMatrix, FeatureRow};
pub use rvt::{read_rvt, write_rvt, RVT_MAGIC};
pub use slices::{slice_entropy, slice_rank_select};
pub use synth::{phantom_volumes, synthetic_volumes};

use crate::error::{Error, Result};
use crate::labels::Diagnosis;
use crate::rng::{randn_with, rng_for, stream};
use crate::tensor::Tensor;

/// One subject's `D×H×W` intensity volume.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub sample_id: String,
    pub volume: Tensor,
    pub label: Diagnosis,
}

impl VolumeSample {
    pub fn new(sample_id: impl Into<String>, volume: Tensor, label: Diagnosis) -> Result<Self> {
        if volume.rank() != 3 {
            return Err(Error::dim(format!(
                "volume must be D×H×W, got {:?}",
                volume.shape()
            )));
        }
        if volume.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("volume contains non-finite intensities"));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            volume,
            label,
        })
    }
}

/// Maps intensities onto `[0, 1]`; a constant volume maps to zeros.
pub fn min_max_volume(v: &Tensor) -> Tensor {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Tensor::zeros(v.shape());
    }
    v.map(|x| (x - lo) / range)
}

/// `x + μ` with `μ ~ N(0, 1)` drawn from the seed's noise stream.
pub fn add_noise(x: &Tensor, seed: u64) -> Tensor {
    add_noise_with(x, &mut rng_for(seed, stream::NOISE))
}

pub(crate) fn add_noise_with(x: &Tensor, rng: &mut impl rand::Rng) -> Tensor {
    let mu = randn_with(rng, x.shape());
    let data = x.data().iter().zip(mu.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}
