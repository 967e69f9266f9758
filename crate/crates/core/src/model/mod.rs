//! The five trainable architectures, the persistence baseline, parameter
//! accounting and the weight file format.

mod build;
mod weights;

pub use build::{
    build_conv2d, build_conv2d_attention, build_conv2d_upscaling, build_conv3d, build_multidim,
    Model, ATTENTION_KEY_DIM, ATTENTION_VALUE_DIM, HIDDEN_UNITS, KERNEL,
};
pub use weights::{
    load_weights, read_descriptor, save_weights, weights_checksum, WeightsDescriptor, MAGIC,
    VERSION,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SampleWindow, WindowSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Multidim,
    Conv2d,
    Conv2dAttention,
    Conv2dUpscaling,
    Conv3d,
    Persistence,
}

impl ModelKind {
    pub const TRAINABLE: [ModelKind; 5] = [
        ModelKind::Conv2d,
        ModelKind::Conv2dAttention,
        ModelKind::Conv2dUpscaling,
        ModelKind::Conv3d,
        ModelKind::Multidim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Multidim => "multidim",
            ModelKind::Conv2d => "conv2d",
            ModelKind::Conv2dAttention => "conv2d_attention",
            ModelKind::Conv2dUpscaling => "conv2d_upscaling",
            ModelKind::Conv3d => "conv3d",
            ModelKind::Persistence => "persistence",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelKind::Persistence
    }

    pub fn feature_maps(self) -> usize {
        match self {
            ModelKind::Multidim => 16,
            ModelKind::Conv2d | ModelKind::Conv2dAttention | ModelKind::Conv2dUpscaling => 32,
            ModelKind::Conv3d => 10,
            ModelKind::Persistence => 0,
        }
    }

    /// Parameter counts published for each architecture as
    /// `(denmark, netherlands)`. Reported next to ours, never asserted.
    pub fn published_parameters(self) -> Option<(usize, usize)> {
        match self {
            ModelKind::Conv2d => Some((46_115, 112_167)),
            ModelKind::Conv2dAttention => Some((47_059, 113_367)),
            ModelKind::Conv2dUpscaling => Some((27_974, 77_568)),
            ModelKind::Conv3d => Some((54_749, 200_929)),
            ModelKind::Multidim => Some((37_258, 102_832)),
            ModelKind::Persistence => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ModelKind::Multidim,
            ModelKind::Conv2d,
            ModelKind::Conv2dAttention,
            ModelKind::Conv2dUpscaling,
            ModelKind::Conv3d,
            ModelKind::Persistence,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// `(C, T, F)`.
    pub input_shape: [usize; 3],
    pub targets: usize,
    pub feature_maps: usize,
    pub hidden_units: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_shape: [usize; 3], targets: usize) -> Result<Self> {
        if targets == 0 {
            return Err(Error::config("a model needs at least one target"));
        }
        if input_shape.contains(&0) {
            return Err(Error::config(format!(
                "input shape {input_shape:?} has a zero extent"
            )));
        }
        if kind.is_trainable() && input_shape.iter().any(|&e| e < KERNEL) {
            return Err(Error::config(format!(
                "{kind} needs every input extent ≥ {KERNEL}, got {input_shape:?}"
            )));
        }
        Ok(Self {
            kind,
            input_shape,
            targets,
            feature_maps: kind.feature_maps(),
            hidden_units: if kind.is_trainable() { HIDDEN_UNITS } else { 0 },
        })
    }
}

/// Anything that maps a window set to `(N, targets)` raw-unit predictions.
pub trait Forecaster {
    fn spec(&self) -> &ModelSpec;

    /// Trainable element count; running statistics and output scaling are
    /// excluded.
    fn parameter_count(&self) -> usize;

    fn predict_set(&self, set: &WindowSet) -> Result<Tensor>;

    fn check_set(&self, set: &WindowSet) -> Result<()> {
        let spec = self.spec();
        if set.input_shape() != spec.input_shape || set.target_count() != spec.targets {
            return Err(Error::config(format!(
                "{} expects inputs {:?} with {} targets, samples are {:?} with {}",
                spec.kind,
                spec.input_shape,
                spec.targets,
                set.input_shape(),
                set.target_count()
            )));
        }
        if set.is_empty() {
            return Err(Error::EmptySet("no samples to predict".into()));
        }
        Ok(())
    }
}

pub fn count_parameters(model: &dyn Forecaster) -> usize {
    model.parameter_count()
}

/// The last observed wind speed of each target city, in raw units.
pub fn persistence_predict(window: &SampleWindow) -> Vec<f64> {
    window.last_wind.clone()
}

/// Parameter-free naive predictor.
#[derive(Clone, Debug)]
pub struct Persistence {
    spec: ModelSpec,
}

impl Persistence {
    pub fn new(input_shape: [usize; 3], targets: usize) -> Result<Self> {
        Ok(Self {
            spec: ModelSpec::new(ModelKind::Persistence, input_shape, targets)?,
        })
    }

    pub fn for_set(set: &WindowSet) -> Result<Self> {
        Self::new(set.input_shape(), set.target_count())
    }
}

impl Forecaster for Persistence {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn parameter_count(&self) -> usize {
        0
    }

    fn predict_set(&self, set: &WindowSet) -> Result<Tensor> {
        self.check_set(set)?;
        let data = (0..set.len()).flat_map(|i| set.last_wind(i)).collect();
        Tensor::new(vec![set.len(), set.target_count()], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::TRAINABLE
            .into_iter()
            .chain([ModelKind::Persistence])
        {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("unet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn spec_rejects_small_extents() {
        let err = ModelSpec::new(ModelKind::Multidim, [5, 2, 4], 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ModelSpec::new(ModelKind::Persistence, [5, 2, 4], 3).is_ok());
    }

    #[test]
    fn persistence_returns_last_wind() {
        let w = SampleWindow {
            input: Tensor::zeros([3, 4, 4]),
            target: vec![0.0; 3],
            anchor: chrono::NaiveDateTime::default(),
            last_wind: vec![3.1, 4.0, 2.2],
        };
        assert_eq!(persistence_predict(&w), vec![3.1, 4.0, 2.2]);
        assert_eq!(Persistence::new([5, 4, 4], 3).unwrap().parameter_count(), 0);
    }
}
