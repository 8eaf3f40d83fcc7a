//! Gram-matrix style losses for style transfer, their attainable upper and
//! lower bounds, and the supremum-normalized balanced style loss.
//!
//! The numeric core ([`tensor`], [`gram`], [`grad`], [`featnet`], [`stylize`])
//! is generic over the [`Scalar`] element type. The aliases below pin it to
//! `f64`, which is what the command-line tool and the acceptance suite use.

pub mod analysis;
pub mod error;
pub mod featnet;
pub mod grad;
pub mod gram;
pub mod io;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod stylize;
pub mod tensor;
pub mod texture;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMap = tensor::FeatureMap<f64>;
pub type Image = tensor::Image<f64>;
pub type GramMatrix = gram::GramMatrix<f64>;
pub type LayerLossReport = gram::LayerLossReport<f64>;
pub type GradientMap = grad::GradientMap<f64>;
pub type FeatNet = featnet::FeatNet<f64>;
pub type Stylization = stylize::Stylization<f64>;
pub type SweepResult = stylize::SweepResult<f64>;

pub type FeatureMapF32 = tensor::FeatureMap<f32>;
pub type ImageF32 = tensor::Image<f32>;
pub type GramMatrixF32 = gram::GramMatrix<f32>;
pub type FeatNetF32 = featnet::FeatNet<f32>;
