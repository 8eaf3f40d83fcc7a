//! Gram matrices, the classic layerwise style loss, its attainable upper and
//! lower bounds, and the supremum-normalized ("balanced") style loss.
//!
//! For non-negative Grams `G_S`, `G_P` and a normalization constant `N`:
//!
//! ```text
//! classic  = ||G_S - G_P||^2 / N
//! sup      = (||G_S||^2 + ||G_P||^2) / N          (attained iff G_S . G_P = 0)
//! inf      = (||G_S|| - ||G_P||)^2 / N            (attained iff G_S, G_P parallel)
//! balanced = classic / sup  in [0, 1]
//! ```
//!
//! The upper bound only holds when every Gram entry is non-negative, which is
//! why the Gram carries a `nonneg` flag inherited from its feature map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{flatten_spatial, mse, squared_norm, FeatureMap, MatrixView};

/// `C x C` second-order feature statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<S> {
    channels: usize,
    data: Vec<S>,
    nonneg: bool,
}

impl<S: Scalar> GramMatrix<S> {
    /// Wraps raw `C x C` data. `nonneg` is only honored when every entry is
    /// actually non-negative.
    pub fn new(channels: usize, data: Vec<S>, nonneg: bool) -> Result<Self> {
        if channels == 0 || data.len() != channels * channels {
            return Err(Error::Dimension(format!(
                "gram with {channels} channels needs {} values, got {}",
                channels * channels,
                data.len()
            )));
        }
        if nonneg && data.iter().any(|v| *v < S::zero()) {
            return Err(Error::Precondition("gram flagged non-negative has a negative entry".into()));
        }
        Ok(GramMatrix {
            channels,
            data,
            nonneg,
        })
    }

    pub fn zeros(channels: usize) -> Self {
        GramMatrix {
            channels,
            data: vec![S::zero(); channels * channels],
            nonneg: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.channels + j]
    }

    pub fn as_view(&self) -> MatrixView<'_, S> {
        MatrixView::new(self.channels, self.channels, &self.data).expect("gram shape is valid")
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> S {
        squared_norm(self.as_view())
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    /// Frobenius inner product `sum_k G_k * H_k`.
    pub fn dot(&self, other: &Self) -> Result<S> {
        check_channels(self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn scaled(&self, s: S) -> Self {
        GramMatrix {
            channels: self.channels,
            data: self.data.iter().map(|&v| v * s).collect(),
            nonneg: self.nonneg && s >= S::zero(),
        }
    }
}

fn check_channels<S>(a: &GramMatrix<S>, b: &GramMatrix<S>) -> Result<()> {
    if a.channels != b.channels {
        return Err(Error::Dimension(format!(
            "gram channel counts differ: {} vs {}",
            a.channels, b.channels
        )));
    }
    Ok(())
}

fn check_n<S: Scalar>(n: S) -> Result<()> {
    if !(n > S::zero()) {
        return Err(Error::Precondition(format!("normalization constant must be positive, got {n}")));
    }
    Ok(())
}

/// `G = F^T F` over the `(H*W) x C` reshape of `f`, accumulated pixel by pixel.
pub fn gram<S: Scalar>(f: &FeatureMap<S>) -> GramMatrix<S> {
    let m = flatten_spatial(f);
    let c = m.cols();
    let mut g = vec![S::zero(); c * c];
    for p in 0..m.rows() {
        let row = m.row(p);
        for i in 0..c {
            let ri = row[i];
            if ri == S::zero() {
                continue;
            }
            let gi = &mut g[i * c..(i + 1) * c];
            for j in i..c {
                gi[j] += ri * row[j];
            }
        }
    }
    // mirror the upper triangle so the result is exactly symmetric
    for i in 0..c {
        for j in 0..i {
            g[i * c + j] = g[j * c + i];
        }
    }
    GramMatrix {
        channels: c,
        data: g,
        nonneg: f.is_nonneg(),
    }
}

/// Which constant `N` divides the layerwise style loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `C * C`, the mean over Gram entries.
    #[default]
    ChannelsSquared,
    /// `H * W` of the feature map.
    SpatialProduct,
}

pub fn norm_constant<S: Scalar>(f: &FeatureMap<S>, mode: Normalization) -> S {
    match mode {
        Normalization::ChannelsSquared => S::of_usize(f.channels() * f.channels()),
        Normalization::SpatialProduct => S::of_usize(f.pixels()),
    }
}

/// `||gs - gp||^2 / n`.
pub fn classic_layer_loss<S: Scalar>(gs: &GramMatrix<S>, gp: &GramMatrix<S>, n: S) -> Result<S> {
    check_channels(gs, gp)?;
    check_n(n)?;
    let sum: S = gs
        .data
        .iter()
        .zip(&gp.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

fn require_nonneg<S>(gs: &GramMatrix<S>, gp: &GramMatrix<S>) -> Result<()> {
    if !gs.nonneg || !gp.nonneg {
        return Err(Error::Precondition(
            "supremum bound needs Grams of non-negative features".into(),
        ));
    }
    Ok(())
}

/// `(||gs||^2 + ||gp||^2) / n`; both Grams must come from non-negative features.
pub fn sup_bound<S: Scalar>(gs: &GramMatrix<S>, gp: &GramMatrix<S>, n: S) -> Result<S> {
    check_channels(gs, gp)?;
    check_n(n)?;
    require_nonneg(gs, gp)?;
    Ok((gs.norm_sq() + gp.norm_sq()) / n)
}

/// `(||gs|| - ||gp||)^2 / n`.
pub fn inf_bound<S: Scalar>(gs: &GramMatrix<S>, gp: &GramMatrix<S>, n: S) -> Result<S> {
    check_channels(gs, gp)?;
    check_n(n)?;
    let d = gs.norm() - gp.norm();
    Ok(d * d / n)
}

/// `classic / sup`, defined as 0 when both Grams vanish.
pub fn balanced_layer_loss<S: Scalar>(gs: &GramMatrix<S>, gp: &GramMatrix<S>, n: S) -> Result<S> {
    let sup = sup_bound(gs, gp, n)?;
    if sup == S::zero() {
        return Ok(S::zero());
    }
    let classic = classic_layer_loss(gs, gp, n)?;
    Ok((classic / sup).min(S::one()))
}

/// Weight of one tapped style layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub tap: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl LayerSpec {
    pub fn new(tap: impl Into<String>, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Config(format!("layer weight must be finite and >= 0, got {weight}")));
        }
        Ok(LayerSpec {
            tap: tap.into(),
            weight,
        })
    }

    pub fn unit(tap: impl Into<String>) -> Self {
        LayerSpec {
            tap: tap.into(),
            weight: 1.0,
        }
    }
}

/// Tap selection and weighting of the full style-transfer objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub style_layers: Vec<LayerSpec>,
    pub content_layer: String,
    pub beta: f64,
    pub normalization: Normalization,
}

pub const DEFAULT_STYLE_TAPS: [&str; 4] = ["b1_r2", "b2_r2", "b3_r3", "b4_r3"];
pub const DEFAULT_CONTENT_TAP: &str = "b3_r3";

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            style_layers: DEFAULT_STYLE_TAPS.iter().map(|t| LayerSpec::unit(*t)).collect(),
            content_layer: DEFAULT_CONTENT_TAP.to_string(),
            beta: 1.0,
            normalization: Normalization::ChannelsSquared,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.style_layers.is_empty() {
            return Err(Error::Config("at least one style layer is required".into()));
        }
        for (i, l) in self.style_layers.iter().enumerate() {
            LayerSpec::new(l.tap.clone(), l.weight)?;
            if self.style_layers[..i].iter().any(|o| o.tap == l.tap) {
                return Err(Error::Config(format!("style layer {} listed twice", l.tap)));
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> f64 {
        self.style_layers.iter().map(|l| l.weight).sum()
    }

    /// Every tap the objective reads, style taps first.
    pub fn taps(&self) -> Vec<&str> {
        let mut taps: Vec<&str> = self.style_layers.iter().map(|l| l.tap.as_str()).collect();
        if !taps.contains(&self.content_layer.as_str()) {
            taps.push(&self.content_layer);
        }
        taps
    }
}

/// Classic loss, its two bounds, and the balanced loss of one style layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLossReport<S> {
    pub tap: String,
    pub classic: S,
    pub sup: S,
    pub inf: S,
    pub balanced: S,
}

pub fn layer_report<S: Scalar>(
    tap: &str,
    gs: &GramMatrix<S>,
    gp: &GramMatrix<S>,
    n: S,
) -> Result<LayerLossReport<S>> {
    Ok(LayerLossReport {
        tap: tap.to_string(),
        classic: classic_layer_loss(gs, gp, n)?,
        sup: sup_bound(gs, gp, n)?,
        inf: inf_bound(gs, gp, n)?,
        balanced: balanced_layer_loss(gs, gp, n)?,
    })
}

/// `sum_l w_l * loss_l`.
pub fn style_loss_total<S: Scalar>(layers: &[(LayerSpec, S)]) -> S {
    layers.iter().map(|(spec, loss)| S::of(spec.weight) * *loss).sum()
}

/// Mean squared difference of content and pastiche features.
pub fn content_loss<S: Scalar>(fc: &FeatureMap<S>, fp: &FeatureMap<S>) -> Result<S> {
    if fc.shape() != fp.shape() {
        return Err(Error::Dimension(format!(
            "content features {:?} vs pastiche features {:?}",
            fc.shape(),
            fp.shape()
        )));
    }
    mse(flatten_spatial(fc), flatten_spatial(fp))
}

/// `content + beta * style`.
pub fn nst_total<S: Scalar>(content: S, style: S, beta: S) -> S {
    content + beta * style
}

/// `sum_k lambda_k * loss_k`; `lambda_k = 1/B` gives the plain batch mean.
pub fn batch_aggregate<S: Scalar>(losses: &[S], lambdas: &[S]) -> Result<S> {
    if losses.len() != lambdas.len() {
        return Err(Error::Dimension(format!(
            "{} task losses but {} task weights",
            losses.len(),
            lambdas.len()
        )));
    }
    Ok(losses.iter().zip(lambdas).map(|(&l, &w)| l * w).sum())
}

/// A batch of (style id, content id) tasks with per-task contribution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    tasks: Vec<(String, String)>,
    lambdas: Vec<f64>,
}

impl TaskBatch {
    pub fn new(tasks: Vec<(String, String)>, lambdas: Vec<f64>) -> Result<Self> {
        if tasks.len() != lambdas.len() {
            return Err(Error::Dimension(format!(
                "{} tasks but {} weights",
                tasks.len(),
                lambdas.len()
            )));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::Precondition(format!("task weight must be positive, got {l}")));
        }
        Ok(TaskBatch { tasks, lambdas })
    }

    /// Every task weighted `1/B`.
    pub fn uniform(tasks: Vec<(String, String)>) -> Result<Self> {
        let b = tasks.len() as f64;
        let lambdas = vec![1.0 / b; tasks.len()];
        Self::new(tasks, lambdas)
    }

    pub fn tasks(&self) -> &[(String, String)] {
        &self.tasks
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn aggregate<S: Scalar>(&self, losses: &[S]) -> Result<S> {
        let lambdas: Vec<S> = self.lambdas.iter().map(|&l| S::of(l)).collect();
        batch_aggregate(losses, &lambdas)
    }
}

/// `alpha * gs + (1 - alpha) * gc`, entrywise.
pub fn interpolated_style_target<S: Scalar>(
    gs: &GramMatrix<S>,
    gc: &GramMatrix<S>,
    alpha: S,
) -> Result<GramMatrix<S>> {
    check_channels(gs, gc)?;
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Precondition(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == S::one() {
        return Ok(gs.clone());
    }
    if alpha == S::zero() {
        return Ok(gc.clone());
    }
    let beta = S::one() - alpha;
    Ok(GramMatrix {
        channels: gs.channels,
        data: gs.data.iter().zip(&gc.data).map(|(&s, &c)| alpha * s + beta * c).collect(),
        nonneg: gs.nonneg && gc.nonneg,
    })
}
