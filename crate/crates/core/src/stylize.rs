//! Gatys-style pixel optimization of `content_loss + beta * style_loss` with
//! Adam updates, plus batch sweeps and the Gram-interpolation baseline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::FeatNet;
use crate::grad::{
    balanced_style_grad_to_target, classic_style_grad_to_target, content_grad, GradientMap,
};
use crate::gram::{
    content_loss, gram, interpolated_style_target, layer_report, norm_constant, nst_total,
    GramMatrix, LayerLossReport, LayerSpec, LossConfig,
};
use crate::rng::{derive_seed, Stream};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Content,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Classic,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub init: InitMode,
    pub loss_kind: LossKind,
    /// Pick beta so both terms have similar magnitude at the start.
    pub auto_beta: bool,
    #[serde(skip)]
    pub loss: LossConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            steps: 200,
            step_size: 0.02,
            seed: 0,
            init: InitMode::Content,
            loss_kind: LossKind::Classic,
            auto_beta: false,
            loss: LossConfig::default(),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        self.loss.validate()
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Losses at one point of the optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub step: usize,
    pub total: S,
    pub content: S,
    /// `sum_l w_l * classic_l`.
    pub style_classic: S,
    /// `sum_l w_l * balanced_l`.
    pub style_balanced: S,
    pub layers: Vec<LayerLossReport<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stylization<S> {
    pub pastiche: Image<S>,
    /// Entry `t` holds the losses before update `t`; the last entry holds the
    /// losses of the returned pastiche (so there are `steps + 1` entries).
    pub trajectory: Vec<StepRecord<S>>,
    pub beta: f64,
}

impl<S: Scalar> Stylization<S> {
    pub fn final_record(&self) -> &StepRecord<S> {
        self.trajectory.last().expect("trajectory always has a final entry")
    }
}

/// Fixed optimization targets: per-layer style Grams and content features.
struct Targets<S> {
    style: Vec<(LayerSpec, GramMatrix<S>)>,
    content: FeatureMap<S>,
}

fn check_taps<S: Scalar>(net: &FeatNet<S>, loss: &LossConfig) -> Result<()> {
    for t in loss.taps() {
        if !net.has_tap(t) {
            return Err(Error::Config(format!("tap {t} does not exist in the network")));
        }
    }
    Ok(())
}

fn build_targets<S: Scalar>(
    net: &FeatNet<S>,
    content: &Image<S>,
    style: &Image<S>,
    loss: &LossConfig,
    alpha: Option<S>,
) -> Result<Targets<S>> {
    let style_taps: Vec<&str> = loss.style_layers.iter().map(|l| l.tap.as_str()).collect();
    let sf = net.forward(style, &style_taps)?;
    let cf = net.forward(content, &loss.taps())?;
    let mut targets = Vec::with_capacity(style_taps.len());
    for l in &loss.style_layers {
        let gs = gram(&sf[&l.tap]);
        let g = match alpha {
            Some(a) => interpolated_style_target(&gs, &gram(&cf[&l.tap]), a)?,
            None => gs,
        };
        targets.push((l.clone(), g));
    }
    Ok(Targets {
        style: targets,
        content: cf[&loss.content_layer].clone(),
    })
}

/// The full objective `content + beta * style` for one (content, style)
/// pair, evaluated at arbitrary pastiche images.
pub struct Objective<'a, S> {
    net: &'a FeatNet<S>,
    targets: Targets<S>,
    cfg: OptimizeConfig,
    beta: f64,
}

impl<'a, S: Scalar> Objective<'a, S> {
    pub fn new(net: &'a FeatNet<S>, content: &Image<S>, style: &Image<S>, cfg: &OptimizeConfig) -> Result<Self> {
        Self::with_alpha(net, content, style, cfg, None)
    }

    fn with_alpha(
        net: &'a FeatNet<S>,
        content: &Image<S>,
        style: &Image<S>,
        cfg: &OptimizeConfig,
        alpha: Option<S>,
    ) -> Result<Self> {
        check_inputs(net, content, style, cfg)?;
        let targets = build_targets(net, content, style, &cfg.loss, alpha)?;
        Ok(Objective {
            net,
            targets,
            cfg: cfg.clone(),
            beta: cfg.loss.beta,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Losses at `image`.
    pub fn value(&self, image: &Image<S>) -> Result<StepRecord<S>> {
        self.evaluate(image, 0, false).map(|(r, _)| r)
    }

    /// Losses at `image` and the gradient of `total` with respect to its
    /// pixels. For the balanced loss each layer's supremum is frozen at `image`.
    pub fn value_and_grad(&self, image: &Image<S>) -> Result<(StepRecord<S>, GradientMap<S>)> {
        self.evaluate(image, 0, true)
            .map(|(r, g)| (r, g.expect("gradient requested")))
    }

    fn evaluate(&self, image: &Image<S>, step: usize, with_grad: bool) -> Result<(StepRecord<S>, Option<GradientMap<S>>)> {
        let (net, targets, cfg) = (self.net, &self.targets, &self.cfg);
        let loss = &cfg.loss;
        let taps = loss.taps();
        let (feats, cache) = net.forward_with_cache(image, &taps)?;
        let fpc = &feats[&loss.content_layer];
        let content = content_loss(&targets.content, fpc)?;
        let beta_s = S::of(self.beta);

        let mut layers = Vec::with_capacity(targets.style.len());
        let mut grads: BTreeMap<&str, GradientMap<S>> = BTreeMap::new();
        let mut style_classic = S::zero();
        let mut style_balanced = S::zero();
        for (spec, target) in &targets.style {
            let fp = &feats[&spec.tap];
            let n = norm_constant(fp, loss.normalization);
            let report = layer_report(&spec.tap, target, &gram(fp), n)?;
            let w = S::of(spec.weight);
            style_classic += w * report.classic;
            style_balanced += w * report.balanced;
            if with_grad && spec.weight > 0.0 {
                let g = match cfg.loss_kind {
                    LossKind::Classic => classic_style_grad_to_target(target, fp, n)?,
                    LossKind::Balanced => balanced_style_grad_to_target(target, fp, n)?,
                };
                accumulate(&mut grads, &spec.tap, &g, w * beta_s)?;
            }
            layers.push(report);
        }
        if with_grad {
            let g = content_grad(&targets.content, fpc)?;
            accumulate(&mut grads, &loss.content_layer, &g, S::one())?;
        }
        let style = match cfg.loss_kind {
            LossKind::Classic => style_classic,
            LossKind::Balanced => style_balanced,
        };
        let grad = if with_grad {
            let list: Vec<(&str, &GradientMap<S>)> = grads.iter().map(|(t, g)| (*t, g)).collect();
            Some(net.backward(&cache, &list)?)
        } else {
            None
        };
        let record = StepRecord {
            step,
            total: nst_total(content, style, beta_s),
            content,
            style_classic,
            style_balanced,
            layers,
        };
        Ok((record, grad))
    }
}

fn accumulate<'a, S: Scalar>(
    grads: &mut BTreeMap<&'a str, GradientMap<S>>,
    tap: &'a str,
    g: &GradientMap<S>,
    scale: S,
) -> Result<()> {
    let (h, w, c) = g.shape();
    grads
        .entry(tap)
        .or_insert_with(|| GradientMap::zeros(h, w, c))
        .add_scaled(g, scale)
}

/// Beta that equates the mean squared content feature with the style term of
/// the initial image. Falls back to the configured beta when the style term
/// vanishes.
fn calibrate_beta<S: Scalar>(targets: &Targets<S>, initial: &StepRecord<S>, cfg: &OptimizeConfig) -> f64 {
    let d = targets.content.data();
    let energy = d.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / d.len() as f64;
    let style = match cfg.loss_kind {
        LossKind::Classic => initial.style_classic,
        LossKind::Balanced => initial.style_balanced,
    }
    .as_f64();
    let beta = energy / style;
    if style > 0.0 && beta.is_finite() && beta > 0.0 {
        beta
    } else {
        cfg.loss.beta
    }
}

fn optimize<S: Scalar>(mut objective: Objective<'_, S>, content: &Image<S>) -> Result<Stylization<S>> {
    let cfg = objective.cfg.clone();
    let (h, w, c) = content.shape();
    let mut image = match cfg.init {
        InitMode::Content => content.clone(),
        InitMode::Noise => {
            let mut s = Stream::keyed(cfg.seed, &[0]);
            Image::new(h, w, c, (0..h * w * c).map(|_| S::of(s.uniform())).collect())?
        }
    };
    if cfg.auto_beta {
        let first = objective.value(&image)?;
        objective.beta = calibrate_beta(&objective.targets, &first, &cfg);
    }

    let lr = S::of(cfg.step_size);
    let (b1, b2, eps) = (S::of(ADAM_B1), S::of(ADAM_B2), S::of(ADAM_EPS));
    let mut m = vec![S::zero(); h * w * c];
    let mut v = vec![S::zero(); h * w * c];
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut pixels = image.data().to_vec();
    for t in 0..cfg.steps {
        let (record, g) = objective.evaluate(&image, t, true)?;
        trajectory.push(record);
        let g = g.expect("gradient requested");
        let k = (t + 1) as i32;
        let c1 = S::one() - b1.powi(k);
        let c2 = S::one() - b2.powi(k);
        for (((p, mi), vi), &gi) in pixels.iter_mut().zip(&mut m).zip(&mut v).zip(g.data()) {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let step = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            *p = (*p - step).max(S::zero()).min(S::one());
        }
        image = Image::new(h, w, c, pixels.clone())?;
    }
    let (last, _) = objective.evaluate(&image, cfg.steps, false)?;
    trajectory.push(last);
    Ok(Stylization {
        pastiche: image,
        trajectory,
        beta: objective.beta,
    })
}

fn check_inputs<S: Scalar>(net: &FeatNet<S>, content: &Image<S>, style: &Image<S>, cfg: &OptimizeConfig) -> Result<()> {
    cfg.validate()?;
    check_taps(net, &cfg.loss)?;
    for (what, img) in [("content", content), ("style", style)] {
        if img.channels() != net.input_channels() {
            return Err(Error::Config(format!(
                "{what} image {} does not match the network's {} input channels",
                img.shape_string(),
                net.input_channels()
            )));
        }
    }
    Ok(())
}

/// Optimizes the pixels of a pastiche towards `content` and `style`.
pub fn stylize<S: Scalar>(
    net: &FeatNet<S>,
    content: &Image<S>,
    style: &Image<S>,
    cfg: &OptimizeConfig,
) -> Result<Stylization<S>> {
    optimize(Objective::new(net, content, style, cfg)?, content)
}

/// Stylization towards `alpha * G_style + (1 - alpha) * G_content` at every
/// style layer.
pub fn interpolation_baseline<S: Scalar>(
    net: &FeatNet<S>,
    content: &Image<S>,
    style: &Image<S>,
    alpha: f64,
    cfg: &OptimizeConfig,
) -> Result<Stylization<S>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    optimize(Objective::with_alpha(net, content, style, cfg, Some(S::of(alpha)))?, content)
}

/// Scores `pastiche` against `style` with the classic and balanced metrics.
pub fn score_pair<S: Scalar>(
    net: &FeatNet<S>,
    style: &Image<S>,
    pastiche: &Image<S>,
    loss: &LossConfig,
) -> Result<Vec<LayerLossReport<S>>> {
    check_taps(net, loss)?;
    let taps: Vec<&str> = loss.style_layers.iter().map(|l| l.tap.as_str()).collect();
    let sf = net.forward(style, &taps)?;
    let pf = net.forward(pastiche, &taps)?;
    loss.style_layers
        .iter()
        .map(|l| {
            let fp = &pf[&l.tap];
            layer_report(&l.tap, &gram(&sf[&l.tap]), &gram(fp), norm_constant(fp, loss.normalization))
        })
        .collect()
}

/// [`score_pair`] for a (content, style, pastiche) triple; the pastiche must
/// have the content image's shape.
pub fn score_triple<S: Scalar>(
    net: &FeatNet<S>,
    content: &Image<S>,
    style: &Image<S>,
    pastiche: &Image<S>,
    loss: &LossConfig,
) -> Result<Vec<LayerLossReport<S>>> {
    if content.shape() != pastiche.shape() {
        return Err(Error::Dimension(format!(
            "content image is {} but pastiche is {}",
            content.shape_string(),
            pastiche.shape_string()
        )));
    }
    score_pair(net, style, pastiche, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    AllPairs,
    Zipped,
}

#[derive(Debug, Clone)]
pub struct SweepRow<S> {
    pub style_id: String,
    pub content_id: String,
    pub classic_total: S,
    pub balanced_total: S,
    pub content_loss: S,
    pub steps: usize,
    pub layers: Vec<LayerLossReport<S>>,
    pub pastiche: Image<S>,
}

#[derive(Debug, Clone)]
pub struct SweepResult<S> {
    pub rows: Vec<SweepRow<S>>,
}

/// Population coefficient of variation `std / mean`.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

impl<S: Scalar> SweepResult<S> {
    pub fn classic_totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.classic_total.as_f64()).collect()
    }

    pub fn balanced_totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.balanced_total.as_f64()).collect()
    }
}

/// Stylizes every (content, style) task and records the final losses under
/// both metrics. Task `k` runs with seed `derive_seed(cfg.seed, [k])`, so the
/// rows do not depend on how tasks are scheduled across threads.
pub fn sweep<S: Scalar>(
    net: &FeatNet<S>,
    contents: &[(String, Image<S>)],
    styles: &[(String, Image<S>)],
    cfg: &OptimizeConfig,
    pairing: Pairing,
) -> Result<SweepResult<S>> {
    if contents.is_empty() || styles.is_empty() {
        return Err(Error::Usage("sweep needs at least one content and one style image".into()));
    }
    let tasks: Vec<(usize, usize)> = match pairing {
        Pairing::AllPairs => (0..contents.len())
            .flat_map(|c| (0..styles.len()).map(move |s| (c, s)))
            .collect(),
        Pairing::Zipped => {
            if contents.len() != styles.len() {
                return Err(Error::Usage(format!(
                    "zipped pairing needs equal list lengths, got {} contents and {} styles",
                    contents.len(),
                    styles.len()
                )));
            }
            (0..contents.len()).map(|i| (i, i)).collect()
        }
    };
    let rows = tasks
        .par_iter()
        .enumerate()
        .map(|(k, &(ci, si))| {
            let mut task_cfg = cfg.clone();
            task_cfg.seed = derive_seed(cfg.seed, &[k as u64]);
            let (cid, content) = &contents[ci];
            let (sid, style) = &styles[si];
            let out = stylize(net, content, style, &task_cfg)?;
            let last = out.final_record().clone();
            Ok(SweepRow {
                style_id: sid.clone(),
                content_id: cid.clone(),
                classic_total: last.style_classic,
                balanced_total: last.style_balanced,
                content_loss: last.content,
                steps: cfg.steps,
                layers: last.layers,
                pastiche: out.pastiche,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}
