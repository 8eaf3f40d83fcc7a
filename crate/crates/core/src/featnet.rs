//! Small deterministic convolutional feature extractor with named ReLU taps.
//!
//! Layers are `conv` (stride 1, zero padding `(k-1)/2`), `relu` and 2x2
//! average pooling. Every tap sits on a ReLU, so tapped features are always
//! non-negative and their Grams satisfy the precondition of the supremum bound.
//!
//! Seeded construction draws each conv weight uniformly from `(-a, a)` with
//! `a = sqrt(6 / (fan_in + fan_out))`, `fan = channels * k * k`, from a
//! splitmix64 stream keyed by `(seed, layer index)` in `(out, in, ky, kx)`
//! order. Biases start at zero.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::GradientMap;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Image};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    Relu {
        #[serde(default)]
        tap: Option<String>,
    },
    AvgPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    UniformFan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Seeded {
        seed: u64,
        #[serde(default)]
        scheme: InitScheme,
    },
    WeightsFile(PathBuf),
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Seeded {
            seed: 0,
            scheme: InitScheme::UniformFan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub layers: Vec<LayerKind>,
    pub init: InitSpec,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            layers: default_architecture(),
            init: InitSpec::default(),
        }
    }
}

impl NetConfig {
    pub fn seeded(layers: Vec<LayerKind>, seed: u64) -> Self {
        NetConfig {
            layers,
            init: InitSpec::Seeded {
                seed,
                scheme: InitScheme::UniformFan,
            },
        }
    }

    /// The default four-block architecture with a seeded initialization.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::seeded(default_architecture(), seed)
    }

    /// `(in_ch, out_ch, kernel)` of every conv layer, in order.
    pub fn conv_dims(&self) -> Vec<(usize, usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                } => Some((in_ch, out_ch, kernel)),
                _ => None,
            })
            .collect()
    }

    /// Tap tags declared by the architecture.
    pub fn tap_tags(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerKind::Relu { tap: Some(t) } => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Four blocks of 3x3 convs (3->8, 8->16, 16->32, 32->64) with two convs in
/// blocks 1-2 and three in blocks 3-4, 2x2 average pooling between blocks.
/// Every ReLU is tagged `b{block}_r{index}`.
pub fn default_architecture() -> Vec<LayerKind> {
    let blocks = [(3, 8, 2), (8, 16, 2), (16, 32, 3), (32, 64, 3)];
    let mut layers = Vec::new();
    for (b, &(in_ch, out_ch, convs)) in blocks.iter().enumerate() {
        for r in 0..convs {
            layers.push(LayerKind::Conv {
                in_ch: if r == 0 { in_ch } else { out_ch },
                out_ch,
                kernel: 3,
            });
            layers.push(LayerKind::Relu {
                tap: Some(format!("b{}_r{}", b + 1, r + 1)),
            });
        }
        if b + 1 < blocks.len() {
            layers.push(LayerKind::AvgPool);
        }
    }
    layers
}

/// Conv parameters. `weight` is stored `(out, in, ky, kx)`; `packed` holds the
/// same values as `(ky, kx, in, out)` for the inner loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    weight: Vec<S>,
    bias: Vec<S>,
    packed: Vec<S>,
}

impl<S: Scalar> Conv2d<S> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, weight: Vec<S>, bias: Vec<S>) -> Self {
        let k2 = kernel * kernel;
        let mut packed = vec![S::zero(); weight.len()];
        for o in 0..out_ch {
            for i in 0..in_ch {
                for kk in 0..k2 {
                    packed[(kk * in_ch + i) * out_ch + o] = weight[(o * in_ch + i) * k2 + kk];
                }
            }
        }
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
            packed,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &[S] {
        &self.weight
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    fn forward(&self, inp: &[S], h: usize, w: usize) -> Vec<S> {
        let (ci, co, k) = (self.in_ch, self.out_ch, self.kernel);
        let pad = k / 2;
        let mut out = Vec::with_capacity(h * w * co);
        for _ in 0..h * w {
            out.extend_from_slice(&self.bias);
        }
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * co..(y * w + x + 1) * co];
                for ky in 0..k {
                    let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        let px = &inp[(iy * w + ix) * ci..(iy * w + ix + 1) * ci];
                        let wk = &self.packed[(ky * k + kx) * ci * co..(ky * k + kx + 1) * ci * co];
                        for (c, &v) in px.iter().enumerate() {
                            if v == S::zero() {
                                continue;
                            }
                            let wr = &wk[c * co..(c + 1) * co];
                            for (acc, &wv) in o.iter_mut().zip(wr) {
                                *acc += v * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, gout: &[S], h: usize, w: usize) -> Vec<S> {
        let (ci, co, k) = (self.in_ch, self.out_ch, self.kernel);
        let pad = k / 2;
        let mut gin = vec![S::zero(); h * w * ci];
        for y in 0..h {
            for x in 0..w {
                let go = &gout[(y * w + x) * co..(y * w + x + 1) * co];
                if go.iter().all(|v| *v == S::zero()) {
                    continue;
                }
                for ky in 0..k {
                    let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        let gi = &mut gin[(iy * w + ix) * ci..(iy * w + ix + 1) * ci];
                        let wk = &self.packed[(ky * k + kx) * ci * co..(ky * k + kx + 1) * ci * co];
                        for (c, g) in gi.iter_mut().enumerate() {
                            let wr = &wk[c * co..(c + 1) * co];
                            let mut acc = S::zero();
                            for (&wv, &gv) in wr.iter().zip(go) {
                                acc += wv * gv;
                            }
                            *g += acc;
                        }
                    }
                }
            }
        }
        gin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv(Conv2d<S>),
    Relu { tap: Option<String> },
    AvgPool,
}

/// Immutable feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatNet<S> {
    layers: Vec<Layer<S>>,
    taps: BTreeMap<String, usize>,
    input_channels: usize,
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[i + 1]` the
/// output of layer `i`, up to the deepest requested tap.
#[derive(Debug, Clone)]
pub struct ActivationCache<S> {
    acts: Vec<FeatureMap<S>>,
}

impl<S: Scalar> ActivationCache<S> {
    pub fn activations(&self) -> &[FeatureMap<S>] {
        &self.acts
    }

    /// Total number of cached scalars.
    pub fn element_count(&self) -> usize {
        self.acts.iter().map(|a| a.data().len()).sum()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.acts[0].shape()
    }
}

/// Checks the layer list and returns the input channel count.
fn validate_layers(layers: &[LayerKind]) -> Result<usize> {
    let mut channels: Option<usize> = None;
    let mut input = None;
    let mut tags: Vec<&str> = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        match l {
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
            } => {
                if *in_ch == 0 || *out_ch == 0 {
                    return Err(Error::Config(format!("layer {i}: conv channels must be positive")));
                }
                if kernel % 2 == 0 {
                    return Err(Error::Config(format!("layer {i}: kernel {kernel} is not odd")));
                }
                if let Some(c) = channels {
                    if c != *in_ch {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects {in_ch} input channels but receives {c}"
                        )));
                    }
                } else {
                    input = Some(*in_ch);
                }
                channels = Some(*out_ch);
            }
            LayerKind::Relu { tap } => {
                if channels.is_none() {
                    return Err(Error::Config(format!("layer {i}: the first layer must be a conv")));
                }
                if let Some(t) = tap {
                    if tags.contains(&t.as_str()) {
                        return Err(Error::Config(format!("tap {t} declared twice")));
                    }
                    tags.push(t);
                }
            }
            LayerKind::AvgPool => {
                if channels.is_none() {
                    return Err(Error::Config(format!("layer {i}: the first layer must be a conv")));
                }
            }
        }
    }
    input.ok_or_else(|| Error::Config("architecture has no conv layer".into()))
}

/// Builds a network from its configuration.
pub fn build<S: Scalar>(cfg: &NetConfig) -> Result<FeatNet<S>> {
    validate_layers(&cfg.layers)?;
    let params = match &cfg.init {
        InitSpec::Seeded { seed, .. } => seeded_parameters(&cfg.layers, *seed),
        InitSpec::WeightsFile(path) => crate::io::weights::read_weights(path, cfg)?,
    };
    FeatNet::with_parameters(&cfg.layers, params)
}

/// Uniform fan-in/fan-out draws for every conv layer; zero biases.
pub fn seeded_parameters(layers: &[LayerKind], seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    layers
        .iter()
        .enumerate()
        .filter_map(|(li, l)| match *l {
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
            } => {
                let k2 = kernel * kernel;
                let a = (6.0 / ((in_ch * k2 + out_ch * k2) as f64)).sqrt();
                let mut s = Stream::keyed(seed, &[li as u64]);
                let w = (0..out_ch * in_ch * k2).map(|_| a * (2.0 * s.uniform() - 1.0)).collect();
                Some((w, vec![0.0; out_ch]))
            }
            _ => None,
        })
        .collect()
}

fn too_small(i: usize, h: usize, w: usize) -> Error {
    Error::Config(format!("layer {i}: {h}x{w} activation is too small for 2x2 pooling"))
}

impl<S: Scalar> FeatNet<S> {
    /// Assembles a network from explicit `(weights, biases)` per conv layer,
    /// weights in `(out, in, ky, kx)` order.
    pub fn with_parameters(layers: &[LayerKind], params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let input_channels = validate_layers(layers)?;
        let mut params = params.into_iter();
        let mut built = Vec::with_capacity(layers.len());
        let mut taps = BTreeMap::new();
        for (i, l) in layers.iter().enumerate() {
            match l {
                &LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    let (w, b) = params
                        .next()
                        .ok_or_else(|| Error::Config(format!("layer {i}: missing conv parameters")))?;
                    if w.len() != out_ch * in_ch * kernel * kernel || b.len() != out_ch {
                        return Err(Error::Config(format!(
                            "layer {i}: parameter counts {}/{} do not match conv {in_ch}->{out_ch} k{kernel}",
                            w.len(),
                            b.len()
                        )));
                    }
                    let w = w.into_iter().map(S::of).collect();
                    let b = b.into_iter().map(S::of).collect();
                    built.push(Layer::Conv(Conv2d::new(in_ch, out_ch, kernel, w, b)));
                }
                LayerKind::Relu { tap } => {
                    if let Some(t) = tap {
                        taps.insert(t.clone(), i);
                    }
                    built.push(Layer::Relu { tap: tap.clone() });
                }
                LayerKind::AvgPool => built.push(Layer::AvgPool),
            }
        }
        if params.next().is_some() {
            return Err(Error::Config("more conv parameter sets than conv layers".into()));
        }
        Ok(FeatNet {
            layers: built,
            taps,
            input_channels,
        })
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<S>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn has_tap(&self, tag: &str) -> bool {
        self.taps.contains_key(tag)
    }

    pub fn tap_tags(&self) -> impl Iterator<Item = &str> {
        self.taps.keys().map(String::as_str)
    }

    fn tap_index(&self, tag: &str) -> Result<usize> {
        self.taps
            .get(tag)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown tap {tag}")))
    }

    /// Tapped features of `image`.
    pub fn forward(&self, image: &Image<S>, taps: &[&str]) -> Result<BTreeMap<String, FeatureMap<S>>> {
        self.forward_with_cache(image, taps).map(|(f, _)| f)
    }

    /// Tapped features plus every intermediate activation needed to
    /// backpropagate to the pixels.
    pub fn forward_with_cache(
        &self,
        image: &Image<S>,
        taps: &[&str],
    ) -> Result<(BTreeMap<String, FeatureMap<S>>, ActivationCache<S>)> {
        if image.channels() != self.input_channels {
            return Err(Error::Config(format!(
                "image has {} channels, network expects {}",
                image.channels(),
                self.input_channels
            )));
        }
        let mut depth = 0;
        for t in taps {
            depth = depth.max(self.tap_index(t)? + 1);
        }
        let acts = self.run(image, depth)?;
        let mut features = BTreeMap::new();
        for t in taps {
            let idx = self.taps[*t];
            features.insert(t.to_string(), acts[idx + 1].clone());
        }
        Ok((features, ActivationCache { acts }))
    }

    /// Sign pattern of every ReLU pre-activation (`true` where positive),
    /// layer by layer. Inputs with equal patterns share the network's linear
    /// piece.
    pub fn relu_pattern(&self, image: &Image<S>) -> Result<Vec<bool>> {
        if image.channels() != self.input_channels {
            return Err(Error::Config(format!(
                "image has {} channels, network expects {}",
                image.channels(),
                self.input_channels
            )));
        }
        let acts = self.run(image, self.layers.len())?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu { .. }))
            .flat_map(|(i, _)| acts[i].data().iter().map(|v| *v > S::zero()))
            .collect())
    }

    /// Input followed by the outputs of the first `depth` layers.
    fn run(&self, image: &Image<S>, depth: usize) -> Result<Vec<FeatureMap<S>>> {
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(image.to_feature_map());
        for (i, layer) in self.layers[..depth].iter().enumerate() {
            let x = &acts[i];
            let (h, w, c) = x.shape();
            let next = match layer {
                Layer::Conv(conv) => FeatureMap::new(h, w, conv.out_ch, conv.forward(x.data(), h, w))?,
                Layer::Relu { .. } => {
                    let d = x.data().iter().map(|&v| v.max(S::zero())).collect();
                    FeatureMap::new_nonneg(h, w, c, d)?
                }
                Layer::AvgPool => {
                    if h < 2 || w < 2 {
                        return Err(too_small(i, h, w));
                    }
                    let (oh, ow) = (h / 2, w / 2);
                    let quarter = S::of(0.25);
                    let mut d = vec![S::zero(); oh * ow * c];
                    for y in 0..oh {
                        for xx in 0..ow {
                            for ch in 0..c {
                                let s = x.at(2 * y, 2 * xx, ch)
                                    + x.at(2 * y, 2 * xx + 1, ch)
                                    + x.at(2 * y + 1, 2 * xx, ch)
                                    + x.at(2 * y + 1, 2 * xx + 1, ch);
                                d[(y * ow + xx) * c + ch] = s * quarter;
                            }
                        }
                    }
                    if x.is_nonneg() {
                        FeatureMap::new_nonneg(oh, ow, c, d)?
                    } else {
                        FeatureMap::new(oh, ow, c, d)?
                    }
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagates gradients given at tapped layers (w.r.t. the tapped
    /// ReLU outputs) down to the network input.
    pub fn backward(
        &self,
        cache: &ActivationCache<S>,
        tap_grads: &[(&str, &GradientMap<S>)],
    ) -> Result<GradientMap<S>> {
        let computed = cache.acts.len() - 1;
        let mut by_layer: BTreeMap<usize, Vec<&GradientMap<S>>> = BTreeMap::new();
        for (tag, g) in tap_grads {
            let idx = self.tap_index(tag)?;
            if idx >= computed {
                return Err(Error::Config(format!("tap {tag} was not computed in this forward pass")));
            }
            let out = &cache.acts[idx + 1];
            if g.shape() != out.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for tap {tag} has shape {:?}, activation has {:?}",
                    g.shape(),
                    out.shape()
                )));
            }
            by_layer.entry(idx).or_default().push(g);
        }
        let (ih, iw, ic) = cache.input_shape();
        let Some(&top) = by_layer.keys().next_back() else {
            return Ok(GradientMap::zeros(ih, iw, ic));
        };
        let (h, w, c) = cache.acts[top + 1].shape();
        let mut grad = vec![S::zero(); h * w * c];
        for i in (0..=top).rev() {
            if let Some(gs) = by_layer.get(&i) {
                for g in gs {
                    for (a, &b) in grad.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let input = &cache.acts[i];
            let (h, w, c) = input.shape();
            grad = match &self.layers[i] {
                Layer::Conv(conv) => conv.backward_input(&grad, h, w),
                Layer::Relu { .. } => grad
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect(),
                Layer::AvgPool => {
                    let (oh, ow) = (h / 2, w / 2);
                    let quarter = S::of(0.25);
                    let mut gin = vec![S::zero(); h * w * c];
                    for y in 0..oh {
                        for x in 0..ow {
                            for ch in 0..c {
                                let g = grad[(y * ow + x) * c + ch] * quarter;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    gin[((2 * y + dy) * w + 2 * x + dx) * c + ch] = g;
                                }
                            }
                        }
                    }
                    gin
                }
            };
        }
        GradientMap::new(ih, iw, ic, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passthrough() -> FeatNet<f64> {
        let layers = vec![
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
            },
            LayerKind::Relu {
                tap: Some("t".into()),
            },
        ];
        FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![0.0])]).unwrap()
    }

    #[test]
    fn build_is_deterministic_with_zero_bias() {
        let cfg = NetConfig::default_with_seed(42);
        let a: FeatNet<f64> = build(&cfg).unwrap();
        let b: FeatNet<f64> = build(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.convs().all(|c| c.bias().iter().all(|v| *v == 0.0)));
        let other: FeatNet<f64> = build(&NetConfig::default_with_seed(43)).unwrap();
        assert_ne!(a, other);
        for c in a.convs() {
            let bound = (6.0 / ((c.in_ch() + c.out_ch()) * 9) as f64).sqrt();
            assert!(c.weight().iter().all(|w| w.abs() < bound));
        }
    }

    #[test]
    fn default_architecture_taps_and_size() {
        let cfg = NetConfig::default();
        let net: FeatNet<f64> = build(&cfg).unwrap();
        for t in crate::gram::DEFAULT_STYLE_TAPS {
            assert!(net.has_tap(t), "missing {t}");
        }
        let params: usize = net.convs().map(|c| c.weight().len() + c.bias().len()).sum();
        assert!((50_000..200_000).contains(&params), "{params}");
    }

    #[test]
    fn inconsistent_channels_rejected() {
        let layers = vec![
            LayerKind::Conv {
                in_ch: 3,
                out_ch: 4,
                kernel: 3,
            },
            LayerKind::Conv {
                in_ch: 5,
                out_ch: 4,
                kernel: 3,
            },
        ];
        assert!(matches!(build::<f64>(&NetConfig::seeded(layers, 0)), Err(Error::Config(_))));
        let even = vec![LayerKind::Conv {
            in_ch: 3,
            out_ch: 4,
            kernel: 2,
        }];
        assert!(build::<f64>(&NetConfig::seeded(even, 0)).is_err());
        let dup = vec![
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
            },
            LayerKind::Relu { tap: Some("a".into()) },
            LayerKind::Relu { tap: Some("a".into()) },
        ];
        assert!(build::<f64>(&NetConfig::seeded(dup, 0)).is_err());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let net: FeatNet<f64> = build(&NetConfig::default()).unwrap();
        let img = Image::filled(16, 16, 3, 0.0).unwrap();
        let feats = net.forward(&img, &crate::gram::DEFAULT_STYLE_TAPS).unwrap();
        assert_eq!(feats.len(), 4);
        for f in feats.values() {
            assert!(f.is_nonneg());
            assert!(f.data().iter().all(|v| *v == 0.0));
        }
        assert_eq!(feats["b4_r3"].shape(), (2, 2, 64));
    }

    #[test]
    fn passthrough_and_clamp() {
        let net = passthrough();
        let img = Image::new(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(net.forward(&img, &["t"]).unwrap()["t"].data(), &[0.5]);

        let layers = vec![
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
            },
            LayerKind::Relu {
                tap: Some("t".into()),
            },
        ];
        let shifted: FeatNet<f64> = FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![-0.7])]).unwrap();
        let f = shifted.forward(&img, &["t"]).unwrap();
        assert_eq!(f["t"].data(), &[0.0]);
    }

    #[test]
    fn unknown_tap_and_channel_mismatch() {
        let net: FeatNet<f64> = build(&NetConfig::default()).unwrap();
        let img = Image::filled(8, 8, 3, 0.5).unwrap();
        assert!(matches!(net.forward(&img, &["nope"]), Err(Error::Config(_))));
        let gray = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(matches!(net.forward(&gray, &["b1_r2"]), Err(Error::Config(_))));
        let tiny = Image::filled(2, 2, 3, 0.5).unwrap();
        assert!(matches!(net.forward(&tiny, &["b4_r3"]), Err(Error::Config(_))));
    }

    #[test]
    fn cache_matches_forward() {
        let net: FeatNet<f64> = build(&NetConfig::default_with_seed(3)).unwrap();
        let img = crate::texture::random_image::<f64>(5, 8, 8, 3);
        let taps = ["b2_r2", "b1_r2"];
        let plain = net.forward(&img, &taps).unwrap();
        let (cached, cache) = net.forward_with_cache(&img, &taps).unwrap();
        assert_eq!(plain, cached);
        // conv, relu, conv, relu, pool, conv, relu, conv, relu
        assert_eq!(cache.activations().len(), 10);
        let expected = 8 * 8 * 3 + 4 * 8 * 8 * 8 + 4 * 4 * 8 + 4 * 4 * 4 * 16;
        assert_eq!(cache.element_count(), expected);
    }

    #[test]
    fn zero_bias_forward_is_positively_homogeneous() {
        let net: FeatNet<f64> = build(&NetConfig::default_with_seed(9)).unwrap();
        let img = crate::texture::random_image::<f64>(1, 16, 16, 3);
        let s = 0.37;
        let scaled = Image::new(16, 16, 3, img.data().iter().map(|v| v * s).collect()).unwrap();
        let a = net.forward(&img, &crate::gram::DEFAULT_STYLE_TAPS).unwrap();
        let b = net.forward(&scaled, &crate::gram::DEFAULT_STYLE_TAPS).unwrap();
        for (tag, fa) in &a {
            for (x, y) in fa.data().iter().zip(b[tag].data()) {
                assert!((x * s - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn passthrough_backprop_masks_inactive_pixels() {
        let layers = vec![
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
            },
            LayerKind::Relu {
                tap: Some("t".into()),
            },
        ];
        let net: FeatNet<f64> = FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![-0.5])]).unwrap();
        let img = Image::new(1, 3, 1, vec![0.2, 0.8, 0.9]).unwrap();
        let (_, cache) = net.forward_with_cache(&img, &["t"]).unwrap();
        let g = GradientMap::new(1, 3, 1, vec![3.0, -2.0, 5.0]).unwrap();
        let px = net.backward(&cache, &[("t", &g)]).unwrap();
        assert_eq!(px.data(), &[0.0, -2.0, 5.0]);
    }

    #[test]
    fn relu_pattern_marks_positive_pre_activations() {
        let layers = vec![
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
            },
            LayerKind::Relu {
                tap: Some("t".into()),
            },
        ];
        let net: FeatNet<f64> = FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![-0.5])]).unwrap();
        let img = Image::new(1, 3, 1, vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(net.relu_pattern(&img).unwrap(), vec![false, false, true]);
        assert!(net.relu_pattern(&Image::new(1, 1, 3, vec![0.1; 3]).unwrap()).is_err());

        // zero biases make the network positively homogeneous
        let deep: FeatNet<f64> = build(&NetConfig::default_with_seed(1)).unwrap();
        let data: Vec<f64> = (0..192).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let half: Vec<f64> = data.iter().map(|v| v * 0.5).collect();
        let p = deep.relu_pattern(&Image::new(8, 8, 3, data).unwrap()).unwrap();
        assert_eq!(p, deep.relu_pattern(&Image::new(8, 8, 3, half).unwrap()).unwrap());
        assert!(p.contains(&true) && p.contains(&false));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = NetConfig::default_with_seed(5);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: NetConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let bad = r#"{"layers": [], "init": {"seeded": {"seed": 1}}, "extra": 1}"#;
        assert!(serde_json::from_str::<NetConfig>(bad).is_err());
    }
}
