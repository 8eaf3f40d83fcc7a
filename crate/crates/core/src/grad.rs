//! Analytic gradients of the content, classic style and balanced style losses
//! with respect to pastiche features, backpropagation to pixels, and a
//! central-difference verifier.
//!
//! With `G = F^T F` and `L = ||G_S - G||^2 / n`, the chain rule gives
//! `dL/dF = 4 F (G - G_S) / n`. The balanced loss divides by the supremum
//! bound, which is held constant during differentiation, so its gradient is
//! the classic gradient divided by that scalar.

use crate::error::{Error, Result};
use crate::featnet::FeatNet;
use crate::gram::{gram, sup_bound, GramMatrix};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Image};

/// Partial derivatives laid out like the map or image they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "gradient of shape {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(GradientMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        GradientMap {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    pub fn zeros_like(f: &FeatureMap<S>) -> Self {
        let (h, w, c) = f.shape();
        Self::zeros(h, w, c)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn scaled(mut self, s: S) -> Self {
        for v in &mut self.data {
            *v *= s;
        }
        self
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: S) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add gradient {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// `2 (fp - fc) / count`.
pub fn content_grad<S: Scalar>(fc: &FeatureMap<S>, fp: &FeatureMap<S>) -> Result<GradientMap<S>> {
    if fc.shape() != fp.shape() {
        return Err(Error::Dimension(format!(
            "content features {:?} vs pastiche features {:?}",
            fc.shape(),
            fp.shape()
        )));
    }
    let scale = S::of(2.0) / S::of_usize(fp.data().len());
    let (h, w, c) = fp.shape();
    let data = fp.data().iter().zip(fc.data()).map(|(&p, &q)| (p - q) * scale).collect();
    GradientMap::new(h, w, c, data)
}

/// Gradient of `||target - gram(fp)||^2 / n` with respect to `fp`.
pub fn classic_style_grad_to_target<S: Scalar>(
    target: &GramMatrix<S>,
    fp: &FeatureMap<S>,
    n: S,
) -> Result<GradientMap<S>> {
    let gp = gram(fp);
    classic_grad_with_gram(target, &gp, fp, n)
}

fn classic_grad_with_gram<S: Scalar>(
    target: &GramMatrix<S>,
    gp: &GramMatrix<S>,
    fp: &FeatureMap<S>,
    n: S,
) -> Result<GradientMap<S>> {
    let c = fp.channels();
    if target.channels() != c {
        return Err(Error::Dimension(format!(
            "style gram has {} channels, pastiche features have {c}",
            target.channels()
        )));
    }
    if !(n > S::zero()) {
        return Err(Error::Precondition(format!("normalization constant must be positive, got {n}")));
    }
    let scale = S::of(4.0) / n;
    let diff: Vec<S> = gp
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &s)| (p - s) * scale)
        .collect();
    let mut out = vec![S::zero(); fp.data().len()];
    for (row, orow) in fp.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for (k, &f) in row.iter().enumerate() {
            if f == S::zero() {
                continue;
            }
            let d = &diff[k * c..(k + 1) * c];
            for (o, &dv) in orow.iter_mut().zip(d) {
                *o += f * dv;
            }
        }
    }
    let (h, w, _) = fp.shape();
    GradientMap::new(h, w, c, out)
}

/// Gradient of `classic_layer_loss(gram(fs), gram(fp), n)` with respect to `fp`.
pub fn classic_style_grad<S: Scalar>(fs: &FeatureMap<S>, fp: &FeatureMap<S>, n: S) -> Result<GradientMap<S>> {
    classic_style_grad_to_target(&gram(fs), fp, n)
}

/// Balanced gradient against a target Gram: the classic gradient divided by
/// the supremum bound evaluated at the current point and treated as constant.
/// Zero when the supremum vanishes.
pub fn balanced_style_grad_to_target<S: Scalar>(
    target: &GramMatrix<S>,
    fp: &FeatureMap<S>,
    n: S,
) -> Result<GradientMap<S>> {
    let gp = gram(fp);
    let sup = sup_bound(target, &gp, n)?;
    if sup == S::zero() {
        return Ok(GradientMap::zeros_like(fp));
    }
    let mut g = classic_grad_with_gram(target, &gp, fp, n)?;
    for v in &mut g.data {
        *v /= sup;
    }
    Ok(g)
}

pub fn balanced_style_grad<S: Scalar>(fs: &FeatureMap<S>, fp: &FeatureMap<S>, n: S) -> Result<GradientMap<S>> {
    balanced_style_grad_to_target(&gram(fs), fp, n)
}

/// Runs `image` through `net` and backpropagates per-tap gradients (taken
/// w.r.t. the tapped activations) to a gradient over pixels.
pub fn backprop_pixels<S: Scalar>(
    net: &FeatNet<S>,
    image: &Image<S>,
    layer_grads: &[(String, GradientMap<S>)],
) -> Result<GradientMap<S>> {
    let taps: Vec<&str> = layer_grads.iter().map(|(t, _)| t.as_str()).collect();
    let (_, cache) = net.forward_with_cache(image, &taps)?;
    let grads: Vec<(&str, &GradientMap<S>)> = layer_grads.iter().map(|(t, g)| (t.as_str(), g)).collect();
    net.backward(&cache, &grads)
}

/// Central-difference check of an analytic gradient.
///
/// Coordinate `i` is perturbed by `eps * max(1, |x_i|)`. Returns the largest
/// relative deviation `|a - n| / max(|a|, |n|, 1e-12)` over all coordinates.
pub fn finite_diff_check<S, F>(f: F, point: &[S], analytic: &[S], eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&[S]) -> S,
{
    if point.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, gradient has {}",
            point.len(),
            analytic.len()
        )));
    }
    if !(eps > S::zero()) {
        return Err(Error::Precondition(format!("finite-difference step must be positive, got {eps}")));
    }
    let floor = S::of(1e-12);
    let two = S::of(2.0);
    let mut x = point.to_vec();
    let mut worst = S::zero();
    for i in 0..x.len() {
        let xi = point[i];
        let h = eps * xi.abs().max(S::one());
        x[i] = xi + h;
        let up = f(&x);
        x[i] = xi - h;
        let down = f(&x);
        x[i] = xi;
        let numeric = (up - down) / (two * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Default step `1e-5`.
pub const FD_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::{classic_layer_loss, sup_bound};
    use crate::rng::Stream;

    fn rand_map(s: &mut Stream, h: usize, w: usize, c: usize) -> FeatureMap<f64> {
        FeatureMap::new_nonneg(h, w, c, (0..h * w * c).map(|_| s.uniform()).collect()).unwrap()
    }

    #[test]
    fn content_grad_examples() {
        let a = FeatureMap::new(1, 2, 1, vec![0.3, 0.1]).unwrap();
        assert!(content_grad(&a, &a).unwrap().data().iter().all(|v| *v == 0.0));
        let fc = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let fp = FeatureMap::new(1, 1, 1, vec![3.0]).unwrap();
        assert_eq!(content_grad(&fc, &fp).unwrap().data(), &[4.0]);
        let fp2 = FeatureMap::new(1, 1, 1, vec![1.0 + 2.0 * 3.0]).unwrap();
        assert_eq!(content_grad(&fc, &fp2).unwrap().data(), &[12.0]);
        assert!(content_grad(&fc, &a).is_err());
    }

    #[test]
    fn classic_style_grad_examples() {
        let fs = FeatureMap::new_nonneg(1, 1, 1, vec![1.0]).unwrap();
        let fp = FeatureMap::new_nonneg(1, 1, 1, vec![2.0]).unwrap();
        assert_eq!(classic_style_grad(&fs, &fp, 1.0).unwrap().data(), &[24.0]);
        assert_eq!(classic_style_grad(&fs, &fp, 2.0).unwrap().data(), &[12.0]);
        assert!(classic_style_grad(&fp, &fp, 1.0).unwrap().data().iter().all(|v| *v == 0.0));
        let wide = FeatureMap::new_nonneg(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(classic_style_grad(&wide, &fp, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn balanced_style_grad_examples() {
        let fs = FeatureMap::new_nonneg(1, 1, 1, vec![1.0]).unwrap();
        let fp = FeatureMap::new_nonneg(1, 1, 1, vec![2.0]).unwrap();
        let g = balanced_style_grad(&fs, &fp, 1.0).unwrap();
        assert_eq!(g.data(), &[24.0 / 17.0]);
        assert!(balanced_style_grad(&fp, &fp, 1.0).unwrap().data().iter().all(|v| *v == 0.0));
        let z = FeatureMap::<f64>::zeros(2, 2, 3).unwrap();
        assert!(balanced_style_grad(&z, &z, 1.0).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn harness_sanity() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(finite_diff_check(f, &[3.0], &[6.0], 1e-5).unwrap() <= 1e-9);
        let err = finite_diff_check(f, &[3.0], &[12.0], 1e-5).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
        let err = finite_diff_check(f, &[3.0], &[3.0], 1e-5).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
        assert!(finite_diff_check(f, &[3.0], &[6.0, 1.0], 1e-5).is_err());
    }

    #[test]
    fn style_grads_match_finite_differences() {
        let mut s = Stream::new(0);
        for _ in 0..20 {
            let (h, w, c) = (1 + s.below(4), 1 + s.below(4), 1 + s.below(5));
            let fs = rand_map(&mut s, h, w, c);
            let fp = rand_map(&mut s, h, w, c);
            let n = 0.5 + s.uniform() * 4.0;
            let gs = gram(&fs);
            let eval = |x: &[f64]| {
                let f = FeatureMap::new(h, w, c, x.to_vec()).unwrap();
                classic_layer_loss(&gs, &gram(&f), n).unwrap()
            };
            let g = classic_style_grad(&fs, &fp, n).unwrap();
            let err = finite_diff_check(eval, fp.data(), g.data(), FD_EPS).unwrap();
            assert!(err <= 1e-6, "classic {err}");

            let sup = sup_bound(&gs, &gram(&fp), n).unwrap();
            let frozen = |x: &[f64]| eval(x) / sup;
            let gb = balanced_style_grad(&fs, &fp, n).unwrap();
            let err = finite_diff_check(frozen, fp.data(), gb.data(), FD_EPS).unwrap();
            assert!(err <= 1e-6, "balanced {err}");
            for (b, a) in gb.data().iter().zip(g.data()) {
                assert!((b - a / sup).abs() <= 1e-12 * (a / sup).abs());
            }
        }
    }
}
