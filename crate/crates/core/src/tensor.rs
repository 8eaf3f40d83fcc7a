//! Dense containers shared by every other module: feature maps, images and
//! borrowed row-major matrix views.
//!
//! All containers use the row-major `(y, x, c)` layout, so a feature map's
//! storage is already the `(H*W) x C` matrix the Gram computation needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_len(what: &str, dims: &[usize], len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!("{what} dimensions must be positive, got {dims:?}")));
    }
    let expected: usize = dims.iter().product();
    if expected != len {
        return Err(Error::Dimension(format!(
            "{what} of shape {dims:?} needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Activation tensor of one network layer, `height x width x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
    nonneg: bool,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        check_len("feature map", &[height, width, channels], data.len())?;
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
            nonneg: false,
        })
    }

    /// Builds a map flagged as non-negative, rejecting any negative entry.
    pub fn new_nonneg(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        let mut f = Self::new(height, width, channels, data)?;
        if let Some(i) = f.data.iter().position(|v| !(*v >= S::zero())) {
            return Err(Error::Precondition(format!(
                "non-negative feature map has value {} at flat index {i}",
                f.data[i]
            )));
        }
        f.nonneg = true;
        Ok(f)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new_nonneg(height, width, channels, vec![S::zero(); height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> S {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Entrywise `s * self`. The non-negative flag survives when `s >= 0`.
    pub fn scaled(&self, s: S) -> Self {
        FeatureMap {
            data: self.data.iter().map(|&v| v * s).collect(),
            nonneg: self.nonneg && s >= S::zero(),
            ..*self
        }
    }

    /// Same values, with a new storage vector of identical shape.
    pub fn with_data(&self, data: Vec<S>) -> Result<Self> {
        let f = Self::new(self.height, self.width, self.channels, data)?;
        Ok(f)
    }
}

/// Pixel image with values in `[0, 1]`, either grayscale or RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("image must have 1 or 3 channels, got {channels}")));
        }
        check_len("image", &[height, width, channels], data.len())?;
        if let Some(i) = data.iter().position(|v| !(*v >= S::zero() && *v <= S::one())) {
            return Err(Error::Data(format!(
                "image value {} at flat index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`Image::new`] but clamps every value into `[0, 1]` first.
    pub fn clamped(height: usize, width: usize, channels: usize, mut data: Vec<S>) -> Result<Self> {
        for v in &mut data {
            *v = v.max(S::zero()).min(S::one());
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: S) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> S {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The image viewed as a (non-negative) network input.
    pub fn to_feature_map(&self) -> FeatureMap<S> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.clone(),
            nonneg: true,
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixView<'a, S> {
    rows: usize,
    cols: usize,
    data: &'a [S],
}

impl<'a, S: Scalar> MatrixView<'a, S> {
    pub fn new(rows: usize, cols: usize, data: &'a [S]) -> Result<Self> {
        check_len("matrix", &[rows, cols], data.len())?;
        Ok(MatrixView { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &'a [S] {
        self.data
    }

    pub fn row(&self, r: usize) -> &'a [S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }
}

/// Views a feature map as the `(H*W) x C` matrix whose row `y*W + x` holds the
/// channel vector of pixel `(y, x)`. No copy is made.
pub fn flatten_spatial<S: Scalar>(f: &FeatureMap<S>) -> MatrixView<'_, S> {
    MatrixView {
        rows: f.pixels(),
        cols: f.channels,
        data: &f.data,
    }
}

/// Sum of squared entries.
pub fn squared_norm<S: Scalar>(m: MatrixView<'_, S>) -> S {
    m.data.iter().map(|&v| v * v).sum()
}

pub fn frobenius_norm<S: Scalar>(m: MatrixView<'_, S>) -> S {
    squared_norm(m).sqrt()
}

/// Mean of squared entrywise differences.
pub fn mse<S: Scalar>(a: MatrixView<'_, S>, b: MatrixView<'_, S>) -> Result<S> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "mse operands are {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let sum: S = a.data.iter().zip(b.data).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(sum / S::of_usize(a.data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(h: usize, w: usize, c: usize, data: &[f64]) -> FeatureMap<f64> {
        FeatureMap::new(h, w, c, data.to_vec()).unwrap()
    }

    #[test]
    fn flatten_layouts() {
        let f = fm(1, 1, 2, &[2.0, 3.0]);
        let m = flatten_spatial(&f);
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(m.row(0), &[2.0, 3.0]);

        let f = fm(2, 1, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = flatten_spatial(&f);
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);

        let f = fm(1, 2, 1, &[5.0, 7.0]);
        let m = flatten_spatial(&f);
        assert_eq!((m.rows(), m.cols()), (2, 1));
        assert_eq!(m.get(0, 0), 5.0);
        assert_eq!(m.get(1, 0), 7.0);
    }

    #[test]
    fn frobenius_examples() {
        let d = [4.0, 6.0, 6.0, 9.0];
        assert_eq!(frobenius_norm(MatrixView::new(2, 2, &d).unwrap()), 13.0);
        let z = [0.0f64; 9];
        assert_eq!(frobenius_norm(MatrixView::new(3, 3, &z).unwrap()), 0.0);
        let t = [3.0, 4.0];
        assert_eq!(frobenius_norm(MatrixView::new(2, 1, &t).unwrap()), 5.0);
    }

    #[test]
    fn mse_examples() {
        let a = [1.0, 2.0];
        let b = [3.0, 2.0];
        let va = MatrixView::new(1, 2, &a).unwrap();
        let vb = MatrixView::new(1, 2, &b).unwrap();
        assert_eq!(mse(va, va).unwrap(), 0.0);
        assert_eq!(mse(va, vb).unwrap(), 2.0);
        let z = [0.0];
        let f = [5.0];
        assert_eq!(
            mse(MatrixView::new(1, 1, &z).unwrap(), MatrixView::new(1, 1, &f).unwrap()).unwrap(),
            25.0
        );
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = [1.0, 2.0];
        let err = mse(MatrixView::new(1, 2, &a).unwrap(), MatrixView::new(2, 1, &a).unwrap());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn constructors_validate() {
        assert!(FeatureMap::<f64>::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::<f64>::new(0, 2, 1, vec![]).is_err());
        assert!(matches!(
            FeatureMap::new_nonneg(1, 1, 2, vec![1.0, -0.5]),
            Err(Error::Precondition(_))
        ));
        assert!(FeatureMap::new_nonneg(1, 1, 2, vec![1.0, 0.0]).unwrap().is_nonneg());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        let img = Image::clamped(1, 1, 1, vec![1.5]).unwrap();
        assert_eq!(img.data(), &[1.0]);
    }

    #[test]
    fn f32_works_too() {
        let f = FeatureMap::<f32>::new(1, 1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(frobenius_norm(flatten_spatial(&f)), 5.0f32);
    }

    proptest! {
        #[test]
        fn flatten_preserves_values(h in 1usize..5, w in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
            let mut s = crate::rng::Stream::new(seed);
            let data: Vec<f64> = (0..h * w * c).map(|_| s.range(-2.0, 2.0)).collect();
            let f = fm(h, w, c, &data);
            let m = flatten_spatial(&f);
            prop_assert_eq!(m.rows() * m.cols(), data.len());
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        prop_assert_eq!(m.get(y * w + x, ch), f.at(y, x, ch));
                    }
                }
            }
        }

        #[test]
        fn mse_is_symmetric_and_quadratic(a in prop::collection::vec(-10.0f64..10.0, 1..20), s in -5.0f64..5.0, seed in any::<u64>()) {
            let mut st = crate::rng::Stream::new(seed);
            let b: Vec<f64> = a.iter().map(|_| st.range(-10.0, 10.0)).collect();
            let n = a.len();
            let va = MatrixView::new(1, n, &a).unwrap();
            let vb = MatrixView::new(1, n, &b).unwrap();
            let ab = mse(va, vb).unwrap();
            prop_assert_eq!(ab, mse(vb, va).unwrap());
            prop_assert_eq!(mse(va, va).unwrap(), 0.0);
            let sa: Vec<f64> = a.iter().map(|v| v * s).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * s).collect();
            let scaled = mse(MatrixView::new(1, n, &sa).unwrap(), MatrixView::new(1, n, &sb).unwrap()).unwrap();
            prop_assert!((scaled - s * s * ab).abs() <= 1e-9 * (1.0 + scaled.abs()));
            prop_assert!(frobenius_norm(va) >= 0.0);
        }
    }
}
