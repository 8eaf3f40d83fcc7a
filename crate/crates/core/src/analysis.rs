//! Measurement pipelines: correlation and regression of losses, histograms,
//! the nearest-neighbor deception rate, and Monte-Carlo checks of the
//! expectation bounds of the style loss.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::FeatNet;
use crate::gram::{LayerSpec, LossConfig};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::stylize::score_pair;
use crate::tensor::Image;

/// Sample Pearson correlation.
pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 samples, got {}", x.len())));
    }
    let n = S::of_usize(x.len());
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut sxy, mut sxx, mut syy) = (S::zero(), S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == S::zero() || syy == S::zero() {
        return Err(Error::UndefinedCorrelation("an input sequence is constant".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-S::one()).min(S::one()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

/// Equal-width bins over `[lo, hi)` with the last bin closed on the right.
pub fn histogram<S: Scalar>(values: &[S], bins: usize, lo: S, hi: S) -> Result<Histogram> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::Precondition(format!(
            "histogram needs bins >= 1 and lo < hi, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let mut h = Histogram {
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
    };
    let width = (hi - lo) / S::of_usize(bins);
    for &v in values {
        if v < lo {
            h.underflow += 1;
        } else if v > hi || v.is_nan() {
            h.overflow += 1;
        } else {
            let idx = ((v - lo) / width).floor().to_usize().unwrap_or(bins).min(bins - 1);
            h.counts[idx] += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit<S> {
    pub slope: S,
    pub intercept: S,
    pub r: S,
}

/// Least-squares line `y = slope * x + intercept`.
pub fn linear_fit<S: Scalar>(x: &[S], y: &[S]) -> Result<LinearFit<S>> {
    let r = pearson(x, y)?;
    let n = S::of_usize(x.len());
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r,
    })
}

/// Per style layer of `loss`, the least-squares fit of the classic loss
/// against its supremum over (style, pastiche) image pairs.
pub fn loss_sup_fits<S: Scalar>(
    net: &FeatNet<S>,
    pairs: &[(Image<S>, Image<S>)],
    loss: &LossConfig,
) -> Result<Vec<(String, LinearFit<f64>)>> {
    let reports = pairs
        .par_iter()
        .map(|(style, pastiche)| score_pair(net, style, pastiche, loss))
        .collect::<Result<Vec<_>>>()?;
    loss.style_layers
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let sup: Vec<f64> = reports.iter().map(|r| r[j].sup.as_f64()).collect();
            let classic: Vec<f64> = reports.iter().map(|r| r[j].classic.as_f64()).collect();
            Ok((l.tap.clone(), linear_fit(&sup, &classic)?))
        })
        .collect()
}

/// One labeled vector of a feature bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBankEntry {
    pub id: String,
    pub artist: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank {
    entries: Vec<FeatureBankEntry>,
}

impl FeatureBank {
    pub fn new(entries: Vec<FeatureBankEntry>) -> Result<Self> {
        if let Some(first) = entries.first() {
            let d = first.vector.len();
            if let Some(bad) = entries.iter().find(|e| e.vector.len() != d) {
                return Err(Error::Dimension(format!(
                    "entry {} has dimension {}, bank dimension is {d}",
                    bad.id,
                    bad.vector.len()
                )));
            }
        }
        Ok(FeatureBank { entries })
    }

    pub fn entries(&self) -> &[FeatureBankEntry] {
        &self.entries
    }

    pub fn dimension(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest style entry; ties go to the lexicographically lowest id.
fn nearest(styles: &FeatureBank, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in styles.entries.iter().enumerate() {
        let d = squared_distance(&e.vector, v);
        if d < best_d || (d == best_d && e.id < styles.entries[best].id) {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Fraction of stylized entries whose Euclidean nearest neighbor among the
/// style entries carries the same artist label.
pub fn deception_rate(stylized: &FeatureBank, styles: &FeatureBank) -> Result<f64> {
    if stylized.is_empty() || styles.is_empty() {
        return Err(Error::Precondition("deception rate needs non-empty feature banks".into()));
    }
    if stylized.dimension() != styles.dimension() {
        return Err(Error::Dimension(format!(
            "stylized features have dimension {:?}, style features {:?}",
            stylized.dimension(),
            styles.dimension()
        )));
    }
    let hits = stylized
        .entries
        .par_iter()
        .filter(|e| styles.entries[nearest(styles, &e.vector)].artist == e.artist)
        .count();
    Ok(hits as f64 / stylized.len() as f64)
}

/// Human score of one sample: Good = -1, OK = 0, Bad = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub score: i8,
}

impl AnnotationRecord {
    pub fn new(id: impl Into<String>, score: i8) -> Result<Self> {
        if !(-1..=1).contains(&score) {
            return Err(Error::Data(format!("annotation score {score} is not in {{-1, 0, 1}}")));
        }
        Ok(AnnotationRecord { id: id.into(), score })
    }
}

/// Per-sample losses, one column per style layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub layers: Vec<LayerSpec>,
    pub samples: Vec<(String, Vec<f64>)>,
}

impl LossTable {
    pub fn new(layers: Vec<LayerSpec>, samples: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if let Some((id, _)) = samples.iter().find(|(_, v)| v.len() != layers.len()) {
            return Err(Error::Data(format!(
                "sample {id} does not have {} layer values",
                layers.len()
            )));
        }
        Ok(LossTable { layers, samples })
    }

    /// `sum_l w_l * loss_l` per sample.
    pub fn totals(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|(_, v)| self.layers.iter().zip(v).map(|(l, x)| l.weight * x).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub column: String,
    pub r: f64,
    pub n: usize,
}

/// Pearson r between each loss column (and the weighted total) and the
/// annotation scores, joined on sample id.
pub fn correlation_report(table: &LossTable, annotations: &[AnnotationRecord]) -> Result<Vec<CorrelationRow>> {
    let scores: BTreeMap<&str, i8> = annotations.iter().map(|a| (a.id.as_str(), a.score)).collect();
    if scores.len() != annotations.len() {
        return Err(Error::Data("annotation ids are not unique".into()));
    }
    let loss_ids: BTreeSet<&str> = table.samples.iter().map(|(id, _)| id.as_str()).collect();
    if loss_ids.len() != table.samples.len() {
        return Err(Error::Data("loss table sample ids are not unique".into()));
    }
    let missing_scores: Vec<&str> = loss_ids.iter().filter(|id| !scores.contains_key(*id)).copied().collect();
    let missing_losses: Vec<&str> = scores.keys().filter(|id| !loss_ids.contains(*id)).copied().collect();
    if !missing_scores.is_empty() || !missing_losses.is_empty() {
        return Err(Error::Data(format!(
            "ids without annotation: [{}]; annotated ids without losses: [{}]",
            missing_scores.join(", "),
            missing_losses.join(", ")
        )));
    }
    let h: Vec<f64> = table.samples.iter().map(|(id, _)| scores[id.as_str()] as f64).collect();
    let mut out = Vec::with_capacity(table.layers.len() + 1);
    for (j, l) in table.layers.iter().enumerate() {
        let col: Vec<f64> = table.samples.iter().map(|(_, v)| v[j]).collect();
        out.push(CorrelationRow {
            column: l.tap.clone(),
            r: pearson(&col, &h)?,
            n: col.len(),
        });
    }
    out.push(CorrelationRow {
        column: "total".into(),
        r: pearson(&table.totals(), &h)?,
        n: h.len(),
    });
    Ok(out)
}

/// Distribution of a scalar Gram value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    PointMass { value: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

impl Sampler {
    fn validate(&self) -> Result<()> {
        match self {
            Sampler::PointMass { value } if !value.is_finite() => {
                Err(Error::Precondition("point mass must be finite".into()))
            }
            Sampler::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::Precondition("discrete sampler needs matching non-empty values/probs".into()));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Precondition("discrete probabilities must be >= 0 and sum to 1".into()));
                }
                Ok(())
            }
            Sampler::Uniform { lo, hi } if !(lo <= hi) => {
                Err(Error::Precondition(format!("uniform sampler needs lo <= hi, got [{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }

    fn min_support(&self) -> f64 {
        match self {
            Sampler::PointMass { value } => *value,
            Sampler::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min),
            Sampler::Uniform { lo, .. } => *lo,
        }
    }

    /// Analytic mean and standard deviation.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            Sampler::PointMass { value } => (*value, 0.0),
            Sampler::Discrete { values, probs } => {
                let mu: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                let var: f64 = values.iter().zip(probs).map(|(v, p)| p * (v - mu) * (v - mu)).sum();
                (mu, var.sqrt())
            }
            Sampler::Uniform { lo, hi } => ((lo + hi) / 2.0, (hi - lo) / 12f64.sqrt()),
        }
    }

    pub fn sample(&self, s: &mut Stream) -> f64 {
        match self {
            Sampler::PointMass { value } => *value,
            Sampler::Discrete { values, probs } => {
                let u = s.uniform();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                // rounding left a sliver above the cumulative sum
                values[probs.iter().rposition(|p| *p > 0.0).unwrap_or(values.len() - 1)]
            }
            Sampler::Uniform { lo, hi } => s.range(*lo, *hi),
        }
    }
}

/// First two moments of a style's Gram-magnitude distribution together with
/// a sampler that realizes them.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub mu: f64,
    pub sigma: f64,
    pub sampler: Sampler,
}

impl MomentSpec {
    pub fn new(sampler: Sampler) -> Result<Self> {
        sampler.validate()?;
        let (mu, sigma) = sampler.moments();
        Ok(MomentSpec { mu, sigma, sampler })
    }

    fn require_nonneg(&self) -> Result<()> {
        let m = self.sampler.min_support();
        if m < 0.0 {
            return Err(Error::Precondition(format!("sampler support reaches {m} < 0")));
        }
        Ok(())
    }
}

/// `((mu_a - mu_b)^2 + sigma_a^2 + sigma_b^2, mu_a^2 + sigma_a^2 + mu_b^2 + sigma_b^2)`.
pub fn expectation_bounds(a: &MomentSpec, b: &MomentSpec) -> (f64, f64) {
    let var = a.sigma * a.sigma + b.sigma * b.sigma;
    let lower = (a.mu - b.mu) * (a.mu - b.mu) + var;
    let upper = a.mu * a.mu + b.mu * b.mu + var;
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub mean: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// Whether `mean` lies in `[lower - 3 se, upper + 3 se]`.
    pub within: bool,
    pub trials: usize,
}

/// Trials per substream; substream `k` is keyed by `(seed, k)`.
pub const MC_CHUNK: usize = 4096;
pub const MC_MIN_TRIALS: usize = 1000;

/// Monte-Carlo estimate of `E[(G_a - G_b)^2]` for independent scalar Gram
/// values drawn from `a` and `b`, compared with the analytic bounds.
///
/// Trials are split into fixed chunks of [`MC_CHUNK`] with one substream
/// each and merged in chunk order, so the estimate does not depend on the
/// number of worker threads.
pub fn mc_expectation_bounds(a: &MomentSpec, b: &MomentSpec, trials: usize, seed: u64) -> Result<McReport> {
    a.require_nonneg()?;
    b.require_nonneg()?;
    if trials < MC_MIN_TRIALS {
        return Err(Error::Precondition(format!("need at least {MC_MIN_TRIALS} trials, got {trials}")));
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut s = Stream::keyed(seed, &[k as u64]);
            let len = MC_CHUNK.min(trials - k * MC_CHUNK);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..len {
                let ga = a.sampler.sample(&mut s);
                let gb = b.sampler.sample(&mut s);
                let l = (ga - gb) * (ga - gb);
                sum += l;
                sum_sq += l * l;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial.iter().fold((0.0, 0.0), |(s, q), (a, b)| (s + a, q + b));
    let n = trials as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let std_error = (var / n).sqrt();
    let (lower, upper) = expectation_bounds(a, b);
    let tol = 3.0 * std_error;
    Ok(McReport {
        mean,
        std_error,
        lower,
        upper,
        within: mean >= lower - tol && mean <= upper + tol,
        trials,
    })
}

/// Variance-free bounds `((mu_a - mu_b)^2, k (mu_a^2 + mu_b^2))`.
pub fn relaxed_bounds(a: &MomentSpec, b: &MomentSpec, k: f64) -> Result<(f64, f64)> {
    if !(k > 0.0) {
        return Err(Error::Precondition(format!("k must be positive, got {k}")));
    }
    Ok(((a.mu - b.mu) * (a.mu - b.mu), k * (a.mu * a.mu + b.mu * b.mu)))
}

/// A random non-negative sampler, used for containment sweeps.
pub fn random_sampler(s: &mut Stream) -> Sampler {
    match s.below(3) {
        0 => Sampler::PointMass {
            value: s.range(0.0, 10.0),
        },
        1 => {
            let k = 2 + s.below(4);
            let values = (0..k).map(|_| s.range(0.0, 10.0)).collect();
            let raw: Vec<f64> = (0..k).map(|_| s.range(0.05, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            Sampler::Discrete {
                values,
                probs: raw.iter().map(|p| p / total).collect(),
            }
        }
        _ => {
            let lo = s.range(0.0, 8.0);
            Sampler::Uniform {
                lo,
                hi: lo + s.range(0.0, 5.0),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson::<f64>(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson::<f64>(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((r - 0.8660).abs() < 1e-4);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn pearson_properties() {
        let mut s = Stream::new(4);
        for _ in 0..100 {
            let n = 2 + s.below(30);
            let x: Vec<f64> = (0..n).map(|_| s.range(-5.0, 5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| s.range(-5.0, 5.0)).collect();
            let r = pearson(&x, &y).unwrap();
            assert!((-1.0..=1.0).contains(&r));
            assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
            let (a, b) = (s.range(0.1, 10.0), s.range(-10.0, 10.0));
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            assert!((r - pearson(&xt, &y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0, 0.5, 1.0], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        let e = histogram::<f64>(&[], 4, 0.0, 1.0).unwrap();
        assert_eq!(e.counts, vec![0; 4]);
        let o = histogram(&[-1.0, 2.0], 3, 0.0, 1.0).unwrap();
        assert_eq!((o.counts.clone(), o.underflow, o.overflow), (vec![0, 0, 0], 1, 1));
        assert!(histogram(&[1.0], 0, 0.0, 1.0).is_err());
        assert!(histogram(&[1.0], 2, 1.0, 1.0).is_err());
        let mut s = Stream::new(1);
        let v: Vec<f64> = (0..500).map(|_| s.range(-1.0, 2.0)).collect();
        assert_eq!(histogram(&v, 7, 0.0, 1.0).unwrap().total(), 500);
    }

    #[test]
    fn linear_fit_examples() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r - 1.0).abs() < 1e-12);
        assert!(linear_fit(&x, &[3.0; 4]).is_err());
    }

    fn bank(items: &[(&str, &str, &[f64])]) -> FeatureBank {
        FeatureBank::new(
            items
                .iter()
                .map(|(id, a, v)| FeatureBankEntry {
                    id: id.to_string(),
                    artist: a.to_string(),
                    vector: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn deception_examples() {
        let styles = bank(&[("s0", "A", &[0.0, 0.0]), ("s1", "B", &[10.0, 10.0])]);
        assert_eq!(deception_rate(&bank(&[("p", "A", &[1.0, 1.0])]), &styles).unwrap(), 1.0);
        assert_eq!(deception_rate(&bank(&[("p", "A", &[9.0, 9.0])]), &styles).unwrap(), 0.0);
        let mixed = bank(&[
            ("p0", "A", &[1.0, 0.0]),
            ("p1", "B", &[9.0, 10.0]),
            ("p2", "A", &[8.0, 8.0]),
            ("p3", "B", &[0.0, 2.0]),
        ]);
        assert_eq!(deception_rate(&mixed, &styles).unwrap(), 0.5);
        assert!(matches!(
            deception_rate(&bank(&[("p", "A", &[1.0])]), &styles),
            Err(Error::Dimension(_))
        ));
        assert!(FeatureBank::new(vec![
            FeatureBankEntry { id: "a".into(), artist: "A".into(), vector: vec![1.0] },
            FeatureBankEntry { id: "b".into(), artist: "A".into(), vector: vec![1.0, 2.0] },
        ])
        .is_err());
    }

    #[test]
    fn deception_ties_go_to_lowest_id() {
        let styles = bank(&[("z", "B", &[1.0]), ("a", "A", &[-1.0])]);
        assert_eq!(deception_rate(&bank(&[("p", "A", &[0.0])]), &styles).unwrap(), 1.0);
    }

    #[test]
    fn annotations_validate_scores() {
        assert!(AnnotationRecord::new("x", 2).is_err());
        assert!(AnnotationRecord::new("x", -1).is_ok());
    }

    #[test]
    fn correlation_report_joins_and_reports_missing() {
        let layers = vec![LayerSpec::unit("a"), LayerSpec::unit("b")];
        let table = LossTable::new(
            layers,
            vec![
                ("x".into(), vec![0.0, 0.0]),
                ("y".into(), vec![1.0, 0.0]),
                ("z".into(), vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        let ann = vec![
            AnnotationRecord::new("z", 1).unwrap(),
            AnnotationRecord::new("x", -1).unwrap(),
            AnnotationRecord::new("y", 0).unwrap(),
        ];
        let rows = correlation_report(&table, &ann).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].column, "total");
        assert!((rows[2].r - 1.0).abs() < 1e-12);
        let err = correlation_report(&table, &ann[..2]).unwrap_err();
        assert!(err.to_string().contains('y'), "{err}");
    }

    #[test]
    fn two_point_exact_enumeration() {
        let s = MomentSpec::new(Sampler::Discrete {
            values: vec![1.0, 3.0],
            probs: vec![0.5, 0.5],
        })
        .unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 1.0));
        // four equally likely outcomes: (1,1) (1,3) (3,1) (3,3)
        let exact: f64 = [0.0, 4.0, 4.0, 0.0].iter().sum::<f64>() / 4.0;
        assert_eq!(exact, 2.0);
        let r = mc_expectation_bounds(&s, &s, 20_000, 0).unwrap();
        assert_eq!((r.lower, r.upper), (2.0, 10.0));
        assert!((r.mean - exact).abs() <= 3.0 * r.std_error, "{r:?}");
        assert!(r.within);
    }

    #[test]
    fn point_masses() {
        let c = MomentSpec::new(Sampler::PointMass { value: 1.5 }).unwrap();
        let r = mc_expectation_bounds(&c, &c, 1000, 1).unwrap();
        assert_eq!((r.mean, r.lower, r.upper), (0.0, 0.0, 2.0 * 1.5 * 1.5));
        let a = MomentSpec::new(Sampler::PointMass { value: 1.0 }).unwrap();
        let b = MomentSpec::new(Sampler::PointMass { value: 4.0 }).unwrap();
        let r = mc_expectation_bounds(&a, &b, 1000, 1).unwrap();
        assert_eq!((r.mean, r.lower, r.upper, r.within), (9.0, 9.0, 17.0, true));
    }

    #[test]
    fn mc_preconditions() {
        let neg = MomentSpec::new(Sampler::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        let ok = MomentSpec::new(Sampler::PointMass { value: 1.0 }).unwrap();
        assert!(matches!(mc_expectation_bounds(&neg, &ok, 5000, 0), Err(Error::Precondition(_))));
        assert!(mc_expectation_bounds(&ok, &ok, 10, 0).is_err());
        assert!(MomentSpec::new(Sampler::Discrete { values: vec![1.0], probs: vec![0.5] }).is_err());
    }

    #[test]
    fn sampler_moments_match_empirical() {
        let mut s = Stream::new(9);
        for _ in 0..10 {
            let sampler = random_sampler(&mut s);
            let (mu, sigma) = sampler.moments();
            let n = 200_000;
            let mut st = Stream::new(s.next_u64());
            let xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut st)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            assert!((m - mu).abs() <= 5.0 * sigma / (n as f64).sqrt() + 1e-9 * mu.abs(), "{sampler:?}");
        }
    }

    #[test]
    fn relaxed_bound_examples() {
        let a = MomentSpec::new(Sampler::PointMass { value: 2.0 }).unwrap();
        let (lo, hi) = relaxed_bounds(&a, &a, 2.5).unwrap();
        assert_eq!((lo, hi), (0.0, 20.0));
        assert!(relaxed_bounds(&a, &a, 0.0).is_err());
        let mut s = Stream::new(2);
        for _ in 0..100 {
            let x = MomentSpec::new(random_sampler(&mut s)).unwrap();
            let y = MomentSpec::new(random_sampler(&mut s)).unwrap();
            let (lo2, _) = relaxed_bounds(&x, &y, 1.0).unwrap();
            let (lo1, _) = expectation_bounds(&x, &y);
            assert!(lo2 <= lo1);
        }
    }
}
