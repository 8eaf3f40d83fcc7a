//! Built-in fixture suite: small worked examples for every module, runnable
//! from the command line as a smoke test of a build.

use crate::analysis::*;
use crate::error::{Error, Result};
use crate::featnet::{self, FeatNet, LayerKind, NetConfig};
use crate::grad::*;
use crate::gram::*;
use crate::io::{ppm, tables, weights};
use crate::rng::{derive_seed, Stream};
use crate::stylize::*;
use crate::tensor::*;
use crate::texture::{procedural_texture, random_image, style_pastiche_pairs};

/// Result of one fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub outcomes: Vec<FixtureOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn first_failure(&self) -> Option<&FixtureOutcome> {
        self.outcomes.iter().find(|o| !o.passed)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed).count()
    }

    /// `fixture,status,detail` table.
    pub fn to_csv(&self) -> String {
        let header = ["fixture", "status", "detail"].map(String::from);
        let rows: Vec<Vec<String>> = self
            .outcomes
            .iter()
            .map(|o| vec![o.name.to_string(), if o.passed { "pass" } else { "fail" }.to_string(), o.detail.clone()])
            .collect();
        tables::table_to_string(&header, &rows)
    }
}

/// Largest relative errors of the feature-level gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSummary {
    pub classic: f64,
    pub balanced: f64,
    pub content: f64,
    /// Largest relative deviation of the balanced gradient from `classic / sup`.
    pub stop_gradient: f64,
    pub instances: usize,
}

impl GradcheckSummary {
    pub fn max_error(&self) -> f64 {
        self.classic.max(self.balanced).max(self.content)
    }
}

fn random_features(s: &mut Stream, h: usize, w: usize, c: usize) -> FeatureMap<f64> {
    let data = (0..h * w * c).map(|_| s.range(0.0, 1.0)).collect();
    FeatureMap::new_nonneg(h, w, c, data).expect("uniform values are non-negative")
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

/// Checks the classic, balanced and content gradients against central
/// differences on `instances` random non-negative feature pairs.
pub fn gradcheck(seed: u64, instances: usize) -> Result<GradcheckSummary> {
    let mut out = GradcheckSummary {
        classic: 0.0,
        balanced: 0.0,
        content: 0.0,
        stop_gradient: 0.0,
        instances,
    };
    for k in 0..instances {
        let mut s = Stream::keyed(seed, &[k as u64]);
        let (h, w, c) = (1 + s.below(3), 1 + s.below(3), 1 + s.below(4));
        let fs = random_features(&mut s, h, w, c);
        let fp = random_features(&mut s, h, w, c);
        let n = norm_constant(&fp, Normalization::ChannelsSquared);
        let gs = gram(&fs);
        let at = |x: &[f64]| FeatureMap::new(h, w, c, x.to_vec()).expect("shape preserved");

        let classic = classic_style_grad(&fs, &fp, n)?;
        let e = finite_diff_check(
            |x| classic_layer_loss(&gs, &gram(&at(x)), n).expect("same channels"),
            fp.data(),
            classic.data(),
            FD_EPS,
        )?;
        out.classic = out.classic.max(e);

        let sup = sup_bound(&gs, &gram(&fp), n)?;
        let balanced = balanced_style_grad(&fs, &fp, n)?;
        let e = finite_diff_check(
            |x| classic_layer_loss(&gs, &gram(&at(x)), n).expect("same channels") / sup,
            fp.data(),
            balanced.data(),
            FD_EPS,
        )?;
        out.balanced = out.balanced.max(e);
        let quotient: Vec<f64> = classic.data().iter().map(|v| v / sup).collect();
        out.stop_gradient = out.stop_gradient.max(max_rel_diff(balanced.data(), &quotient));

        let content = content_grad(&fs, &fp)?;
        let e = finite_diff_check(
            |x| content_loss(&fs, &at(x)).expect("same shape"),
            fp.data(),
            content.data(),
            FD_EPS,
        )?;
        out.content = out.content.max(e);
    }
    Ok(out)
}

/// Pixel-gradient check of the full objective through a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkGradcheck {
    pub classic: f64,
    pub balanced: f64,
    /// Pixel coordinates compared against central differences.
    pub checked: usize,
    /// Coordinates whose `x +- h` probes change the ReLU sign pattern; central
    /// differences across a kink are not a derivative, so they are skipped.
    pub kinks: usize,
}

impl NetworkGradcheck {
    pub fn max_error(&self) -> f64 {
        self.classic.max(self.balanced)
    }
}

/// Finite-difference check restricted to the coordinates of `x` around which
/// `net` stays on one linear piece.
fn smooth_fd_check(
    net: &FeatNet<f64>,
    x: &Image<f64>,
    analytic: &[f64],
    f: impl Fn(&Image<f64>) -> f64,
) -> Result<(f64, usize, usize)> {
    let (h, w, c) = x.shape();
    let at = |p: &[f64]| Image::new(h, w, c, p.to_vec()).expect("probe stays in [0, 1]");
    let pattern = net.relu_pattern(x)?;
    let mut probe = x.data().to_vec();
    let mut smooth = Vec::new();
    for i in 0..probe.len() {
        let xi = probe[i];
        let step = FD_EPS * xi.abs().max(1.0);
        let mut same = true;
        for p in [xi + step, xi - step] {
            probe[i] = p;
            same &= net.relu_pattern(&at(&probe))? == pattern;
        }
        probe[i] = xi;
        if same {
            smooth.push(i);
        }
    }
    let point: Vec<f64> = smooth.iter().map(|&i| x.data()[i]).collect();
    let grad: Vec<f64> = smooth.iter().map(|&i| analytic[i]).collect();
    let e = finite_diff_check(
        |y| {
            let mut p = x.data().to_vec();
            for (&i, v) in smooth.iter().zip(y) {
                p[i] = *v;
            }
            f(&at(&p))
        },
        &point,
        &grad,
        FD_EPS,
    )?;
    Ok((e, smooth.len(), probe.len() - smooth.len()))
}

/// Checks the pixel gradient of the full objective through the
/// seed-`net_seed` default network on random 8x8 images, for the classic and
/// the balanced loss (the latter against frozen suprema).
pub fn network_gradcheck(net_seed: u64, seed: u64, instances: usize) -> Result<NetworkGradcheck> {
    let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(net_seed))?;
    let mut out = NetworkGradcheck {
        classic: 0.0,
        balanced: 0.0,
        checked: 0,
        kinks: 0,
    };
    for k in 0..instances {
        let image = |j: u64| -> Image<f64> {
            let im: Image<f64> = random_image(derive_seed(seed, &[k as u64, j]), 8, 8, 3);
            // keep perturbed pixels inside [0, 1]
            let d = im.data().iter().map(|v| 0.05 + 0.9 * v).collect();
            Image::new(8, 8, 3, d).expect("values in range")
        };
        let (content, style, x) = (image(0), image(1), image(2));

        let mut cfg = OptimizeConfig::default();
        cfg.loss_kind = LossKind::Classic;
        let classic = Objective::new(&net, &content, &style, &cfg)?;
        let (record, g) = classic.value_and_grad(&x)?;
        let (e, checked, kinks) =
            smooth_fd_check(&net, &x, g.data(), |p| classic.value(p).expect("valid image").total)?;
        out.classic = out.classic.max(e);
        out.checked += checked;
        out.kinks += kinks;

        cfg.loss_kind = LossKind::Balanced;
        let (_, g) = Objective::new(&net, &content, &style, &cfg)?.value_and_grad(&x)?;
        let mut frozen = cfg.clone();
        frozen.loss_kind = LossKind::Classic;
        for (spec, r) in frozen.loss.style_layers.iter_mut().zip(&record.layers) {
            spec.weight = if r.sup > 0.0 { spec.weight / r.sup } else { 0.0 };
        }
        let frozen = Objective::new(&net, &content, &style, &frozen)?;
        let (e, _, _) = smooth_fd_check(&net, &x, g.data(), |p| frozen.value(p).expect("valid image").total)?;
        out.balanced = out.balanced.max(e);
    }
    Ok(out)
}

type Outcome = std::result::Result<String, String>;

fn fail(e: Error) -> String {
    format!("error: {e}")
}

fn close(got: f64, want: f64, tol: f64) -> Outcome {
    if (got - want).abs() <= tol * want.abs().max(1.0) {
        Ok(format!("{got}"))
    } else {
        Err(format!("got {got}, expected {want}"))
    }
}

fn exact<T: PartialEq + std::fmt::Debug>(got: T, want: T) -> Outcome {
    if got == want {
        Ok(format!("{got:?}"))
    } else {
        Err(format!("got {got:?}, expected {want:?}"))
    }
}

fn holds(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rejects<T: std::fmt::Debug>(r: Result<T>, needle: &str, code: i32) -> Outcome {
    match r {
        Ok(v) => Err(format!("accepted: {v:?}")),
        Err(e) if e.exit_code() == code && e.to_string().contains(needle) => Ok(e.to_string()),
        Err(e) => Err(format!("wrong error: {e}")),
    }
}

fn fm(h: usize, w: usize, c: usize, d: &[f64]) -> FeatureMap<f64> {
    if d.iter().all(|v| *v >= 0.0) {
        FeatureMap::new_nonneg(h, w, c, d.to_vec()).expect("fixture shape")
    } else {
        FeatureMap::new(h, w, c, d.to_vec()).expect("fixture shape")
    }
}

fn gm(c: usize, d: &[f64]) -> GramMatrix<f64> {
    GramMatrix::new(c, d.to_vec(), true).expect("fixture gram")
}

fn g469() -> GramMatrix<f64> {
    gm(2, &[4.0, 6.0, 6.0, 9.0])
}

fn view<'a>(r: usize, c: usize, d: &'a [f64]) -> MatrixView<'a, f64> {
    MatrixView::new(r, c, d).expect("fixture view")
}

fn flatten_case(h: usize, w: usize, c: usize, d: &[f64], rows: usize) -> Outcome {
    let f = fm(h, w, c, d);
    let m = flatten_spatial(&f);
    exact((m.rows(), m.cols(), m.data().to_vec()), (rows, d.len() / rows, d.to_vec()))
}

fn tensor_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("tensor.flatten_single_pixel", || flatten_case(1, 1, 2, &[2.0, 3.0], 1)),
        ("tensor.flatten_two_rows", || flatten_case(2, 1, 2, &[1.0, 0.0, 0.0, 1.0], 2)),
        ("tensor.flatten_column", || flatten_case(1, 2, 1, &[5.0, 7.0], 2)),
        ("tensor.frobenius_4_6_6_9", || close(frobenius_norm(view(2, 2, &[4.0, 6.0, 6.0, 9.0])), 13.0, 1e-15)),
        ("tensor.frobenius_zero", || exact(frobenius_norm(view(3, 3, &[0.0; 9])), 0.0)),
        ("tensor.frobenius_3_4", || exact(frobenius_norm(view(2, 1, &[3.0, 4.0])), 5.0)),
        ("tensor.mse_identical", || {
            let d = [0.3, -1.5, 2.0];
            exact(mse(view(1, 3, &d), view(1, 3, &d)).map_err(fail)?, 0.0)
        }),
        ("tensor.mse_1_2_vs_3_2", || exact(mse(view(1, 2, &[1.0, 2.0]), view(1, 2, &[3.0, 2.0])).map_err(fail)?, 2.0)),
        ("tensor.mse_single", || exact(mse(view(1, 1, &[0.0]), view(1, 1, &[5.0])).map_err(fail)?, 25.0)),
    ]
}

fn gram_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("gram.single_pixel", || exact(gram(&fm(1, 1, 2, &[2.0, 3.0])).data().to_vec(), vec![4.0, 6.0, 6.0, 9.0])),
        ("gram.zero_features", || exact(gram(&fm(2, 2, 3, &[0.0; 12])).data().to_vec(), vec![0.0; 9])),
        ("gram.orthonormal_columns", || {
            exact(gram(&fm(2, 1, 2, &[1.0, 0.0, 0.0, 1.0])).data().to_vec(), vec![1.0, 0.0, 0.0, 1.0])
        }),
        ("gram.normalization_degenerate", || {
            let f = fm(1, 1, 1, &[0.5]);
            exact(
                (
                    norm_constant(&f, Normalization::ChannelsSquared),
                    norm_constant(&f, Normalization::SpatialProduct),
                ),
                (1.0, 1.0),
            )
        }),
        ("gram.classic_identical", || {
            exact(classic_layer_loss(&g469(), &g469(), 4.0).map_err(fail)?, 0.0)
        }),
        ("gram.classic_against_zero", || {
            exact(classic_layer_loss(&g469(), &GramMatrix::zeros(2), 4.0).map_err(fail)?, 42.25)
        }),
        ("gram.classic_disjoint", || {
            let (a, b) = (gm(2, &[1.0, 0.0, 0.0, 0.0]), gm(2, &[0.0, 0.0, 0.0, 1.0]));
            exact(classic_layer_loss(&a, &b, 1.0).map_err(fail)?, 2.0)
        }),
        ("gram.sup_against_zero", || exact(sup_bound(&g469(), &GramMatrix::zeros(2), 4.0).map_err(fail)?, 42.25)),
        ("gram.sup_zero", || {
            exact(sup_bound(&GramMatrix::zeros(2), &GramMatrix::zeros(2), 1.0).map_err(fail)?, 0.0)
        }),
        ("gram.sup_disjoint_equality", || {
            let (a, b) = (gm(2, &[1.0, 0.0, 0.0, 0.0]), gm(2, &[0.0, 0.0, 0.0, 1.0]));
            let sup = sup_bound(&a, &b, 1.0).map_err(fail)?;
            exact((sup, sup == classic_layer_loss(&a, &b, 1.0).map_err(fail)?), (2.0, true))
        }),
        ("gram.inf_parallel_equality", || {
            let (a, b) = (g469(), g469().scaled(4.0));
            let inf = inf_bound(&a, &b, 1.0).map_err(fail)?;
            let classic = classic_layer_loss(&a, &b, 1.0).map_err(fail)?;
            holds(inf == 1521.0 && (classic - inf).abs() <= 1e-12 * inf, format!("inf {inf}, classic {classic}"))
        }),
        ("gram.inf_equal_norms", || exact(inf_bound(&g469(), &g469(), 1.0).map_err(fail)?, 0.0)),
        ("gram.inf_against_zero", || exact(inf_bound(&g469(), &GramMatrix::zeros(2), 4.0).map_err(fail)?, 42.25)),
        ("gram.balanced_identical", || exact(balanced_layer_loss(&g469(), &g469(), 1.0).map_err(fail)?, 0.0)),
        ("gram.balanced_against_zero", || {
            exact(balanced_layer_loss(&g469(), &GramMatrix::zeros(2), 1.0).map_err(fail)?, 1.0)
        }),
        ("gram.balanced_scale_invariant", || {
            let (a, b) = (g469(), gm(2, &[1.0, 2.0, 2.0, 5.0]));
            let base = balanced_layer_loss(&a, &b, 1.0).map_err(fail)?;
            let scaled = balanced_layer_loss(&a.scaled(49.0), &b.scaled(49.0), 1.0).map_err(fail)?;
            close(scaled, base, 1e-12)
        }),
        ("gram.style_total_single", || close(style_loss_total(&[(LayerSpec::unit("a"), 0.3)]), 0.3, 0.0)),
        ("gram.style_total_unit", || {
            close(style_loss_total(&[(LayerSpec::unit("a"), 0.2), (LayerSpec::unit("b"), 0.5)]), 0.7, 1e-15)
        }),
        ("gram.style_total_weighted", || {
            let a = LayerSpec::new("a", 2.0).map_err(fail)?;
            let b = LayerSpec::new("b", 0.0).map_err(fail)?;
            close(style_loss_total(&[(a, 0.2), (b, 0.5)]), 0.4, 1e-15)
        }),
        ("gram.content_identical", || {
            let f = fm(2, 2, 1, &[0.1, 0.2, 0.3, 0.4]);
            exact(content_loss(&f, &f).map_err(fail)?, 0.0)
        }),
        ("gram.content_mse", || {
            exact(content_loss(&fm(1, 1, 2, &[1.0, 2.0]), &fm(1, 1, 2, &[3.0, 2.0])).map_err(fail)?, 2.0)
        }),
        ("gram.content_offset", || {
            exact(content_loss(&fm(2, 2, 1, &[0.0; 4]), &fm(2, 2, 1, &[5.0; 4])).map_err(fail)?, 25.0)
        }),
        ("gram.total_no_style", || exact(nst_total(1.0, 0.0, 10.0), 1.0)),
        ("gram.total_no_content", || exact(nst_total(0.0, 2.0, 10.0), 20.0)),
        ("gram.total_direct", || exact(nst_total(1.0, 2.0, 0.5), 2.0)),
        ("gram.batch_mean", || exact(batch_aggregate(&[1.0, 3.0], &[0.5, 0.5]).map_err(fail)?, 2.0)),
        ("gram.batch_mask", || exact(batch_aggregate(&[1.0, 3.0], &[1.0, 0.0]).map_err(fail)?, 1.0)),
        ("gram.batch_sum", || exact(batch_aggregate(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).map_err(fail)?, 6.0)),
        ("gram.interpolate_style_end", || {
            let (s, c) = (g469(), gm(2, &[1.0, 0.5, 0.5, 2.0]));
            exact(interpolated_style_target(&s, &c, 1.0).map_err(fail)?, s)
        }),
        ("gram.interpolate_content_end", || {
            let (s, c) = (g469(), gm(2, &[1.0, 0.5, 0.5, 2.0]));
            exact(interpolated_style_target(&s, &c, 0.0).map_err(fail)?, c)
        }),
        ("gram.interpolate_midpoint", || {
            let t = interpolated_style_target(&gm(1, &[2.0]), &gm(1, &[4.0]), 0.5).map_err(fail)?;
            exact(t.data().to_vec(), vec![3.0])
        }),
    ]
}

fn grad_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("grad.content_minimum", || {
            let f = fm(2, 1, 2, &[0.1, 0.2, 0.3, 0.4]);
            exact(content_grad(&f, &f).map_err(fail)?.max_abs(), 0.0)
        }),
        ("grad.content_single", || {
            exact(content_grad(&fm(1, 1, 1, &[1.0]), &fm(1, 1, 1, &[3.0])).map_err(fail)?.data().to_vec(), vec![4.0])
        }),
        ("grad.content_linear", || {
            let fc = fm(1, 2, 1, &[1.0, 2.0]);
            let g1 = content_grad(&fc, &fm(1, 2, 1, &[1.5, 1.0])).map_err(fail)?;
            let g3 = content_grad(&fc, &fm(1, 2, 1, &[2.5, -1.0])).map_err(fail)?;
            let want: Vec<f64> = g1.data().iter().map(|v| 3.0 * v).collect();
            holds(max_rel_diff(g3.data(), &want) <= 1e-15, format!("{:?}", g3.data()))
        }),
        ("grad.classic_minimum", || {
            let f = fm(2, 1, 2, &[0.1, 0.2, 0.3, 0.4]);
            exact(classic_style_grad(&f, &f, 4.0).map_err(fail)?.max_abs(), 0.0)
        }),
        ("grad.classic_single", || {
            exact(classic_style_grad(&fm(1, 1, 1, &[1.0]), &fm(1, 1, 1, &[2.0]), 1.0).map_err(fail)?.data().to_vec(), vec![24.0])
        }),
        ("grad.classic_halves_with_n", || {
            let (fs, fp) = (fm(1, 2, 2, &[0.1, 0.7, 0.4, 0.2]), fm(1, 2, 2, &[0.5, 0.3, 0.9, 0.6]));
            let g1 = classic_style_grad(&fs, &fp, 4.0).map_err(fail)?;
            let g2 = classic_style_grad(&fs, &fp, 8.0).map_err(fail)?;
            let want: Vec<f64> = g1.data().iter().map(|v| v / 2.0).collect();
            exact(g2.data().to_vec(), want)
        }),
        ("grad.balanced_minimum", || {
            let f = fm(2, 1, 2, &[0.1, 0.2, 0.3, 0.4]);
            exact(balanced_style_grad(&f, &f, 4.0).map_err(fail)?.max_abs(), 0.0)
        }),
        ("grad.balanced_single", || {
            let g = balanced_style_grad(&fm(1, 1, 1, &[1.0]), &fm(1, 1, 1, &[2.0]), 1.0).map_err(fail)?;
            close(g.data()[0], 24.0 / 17.0, 1e-15)
        }),
        ("grad.backprop_zero", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let image: Image<f64> = random_image(1, 8, 8, 3);
            let g = backprop_pixels(&net, &image, &[("b2_r2".into(), GradientMap::zeros(4, 4, 16))]).map_err(fail)?;
            exact(g.max_abs(), 0.0)
        }),
        ("grad.backprop_passthrough", || {
            let layers = vec![
                LayerKind::Conv { in_ch: 1, out_ch: 1, kernel: 1 },
                LayerKind::Relu { tap: Some("t".into()) },
            ];
            let net: FeatNet<f64> = FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![-0.3])]).map_err(fail)?;
            let image = Image::new(1, 4, 1, vec![0.1, 0.5, 0.2, 0.9]).map_err(fail)?;
            let g = GradientMap::new(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]).map_err(fail)?;
            let px = backprop_pixels(&net, &image, &[("t".into(), g)]).map_err(fail)?;
            exact(px.data().to_vec(), vec![0.0, 2.0, 0.0, 4.0])
        }),
        ("grad.backprop_finite_differences", || {
            let r = network_gradcheck(0, 0, 1).map_err(fail)?;
            holds(r.max_error() <= 1e-4, format!("classic {:e} balanced {:e}", r.classic, r.balanced))
        }),
        ("grad.fd_quadratic", || {
            let e = finite_diff_check(|x: &[f64]| x[0] * x[0], &[3.0], &[6.0], FD_EPS).map_err(fail)?;
            holds(e <= 1e-9, format!("{e:e}"))
        }),
        ("grad.fd_detects_factor_two", || {
            let e = finite_diff_check(|x: &[f64]| x[0] * x[0], &[3.0], &[12.0], FD_EPS).map_err(fail)?;
            holds((e - 0.5).abs() <= 1e-6, format!("{e}"))
        }),
        ("grad.fd_classic_seed0", || {
            let s = gradcheck(0, 10).map_err(fail)?;
            holds(s.max_error() <= 1e-6, format!("{:e}", s.max_error()))
        }),
    ]
}

fn passthrough_net(bias: f64) -> Result<FeatNet<f64>> {
    let layers = vec![
        LayerKind::Conv { in_ch: 1, out_ch: 1, kernel: 1 },
        LayerKind::Relu { tap: Some("t".into()) },
    ];
    FeatNet::with_parameters(&layers, vec![(vec![1.0], vec![bias])])
}

fn featnet_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("featnet.deterministic_init", || {
            let cfg = NetConfig::default_with_seed(7);
            exact(weights::encode(&featnet::build::<f64>(&cfg).map_err(fail)?), weights::encode(&featnet::build::<f64>(&cfg).map_err(fail)?))
        }),
        ("featnet.zero_biases", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(7)).map_err(fail)?;
            let zero = net.convs().all(|c| c.bias().iter().all(|b| *b == 0.0));
            exact(zero, true)
        }),
        ("featnet.zero_image", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let f = net.forward(&Image::filled(16, 16, 3, 0.0).map_err(fail)?, &DEFAULT_STYLE_TAPS).map_err(fail)?;
            exact(f.values().flat_map(|m| m.data().iter()).all(|v| *v == 0.0), true)
        }),
        ("featnet.passthrough", || {
            let net = passthrough_net(0.0).map_err(fail)?;
            let f = net.forward(&Image::filled(1, 1, 1, 0.5).map_err(fail)?, &["t"]).map_err(fail)?;
            exact(f["t"].data().to_vec(), vec![0.5])
        }),
        ("featnet.relu_clamp", || {
            let net = passthrough_net(-0.2).map_err(fail)?;
            let f = net.forward(&Image::filled(1, 1, 1, 0.0).map_err(fail)?, &["t"]).map_err(fail)?;
            exact(f["t"].data().to_vec(), vec![0.0])
        }),
        ("featnet.cache_replay", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let image: Image<f64> = random_image(3, 8, 8, 3);
            let (cached, _) = net.forward_with_cache(&image, &DEFAULT_STYLE_TAPS).map_err(fail)?;
            exact(cached, net.forward(&image, &DEFAULT_STYLE_TAPS).map_err(fail)?).map(|_| "identical".into())
        }),
        ("featnet.cache_accounting", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let image: Image<f64> = random_image(3, 8, 8, 3);
            let (_, cache) = net.forward_with_cache(&image, &DEFAULT_STYLE_TAPS).map_err(fail)?;
            let sum: usize = cache.activations().iter().map(|a| a.data().len()).sum();
            exact(cache.element_count(), sum)
        }),
    ]
}

fn small_cfg(steps: usize) -> OptimizeConfig {
    OptimizeConfig {
        steps,
        ..OptimizeConfig::default()
    }
}

fn stylize_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("stylize.zero_steps", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (random_image(1, 16, 16, 3), random_image(2, 16, 16, 3));
            let out = stylize(&net, &c, &s, &small_cfg(0)).map_err(fail)?;
            exact(out.pastiche == c, true)
        }),
        ("stylize.self_target", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let c: Image<f64> = procedural_texture(1, 16, 16, 3);
            let (_, g) = Objective::new(&net, &c, &c, &small_cfg(5)).map_err(fail)?.value_and_grad(&c).map_err(fail)?;
            let out = stylize(&net, &c, &c, &small_cfg(5)).map_err(fail)?;
            holds(g.max_abs() == 0.0 && out.pastiche == c, format!("max |grad| {:e}", g.max_abs()))
        }),
        ("stylize.descends", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (random_image(1, 64, 64, 3), random_image(2, 64, 64, 3));
            let out = stylize(&net, &c, &s, &small_cfg(200)).map_err(fail)?;
            let (first, last) = (out.trajectory[0].total, out.final_record().total);
            holds(last < first, format!("{first:e} -> {last:e}"))
        }),
        ("stylize.sweep_single", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (random_image(1, 16, 16, 3), random_image(2, 16, 16, 3));
            let cfg = small_cfg(10);
            let single = stylize(&net, &c, &s, &cfg).map_err(fail)?;
            let r = sweep(&net, &[("c".into(), c)], &[("s".into(), s)], &cfg, Pairing::AllPairs).map_err(fail)?;
            let row = &r.rows[0];
            holds(
                r.rows.len() == 1 && row.pastiche == single.pastiche && row.classic_total == single.final_record().style_classic,
                format!("{} rows", r.rows.len()),
            )
        }),
        ("stylize.sweep_ratio", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let content: Image<f64> = procedural_texture(1000, 16, 16, 3);
            let styles: Vec<(String, Image<f64>)> =
                (0..20).map(|k| (format!("s{k}"), procedural_texture(k, 16, 16, 3))).collect();
            let cfg = OptimizeConfig {
                loss_kind: LossKind::Balanced,
                ..small_cfg(40)
            };
            let r = sweep(&net, &[("c".into(), content)], &styles, &cfg, Pairing::AllPairs).map_err(fail)?;
            let ratio = |v: Vec<f64>| {
                let max = v.iter().cloned().fold(f64::MIN, f64::max);
                let min = v.iter().cloned().fold(f64::MAX, f64::min);
                max / min
            };
            let (c, b) = (ratio(r.classic_totals()), ratio(r.balanced_totals()));
            holds(c > b, format!("classic ratio {c:e}, balanced ratio {b:e}"))
        }),
        ("stylize.interpolation_self_target", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (procedural_texture(1, 16, 16, 3), procedural_texture(2, 16, 16, 3));
            let out = interpolation_baseline(&net, &c, &s, 0.0, &small_cfg(3)).map_err(fail)?;
            exact(out.pastiche == c, true)
        }),
        ("stylize.interpolation_endpoint", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (procedural_texture(1, 16, 16, 3), procedural_texture(2, 16, 16, 3));
            let cfg = small_cfg(10);
            let a = interpolation_baseline(&net, &c, &s, 1.0, &cfg).map_err(fail)?;
            exact(a == stylize(&net, &c, &s, &cfg).map_err(fail)?, true)
        }),
        ("stylize.interpolation_trend", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s): (Image<f64>, Image<f64>) = (procedural_texture(11, 32, 32, 3), procedural_texture(12, 32, 32, 3));
            let cfg = small_cfg(60);
            let loss = |alpha: f64| -> Result<f64> {
                let out = interpolation_baseline(&net, &c, &s, alpha, &cfg)?;
                let reports = score_pair(&net, &s, &out.pastiche, &cfg.loss)?;
                Ok(cfg.loss.style_layers.iter().zip(&reports).map(|(l, r)| l.weight * r.classic).sum())
            };
            let (l0, l5, l1) = (loss(0.0).map_err(fail)?, loss(0.5).map_err(fail)?, loss(1.0).map_err(fail)?);
            holds(l1 <= l5 && l5 <= l0, format!("alpha 0: {l0:e}, 0.5: {l5:e}, 1: {l1:e}"))
        }),
    ]
}

fn entry(id: &str, artist: &str, v: &[f64]) -> FeatureBankEntry {
    FeatureBankEntry {
        id: id.into(),
        artist: artist.into(),
        vector: v.to_vec(),
    }
}

fn two_artists() -> FeatureBank {
    FeatureBank::new(vec![entry("a", "A", &[0.0, 0.0]), entry("b", "B", &[10.0, 10.0])]).expect("fixture bank")
}

fn analysis_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("analysis.pearson_linear", || close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).map_err(fail)?, 1.0, 1e-15)),
        ("analysis.pearson_antilinear", || close(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).map_err(fail)?, -1.0, 1e-15)),
        ("analysis.pearson_sqrt3_over_2", || {
            close(pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).map_err(fail)?, 3f64.sqrt() / 2.0, 1e-12)
        }),
        ("analysis.histogram_right_closed", || {
            exact(histogram(&[0.0, 0.5, 1.0], 2, 0.0, 1.0).map_err(fail)?.counts, vec![1, 2])
        }),
        ("analysis.histogram_empty", || exact(histogram::<f64>(&[], 3, 0.0, 1.0).map_err(fail)?.counts, vec![0, 0, 0])),
        ("analysis.histogram_overflow", || {
            let h = histogram(&[-1.0, 2.0], 2, 0.0, 1.0).map_err(fail)?;
            exact((h.counts, h.underflow, h.overflow), (vec![0, 0], 1, 1))
        }),
        ("analysis.fit_exact", || {
            let f: LinearFit<f64> = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).map_err(fail)?;
            holds(
                (f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r - 1.0).abs() < 1e-12,
                format!("{f:?}"),
            )
        }),
        ("analysis.fit_constant", || {
            rejects(linear_fit(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), "", 3)
        }),
        ("analysis.fit_classic_vs_sup", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let pairs: Vec<(Image<f64>, Image<f64>)> = style_pastiche_pairs(0, 200, 16);
            let fits = loss_sup_fits(&net, &pairs, &LossConfig::default()).map_err(fail)?;
            let worst = fits.iter().map(|(_, f)| f.r).fold(f64::INFINITY, f64::min);
            holds(worst > 0.9, format!("min r {worst}"))
        }),
        ("analysis.deception_separated", || {
            let st = FeatureBank::new(vec![entry("p", "A", &[1.0, 1.0])]).map_err(fail)?;
            exact(deception_rate(&st, &two_artists()).map_err(fail)?, 1.0)
        }),
        ("analysis.deception_wrong_cluster", || {
            let st = FeatureBank::new(vec![entry("p", "A", &[9.0, 9.0])]).map_err(fail)?;
            exact(deception_rate(&st, &two_artists()).map_err(fail)?, 0.0)
        }),
        ("analysis.deception_mixed", || {
            let st = FeatureBank::new(vec![
                entry("p1", "A", &[1.0, 2.0]),
                entry("p2", "B", &[3.0, 1.0]),
                entry("p3", "B", &[8.0, 9.5]),
                entry("p4", "A", &[7.0, 6.0]),
            ])
            .map_err(fail)?;
            let styles = two_artists();
            let oracle = st
                .entries()
                .iter()
                .filter(|p| {
                    let d = |e: &FeatureBankEntry| e.vector.iter().zip(&p.vector).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    let best = styles.entries().iter().min_by(|a, b| d(a).total_cmp(&d(b))).expect("non-empty");
                    best.artist == p.artist
                })
                .count() as f64
                / 4.0;
            let rate = deception_rate(&st, &styles).map_err(fail)?;
            holds(rate == 0.5 && rate == oracle, format!("rate {rate}, oracle {oracle}"))
        }),
        ("analysis.correlation_aligned", || {
            let ids: Vec<String> = (0..30).map(|k| format!("c{k}__s")).collect();
            let scores: Vec<i8> = (0..30).map(|k| (k % 3) as i8 - 1).collect();
            let samples = ids.iter().zip(&scores).map(|(id, &h)| (id.clone(), vec![h as f64 + 1.0, 2.0 * h as f64])).collect();
            let table = LossTable::new(vec![LayerSpec::unit("a"), LayerSpec::unit("b")], samples).map_err(fail)?;
            let ann: Vec<AnnotationRecord> = ids.iter().zip(&scores).map(|(id, &h)| AnnotationRecord::new(id.clone(), h)).collect::<Result<_>>().map_err(fail)?;
            let rows = correlation_report(&table, &ann).map_err(fail)?;
            let total = rows.iter().find(|r| r.column == "total").expect("total row");
            close(total.r, 1.0, 1e-12)
        }),
        ("analysis.correlation_shuffled", || {
            let mut s = Stream::new(0);
            let losses: Vec<f64> = (0..1000).map(|_| s.uniform()).collect();
            let mut scores: Vec<i8> = losses.iter().map(|l| if *l < 1.0 / 3.0 { -1 } else if *l < 2.0 / 3.0 { 0 } else { 1 }).collect();
            s.shuffle(&mut scores);
            let ids: Vec<String> = (0..1000).map(|k| format!("c{k}__s")).collect();
            let table = LossTable::new(vec![LayerSpec::unit("a")], ids.iter().cloned().zip(losses.iter().map(|l| vec![*l])).collect()).map_err(fail)?;
            let ann: Vec<AnnotationRecord> = ids.iter().zip(&scores).map(|(id, &h)| AnnotationRecord::new(id.clone(), h)).collect::<Result<_>>().map_err(fail)?;
            let rows = correlation_report(&table, &ann).map_err(fail)?;
            let total = rows.iter().find(|r| r.column == "total").expect("total row");
            holds(total.r.abs() < 0.1, format!("r {}", total.r))
        }),
        ("analysis.mc_two_point", || {
            let spec = MomentSpec::new(Sampler::Discrete { values: vec![1.0, 3.0], probs: vec![0.5, 0.5] }).map_err(fail)?;
            let r = mc_expectation_bounds(&spec, &spec, 100_000, 0).map_err(fail)?;
            holds(
                (r.mean - 2.0).abs() <= 3.0 * r.std_error && r.lower == 2.0 && r.upper == 10.0 && r.within,
                format!("mean {} se {} bounds [{}, {}]", r.mean, r.std_error, r.lower, r.upper),
            )
        }),
        ("analysis.mc_point_masses_equal", || {
            let spec = MomentSpec::new(Sampler::PointMass { value: 1.5 }).map_err(fail)?;
            let r = mc_expectation_bounds(&spec, &spec, 1000, 0).map_err(fail)?;
            exact((r.mean, r.lower, r.upper, r.within), (0.0, 0.0, 4.5, true))
        }),
        ("analysis.mc_point_masses_1_4", || {
            let a = MomentSpec::new(Sampler::PointMass { value: 1.0 }).map_err(fail)?;
            let b = MomentSpec::new(Sampler::PointMass { value: 4.0 }).map_err(fail)?;
            let r = mc_expectation_bounds(&a, &b, 1000, 0).map_err(fail)?;
            exact((r.mean, r.lower, r.upper, r.within), (9.0, 9.0, 17.0, true))
        }),
        ("analysis.relaxed_equal_means", || {
            let a = MomentSpec::new(Sampler::Uniform { lo: 1.0, hi: 3.0 }).map_err(fail)?;
            let b = MomentSpec::new(Sampler::PointMass { value: 2.0 }).map_err(fail)?;
            exact(relaxed_bounds(&a, &b, 1.0).map_err(fail)?.0, 0.0)
        }),
        ("analysis.relaxed_direct", || {
            let a = MomentSpec::new(Sampler::PointMass { value: 2.0 }).map_err(fail)?;
            exact(relaxed_bounds(&a, &a, 2.5).map_err(fail)?.1, 20.0)
        }),
        ("analysis.relaxed_lower_below", || {
            let mut s = Stream::new(5);
            for _ in 0..100 {
                let a = MomentSpec::new(random_sampler(&mut s)).map_err(fail)?;
                let b = MomentSpec::new(random_sampler(&mut s)).map_err(fail)?;
                if relaxed_bounds(&a, &b, 1.0).map_err(fail)?.0 > expectation_bounds(&a, &b).0 {
                    return Err(format!("{a:?} vs {b:?}"));
                }
            }
            Ok("100 pairs".into())
        }),
    ]
}

fn io_fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("io.ppm_round_trip", || {
            let image: Image<f64> = random_image(4, 5, 7, 3);
            let back: Image<f64> = ppm::decode(&ppm::encode(&image)).map_err(fail)?;
            let worst = image.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            holds(worst <= 1.0 / 510.0, format!("max deviation {worst:e}"))
        }),
        ("io.ppm_p6_header", || {
            let mut bytes = b"P6 2 1 255\n".to_vec();
            bytes.extend([255, 0, 0, 0, 0, 0]);
            let image: Image<f64> = ppm::decode(&bytes).map_err(fail)?;
            exact((image.shape(), image.data().to_vec()), ((1, 2, 3), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
        }),
        ("io.ppm_maxval", || rejects(ppm::decode::<f64>(b"P5 1 1 65535\n\0\0"), "maxval", 3)),
        ("io.weights_round_trip", || {
            let cfg = NetConfig::default_with_seed(3);
            let net: FeatNet<f64> = featnet::build(&cfg).map_err(fail)?;
            let bytes = weights::encode(&net);
            let back = FeatNet::<f64>::with_parameters(&cfg.layers, weights::decode(&bytes, &cfg).map_err(fail)?).map_err(fail)?;
            exact(weights::encode(&back) == bytes, true)
        }),
        ("io.weights_magic", || {
            let cfg = NetConfig::default_with_seed(3);
            let mut bytes = weights::encode(&featnet::build::<f64>(&cfg).map_err(fail)?);
            bytes[3] = b'2';
            rejects(weights::decode(&bytes, &cfg), "magic", 3)
        }),
        ("io.weights_dims", || {
            let cfg = NetConfig::default_with_seed(3);
            let bytes = weights::encode(&featnet::build::<f64>(&cfg).map_err(fail)?);
            let mut other = cfg.clone();
            other.layers[2] = LayerKind::Conv { in_ch: 8, out_ch: 9, kernel: 3 };
            other.layers[5] = LayerKind::Conv { in_ch: 9, out_ch: 16, kernel: 3 };
            rejects(weights::decode(&bytes, &other), "conv layer 1", 3)
        }),
        ("io.report_round_trip", || {
            let reports = vec![layer_report("b1_r2", &g469(), &gm(2, &[1.0 / 3.0, 0.1, 0.1, 2.0]), 4.0).map_err(fail)?];
            let rows = tables::report_rows("c", "s", &[LayerSpec::unit("b1_r2")], &reports);
            let mut buf = Vec::new();
            tables::write_report(&mut buf, &rows).map_err(fail)?;
            exact(tables::read_report(buf.as_slice()).map_err(fail)? == rows, true)
        }),
        ("io.annotation_domain", || {
            rejects(tables::read_annotations("id,score\na,1\nb,2\n".as_bytes()), "line 3", 3)
        }),
        ("io.feature_rows_unequal", || {
            rejects(tables::read_feature_bank("id,artist,v0,v1\na,A,1,2\nb,B,1\n".as_bytes()), "line", 3)
        }),
        ("io.mismatched_triple", || {
            let net: FeatNet<f64> = featnet::build(&NetConfig::default_with_seed(0)).map_err(fail)?;
            let (c, s, p): (Image<f64>, Image<f64>, Image<f64>) =
                (random_image(1, 16, 16, 3), random_image(2, 16, 16, 3), random_image(3, 8, 16, 3));
            rejects(score_triple(&net, &c, &s, &p, &LossConfig::default()), "16x16x3", 3)
                .and_then(|m| holds(m.contains("8x16x3"), m))
        }),
    ]
}

/// Every fixture, in reporting order.
pub fn fixtures() -> Vec<(&'static str, fn() -> Outcome)> {
    let mut all = tensor_fixtures();
    all.extend(gram_fixtures());
    all.extend(grad_fixtures());
    all.extend(featnet_fixtures());
    all.extend(stylize_fixtures());
    all.extend(analysis_fixtures());
    all.extend(io_fixtures());
    all
}

/// Runs all fixtures in order; a panicking fixture counts as failed.
pub fn run() -> SelftestReport {
    let outcomes = fixtures()
        .into_iter()
        .map(|(name, f)| {
            let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            FixtureOutcome { name, passed, detail }
        })
        .collect();
    SelftestReport { outcomes }
}
