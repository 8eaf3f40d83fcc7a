//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use gramstyle::analysis::*;
use gramstyle::featnet::{self, NetConfig};
use gramstyle::grad::{balanced_style_grad, classic_style_grad};
use gramstyle::gram::*;
use gramstyle::io::{ppm, tables};
use gramstyle::rng::{derive_seed, Stream};
use gramstyle::selftest;
use gramstyle::stylize::{coefficient_of_variation, sweep, LossKind, OptimizeConfig, Pairing};
use gramstyle::texture::{procedural_texture, style_pastiche_pairs};
use gramstyle::{FeatNet, FeatureMap, GramMatrix, Image};

const SEED: u64 = 0;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

/// Non-negative map with a log-uniform scale and a random fraction of zeros.
fn random_map(s: &mut Stream, h: usize, w: usize, c: usize) -> FeatureMap {
    let scale = s.range(1e-3f64.ln(), 1e3f64.ln()).exp();
    let sparsity = s.range(0.0, 0.9);
    let data = (0..h * w * c)
        .map(|_| if s.uniform() < sparsity { 0.0 } else { s.uniform() * scale })
        .collect();
    FeatureMap::new_nonneg(h, w, c, data).unwrap()
}

fn random_pair(seed: u64, k: u64) -> (FeatureMap, FeatureMap) {
    let mut s = Stream::keyed(seed, &[k]);
    let c = 1 + s.below(32);
    let (h1, w1) = (1 + s.below(16), 1 + s.below(16));
    let (h2, w2) = (1 + s.below(16), 1 + s.below(16));
    (random_map(&mut s, h1, w1, c), random_map(&mut s, h2, w2, c))
}

fn criterion_1() -> Verdict {
    let mut violations = 0;
    let mut worst_slack: f64 = 0.0;
    for k in 0..10_000 {
        let (fs, fp) = random_pair(SEED, k);
        let n = norm_constant(&fp, Normalization::ChannelsSquared);
        let (gs, gp) = (gram(&fs), gram(&fp));
        let classic = classic_layer_loss(&gs, &gp, n).unwrap();
        let sup = sup_bound(&gs, &gp, n).unwrap();
        let inf = inf_bound(&gs, &gp, n).unwrap();
        let below = (inf - classic) / classic.max(inf).max(f64::MIN_POSITIVE);
        let above = (classic - sup) / sup.max(f64::MIN_POSITIVE);
        worst_slack = worst_slack.max(below).max(above);
        if below > 1e-9 || above > 1e-9 {
            violations += 1;
        }
    }

    let mut s = Stream::keyed(SEED, &[1, 1]);
    let mut worst_equality: f64 = 0.0;
    for _ in 0..1000 {
        // disjoint channel supports give disjoint Gram supports: classic = sup
        let (h, w, c) = (1 + s.below(16), 1 + s.below(16), 2 + s.below(31));
        let split = 1 + s.below(c - 1);
        let base = random_map(&mut s, h, w, c);
        let mask = |keep_low: bool| -> FeatureMap {
            let d = base
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| if ((i % c) < split) == keep_low { *v } else { 0.0 })
                .collect();
            FeatureMap::new_nonneg(h, w, c, d).unwrap()
        };
        let (gs, gp) = (gram(&mask(true)), gram(&mask(false)));
        let n = (c * c) as f64;
        worst_equality = worst_equality.max(rel(
            classic_layer_loss(&gs, &gp, n).unwrap(),
            sup_bound(&gs, &gp, n).unwrap(),
        ));

        // parallel Grams: classic = inf
        let fs = random_map(&mut s, h, w, c);
        let t = if s.uniform() < 0.5 { s.range(0.0, 0.8) } else { s.range(1.5, 4.0) };
        let gs = gram(&fs);
        let gp = GramMatrix::new(c, gs.data().iter().map(|v| v * t * t).collect(), true).unwrap();
        worst_equality = worst_equality.max(rel(
            classic_layer_loss(&gs, &gp, n).unwrap(),
            inf_bound(&gs, &gp, n).unwrap(),
        ));
    }
    verdict(
        violations == 0 && worst_equality <= 1e-12,
        format!(
            "10000 pairs, {violations} violations (worst slack {worst_slack:.2e}); \
             2000 equality cases, worst relative gap {worst_equality:.2e}"
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut out_of_range = 0;
    let mut worst_drift: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..10_000 {
        let (fs, fp) = random_pair(SEED, k);
        let at = |s: f64| {
            let (a, b) = (fs.scaled(s), fp.scaled(s));
            let n = norm_constant(&b, Normalization::ChannelsSquared);
            balanced_layer_loss(&gram(&a), &gram(&b), n).unwrap()
        };
        let base = at(1.0);
        lo = lo.min(base);
        hi = hi.max(base);
        if !(0.0..=1.0).contains(&base) {
            out_of_range += 1;
        }
        for s in [0.1, 7.0] {
            worst_drift = worst_drift.max(rel(at(s), base));
        }
    }
    verdict(
        out_of_range == 0 && worst_drift < 1e-12,
        format!("range [{lo:.4}, {hi:.4}], {out_of_range} outside [0,1]; worst scaling drift {worst_drift:.2e}"),
    )
}

fn criterion_3() -> Verdict {
    let features = selftest::gradcheck(SEED, 100).unwrap();
    let network = selftest::network_gradcheck(SEED, SEED, 100).unwrap();

    let mut worst_identity: f64 = 0.0;
    for k in 0..100 {
        let (fs, fp) = random_pair(derive_seed(SEED, &[3]), k);
        let n = norm_constant(&fp, Normalization::ChannelsSquared);
        let sup = sup_bound(&gram(&fs), &gram(&fp), n).unwrap();
        let classic = classic_style_grad(&fs, &fp, n).unwrap();
        let balanced = balanced_style_grad(&fs, &fp, n).unwrap();
        for (b, c) in balanced.data().iter().zip(classic.data()) {
            worst_identity = worst_identity.max(rel(*b, c / sup));
        }
    }
    verdict(
        features.max_error() <= 1e-6 && network.max_error() <= 1e-4 && worst_identity <= 1e-12,
        format!(
            "feature level: classic {:.2e}, balanced {:.2e}, content {:.2e}; \
             through network: classic {:.2e}, balanced {:.2e} over {} pixels ({} skipped at ReLU kinks); \
             stop-gradient identity {worst_identity:.2e}",
            features.classic, features.balanced, features.content, network.classic, network.balanced,
            network.checked, network.kinks
        ),
    )
}

fn criterion_4(net: &FeatNet) -> Verdict {
    let pairs: Vec<(Image, Image)> = style_pastiche_pairs(SEED, 200, 32);
    let fits = loss_sup_fits(net, &pairs, &LossConfig::default()).unwrap();
    let ok = fits.iter().all(|(_, f)| f.r > 0.9);
    let rs: Vec<String> = fits.iter().map(|(t, f)| format!("{t} r={:.4}", f.r)).collect();
    verdict(ok, format!("200 pairs: {}", rs.join(", ")))
}

/// CSV text and pastiche files of the 1 content x 20 textures sweep.
struct SweepRun {
    csv: String,
    pastiches: Vec<(String, Vec<u8>)>,
    classic_cv: f64,
    balanced_cv: f64,
    classic_spread: f64,
    layer_range: (f64, f64),
}

fn ist_sweep(net: &FeatNet, threads: usize) -> SweepRun {
    let content: Image = procedural_texture(derive_seed(SEED, &[0]), 64, 64, 3);
    let styles: Vec<(String, Image)> = (0..20u64)
        .map(|k| (format!("texture_{k:03}"), procedural_texture(derive_seed(SEED, &[1, k]), 64, 64, 3)))
        .collect();
    let cfg = OptimizeConfig {
        steps: 200,
        seed: SEED,
        loss_kind: LossKind::Balanced,
        ..OptimizeConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let result = pool
        .install(|| sweep(net, &[("content".to_string(), content)], &styles, &cfg, Pairing::AllPairs))
        .unwrap();

    let dir = tempfile::TempDir::new().unwrap();
    let (head, rows) = tables::sweep_table(&result);
    let csv_path = dir.path().join("sweep.csv");
    tables::write_table(&csv_path, &head, &rows).unwrap();
    let pastiches = result
        .rows
        .iter()
        .map(|r| {
            let name = format!("{}.ppm", tables::sample_id(&r.content_id, &r.style_id));
            let path = dir.path().join(&name);
            ppm::write_image(&r.pastiche, &path).unwrap();
            (name, std::fs::read(path).unwrap())
        })
        .collect();
    let layer_values = result.rows.iter().flat_map(|r| r.layers.iter().map(|l| l.balanced));
    let layer_range = layer_values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    SweepRun {
        csv: std::fs::read_to_string(csv_path).unwrap(),
        pastiches,
        classic_cv: coefficient_of_variation(&result.classic_totals()),
        classic_spread: {
            let t = result.classic_totals();
            t.iter().cloned().fold(0.0, f64::max) / t.iter().cloned().fold(f64::INFINITY, f64::min)
        },
        balanced_cv: coefficient_of_variation(&result.balanced_totals()),
        layer_range,
    }
}

fn criterion_5(run: &SweepRun) -> Verdict {
    let (lo, hi) = run.layer_range;
    verdict(
        run.classic_cv > run.balanced_cv && lo >= 0.0 && hi <= 1.0,
        format!(
            "CV classic {:.4} vs balanced {:.4}; classic max/min {:.2e}; per-layer balanced in [{lo:.3e}, {hi:.4}]",
            run.classic_cv, run.balanced_cv, run.classic_spread
        ),
    )
}

fn criterion_6() -> Verdict {
    let two_point = MomentSpec::new(Sampler::Discrete {
        values: vec![1.0, 3.0],
        probs: vec![0.5, 0.5],
    })
    .unwrap();
    let r = mc_expectation_bounds(&two_point, &two_point, 100_000, SEED).unwrap();
    let exact = (r.mean - 2.0).abs() <= 3.0 * r.std_error && r.lower == 2.0 && r.upper == 10.0 && r.within;

    let mut s = Stream::keyed(SEED, &[6]);
    let mut contained = 0;
    for k in 0..100u64 {
        let a = MomentSpec::new(random_sampler(&mut s)).unwrap();
        let b = MomentSpec::new(random_sampler(&mut s)).unwrap();
        if mc_expectation_bounds(&a, &b, 100_000, derive_seed(SEED, &[6, k])).unwrap().within {
            contained += 1;
        }
    }
    verdict(
        exact && contained >= 95,
        format!(
            "two-point: mean {:.5} +- {:.5} (3 se), bounds [{}, {}], within {}; random pairs contained {contained}/100",
            r.mean,
            3.0 * r.std_error,
            r.lower,
            r.upper,
            r.within
        ),
    )
}

fn bank(entries: Vec<FeatureBankEntry>) -> FeatureBank {
    FeatureBank::new(entries).unwrap()
}

fn entry(id: String, artist: &str, vector: Vec<f64>) -> FeatureBankEntry {
    FeatureBankEntry {
        id,
        artist: artist.into(),
        vector,
    }
}

fn criterion_7() -> Verdict {
    let mut s = Stream::keyed(SEED, &[7]);
    let mut cluster = |prefix: &str, artist: &str, center: f64, n: usize| -> Vec<FeatureBankEntry> {
        (0..n)
            .map(|i| entry(format!("{prefix}{i}"), artist, (0..16).map(|_| center + s.range(-1.0, 1.0)).collect()))
            .collect()
    };
    let mut styles = cluster("sa", "A", 0.0, 50);
    styles.extend(cluster("sb", "B", 10.0, 50));
    let styles = bank(styles);
    let mut stylized = cluster("pa", "A", 0.0, 40);
    stylized.extend(cluster("pb", "B", 10.0, 40));
    let swapped: Vec<FeatureBankEntry> = stylized
        .iter()
        .map(|e| entry(e.id.clone(), if e.artist == "A" { "B" } else { "A" }, e.vector.clone()))
        .collect();
    let separated = deception_rate(&bank(stylized), &styles).unwrap();
    let adversarial = deception_rate(&bank(swapped), &styles).unwrap();

    // small integer coordinates force exact distance ties
    let artists = ["A", "B", "C", "D", "E"];
    let mut random_bank = |prefix: &str, n: usize| -> Vec<FeatureBankEntry> {
        (0..n)
            .map(|i| {
                let artist = artists[s.below(artists.len())];
                entry(format!("{prefix}{i:04}"), artist, (0..16).map(|_| s.below(3) as f64).collect())
            })
            .collect()
    };
    let style_entries = random_bank("s", 300);
    let mut stylized_entries = random_bank("p", 1000);
    // a few exact duplicates of style vectors, so ties occur at distance zero too
    for (i, e) in stylized_entries.iter_mut().take(50).enumerate() {
        e.vector = style_entries[i * 3].vector.clone();
    }
    let hits = stylized_entries
        .iter()
        .filter(|p| {
            let mut best: Option<(f64, &FeatureBankEntry)> = None;
            for e in &style_entries {
                let d: f64 = e.vector.iter().zip(&p.vector).map(|(a, b)| (a - b) * (a - b)).sum();
                let better = match best {
                    None => true,
                    Some((bd, be)) => d < bd || (d == bd && e.id < be.id),
                };
                if better {
                    best = Some((d, e));
                }
            }
            best.unwrap().1.artist == p.artist
        })
        .count();
    let oracle = hits as f64 / stylized_entries.len() as f64;
    let rate = deception_rate(&bank(stylized_entries), &bank(style_entries)).unwrap();
    verdict(
        separated == 1.0 && adversarial == 0.0 && rate == oracle,
        format!("separated {separated}, swapped {adversarial}, random 1000x16: rate {rate} vs oracle {oracle}"),
    )
}

fn total_r(rows: &[tables::ReportRow], annotations: &[AnnotationRecord]) -> f64 {
    let table = tables::loss_table(rows, tables::Metric::Classic, &[]).unwrap();
    let report = correlation_report(&table, annotations).unwrap();
    report.iter().find(|r| r.column == tables::TOTAL_TAP).unwrap().r
}

/// Report rows for two layers, passed through the CSV writer and reader.
fn report_round_trip(samples: &[(String, f64, f64)]) -> Vec<tables::ReportRow> {
    let mut rows = Vec::new();
    for (id, a, b) in samples {
        for (tap, v) in [("l1", a), ("l2", b)] {
            rows.push(tables::ReportRow {
                content_id: id.clone(),
                style_id: "style".into(),
                tap: tap.into(),
                classic: *v,
                sup: *v,
                inf: 0.0,
                balanced: 0.0,
            });
        }
    }
    let mut buf = Vec::new();
    tables::write_report(&mut buf, &rows).unwrap();
    tables::read_report(buf.as_slice()).unwrap()
}

fn criterion_8() -> Verdict {
    let mut s = Stream::keyed(SEED, &[8]);
    // layer losses are noisy, their sum tracks the annotation exactly
    let scores: Vec<i8> = (0..300).map(|_| s.below(3) as i8 - 1).collect();
    let samples: Vec<(String, f64, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let e = s.range(-0.5, 0.5);
            (format!("c{i}"), h as f64 + 2.0 + e, h as f64 + 2.0 - e)
        })
        .collect();
    let ann: Vec<AnnotationRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &h)| AnnotationRecord::new(tables::sample_id(&format!("c{i}"), "style"), h).unwrap())
        .collect();
    let aligned = total_r(&report_round_trip(&samples), &ann);

    let losses: Vec<f64> = (0..1000).map(|_| s.range(0.0, 1.0)).collect();
    let mut order: Vec<usize> = (0..1000).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut scores = vec![0i8; 1000];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = (rank * 3 / 1000) as i8 - 1;
    }
    s.shuffle(&mut scores);
    let samples: Vec<(String, f64, f64)> = losses.iter().enumerate().map(|(i, l)| (format!("c{i}"), *l, *l)).collect();
    let ann: Vec<AnnotationRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &h)| AnnotationRecord::new(tables::sample_id(&format!("c{i}"), "style"), h).unwrap())
        .collect();
    let shuffled = total_r(&report_round_trip(&samples), &ann);
    verdict(
        (aligned - 1.0).abs() <= 1e-12 && shuffled.abs() < 0.1,
        format!("aligned total r {aligned:.15}, shuffled n=1000 r {shuffled:.4}"),
    )
}

fn criterion_9(first: &SweepRun, second: &SweepRun) -> Verdict {
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(selftest::run);
    let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(selftest::run);
    let selftest_same = a.to_csv() == b.to_csv();
    let csv_same = first.csv == second.csv;
    let pastiches_same = first.pastiches == second.pastiches;
    verdict(
        selftest_same && csv_same && pastiches_same && a.passed(),
        format!(
            "selftest CSV identical {selftest_same} ({} fixtures, all passed {}); sweep CSV identical {csv_same}; \
             {} pastiche files identical {pastiches_same} (1 vs 4 threads)",
            a.outcomes.len(),
            a.passed(),
            first.pastiches.len()
        ),
    )
}

fn report(id: usize, name: &str, budget: Duration, elapsed: Duration, v: Verdict) -> bool {
    let in_time = elapsed < budget;
    let ok = v.ok && in_time;
    println!(
        "{} criterion {id} ({name}): {} [{:.1}s of {}s]",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn main() {
    let net: FeatNet = featnet::build(&NetConfig::default_with_seed(SEED)).unwrap();
    let mut all = true;
    let secs = Duration::from_secs;

    let timed = |f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };
    let (v, t) = timed(&criterion_1);
    all &= report(1, "bound containment", secs(10), t, v);
    let (v, t) = timed(&criterion_2);
    all &= report(2, "balanced range and scale invariance", secs(10), t, v);
    let (v, t) = timed(&criterion_3);
    all &= report(3, "gradient correctness", secs(60), t, v);
    let (v, t) = timed(&|| criterion_4(&net));
    all &= report(4, "classic loss tracks its supremum", secs(30), t, v);

    let t = Instant::now();
    let first = ist_sweep(&net, 1);
    let sweep_time = t.elapsed();
    all &= report(5, "loss spread across styles", secs(15 * 60), sweep_time, criterion_5(&first));

    let (v, t) = timed(&criterion_6);
    all &= report(6, "Monte-Carlo expectation bounds", secs(30), t, v);
    let (v, t) = timed(&criterion_7);
    all &= report(7, "deception rate", secs(10), t, v);
    let (v, t) = timed(&criterion_8);
    all &= report(8, "correlation pipeline", secs(5), t, v);

    let t = Instant::now();
    let second = ist_sweep(&net, 4);
    let v = criterion_9(&first, &second);
    // the budget covers one repeated sweep plus two selftest runs
    all &= report(9, "determinism", secs(15 * 60), t.elapsed(), v);

    if !all {
        std::process::exit(1);
    }
}
