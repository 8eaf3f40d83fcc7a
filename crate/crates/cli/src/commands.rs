use std::io::Write;
use std::path::{Path, PathBuf};

use gramstyle::analysis::{
    correlation_report, deception_rate, histogram, linear_fit, mc_expectation_bounds, relaxed_bounds, MomentSpec,
    Sampler,
};
use gramstyle::featnet::{self, InitSpec};
use gramstyle::io::config::RunConfig;
use gramstyle::io::tables::{self, fmt_f64, Metric, ReportRow, TOTAL_TAP};
use gramstyle::io::{ppm, valid_id, weights};
use gramstyle::rng::derive_seed;
use gramstyle::stylize::{
    interpolation_baseline, score_triple, stylize, sweep, InitMode, LossKind, OptimizeConfig, Pairing,
};
use gramstyle::texture::procedural_texture;
use gramstyle::{selftest, Error, FeatNet, Image, Result};

use crate::*;

pub fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.optimize.seed = seed;
        if let InitSpec::Seeded { seed: s, .. } = &mut cfg.net.init {
            *s = seed;
        }
    }
    let seed = cfg.optimize.seed;
    match cli.command {
        Command::Loss(a) => loss(&cfg, a),
        Command::Stylize(a) => run_stylize(&cfg, a),
        Command::Sweep(a) => run_sweep(&cfg, seed, a),
        Command::Analyze(a) => analyze(&cfg, a),
        Command::Deception(a) => deception(a),
        Command::Mcbounds(a) => mcbounds(seed, a),
        Command::Gradcheck(a) => gradcheck(seed, a),
        Command::Selftest(a) => run_selftest(a),
        Command::Textures(a) => textures(seed, a),
        Command::Weights(a) => {
            weights::write_weights(&net(&cfg)?, &a.out)?;
            Ok(0)
        }
    }
}

fn net(cfg: &RunConfig) -> Result<FeatNet> {
    featnet::build(&cfg.net)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Usage(format!("--{name} is required (or set paths.{name} in the config)")))
}

fn image_id(path: &Path) -> Result<String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if valid_id(stem) {
        Ok(stem.to_string())
    } else {
        Err(Error::Data(format!(
            "{}: file name must be an id of [A-Za-z0-9_.-]",
            path.display()
        )))
    }
}

/// `.ppm`/`.pgm` files of a directory, sorted by name.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("ppm" | "pgm")))
        .collect();
    files.sort();
    Ok(files)
}

fn read_dir_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .ppm or .pgm images", dir.display())));
    }
    files.iter().map(|p| Ok((image_id(p)?, ppm::read_image(p)?))).collect()
}

fn find_image(dir: &Path, id: &str) -> Result<PathBuf> {
    ["ppm", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Data(format!("{}: no image named {id}", dir.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn loss(cfg: &RunConfig, a: LossArgs) -> Result<u8> {
    let net = net(cfg)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut score = |content: &Path, style: &Path, pastiche: &Path, cid: &str, sid: &str| -> Result<()> {
        let (c, s, p): (Image, Image, Image) =
            (ppm::read_image(content)?, ppm::read_image(style)?, ppm::read_image(pastiche)?);
        let reports = score_triple(&net, &c, &s, &p, &cfg.loss).map_err(|e| match e {
            Error::Dimension(m) => Error::Dimension(format!("{}: {m}", pastiche.display())),
            other => other,
        })?;
        rows.extend(tables::report_rows(cid, sid, &cfg.loss.style_layers, &reports));
        Ok(())
    };
    match a.dir {
        Some(dir) => {
            let pastiches = image_files(&dir.join("pastiche"))?;
            if pastiches.is_empty() {
                return Err(Error::Data(format!("{}: no pastiche images", dir.join("pastiche").display())));
            }
            for p in pastiches {
                let id = image_id(&p)?;
                let (cid, sid) = id
                    .split_once("__")
                    .ok_or_else(|| Error::Data(format!("{}: expected <content>__<style>", p.display())))?;
                let c = find_image(&dir.join("content"), cid)?;
                let s = find_image(&dir.join("style"), sid)?;
                score(&c, &s, &p, cid, sid)?;
            }
        }
        None => {
            let c = required(a.content, &cfg.paths.content, "content")?;
            let s = required(a.style, &cfg.paths.style, "style")?;
            let p = required(a.pastiche, &cfg.paths.pastiche, "pastiche")?;
            let (cid, sid) = (image_id(&c)?, image_id(&s)?);
            score(&c, &s, &p, &cid, &sid)?;
        }
    }
    let mut buf = Vec::new();
    tables::write_report(&mut buf, &rows)?;
    emit(a.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))?;
    Ok(0)
}

fn optimize_config(cfg: &RunConfig, a: &OptimizeArgs) -> Result<OptimizeConfig> {
    let mut o = cfg.optimize_config();
    if let Some(v) = a.steps {
        o.steps = v;
    }
    if let Some(v) = a.step_size {
        o.step_size = v;
    }
    if let Some(v) = a.loss {
        o.loss_kind = match v {
            LossArg::Classic => LossKind::Classic,
            LossArg::Balanced => LossKind::Balanced,
        };
    }
    if let Some(v) = a.init {
        o.init = match v {
            InitArg::Content => InitMode::Content,
            InitArg::Noise => InitMode::Noise,
        };
    }
    if let Some(v) = a.beta {
        o.loss.beta = v;
    }
    o.auto_beta |= a.auto_beta;
    o.validate()?;
    Ok(o)
}

fn run_stylize(cfg: &RunConfig, a: StylizeArgs) -> Result<u8> {
    let net = net(cfg)?;
    let content: Image = ppm::read_image(&required(a.content, &cfg.paths.content, "content")?)?;
    let style: Image = ppm::read_image(&required(a.style, &cfg.paths.style, "style")?)?;
    let out = required(a.out, &cfg.paths.output, "out")?;
    let o = optimize_config(cfg, &a.optimize)?;
    let result = match a.alpha {
        Some(alpha) => interpolation_baseline(&net, &content, &style, alpha, &o)?,
        None => stylize(&net, &content, &style, &o)?,
    };
    ppm::write_image(&result.pastiche, &out)?;
    if let Some(t) = a.trajectory.or_else(|| cfg.paths.trajectory.clone()) {
        let (head, rows) = tables::trajectory_table(&result.trajectory);
        tables::write_table(&t, &head, &rows)?;
    }
    let last = result.final_record();
    eprintln!(
        "beta {} total {} content {} style classic {} balanced {}",
        result.beta, last.total, last.content, last.style_classic, last.style_balanced
    );
    Ok(0)
}

fn run_sweep(cfg: &RunConfig, seed: u64, a: SweepArgs) -> Result<u8> {
    let net = net(cfg)?;
    let contents = match (&a.content, &a.content_dir) {
        (Some(p), _) => vec![(image_id(p)?, ppm::read_image(p)?)],
        (None, Some(d)) => read_dir_images(d)?,
        (None, None) => vec![("content".to_string(), procedural_texture(derive_seed(seed, &[0]), a.size, a.size, 3))],
    };
    let styles = match (&a.style_dir, a.textures) {
        (Some(d), _) => read_dir_images(d)?,
        (None, Some(n)) => (0..n)
            .map(|k| {
                let t = procedural_texture(derive_seed(seed, &[1, k as u64]), a.size, a.size, 3);
                (format!("texture_{k:03}"), t)
            })
            .collect(),
        (None, None) => return Err(Error::Usage("sweep needs --style-dir or --textures".into())),
    };
    let o = optimize_config(cfg, &a.optimize)?;
    let pairing = if a.zip { Pairing::Zipped } else { Pairing::AllPairs };
    let result = sweep(&net, &contents, &styles, &o, pairing)?;
    let pdir = a.out_dir.join("pastiches");
    create_dir(&pdir)?;
    for row in &result.rows {
        ppm::write_image(&row.pastiche, &pdir.join(format!("{}.ppm", tables::sample_id(&row.content_id, &row.style_id))))?;
    }
    let (head, rows) = tables::sweep_table(&result);
    tables::write_table(&a.out_dir.join("sweep.csv"), &head, &rows)?;
    eprintln!(
        "{} tasks; coefficient of variation classic {} balanced {}",
        result.rows.len(),
        gramstyle::stylize::coefficient_of_variation(&result.classic_totals()),
        gramstyle::stylize::coefficient_of_variation(&result.balanced_totals())
    );
    Ok(0)
}

fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::Classic => Metric::Classic,
        MetricArg::Sup => Metric::Sup,
        MetricArg::Inf => Metric::Inf,
        MetricArg::Balanced => Metric::Balanced,
    }
}

fn analyze(cfg: &RunConfig, a: AnalyzeCommand) -> Result<u8> {
    match a {
        AnalyzeCommand::Corr(a) => {
            let rows = tables::read_report_file(&a.report)?;
            let ann = tables::read_annotations_file(&a.annotations)?;
            let table = tables::loss_table(&rows, metric(a.metric), &cfg.loss.style_layers)?;
            let out: Vec<Vec<String>> = correlation_report(&table, &ann)?
                .into_iter()
                .map(|r| vec![r.column, fmt_f64(r.r), r.n.to_string()])
                .collect();
            emit(a.out.as_deref(), &tables::table_to_string(&header(&["column", "r", "n"]), &out))?;
        }
        AnalyzeCommand::Hist(a) => {
            let rows = tables::read_report_file(&a.report)?;
            let m = metric(a.metric);
            let values: Vec<f64> = rows.iter().filter(|r| r.tap == a.tap).map(|r| m.of(r)).collect();
            if values.is_empty() {
                return Err(Error::Data(format!("{}: no rows for tap {}", a.report.display(), a.tap)));
            }
            let h = histogram(&values, a.bins, a.lo, a.hi)?;
            let width = (a.hi - a.lo) / a.bins as f64;
            let mut out = vec![vec!["underflow".into(), String::new(), fmt_f64(a.lo), h.underflow.to_string()]];
            for (i, c) in h.counts.iter().enumerate() {
                let lo = a.lo + width * i as f64;
                let hi = if i + 1 == a.bins { a.hi } else { lo + width };
                out.push(vec![format!("bin{i}"), fmt_f64(lo), fmt_f64(hi), c.to_string()]);
            }
            out.push(vec!["overflow".into(), fmt_f64(a.hi), String::new(), h.overflow.to_string()]);
            emit(a.out.as_deref(), &tables::table_to_string(&header(&["bucket", "lo", "hi", "count"]), &out))?;
        }
        AnalyzeCommand::Fit(a) => {
            let rows = tables::read_report_file(&a.report)?;
            let (mx, my) = (metric(a.x), metric(a.y));
            let mut taps: Vec<&str> = Vec::new();
            for r in &rows {
                if !taps.contains(&r.tap.as_str()) {
                    taps.push(&r.tap);
                }
            }
            let mut out = Vec::new();
            for t in taps.iter().filter(|t| **t != TOTAL_TAP).chain(taps.iter().filter(|t| **t == TOTAL_TAP)) {
                let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.tap == *t).collect();
                let x: Vec<f64> = sel.iter().map(|r| mx.of(r)).collect();
                let y: Vec<f64> = sel.iter().map(|r| my.of(r)).collect();
                let f = linear_fit(&x, &y)?;
                out.push(vec![t.to_string(), fmt_f64(f.slope), fmt_f64(f.intercept), fmt_f64(f.r), x.len().to_string()]);
            }
            let head = header(&["tap", "slope", "intercept", "r", "n"]);
            emit(a.out.as_deref(), &tables::table_to_string(&head, &out))?;
        }
    }
    Ok(0)
}

fn deception(a: DeceptionArgs) -> Result<u8> {
    let stylized = tables::read_feature_bank_file(&a.stylized)?;
    let styles = tables::read_feature_bank_file(&a.styles)?;
    println!("{}", deception_rate(&stylized, &styles)?);
    Ok(0)
}

fn mcbounds(seed: u64, a: McArgs) -> Result<u8> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Spec {
        a: Sampler,
        b: Sampler,
    }
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: Spec =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", a.spec.display())))?;
    let (sa, sb) = (MomentSpec::new(spec.a)?, MomentSpec::new(spec.b)?);
    let r = mc_expectation_bounds(&sa, &sb, a.trials, seed)?;
    let mut report = serde_json::json!({
        "mean": r.mean,
        "std_error": r.std_error,
        "lower": r.lower,
        "upper": r.upper,
        "within": r.within,
        "trials": r.trials,
        "seed": seed,
    });
    if let Some(k) = a.k {
        let (lo, hi) = relaxed_bounds(&sa, &sb, k)?;
        report["relaxed_lower"] = lo.into();
        report["relaxed_upper"] = hi.into();
        report["k"] = k.into();
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
    Ok(if r.within { 0 } else { 1 })
}

fn gradcheck(seed: u64, a: GradcheckArgs) -> Result<u8> {
    let s = selftest::gradcheck(seed, a.instances)?;
    println!("max relative error {:e}", s.max_error());
    eprintln!(
        "classic {:e} balanced {:e} content {:e} stop-gradient {:e} over {} instances",
        s.classic, s.balanced, s.content, s.stop_gradient, s.instances
    );
    let mut ok = s.max_error() <= a.tolerance;
    if a.network {
        let r = selftest::network_gradcheck(seed, seed, a.instances)?;
        println!("network max relative error {:e}", r.max_error());
        eprintln!("{} pixel coordinates checked, {} skipped at ReLU kinks", r.checked, r.kinks);
        ok &= r.max_error() <= 1e-4;
    }
    Ok(if ok { 0 } else { 1 })
}

fn run_selftest(a: SelftestArgs) -> Result<u8> {
    let report = selftest::run();
    emit(a.out.as_deref(), &report.to_csv())?;
    match report.first_failure() {
        None => {
            eprintln!("{} fixtures passed", report.outcomes.len());
            Ok(0)
        }
        Some(f) => {
            eprintln!(
                "first failing fixture: {} ({}); {} of {} failed",
                f.name,
                f.detail,
                report.failures(),
                report.outcomes.len()
            );
            Ok(1)
        }
    }
}

fn textures(seed: u64, a: TexturesArgs) -> Result<u8> {
    create_dir(&a.out_dir)?;
    for k in 0..a.count {
        let t: Image = procedural_texture(derive_seed(seed, &[1, k as u64]), a.size, a.size, 3);
        ppm::write_image(&t, &a.out_dir.join(format!("texture_{k:03}.ppm")))?;
    }
    Ok(0)
}
