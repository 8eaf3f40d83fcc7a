use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "gramstyle", version, about = "Gram-matrix style losses, bounds and pixel-space stylization")]
pub struct Cli {
    /// Seed for the feature network and every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration (net, loss, optimize, paths).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score a content/style/pastiche triple, or every pastiche in a directory.
    Loss(LossArgs),
    /// Optimize a pastiche for one content/style pair.
    Stylize(StylizeArgs),
    /// Stylize every content against every style.
    Sweep(SweepArgs),
    /// Statistics over a loss report.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Fraction of stylized features whose nearest style shares their artist.
    Deception(DeceptionArgs),
    /// Monte-Carlo check of the expectation bounds for a moment spec.
    Mcbounds(McArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Run the built-in fixture suite.
    Selftest(SelftestArgs),
    /// Write seeded procedural textures.
    Textures(TexturesArgs),
    /// Write the configured network's weights in FNW1 format.
    Weights(WeightsArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Classic,
    Balanced,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Content,
    Noise,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Classic,
    Sup,
    Inf,
    Balanced,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long)]
    pub pastiche: Option<PathBuf>,
    /// Directory with `content/`, `style/` and `pastiche/` subdirectories;
    /// pastiches are named `<content>__<style>.ppm`.
    #[arg(long, conflicts_with_all = ["content", "style", "pastiche"])]
    pub dir: Option<PathBuf>,
    /// Report CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Choose beta so content and style terms start out equal.
    #[arg(long)]
    pub auto_beta: bool,
}

#[derive(Args, Debug)]
pub struct StylizeArgs {
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Output pastiche image.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Interpolate the style target towards the content's own Grams.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub optimize: OptimizeArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Content image; a seeded texture when neither this nor --content-dir is given.
    #[arg(long, conflicts_with = "content_dir")]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub content_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "textures")]
    pub style_dir: Option<PathBuf>,
    /// Use this many seeded procedural textures as styles.
    #[arg(long)]
    pub textures: Option<usize>,
    /// Side length of generated images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Pair the i-th content with the i-th style instead of all pairs.
    #[arg(long)]
    pub zip: bool,
    /// Directory receiving `sweep.csv` and `pastiches/`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub optimize: OptimizeArgs,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Pearson r of each layer column and the weighted total against annotations.
    Corr(CorrArgs),
    /// Histogram of one report column.
    Hist(HistArgs),
    /// Least-squares fit of one metric against another, per tap.
    Fit(FitArgs),
}

#[derive(Args, Debug)]
pub struct CorrArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "balanced")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HistArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value = "balanced")]
    pub metric: MetricArg,
    #[arg(long, default_value = "total")]
    pub tap: String,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value = "sup")]
    pub x: MetricArg,
    #[arg(long, value_enum, default_value = "classic")]
    pub y: MetricArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DeceptionArgs {
    /// Feature bank of stylized images (`id,artist,v0,...`).
    #[arg(long)]
    pub stylized: PathBuf,
    /// Feature bank of style images.
    #[arg(long)]
    pub styles: PathBuf,
}

#[derive(Args, Debug)]
pub struct McArgs {
    /// JSON object `{"a": sampler, "b": sampler}`.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    /// Constant of the variance-free bounds; reported when given.
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Also check the pixel gradient through the network on 8x8 images.
    #[arg(long)]
    pub network: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Write the fixture CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TexturesArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
