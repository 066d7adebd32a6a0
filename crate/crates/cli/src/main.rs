use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use dss_core::dss::{
    decode_banks, encode_bank, BnMode, ForwardOptions, Network, NetworkSpec, NetworkWeights,
};
use dss_core::equivariance::{sweep, EquivarianceConfig};
use dss_core::image::{read_pnm, write_pnm};
use dss_core::kernels::{
    alpha_kernel_1d, binomial_kernel, default_radius, discrete_gaussian_1d, sampled_gaussian_1d,
    SpatialBoundary,
};
use dss_core::numfmt::format_sig;
use dss_core::scalespace::{downsample_demo, lift_with, read_stack, write_stack, LiftOptions};

/// Maximum number of levels accepted on the command line.
const MAX_LEVELS: usize = 8;

#[derive(Parser)]
#[command(name = "dss", version, about = "Scale-spaces and scale-equivariant networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the taps of a 1-D smoothing kernel.
    Kernel(KernelArgs),
    /// Lift an image to a scale-space stack.
    Lift(LiftArgs),
    /// Run a network over a stack.
    Run(RunArgs),
    /// Measure the scale-equivariance error of a network.
    Equicheck(EquicheckArgs),
    /// Compare naive and band-limited subsampling.
    Downsample(DownsampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    DiscreteGaussian,
    Binomial,
    SampledGaussian,
    Alpha,
}

#[derive(Clone, Copy, ValueEnum)]
enum Boundary {
    Zero,
    Periodic,
}

impl From<Boundary> for SpatialBoundary {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Zero => SpatialBoundary::Zero,
            Boundary::Periodic => SpatialBoundary::Periodic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BnArg {
    Train,
    Eval,
}

impl From<BnArg> for BnMode {
    fn from(b: BnArg) -> Self {
        match b {
            BnArg::Train => BnMode::Train,
            BnArg::Eval => BnMode::Eval,
        }
    }
}

#[derive(clap::Args)]
struct KernelArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Scale (variance for Gaussians).
    #[arg(long)]
    t: Option<f64>,
    /// Binomial order.
    #[arg(long)]
    n: Option<u32>,
    /// Exponent of the alpha family.
    #[arg(long)]
    alpha: Option<f64>,
    /// Truncation radius; defaults to ceil(4 sqrt(t)).
    #[arg(long)]
    radius: Option<usize>,
    /// Odd period of the alpha kernel.
    #[arg(long)]
    length: Option<usize>,
    /// Rescale the taps to unit sum.
    #[arg(long)]
    normalized: bool,
}

#[derive(clap::Args)]
struct LiftArgs {
    /// PGM or PPM image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 0.25)]
    s0: f64,
    /// Kernel radius in standard deviations.
    #[arg(long, default_value_t = 4.0)]
    radius_sigmas: f64,
    #[arg(long, value_enum, default_value_t = Boundary::Zero)]
    boundary: Boundary,
    /// Output stack (DSS1); scales go to a `.meta` file next to it.
    #[arg(long)]
    output: PathBuf,
    /// Directory for one PGM/PPM preview per level.
    #[arg(long)]
    preview_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Input stack (DSS1).
    #[arg(long)]
    stack: PathBuf,
    /// Network description.
    #[arg(long)]
    spec: PathBuf,
    /// Concatenated DSSW records, one per filter bank.
    #[arg(long, conflicts_with = "random_seed")]
    weights: Option<PathBuf>,
    /// Draw near-identity weights from this seed instead of reading a file.
    #[arg(long)]
    random_seed: Option<u64>,
    /// Noise level of the near-identity weights.
    #[arg(long, default_value_t = 1e-2)]
    noise_std: f64,
    #[arg(long, value_enum, default_value_t = BnArg::Eval)]
    bn_mode: BnArg,
    #[arg(long, value_enum, default_value_t = Boundary::Zero)]
    boundary: Boundary,
    /// Base scale when the stack has no `.meta` file.
    #[arg(long, default_value_t = 0.25)]
    s0: f64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the weights that were used.
    #[arg(long)]
    save_weights: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EquicheckArgs {
    /// PGM or PPM image.
    #[arg(long)]
    image: PathBuf,
    /// Network description (may be empty: lift only).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 3)]
    max_ell: usize,
    #[arg(long, default_value_t = 8)]
    levels: usize,
    /// Seed of the He-normal weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use these weights instead of random ones.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Boundary::Periodic)]
    boundary: Boundary,
    #[arg(long, value_enum, default_value_t = BnArg::Eval)]
    bn_mode: BnArg,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DownsampleArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    factor: usize,
    /// Receives naive.pgm and bandlimited.pgm (or .ppm).
    #[arg(long)]
    output_dir: PathBuf,
}

/// Failure of the tool itself rather than of its input.
#[derive(Debug)]
struct Internal(String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Internal>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DSS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| anyhow!("DSS_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Kernel(a) => kernel(a),
        Command::Lift(a) => lift(a),
        Command::Run(a) => run(a),
        Command::Equicheck(a) => equicheck(a),
        Command::Downsample(a) => downsample(a),
    }
}

fn kernel(a: KernelArgs) -> anyhow::Result<()> {
    let need_t = || a.t.ok_or_else(|| anyhow!("--t is required for this family"));
    let k = match a.family {
        Family::DiscreteGaussian => {
            let t = need_t()?;
            discrete_gaussian_1d(t, a.radius.unwrap_or_else(|| default_radius(t)))?
        }
        Family::SampledGaussian => {
            let t = need_t()?;
            sampled_gaussian_1d(t, a.radius.unwrap_or_else(|| default_radius(t)))?
        }
        Family::Binomial => binomial_kernel(a.n.ok_or_else(|| anyhow!("--n is required for binomial"))?)?,
        Family::Alpha => {
            let t = need_t()?;
            let alpha = a.alpha.ok_or_else(|| anyhow!("--alpha is required for the alpha family"))?;
            let length = a.length.unwrap_or_else(|| 2 * default_radius(2.0 * t) + 1);
            alpha_kernel_1d(alpha, t, length)?
        }
    };
    let k = if a.normalized { k.normalized() } else { k };
    let taps: Vec<String> = k.taps().iter().map(|v| format_sig(*v, 9)).collect();
    println!("{}", taps.join(","));
    eprintln!("mass deficit: {}", format_sig(k.mass_deficit(), 9));
    Ok(())
}

fn meta_path(stack: &Path) -> PathBuf {
    let mut p = stack.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

fn write_meta(stack_path: &Path, s0: f64, scales: &[f64]) -> anyhow::Result<()> {
    let mut text = format!("s0={}\nbase=2\n", format_sig(s0, 17));
    for (k, t) in scales.iter().enumerate() {
        text.push_str(&format!("t{k}={}\n", format_sig(*t, 17)));
    }
    let p = meta_path(stack_path);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn read_meta_s0(stack_path: &Path) -> anyhow::Result<Option<f64>> {
    let p = meta_path(stack_path);
    let Ok(text) = fs::read_to_string(&p) else {
        return Ok(None);
    };
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("s0=") {
            let s0 = v.trim().parse().with_context(|| format!("bad s0 in {}", p.display()))?;
            return Ok(Some(s0));
        }
    }
    bail!("{} has no s0= line", p.display())
}

fn check_levels(levels: usize) -> anyhow::Result<()> {
    if levels == 0 || levels > MAX_LEVELS {
        bail!("--levels must lie in 1..={MAX_LEVELS}, got {levels}");
    }
    Ok(())
}

fn lift(a: LiftArgs) -> anyhow::Result<()> {
    check_levels(a.levels)?;
    let img = read_pnm(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let opts = LiftOptions { radius_sigmas: a.radius_sigmas, boundary: a.boundary.into() };
    let stack = lift_with(&img, a.levels, a.s0, &opts)?;
    write_stack(&a.output, &stack).with_context(|| format!("writing {}", a.output.display()))?;
    write_meta(&a.output, a.s0, stack.level_scales())?;
    if let Some(dir) = a.preview_dir {
        fs::create_dir_all(&dir)?;
        let ext = if img.channels() == 3 { "ppm" } else { "pgm" };
        for k in 0..stack.levels() {
            write_pnm(dir.join(format!("level_{k}.{ext}")), &stack.level_image(k))?;
        }
    }
    Ok(())
}

fn read_spec(path: &Path) -> anyhow::Result<NetworkSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    NetworkSpec::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn read_weights(path: &Path, spec: &NetworkSpec) -> anyhow::Result<NetworkWeights> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let banks = decode_banks(&mut &bytes[..])?;
    Ok(NetworkWeights::from_banks(spec, banks)?)
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let spec = read_spec(&a.spec)?;
    let s0 = read_meta_s0(&a.stack)?.unwrap_or(a.s0);
    let stack = read_stack(&a.stack, s0).with_context(|| format!("reading {}", a.stack.display()))?;
    let expected_channels = spec.check_channels(stack.channels())?;
    let weights = match (&a.weights, a.random_seed) {
        (Some(p), _) => read_weights(p, &spec)?,
        (None, Some(seed)) => NetworkWeights::identity(&spec, a.noise_std, seed)?,
        (None, None) => bail!("give either --weights or --random-seed"),
    };
    if let Some(p) = &a.save_weights {
        let mut buf = Vec::new();
        for b in &weights.banks {
            encode_bank(&mut buf, b)?;
        }
        fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?;
    }
    let net = Network::new(spec, weights)?;
    let opts = ForwardOptions { bn_mode: a.bn_mode.into(), spatial: a.boundary.into() };
    let out = net.forward(&stack, opts)?;
    if out.channels() != expected_channels {
        return Err(Internal(format!(
            "network produced {} channels, description implies {expected_channels}",
            out.channels()
        ))
        .into());
    }
    write_stack(&a.output, &out).with_context(|| format!("writing {}", a.output.display()))?;
    write_meta(&a.output, out.s0(), out.level_scales())?;
    Ok(())
}

fn equicheck(a: EquicheckArgs) -> anyhow::Result<()> {
    check_levels(a.levels)?;
    let img = read_pnm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let spec = read_spec(&a.spec)?;
    spec.check_channels(img.channels())?;
    let weights = match &a.weights {
        Some(p) => read_weights(p, &spec)?,
        None => NetworkWeights::he_normal(&spec, a.seed)?,
    };
    let net = Network::new(spec, weights)?;
    let cfg = EquivarianceConfig {
        levels: a.levels,
        spatial: a.boundary.into(),
        bn_mode: a.bn_mode.into(),
        ..Default::default()
    };
    let id = a.image.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = sweep(&net, &img, a.max_ell, &cfg, &id, a.seed)?;
    for ell in 1..=a.max_ell {
        let flags: Vec<bool> = report.cells.iter().filter(|c| c.ell == ell).map(|c| c.contaminated).collect();
        if flags.windows(2).any(|w| w[0] && !w[1]) {
            return Err(Internal(format!("contamination is not monotone in k at ell={ell}")).into());
        }
    }
    let csv = report.to_csv();
    match &a.output {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format_sig(v, 4));
    eprintln!(
        "image={} spec_hash={:016x} S={} seed={} max_clean={} max_contaminated={}",
        report.meta.image_id,
        report.meta.spec_hash,
        report.meta.levels,
        report.meta.seed,
        fmt(report.max_error(false)),
        fmt(report.max_error(true)),
    );
    Ok(())
}

fn downsample(a: DownsampleArgs) -> anyhow::Result<()> {
    if a.factor < 2 {
        bail!("--factor must be at least 2, got {}", a.factor);
    }
    let img = read_pnm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let demo = downsample_demo(&img, a.factor)?;
    fs::create_dir_all(&a.output_dir)?;
    let ext = if img.channels() == 3 { "ppm" } else { "pgm" };
    write_pnm(a.output_dir.join(format!("naive.{ext}")), &demo.naive)?;
    write_pnm(a.output_dir.join(format!("bandlimited.{ext}")), &demo.bandlimited)?;
    eprintln!("blur scale t = {}", format_sig(demo.scale, 9));
    Ok(())
}
