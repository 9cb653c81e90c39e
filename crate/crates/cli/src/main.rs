//! `desyre`: phantoms, sinograms, training, reconstruction, benchmarks and
//! rate experiments from one executable.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use desyre::net::{checkpoint_hash, save_checkpoint, sparsity_fraction, train_pair, NetSpec, TrainConfig};
use desyre::phantom::{DatasetMeta, Image, NoiseSpec, PhantomSpec};
use desyre::pipeline::{
    alpha_grid, benchmark_suite, compute_metrics, grid_search, operator_shift_study, reconstruct, summarize,
    write_rows, write_summary, BenchOptions, BenchRow, Checkpoint, Method, MethodSetting, ReconRequest, SolverOptions,
};
use desyre::radon::{FbpFilter, RadonGeometry, Sinogram};
use desyre::rates::{checkpoint_delta, convergence_sweep, param_rule_check, parse_delta_range, LinearInstance, NetworkShift, ParamRule};
use desyre::regularizers::WeightSpec;
use desyre::tensor::{ParamStore, Role};
use desyre::net::DecoderNet;

/// Deep synthesis regularization for sparse-view tomography.
#[derive(Parser, Debug)]
#[command(name = "desyre", version)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output [default: all cores]
    #[arg(long, global = true, env = "DESYRE_THREADS")]
    threads: Option<usize>,

    /// `key = value` file supplying defaults for the subcommand's flags (flags win)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a random ellipse phantom dataset
    Phantom(PhantomArgs),
    /// Simulate (noisy) parallel-beam sinograms
    Sino(SinoArgs),
    /// Train an encoder/decoder pair with the sparsity-penalized loss
    Train(TrainArgs),
    /// Reconstruct one sinogram
    Recon(ReconArgs),
    /// Compare reconstruction methods over a dataset's test split
    Bench(BenchArgs),
    /// Convergence-rate and parameter-rule experiments
    Rates(RatesArgs),
    /// PSNR and NMSE of a reconstruction against ground truth
    Metrics(MetricsArgs),
}

#[derive(clap::Args, Debug)]
struct PhantomArgs {
    /// Image side in pixels (power of two)
    #[arg(long, default_value_t = 64)]
    side: usize,
    /// Number of phantoms
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Size of the test split [default: count / 5]
    #[arg(long)]
    test: Option<usize>,
    /// Phantom seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the train/test permutation
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SinoArgs {
    /// Dataset directory or a single image file
    #[arg(long)]
    input: PathBuf,
    /// Number of projection views [published default: 60]
    #[arg(long, default_value_t = 60)]
    views: usize,
    /// Relative Gaussian noise level [published noisy setting: 0.05]
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Dataset directory (its training split is used)
    #[arg(long)]
    data: PathBuf,
    /// Number of scales [published: 4 at 512 px; desk default 2]
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// Channels of the first level, doubled per level [published: 64; desk default 16]
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Coefficient channels per band [published default: 2]
    #[arg(long, default_value_t = 2)]
    latent_channels: usize,
    /// Coefficient sparsity weight [published default: 1e-2]
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    /// Decoder weight penalty [published default: 1e-4]
    #[arg(long, default_value_t = 1e-4)]
    beta: f64,
    /// Encoder weight penalty [published default: 1e-4]
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    /// Adam learning rate (not published)
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Anneal the learning rate along a half cosine toward zero
    #[arg(long)]
    cosine_decay: bool,
    /// Training epochs [published default: 150]
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Mini-batch size [published default: 6]
    #[arg(long, default_value_t = 6)]
    batch_size: usize,
    /// Initialization and shuffling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coefficient weights: dyadic (2^-level, published) or uniform
    #[arg(long, default_value = "dyadic")]
    weights: WeightSpec,
    /// Use only the first N training images
    #[arg(long)]
    train_limit: Option<usize>,
    /// Save the decoder every N epochs under out/snapshots
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug, Clone)]
struct SolverArgs {
    /// Solver iterations (published setting: 2000)
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    /// FISTA step as a multiple of 1/(2 ||K||^2)
    #[arg(long, default_value_t = 1.0)]
    step_scale: f64,
    /// Haar levels of the wavelet baseline
    #[arg(long, default_value_t = 4)]
    haar_levels: usize,
    /// FBP filter: hann or ram-lak
    #[arg(long, default_value = "hann")]
    filter: FbpFilter,
}

impl SolverArgs {
    fn options(&self, record_trace: bool) -> SolverOptions {
        SolverOptions {
            iterations: self.iterations,
            step_scale: self.step_scale,
            haar_levels: self.haar_levels,
            filter: self.filter,
            record_trace,
        }
    }
}

#[derive(clap::Args, Debug)]
struct ReconArgs {
    /// Sinogram file
    #[arg(long)]
    sino: PathBuf,
    /// fbp, wavelet, tv or desyre
    #[arg(long)]
    method: Method,
    /// Regularization weight [published defaults: wavelet 1e-8, tv 5e-5, desyre 1e-6; with --noisy 2e-7, 1e-4, 3e-5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Use the published noisy-data alpha when --alpha is absent
    #[arg(long)]
    noisy: bool,
    /// Image side [default: inferred from the detector count]
    #[arg(long)]
    side: Option<usize>,
    /// Trained checkpoint directory (required for desyre)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Ground-truth image; PSNR and NMSE are reported when given
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    /// Dataset directory (its test split is used)
    #[arg(long)]
    data: PathBuf,
    /// Number of projection views [published default: 60]
    #[arg(long, default_value_t = 60)]
    views: usize,
    /// Relative Gaussian noise level [published noisy setting: 0.05]
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',', default_value = "fbp,wavelet,tv")]
    methods: Vec<Method>,
    /// Wavelet alpha [published default: 1e-8, noisy 2e-7]
    #[arg(long)]
    alpha_wavelet: Option<f64>,
    /// TV alpha [published default: 5e-5, noisy 1e-4]
    #[arg(long)]
    alpha_tv: Option<f64>,
    /// DESYRE alpha [published default: 1e-6, noisy 3e-5]
    #[arg(long)]
    alpha_desyre: Option<f64>,
    /// Grid-search every alpha over LO:HI instead of using fixed values
    #[arg(long)]
    grid: Option<String>,
    /// Grid points per decade
    #[arg(long, default_value_t = 5)]
    per_decade: usize,
    /// Use only the first N test phantoms
    #[arg(long)]
    test_limit: Option<usize>,
    /// Trained checkpoint directory (required for desyre)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also rerun every method at this many views with the same checkpoint
    #[arg(long)]
    shift_views: Option<usize>,
    /// Record wall-clock seconds (makes the CSV nondeterministic)
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct RatesArgs {
    /// Test instance (small-linear)
    #[arg(long, default_value = "small-linear")]
    instance: String,
    /// Parameter rule such as alpha=delta or alpha=0.5*delta^2
    #[arg(long, default_value = "alpha=delta")]
    rule: ParamRule,
    /// Noise levels HI:LO, one per decade
    #[arg(long, default_value = "1e-1:1e-4")]
    deltas: String,
    /// Noise draws per delta
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the instance's operator
    #[arg(long, default_value_t = 1)]
    instance_seed: u64,
    /// Checkpoint or snapshot directories; reports pairwise decoder distances
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<PathBuf>,
    /// Coefficient radius for decoder distances
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Samples for decoder distances
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct MetricsArgs {
    /// Ground-truth image
    #[arg(long)]
    truth: PathBuf,
    /// Reconstruction
    #[arg(long)]
    rec: PathBuf,
    /// Run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let cmd = Cli::command();
    let args = match config::merge_config(args, &cmd) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand");
    let resolved = config::resolved(sub_cmd, sub_matches, &[("command", name.to_string())]);
    let threads = cli.threads;
    match desyre::par::with_threads(threads, move || run(cli.command, &resolved)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| c.downcast_ref::<desyre::Error>().is_some_and(desyre::Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(cmd: Cmd, resolved: &str) -> Result<()> {
    match cmd {
        Cmd::Phantom(a) => phantom(a, resolved),
        Cmd::Sino(a) => sino(a, resolved),
        Cmd::Train(a) => train(a, resolved),
        Cmd::Recon(a) => recon(a, resolved),
        Cmd::Bench(a) => bench(a, resolved),
        Cmd::Rates(a) => rates(a, resolved),
        Cmd::Metrics(a) => metrics(a, resolved),
    }
}

/// Creates `dir/out` and writes `dir/config.resolved`; returns `dir/out`.
fn run_dir(dir: &Path, resolved: &str) -> Result<PathBuf> {
    let out = dir.join("out");
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(dir.join("config.resolved"), resolved)?;
    Ok(out)
}

/// Accepts either a directory holding `marker` or a run directory whose `out/` does.
fn locate(p: &Path, marker: &str, what: &str) -> Result<PathBuf> {
    if p.join(marker).is_file() {
        Ok(p.to_path_buf())
    } else if p.join("out").join(marker).is_file() {
        Ok(p.join("out"))
    } else {
        bail!("{} is not a {what} directory (no {marker})", p.display())
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn phantom(a: PhantomArgs, resolved: &str) -> Result<()> {
    let test = a.test.unwrap_or(a.count / 5);
    if test > a.count {
        bail!("--test {test} exceeds --count {}", a.count);
    }
    let meta = DatasetMeta::new(PhantomSpec::new(a.side, a.seed)?, a.count - test, test, a.split_seed)?;
    let out = run_dir(&a.out, resolved)?;
    let paths = meta.write(&out)?;
    for (i, p) in paths.iter().enumerate() {
        meta.image(i as u64).save_pgm(&p.with_extension("pgm"))?;
    }
    println!("wrote {} phantoms to {}", paths.len(), out.display());
    Ok(())
}

fn sino(a: SinoArgs, resolved: &str) -> Result<()> {
    let inputs: Vec<(u64, Image, String)> = if a.input.is_file() {
        vec![(0, Image::load(&a.input)?, "sino".into())]
    } else {
        let dir = locate(&a.input, "manifest.txt", "dataset")?;
        let meta = DatasetMeta::read(&dir)?;
        (0..meta.count() as u64).map(|i| (i, meta.image(i), format!("sino_{i:05}"))).collect()
    };
    let side = inputs[0].1.height();
    let g = RadonGeometry::with_views(side, a.views)?;
    let noise = NoiseSpec::new(a.noise, a.noise_seed)?;
    let out = run_dir(&a.out, resolved)?;
    let sinos = desyre::par::map_slice(&inputs, |(id, u, _)| desyre::pipeline::simulate(u, *id, &g, &noise));
    for ((_, _, name), s) in inputs.iter().zip(sinos) {
        let s = s?;
        s.save(&out.join(format!("{name}.dsr")))?;
        s.save_pgm(&out.join(format!("{name}.pgm")))?;
    }
    println!("wrote {} sinograms ({} views, {} detectors)", inputs.len(), g.n_angles(), g.n_det());
    Ok(())
}

fn train(a: TrainArgs, resolved: &str) -> Result<()> {
    let meta = DatasetMeta::read(&locate(&a.data, "manifest.txt", "dataset")?)?;
    let mut images = meta.train_images();
    if let Some(n) = a.train_limit {
        images.truncate(n);
    }
    if images.is_empty() {
        bail!("the training split is empty");
    }
    let spec = NetSpec::new(meta.spec.side, a.levels, a.base_channels, a.latent_channels)?;
    let cfg = TrainConfig {
        alpha: a.alpha,
        beta: a.beta,
        gamma: a.gamma,
        lr: a.lr,
        cosine_decay: a.cosine_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        weights: a.weights,
        snapshot_every: a.snapshot_every,
    };
    let outcome = train_pair(&images, &spec, &cfg)?;
    let out = run_dir(&a.out, resolved)?;
    outcome.save_trace(&a.out.join("trace.csv"))?;
    save_checkpoint(&out, &outcome.encoder, &outcome.decoder)?;
    let hash = checkpoint_hash(&outcome.encoder, &outcome.decoder);
    fs::write(out.join("checkpoint.sha256"), format!("{hash}\n"))?;
    if !outcome.snapshots.is_empty() {
        let snaps = out.join("snapshots");
        fs::create_dir_all(&snaps)?;
        for (epoch, dec) in &outcome.snapshots {
            let dir = snaps.join(format!("epoch_{epoch:04}"));
            fs::create_dir_all(&dir)?;
            dec.params().save(&dir.join("decoder.dsr"))?;
            spec.save(&dir.join("netspec.txt"))?;
        }
    }
    let first = outcome.trace.first().expect("trace has an initial row");
    let last = outcome.trace.last().expect("trace has an initial row");
    let sparsity = sparsity_fraction(&outcome.encoder, &images, 1e-3)?;
    println!("loss {} -> {} over {} epochs", first.total, last.total, a.epochs);
    println!("sparsity fraction (|xi| < 1e-3): {sparsity}");
    println!("checkpoint {hash}");
    Ok(())
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    let dir = locate(p, "netspec.txt", "checkpoint")?;
    Ok(Checkpoint::load(&dir)?)
}

fn load_decoder(p: &Path) -> Result<DecoderNet> {
    let dir = locate(p, "netspec.txt", "checkpoint")?;
    let spec = NetSpec::load(&dir.join("netspec.txt"))?;
    Ok(DecoderNet::from_params(&spec, ParamStore::load(&dir.join("decoder.dsr"), Role::Decoder)?)?)
}

fn recon(a: ReconArgs, resolved: &str) -> Result<()> {
    let checkpoint = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    if a.method == Method::Desyre && checkpoint.is_none() {
        bail!("--method desyre requires --checkpoint <DIR>");
    }
    let v = Sinogram::load(&a.sino)?;
    let side = a.side.unwrap_or(2 * v.n_det() / 3);
    let geometry = RadonGeometry::new(v.n_angles(), v.n_det(), side)?;
    let alpha = a.alpha.unwrap_or(a.method.published_alpha(a.noisy));
    let mut req = ReconRequest::new(a.method, geometry, alpha);
    req.solver = a.solver.options(true);
    req.checkpoint = checkpoint.as_ref();
    let (image, report) = reconstruct(&v, &req)?;
    let out = run_dir(&a.out, resolved)?;
    image.save(&out.join("recon.dsr"))?;
    image.save_pgm(&out.join("recon.pgm"))?;
    report.save_csv(&a.out.join("trace.csv"))?;
    if a.method != Method::Fbp {
        println!("{} iterations, objective {} -> {}", report.iterations, report.initial_objective.unwrap_or(f64::NAN), report.objective.last().copied().unwrap_or(f64::NAN));
    }
    if let Some(t) = &a.truth {
        let m = compute_metrics(&Image::load(t)?, &image)?;
        write_file(&out.join("metrics.csv"), |w| writeln!(w, "psnr_db,nmse\n{},{}", m.psnr, m.nmse))?;
        println!("psnr {} dB, nmse {}", m.psnr, m.nmse);
    }
    Ok(())
}

fn bench(a: BenchArgs, resolved: &str) -> Result<()> {
    let checkpoint = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    if a.methods.contains(&Method::Desyre) && checkpoint.is_none() {
        bail!("method desyre in --methods requires --checkpoint <DIR>");
    }
    let meta = DatasetMeta::read(&locate(&a.data, "manifest.txt", "dataset")?)?;
    let mut test = meta.test_images();
    if let Some(n) = a.test_limit {
        test.truncate(n);
    }
    if test.is_empty() {
        bail!("the test split is empty");
    }
    let side = meta.spec.side;
    let geometry = RadonGeometry::with_views(side, a.views)?;
    let noise = NoiseSpec::new(a.noise, a.noise_seed)?;
    let opts = BenchOptions {
        solver: a.solver.options(false),
        timing: a.timing,
    };
    let noisy = a.noise > 0.0;
    let out = run_dir(&a.out, resolved)?;
    let mut settings = Vec::new();
    let mut grid_rows: Vec<(Method, f64, f64)> = Vec::new();
    for &method in &a.methods {
        let fixed = match method {
            Method::Fbp => Some(0.0),
            Method::Wavelet => a.alpha_wavelet,
            Method::Tv => a.alpha_tv,
            Method::Desyre => a.alpha_desyre,
        };
        let alpha = match (&a.grid, fixed, method) {
            (_, _, Method::Fbp) => 0.0,
            (Some(range), None, _) => {
                let (lo, hi) = parse_range(range)?;
                let grid = alpha_grid(lo, hi, a.per_decade)?;
                let gs = grid_search(&test, &geometry, method, &grid, &noise, checkpoint.as_ref(), &opts)?;
                grid_rows.extend(gs.scores.iter().map(|&(al, p)| (method, al, p)));
                eprintln!("{method}: best alpha {} ({} dB)", gs.best_alpha, gs.best_psnr);
                gs.best_alpha
            }
            (_, Some(al), _) => al,
            (None, None, _) => method.published_alpha(noisy),
        };
        settings.push(MethodSetting { method, alpha });
    }
    if !grid_rows.is_empty() {
        write_file(&out.join("grid.csv"), |w| {
            writeln!(w, "method,alpha,psnr_mean")?;
            for (m, al, p) in &grid_rows {
                writeln!(w, "{m},{al},{p}")?;
            }
            Ok(())
        })?;
    }
    let save = |rows: &[BenchRow], stem: &str| -> Result<()> {
        write_file(&out.join(format!("{stem}.csv")), |w| write_rows(rows, w))?;
        let summary = summarize(rows);
        write_file(&out.join(format!("{stem}_summary.csv")), |w| write_summary(&summary, w))?;
        write_summary(&summary, &mut std::io::stdout().lock())?;
        Ok(())
    };
    match (a.shift_views, &checkpoint) {
        (Some(shifted), Some(ck)) => {
            let study = operator_shift_study(ck, &test, side, a.views, shifted, &settings, &noise, &opts)?;
            save(&study.reference, "bench")?;
            save(&study.shifted, "shift")?;
            println!("checkpoint {} unchanged across both geometries", study.checkpoint_hash);
        }
        (Some(shifted), None) => {
            save(&benchmark_suite(&test, &geometry, &settings, &noise, None, &opts)?, "bench")?;
            let g2 = RadonGeometry::with_views(side, shifted)?;
            save(&benchmark_suite(&test, &g2, &settings, &noise, None, &opts)?, "shift")?;
        }
        (None, _) => save(&benchmark_suite(&test, &geometry, &settings, &noise, checkpoint.as_ref(), &opts)?, "bench")?,
    }
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').with_context(|| format!("expected LO:HI, got {s}"))?;
    let (lo, hi): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
    if !(lo > 0.0 && hi >= lo) {
        bail!("grid range {s} must satisfy 0 < LO <= HI");
    }
    Ok((lo, hi))
}

fn rates(a: RatesArgs, resolved: &str) -> Result<()> {
    if a.instance != "small-linear" {
        bail!("unknown instance {} (available: small-linear)", a.instance);
    }
    let out = a.out.as_deref().map(|d| run_dir(d, resolved)).transpose()?;
    let deltas = parse_delta_range(&a.deltas)?;
    let inst = LinearInstance::small_linear(a.instance_seed)?;
    let cert = convergence_sweep(&inst, &a.rule, &deltas, a.trials, a.seed)?;
    let check = param_rule_check(&a.rule, &NetworkShift::Zero);
    let mut text = Vec::new();
    cert.write_csv(&mut text)?;
    writeln!(text, "{}", cert.slope_line())?;
    writeln!(
        text,
        "rule check ({}, stationary network): {}",
        a.rule.tag(),
        if check.pass { "pass" } else { "fail" }
    )?;
    if !a.checkpoints.is_empty() {
        let decoders = a.checkpoints.iter().map(|p| load_decoder(p)).collect::<Result<Vec<_>>>()?;
        writeln!(text, "first,second,delta_lower_bound,samples")?;
        for d in checkpoint_delta(&decoders, a.rho, a.samples, a.seed)? {
            writeln!(text, "{},{},{},{}", d.first, d.second, d.lower_bound, d.samples)?;
        }
    }
    std::io::stdout().write_all(&text)?;
    if let Some(out) = out {
        fs::write(out.join("rates.txt"), &text)?;
        write_file(&out.join("rates.csv"), |w| cert.write_csv(w))?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs, resolved: &str) -> Result<()> {
    let m = compute_metrics(&Image::load(&a.truth)?, &Image::load(&a.rec)?)?;
    let text = format!("psnr_db,nmse\n{},{}\n", m.psnr, m.nmse);
    print!("{text}");
    if let Some(dir) = &a.out {
        fs::write(run_dir(dir, resolved)?.join("metrics.csv"), text)?;
    }
    Ok(())
}
