//! Reconstruction methods, image-quality metrics and comparative studies.
//!
//! Four reconstructors share one entry point, [`reconstruct`]:
//!
//! * `fbp`: filtered back-projection, no iterations.
//! * `wavelet`: `min ||K Phi xi - v||^2 + alpha ||xi||_1` with the Haar
//!   synthesis `Phi`, solved by FISTA from the Haar coefficients of the FBP.
//! * `tv`: `min ||K u - v||^2 + alpha TV(u)` by Chambolle-Pock from the FBP.
//! * `desyre`: `min ||K D(xi) - v||^2 + alpha R(xi)` with the trained decoder
//!   `D`, solved by FISTA from the encoder applied to the FBP.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::haar::haar_analysis;
use crate::net::{checkpoint_hash, load_checkpoint, DecoderNet, EncoderNet};
use crate::par;
use crate::phantom::{add_noise, Image, NoiseSpec};
use crate::linop;
use crate::radon::{FbpFilter, RadonGeometry, RadonMatrix, Sinogram};
use crate::regularizers::WeightSpec;
use crate::solvers::{chambolle_pock_tv, fista, FistaConfig, HaarSynthesis, PdConfig, SolveReport, SynthesisProblem};

/// Step shrink factor for DESYRE, whose data term has no known gradient constant.
const DESYRE_BACKTRACK: f64 = 2.0;

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub psnr: f64,
    pub nmse: f64,
}

/// `psnr = 10 log10(max u^2 / ||u - rec||^2)`, `nmse = ||u - rec||^2 / ||u||^2`.
pub fn compute_metrics(u: &Image, rec: &Image) -> Result<Metrics> {
    if u.height() != rec.height() || u.width() != rec.width() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: vec![u.height(), u.width()],
            right: vec![rec.height(), rec.width()],
        });
    }
    let energy: f64 = u.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::invalid("nmse is undefined for an all-zero ground truth"));
    }
    let err: f64 = u.data().iter().zip(rec.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let peak = u.data().iter().map(|v| v * v).fold(0.0, f64::max);
    let psnr = if err == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak / err).log10()).min(PSNR_CAP)
    };
    Ok(Metrics {
        psnr,
        nmse: err / energy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fbp,
    Wavelet,
    Tv,
    Desyre,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Wavelet => "wavelet",
            Method::Tv => "tv",
            Method::Desyre => "desyre",
        }
    }

    /// Published regularization parameter for noise-free (`noisy = false`) or noisy data.
    pub fn published_alpha(self, noisy: bool) -> f64 {
        match (self, noisy) {
            (Method::Fbp, _) => 0.0,
            (Method::Wavelet, false) => 1e-8,
            (Method::Wavelet, true) => 2e-7,
            (Method::Tv, false) => 5e-5,
            (Method::Tv, true) => 1e-4,
            (Method::Desyre, false) => 1e-6,
            (Method::Desyre, true) => 3e-5,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbp" => Ok(Method::Fbp),
            "wavelet" => Ok(Method::Wavelet),
            "tv" => Ok(Method::Tv),
            "desyre" => Ok(Method::Desyre),
            other => Err(Error::invalid(format!(
                "unknown method {other:?} (expected fbp, wavelet, tv or desyre)"
            ))),
        }
    }
}

/// A trained encoder/decoder pair with its content hash.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub hash: String,
}

impl Checkpoint {
    pub fn new(encoder: EncoderNet, decoder: DecoderNet) -> Self {
        let hash = checkpoint_hash(&encoder, &decoder);
        Checkpoint { encoder, decoder, hash }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (e, d) = load_checkpoint(dir)?;
        Ok(Checkpoint::new(e, d))
    }

    /// Recomputes the hash and compares it with the one taken at load time.
    pub fn verify(&self) -> Result<()> {
        let now = checkpoint_hash(&self.encoder, &self.decoder);
        if now != self.hash {
            return Err(Error::invalid(format!("checkpoint changed: {} != {}", now, self.hash)));
        }
        Ok(())
    }
}

/// Solver settings shared by the iterative methods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub iterations: usize,
    /// FISTA step as a multiple of `1 / (2 ||K||^2)`.
    pub step_scale: f64,
    pub haar_levels: usize,
    /// Filter of the FBP used for initialization and by the `fbp` method.
    pub filter: FbpFilter,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            iterations: 300,
            step_scale: 1.0,
            haar_levels: 4,
            filter: FbpFilter::Hann,
            record_trace: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconRequest<'a> {
    pub method: Method,
    pub geometry: RadonGeometry,
    pub alpha: f64,
    pub solver: SolverOptions,
    pub checkpoint: Option<&'a Checkpoint>,
    /// Cached `||K||`; estimated on demand when absent.
    pub k_norm: Option<f64>,
}

impl<'a> ReconRequest<'a> {
    pub fn new(method: Method, geometry: RadonGeometry, alpha: f64) -> Self {
        ReconRequest {
            method,
            geometry,
            alpha,
            solver: SolverOptions::default(),
            checkpoint: None,
            k_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.method == Method::Desyre && self.checkpoint.is_none() {
            return Err(Error::invalid("method desyre requires a trained checkpoint (--checkpoint)"));
        }
        if self.method != Method::Fbp && (self.solver.iterations == 0 || !(self.solver.step_scale > 0.0)) {
            return Err(Error::invalid("iterative methods need positive iterations and step scale"));
        }
        Ok(())
    }

    fn k_norm(&self, k: &RadonMatrix) -> Result<f64> {
        match self.k_norm {
            Some(n) => Ok(n),
            None => Ok(linop::operator_norm(k, 200, NORM_SEED)?.value),
        }
    }
}

const NORM_SEED: u64 = 0x5eed;

/// Norm estimate inflated slightly so that step sizes built from it are safe.
pub fn safe_norm(g: &RadonGeometry) -> Result<f64> {
    Ok(linop::operator_norm(&g.assemble(), 200, NORM_SEED)?.value * 1.01)
}

/// Runs one reconstruction. The FBP method returns an empty report.
pub fn reconstruct(v: &Sinogram, req: &ReconRequest) -> Result<(Image, SolveReport)> {
    if req.method == Method::Fbp {
        req.validate()?;
        return reconstruct_with(v, req, None);
    }
    reconstruct_with(v, req, Some(&req.geometry.assemble()))
}

/// As [`reconstruct`], reusing an assembled operator for the iterative methods.
pub fn reconstruct_with(v: &Sinogram, req: &ReconRequest, k: Option<&RadonMatrix>) -> Result<(Image, SolveReport)> {
    req.validate()?;
    let g = &req.geometry;
    if let Some(k) = k {
        if k.geometry() != g {
            return Err(Error::invalid("assembled operator belongs to a different geometry"));
        }
    }
    if v.n_angles() != g.n_angles() || v.n_det() != g.n_det() {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            left: vec![g.n_angles(), g.n_det()],
            right: vec![v.n_angles(), v.n_det()],
        });
    }
    let start = Instant::now();
    let side = g.side();
    let init = g.fbp(v, req.solver.filter)?;
    if req.method == Method::Fbp {
        return Ok((init, SolveReport::default()));
    }
    let assembled;
    let k = match k {
        Some(k) => k,
        None => {
            assembled = g.assemble();
            &assembled
        }
    };
    let kn = req.k_norm(k)?;
    let fista_cfg = FistaConfig {
        step: req.solver.step_scale / (2.0 * kn * kn),
        iterations: req.solver.iterations,
        tol: None,
        record_trace: req.solver.record_trace,
        backtrack: None,
    };
    let (image, mut report) = match req.method {
        Method::Fbp => unreachable!(),
        Method::Wavelet => {
            let phi = HaarSynthesis::new(side, req.solver.haar_levels)?;
            let problem = SynthesisProblem::new(k, v.data(), &phi, req.alpha, WeightSpec::Uniform)?;
            let x0 = haar_analysis(&init, req.solver.haar_levels)?;
            let report = fista(&problem, x0.data(), &fista_cfg)?;
            let u = crate::solvers::SynthesisOperator::synthesize(&phi, &report.x)?;
            (Image::new(side, side, u)?, report)
        }
        Method::Tv => {
            let mut cfg = PdConfig::balanced(kn, req.solver.iterations)?;
            cfg.record_trace = req.solver.record_trace;
            let out = chambolle_pock_tv(k, v.data(), (side, side), req.alpha, &cfg, init.data())?;
            (Image::new(side, side, out.report.x.clone())?, out.report)
        }
        Method::Desyre => {
            let ck = req.checkpoint.expect("validated");
            if ck.decoder.spec().side != side {
                return Err(Error::invalid(format!(
                    "checkpoint is for side {}, geometry has side {side}",
                    ck.decoder.spec().side
                )));
            }
            let problem = SynthesisProblem::new(k, v.data(), &ck.decoder, req.alpha, WeightSpec::Dyadic)?;
            let xi0 = ck.encoder.encode(&init)?;
            let cfg = FistaConfig {
                backtrack: Some(DESYRE_BACKTRACK),
                ..fista_cfg
            };
            let report = fista(&problem, xi0.data(), &cfg)?;
            let u = crate::solvers::SynthesisOperator::synthesize(&ck.decoder, &report.x)?;
            (Image::new(side, side, u)?, report)
        }
    };
    report.seconds = start.elapsed().as_secs_f64();
    Ok((image, report))
}

/// `n` log-spaced values per decade from `lo` to `hi` inclusive.
pub fn alpha_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || per_decade == 0 {
        return Err(Error::invalid(format!("invalid grid [{lo}, {hi}] with {per_decade} points per decade")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let steps = ((b - a) * per_decade as f64).round() as usize;
    Ok((0..=steps)
        .map(|i| 10f64.powf(a + i as f64 / per_decade as f64))
        .collect())
}

/// A method together with its regularization parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodSetting {
    pub method: Method,
    pub alpha: f64,
}

/// One reconstruction of one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub phantom_id: u64,
    pub method: Method,
    pub views: usize,
    pub noise_level: f64,
    pub alpha: f64,
    pub psnr: f64,
    pub nmse: f64,
    pub iters: usize,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub solver: SolverOptions,
    /// Record wall-clock seconds; off by default so that CSV output is reproducible.
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            solver: SolverOptions {
                record_trace: false,
                ..SolverOptions::default()
            },
            timing: false,
        }
    }
}

/// Simulated (possibly noisy) measurements of phantom `id`.
pub fn simulate(u: &Image, id: u64, g: &RadonGeometry, noise: &NoiseSpec) -> Result<Sinogram> {
    let clean = g.forward(u)?;
    let spec = NoiseSpec {
        level: noise.level,
        seed: noise.seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15),
    };
    Ok(add_noise(&clean, &spec)?.0)
}

/// Reconstructs every phantom with every method; rows are ordered by
/// method, then phantom.
pub fn benchmark_suite(
    phantoms: &[(u64, Image)],
    geometry: &RadonGeometry,
    methods: &[MethodSetting],
    noise: &NoiseSpec,
    checkpoint: Option<&Checkpoint>,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if phantoms.is_empty() {
        return Err(Error::invalid("no phantoms to benchmark"));
    }
    let matrix = methods.iter().any(|m| m.method != Method::Fbp).then(|| geometry.assemble());
    let k_norm = match &matrix {
        Some(k) => Some(linop::operator_norm(k, 200, NORM_SEED)?.value * 1.01),
        None => None,
    };
    let sinos: Vec<Sinogram> = par::map_slice(phantoms, |(id, u)| simulate(u, *id, geometry, noise))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(phantoms.len() * methods.len());
    for m in methods {
        let req = ReconRequest {
            method: m.method,
            geometry: geometry.clone(),
            alpha: m.alpha,
            solver: opts.solver,
            checkpoint,
            k_norm,
        };
        req.validate()?;
        let jobs: Vec<usize> = (0..phantoms.len()).collect();
        let out = par::map_slice(&jobs, |&i| -> Result<BenchRow> {
            let (id, u) = &phantoms[i];
            let (rec, report) = reconstruct_with(&sinos[i], &req, matrix.as_ref())?;
            let metrics = compute_metrics(u, &rec)?;
            Ok(BenchRow {
                phantom_id: *id,
                method: m.method,
                views: geometry.n_angles(),
                noise_level: noise.level,
                alpha: m.alpha,
                psnr: metrics.psnr,
                nmse: metrics.nmse,
                iters: report.iterations,
                seconds: if opts.timing { report.seconds } else { 0.0 },
            })
        });
        for r in out {
            rows.push(r?);
        }
    }
    Ok(rows)
}

pub fn write_rows(rows: &[BenchRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "phantom_id,method,views,noise_level,alpha,psnr_db,nmse,iters,seconds")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.phantom_id, r.method, r.views, r.noise_level, r.alpha, r.psnr, r.nmse, r.iters, r.seconds
        )?;
    }
    Ok(())
}

/// Mean and sample standard deviation per `(method, views, alpha)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub views: usize,
    pub noise_level: f64,
    pub alpha: f64,
    pub count: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub nmse_mean: f64,
    pub nmse_std: f64,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[BenchRow]) -> Vec<Summary> {
    let mut keys: Vec<(Method, usize, u64, u64)> = Vec::new();
    for r in rows {
        let key = (r.method, r.views, r.alpha.to_bits(), r.noise_level.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, views, alpha, noise)| {
            let sel: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| {
                    r.method == method && r.views == views && r.alpha.to_bits() == alpha && r.noise_level.to_bits() == noise
                })
                .collect();
            let (pm, ps) = mean_std(&sel.iter().map(|r| r.psnr).collect::<Vec<_>>());
            let (nm, ns) = mean_std(&sel.iter().map(|r| r.nmse).collect::<Vec<_>>());
            Summary {
                method,
                views,
                noise_level: f64::from_bits(noise),
                alpha: f64::from_bits(alpha),
                count: sel.len(),
                psnr_mean: pm,
                psnr_std: ps,
                nmse_mean: nm,
                nmse_std: ns,
            }
        })
        .collect()
}

pub fn write_summary(summary: &[Summary], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "method,views,noise_level,alpha,count,psnr_mean,psnr_std,nmse_mean,nmse_std")?;
    for s in summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.method, s.views, s.noise_level, s.alpha, s.count, s.psnr_mean, s.psnr_std, s.nmse_mean, s.nmse_std
        )?;
    }
    Ok(())
}

/// Result of a log-grid search over the regularization parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub method: Method,
    /// `(alpha, mean psnr)` per grid point.
    pub scores: Vec<(f64, f64)>,
    pub best_alpha: f64,
    pub best_psnr: f64,
}

/// Picks the `alpha` with the highest mean PSNR on `phantoms`.
pub fn grid_search(
    phantoms: &[(u64, Image)],
    geometry: &RadonGeometry,
    method: Method,
    grid: &[f64],
    noise: &NoiseSpec,
    checkpoint: Option<&Checkpoint>,
    opts: &BenchOptions,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::invalid("empty alpha grid"));
    }
    let settings: Vec<MethodSetting> = grid.iter().map(|&alpha| MethodSetting { method, alpha }).collect();
    let rows = benchmark_suite(phantoms, geometry, &settings, noise, checkpoint, opts)?;
    let scores: Vec<(f64, f64)> = summarize(&rows).iter().map(|s| (s.alpha, s.psnr_mean)).collect();
    let (best_alpha, best_psnr) = scores
        .iter()
        .copied()
        .fold((grid[0], f64::NEG_INFINITY), |acc, s| if s.1 > acc.1 { s } else { acc });
    Ok(GridSearch {
        method,
        scores,
        best_alpha,
        best_psnr,
    })
}

/// The same checkpoint evaluated at a reference and a reduced number of views.
#[derive(Clone, Debug)]
pub struct ShiftStudy {
    pub reference: Vec<BenchRow>,
    pub shifted: Vec<BenchRow>,
    /// Hash of the checkpoint, identical before and after both studies.
    pub checkpoint_hash: String,
}

/// Runs `methods` at `reference_views` and at `shifted_views` without touching the checkpoint.
pub fn operator_shift_study(
    checkpoint: &Checkpoint,
    phantoms: &[(u64, Image)],
    side: usize,
    reference_views: usize,
    shifted_views: usize,
    methods: &[MethodSetting],
    noise: &NoiseSpec,
    opts: &BenchOptions,
) -> Result<ShiftStudy> {
    checkpoint.verify()?;
    let g_ref = RadonGeometry::with_views(side, reference_views)?;
    let g_shift = RadonGeometry::with_views(side, shifted_views)?;
    let reference = benchmark_suite(phantoms, &g_ref, methods, noise, Some(checkpoint), opts)?;
    checkpoint.verify()?;
    let shifted = benchmark_suite(phantoms, &g_shift, methods, noise, Some(checkpoint), opts)?;
    checkpoint.verify()?;
    Ok(ShiftStudy {
        reference,
        shifted,
        checkpoint_hash: checkpoint.hash.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{gen_ellipse_phantom, PhantomSpec};

    #[test]
    fn metric_examples() {
        let u = Image::new(1, 2, vec![1.0, 0.0]).unwrap();
        let m = compute_metrics(&u, &Image::zeros(1, 2)).unwrap();
        assert_eq!(m.psnr, 0.0);
        assert_eq!(m.nmse, 1.0);
        let exact = compute_metrics(&u, &u).unwrap();
        assert_eq!(exact, Metrics { psnr: PSNR_CAP, nmse: 0.0 });
        assert!(compute_metrics(&Image::zeros(1, 2), &u).is_err());
        assert!(compute_metrics(&u, &Image::zeros(2, 1)).is_err());
    }

    #[test]
    fn metrics_share_the_residual() {
        let u = gen_ellipse_phantom(&PhantomSpec::new(16, 2).unwrap(), 0);
        let rec = Image::new(16, 16, u.data().iter().map(|v| 0.9 * v + 0.01).collect()).unwrap();
        let m = compute_metrics(&u, &rec).unwrap();
        let err: f64 = u.data().iter().zip(rec.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let energy: f64 = u.data().iter().map(|a| a * a).sum();
        assert!((m.nmse - err / energy).abs() <= 1e-12 * m.nmse);
        let peak = u.max().powi(2);
        assert!((m.psnr - 10.0 * (peak / err).log10()).abs() <= 1e-12 * m.psnr.abs());
    }

    #[test]
    fn grid_has_five_per_decade() {
        let g = alpha_grid(1e-6, 1e-4, 5).unwrap();
        assert_eq!(g.len(), 11);
        assert!((g[5] / 1e-5 - 1.0).abs() < 1e-12);
        assert!(alpha_grid(0.0, 1.0, 5).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Fbp, Method::Wavelet, Method::Tv, Method::Desyre] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sart".parse::<Method>().is_err());
    }

    #[test]
    fn desyre_needs_checkpoint() {
        let g = RadonGeometry::with_views(16, 8).unwrap();
        let req = ReconRequest::new(Method::Desyre, g.clone(), 1e-3);
        let err = reconstruct(&Sinogram::zeros(8, g.n_det()), &req).unwrap_err();
        assert!(err.to_string().contains("--checkpoint"));
    }

    #[test]
    fn fbp_dispatch_is_identity() {
        let g = RadonGeometry::with_views(32, 30).unwrap();
        let u = gen_ellipse_phantom(&PhantomSpec::new(32, 4).unwrap(), 1);
        let v = g.forward(&u).unwrap();
        let (rec, report) = reconstruct(&v, &ReconRequest::new(Method::Fbp, g.clone(), 0.0)).unwrap();
        assert_eq!(rec, g.fbp(&v, FbpFilter::Hann).unwrap());
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn summary_aggregates() {
        let spec = PhantomSpec::new(32, 5).unwrap();
        let phantoms: Vec<(u64, Image)> = (0..4).map(|i| (i, gen_ellipse_phantom(&spec, i))).collect();
        let g = RadonGeometry::with_views(32, 20).unwrap();
        let setting = [MethodSetting { method: Method::Fbp, alpha: 0.0 }];
        let noise = NoiseSpec::new(0.0, 0).unwrap();
        let rows = benchmark_suite(&phantoms, &g, &setting, &noise, None, &BenchOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].count, 4);
        assert!(s[0].psnr_std >= 0.0);
    }
}
