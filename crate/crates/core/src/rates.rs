//! Parameter-choice rules, convergence-rate experiments and exact
//! l1-minimizing reference solutions on small instances.
//!
//! The statements being probed are about the infinite-dimensional setting;
//! everything here is a finite-dimensional proxy and is labeled as such.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linop::{self, LinearOperator};
use crate::net::DecoderNet;
use crate::par;
use crate::regularizers::{shrink_in_place, weighted_l1_slice};
use crate::solvers::{fista, CompositeProblem, FistaConfig, SynthesisOperator};

/// `alpha(delta) = c * delta^p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamRule {
    pub c: f64,
    pub p: f64,
}

impl ParamRule {
    pub fn new(c: f64, p: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() || !p.is_finite() {
            return Err(Error::invalid(format!("invalid rule alpha = {c} * delta^{p}")));
        }
        Ok(ParamRule { c, p })
    }

    pub fn alpha(&self, delta: f64) -> f64 {
        self.c * delta.powf(self.p)
    }

    pub fn tag(&self) -> String {
        format!("alpha={}*delta^{}", self.c, self.p)
    }
}

impl std::str::FromStr for ParamRule {
    type Err = Error;

    /// Accepts `alpha=delta`, `alpha=delta^2`, `alpha=sqrt(delta)` and
    /// `alpha=C*delta^P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse rule {s:?} (try alpha=delta or alpha=0.5*delta^2)"));
        let rhs = s.trim().strip_prefix("alpha=").ok_or_else(bad)?.replace(' ', "");
        let (c, rest) = match rhs.split_once('*') {
            Some((c, rest)) => (c.parse::<f64>().map_err(|_| bad())?, rest.to_string()),
            None => (1.0, rhs),
        };
        let p = if rest == "delta" {
            1.0
        } else if rest == "sqrt(delta)" {
            0.5
        } else if let Some(e) = rest.strip_prefix("delta^") {
            e.parse::<f64>().map_err(|_| bad())?
        } else {
            return Err(bad());
        };
        ParamRule::new(c, p)
    }
}

/// The perturbation `Delta_rho(alpha)` between the regularizing family and its limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NetworkShift {
    /// Stationary family.
    Zero,
    /// `Delta(alpha) = c * alpha^p`.
    Power { c: f64, p: f64 },
}

impl NetworkShift {
    pub fn eval(&self, alpha: f64) -> f64 {
        match *self {
            NetworkShift::Zero => 0.0,
            NetworkShift::Power { c, p } => c * alpha.powf(p),
        }
    }
}

/// Sequences evaluated on the log grid and the verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleCheck {
    pub pass: bool,
    /// Decreasing grid from 1 to 1e-6.
    pub deltas: Vec<f64>,
    pub alpha: Vec<f64>,
    pub shift_sq_over_alpha: Vec<f64>,
    pub noise_sq_over_alpha: Vec<f64>,
}

fn tends_to_zero(seq: &[f64]) -> bool {
    let monotone = seq.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let max = seq.iter().copied().fold(0.0, f64::max);
    let last = *seq.last().expect("nonempty grid");
    monotone && seq.iter().all(|v| v.is_finite()) && (max == 0.0 || last <= 1e-2 * max)
}

/// Checks that `alpha`, `Delta(alpha)^2 / alpha` and `delta^2 / alpha` all
/// decrease toward zero as `delta` runs down a log grid on `[1e-6, 1]`.
pub fn param_rule_check(rule: &ParamRule, shift: &NetworkShift) -> RuleCheck {
    let deltas: Vec<f64> = (0..=24).map(|i| 10f64.powf(-(i as f64) / 4.0)).collect();
    let alpha: Vec<f64> = deltas.iter().map(|&d| rule.alpha(d)).collect();
    let shift_sq: Vec<f64> = alpha.iter().map(|&a| shift.eval(a).powi(2) / a).collect();
    let noise_sq: Vec<f64> = deltas.iter().zip(&alpha).map(|(d, a)| d * d / a).collect();
    let pass = alpha.iter().all(|&a| a > 0.0) && tends_to_zero(&alpha) && tends_to_zero(&shift_sq) && tends_to_zero(&noise_sq);
    RuleCheck {
        pass,
        deltas,
        alpha,
        shift_sq_over_alpha: shift_sq,
        noise_sq_over_alpha: noise_sq,
    }
}

/// A minimizer of the weighted l1 norm over the solutions of `A xi = v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub xi: Vec<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
    /// How many candidate supports were checked.
    pub supports_checked: usize,
}

/// Exhaustive search for `argmin sum w|xi|` subject to `A xi = v`.
///
/// The minimum of this linear program is attained at a basic solution, whose
/// support indexes linearly independent columns. Every such support is
/// enumerated, so the returned objective is the global minimum.
pub fn l1_min_oracle(a: &DMatrix<f64>, v: &[f64], weights: &[f64]) -> Result<ReferenceSolution> {
    let (m, n) = a.shape();
    if n > 12 {
        return Err(Error::invalid(format!("oracle enumerates at most 12 columns, got {n}")));
    }
    if v.len() != m || weights.len() != n {
        return Err(Error::ShapeMismatch {
            op: "l1-oracle",
            left: vec![m, n],
            right: vec![v.len(), weights.len()],
        });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("oracle weights must be positive"));
    }
    let tol = 1e-9 * (1.0 + linop::norm(v));
    let rhs = DVector::from_column_slice(v);
    let mut best: Option<ReferenceSolution> = None;
    let mut checked = 0;
    if linop::norm(v) <= tol {
        best = Some(ReferenceSolution {
            xi: vec![0.0; n],
            objective: 0.0,
            support: vec![],
            supports_checked: 1,
        });
    }
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if support.len() > m {
            continue;
        }
        checked += 1;
        let sub = a.select_columns(&support);
        let svd = sub.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if smax == 0.0 || svd.singular_values.min() <= 1e-10 * smax {
            continue;
        }
        let x = svd.solve(&rhs, 0.0).map_err(|e| Error::NonFinite(e.to_string()))?;
        if (&sub * &x - &rhs).norm() > tol {
            continue;
        }
        let mut xi = vec![0.0; n];
        for (k, &i) in support.iter().enumerate() {
            xi[i] = x[k];
        }
        let objective = weighted_l1_slice(&xi, weights);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(ReferenceSolution {
                xi,
                objective,
                support,
                supports_checked: 0,
            });
        }
    }
    let mut best = best.ok_or_else(|| Error::Infeasible("v is not in the range of A (no exact solution on any support)".into()))?;
    best.supports_checked = checked;
    Ok(best)
}

/// Orthonormal 1-D Haar synthesis matrix (columns are atoms), coefficients
/// ordered finest level first and the approximation last.
pub fn haar_matrix_1d(n: usize, levels: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if levels == 0 || !n.is_multiple_of(1 << levels) {
        return Err(Error::invalid(format!("{n} is not divisible by 2^{levels}")));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut level_of = Vec::with_capacity(n);
    // approximation atoms at the current scale, as signals of length n
    let mut approx: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    for l in 1..=levels {
        let mut next = Vec::with_capacity(approx.len() / 2);
        for pair in approx.chunks(2) {
            let d: Vec<f64> = pair[0].iter().zip(&pair[1]).map(|(a, b)| s * (a - b)).collect();
            let lo: Vec<f64> = pair[0].iter().zip(&pair[1]).map(|(a, b)| s * (a + b)).collect();
            columns.push(d);
            level_of.push(l);
            next.push(lo);
        }
        approx = next;
    }
    for a in approx {
        columns.push(a);
        level_of.push(levels);
    }
    let mat = DMatrix::from_fn(n, n, |r, c| columns[c][r]);
    Ok((mat, level_of))
}

/// A dense synthesis instance `A = K Phi` with a known exact solution.
#[derive(Clone, Debug)]
pub struct LinearInstance {
    pub k: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub reference: ReferenceSolution,
    pub v: Vec<f64>,
    pub k_norm: f64,
}

impl LinearInstance {
    /// `K` is a 12x8 Gaussian matrix (injective almost surely), `Phi` the
    /// three-level Haar synthesis on `R^8`, and the exact coefficients are
    /// 3-sparse. Weights are `2^-level`.
    pub fn small_linear(seed: u64) -> Result<Self> {
        let (phi, levels) = haar_matrix_1d(8, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = DMatrix::from_fn(12, 8, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / 12f64.sqrt()
        });
        let mut xi0 = vec![0.0; 8];
        xi0[1] = 1.0;
        xi0[4] = -0.5;
        xi0[7] = 2.0;
        let weights: Vec<f64> = levels.iter().map(|&l| 0.5f64.powi(l as i32)).collect();
        LinearInstance::new(k, phi, weights, &xi0)
    }

    pub fn new(k: DMatrix<f64>, phi: DMatrix<f64>, weights: Vec<f64>, xi0: &[f64]) -> Result<Self> {
        let a = &k * &phi;
        let v = a.apply(xi0);
        let reference = l1_min_oracle(&a, &v, &weights)?;
        let k_norm = k.clone().svd(false, false).singular_values.max();
        Ok(LinearInstance {
            k,
            phi,
            a,
            weights,
            reference,
            v,
            k_norm,
        })
    }

    /// Smallest singular value of `A`; positive iff `A` is injective.
    pub fn injectivity_margin(&self) -> f64 {
        self.a.clone().svd(false, false).singular_values.min()
    }
}

struct DenseLasso<'a> {
    a: &'a DMatrix<f64>,
    v: &'a [f64],
    alpha: f64,
    weights: &'a [f64],
}

impl CompositeProblem for DenseLasso<'_> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn grad_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r: Vec<f64> = self.a.apply(x).iter().zip(self.v).map(|(p, q)| 2.0 * (p - q)).collect();
        Ok(self.a.apply_adjoint(&r))
    }
    fn prox_g(&self, x: &mut [f64], step: f64) {
        shrink_in_place(x, step * self.alpha, self.weights);
    }
    fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
        let r = linop::norm(&self.a.apply(x).iter().zip(self.v).map(|(p, q)| p - q).collect::<Vec<_>>());
        Ok((r * r + self.alpha * weighted_l1_slice(x, self.weights), r))
    }
}

/// Solves `min ||A xi - v||^2 + alpha sum w|xi|` to a relative iterate change of `1e-10`.
pub fn solve_dense(a: &DMatrix<f64>, v: &[f64], alpha: f64, weights: &[f64], budget: usize) -> Result<Vec<f64>> {
    let lip = 2.0 * a.clone().svd(false, false).singular_values.max().powi(2);
    let cfg = FistaConfig {
        step: 1.0 / lip,
        iterations: budget,
        tol: Some(1e-10),
        record_trace: false,
        backtrack: None,
    };
    let problem = DenseLasso { a, v, alpha, weights };
    let report = fista(&problem, &vec![0.0; a.ncols()], &cfg)?;
    if !report.converged {
        return Err(Error::Infeasible(format!("solver budget of {budget} iterations exhausted before tolerance 1e-10")));
    }
    Ok(report.x)
}

/// One row of a rate certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub delta: f64,
    pub alpha: f64,
    pub err_mean: f64,
    pub err_std: f64,
    /// `||K (D_alpha - D)(xi)||`; zero for a stationary synthesis operator.
    pub h: f64,
    /// `delta + ||K|| Delta_rho(alpha)`.
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateCertificate {
    pub rule: ParamRule,
    pub trials: usize,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log err_mean` against `log delta`.
    pub slope: f64,
    /// Solutions violating `||xi|| <= R(xi)/w_min <= S(xi_ref)/(alpha w_min)`.
    pub bound_violations: usize,
}

impl RateCertificate {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "delta,alpha,err_mean,err_std,h,g")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.delta, r.alpha, r.err_mean, r.err_std, r.h, r.g)?;
        }
        Ok(())
    }

    pub fn slope_line(&self) -> String {
        format!("slope {:.4} ({}, {} trials per delta)", self.slope, self.rule.tag(), self.trials)
    }
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Measures `||xi_{alpha,delta} - xi_ref||` along a decreasing noise grid.
///
/// Each trial draws a fresh Gaussian direction scaled to `||z|| = delta`.
pub fn convergence_sweep(
    inst: &LinearInstance,
    rule: &ParamRule,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RateCertificate> {
    if deltas.len() < 2 || deltas.windows(2).any(|w| !(w[1] < w[0])) || deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("delta grid must be positive and strictly decreasing with at least two points"));
    }
    if trials == 0 {
        return Err(Error::invalid("at least one trial per delta"));
    }
    let wmin = inst.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let xi_ref = &inst.reference.xi;
    let jobs: Vec<(usize, usize)> = (0..deltas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let results = par::map_slice(&jobs, |&(i, t)| -> Result<(f64, bool)> {
        let delta = deltas[i];
        let alpha = rule.alpha(delta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((i * 10_000 + t) as u64);
        let z: Vec<f64> = (0..inst.v.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zn = linop::norm(&z);
        let v: Vec<f64> = inst.v.iter().zip(&z).map(|(a, b)| a + delta * b / zn).collect();
        let xi = solve_dense(&inst.a, &v, alpha, &inst.weights, 500_000)?;
        let err = linop::norm(&xi.iter().zip(xi_ref).map(|(a, b)| a - b).collect::<Vec<_>>());
        let r = weighted_l1_slice(&xi, &inst.weights);
        let res_ref = linop::norm(&inst.a.apply(xi_ref).iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        let s_ref = res_ref * res_ref + alpha * inst.reference.objective;
        let ok = linop::norm(&xi) <= r / wmin * (1.0 + 1e-12) && r / wmin <= s_ref / (alpha * wmin) * (1.0 + 1e-9);
        Ok((err, ok))
    });
    let results: Vec<(f64, bool)> = results.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let errs: Vec<f64> = results[i * trials..(i + 1) * trials].iter().map(|r| r.0).collect();
        let n = trials as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let std = if trials > 1 {
            (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(RateRow {
            delta,
            alpha: rule.alpha(delta),
            err_mean: mean,
            err_std: std,
            h: 0.0,
            g: delta,
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.err_mean.ln()).collect();
    Ok(RateCertificate {
        rule: *rule,
        trials,
        rows,
        slope: fit_slope(&lx, &ly),
        bound_violations: results.iter().filter(|r| !r.1).count(),
    })
}

/// Parses `hi:lo` into one value per decade, e.g. `1e-1:1e-4`.
pub fn parse_delta_range(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("cannot parse delta range {s:?} (expected e.g. 1e-1:1e-4)"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (hi, lo): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if !(hi > lo && lo > 0.0) {
        return Err(bad());
    }
    let decades = (hi / lo).log10().round() as usize;
    Ok((0..=decades).map(|i| hi * 10f64.powi(-(i as i32))).collect())
}

/// Monte-Carlo estimate for one pair of decoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaEstimate {
    pub first: usize,
    pub second: usize,
    /// `max ||D_i(xi) - D_j(xi)||` over the samples: a lower bound on the supremum.
    pub lower_bound: f64,
    pub samples: usize,
}

/// Lower bounds on `sup_{||xi|| <= rho} ||D_i(xi) - D_j(xi)||` for every pair.
///
/// Samples lie on the sphere of radius `rho` and are drawn from a fixed
/// seeded sequence, so more samples never decrease an estimate.
pub fn checkpoint_delta(decoders: &[DecoderNet], rho: f64, samples: usize, seed: u64) -> Result<Vec<DeltaEstimate>> {
    if decoders.len() < 2 {
        return Err(Error::invalid("need at least two checkpoints"));
    }
    if !(rho > 0.0) || samples == 0 {
        return Err(Error::invalid("rho and the sample count must be positive"));
    }
    let shape = decoders[0].coeff_shape().clone();
    if decoders.iter().any(|d| d.coeff_shape() != &shape) {
        return Err(Error::invalid("checkpoints have different coefficient shapes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let z: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = linop::norm(&z);
            z.into_iter().map(|x| rho * x / n).collect()
        })
        .collect();
    let images: Vec<Vec<Vec<f64>>> = decoders
        .iter()
        .map(|d| par::map_slice(&points, |p| d.synthesize(p)).into_iter().collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..decoders.len() {
        for j in i + 1..decoders.len() {
            let lower_bound = images[i]
                .iter()
                .zip(&images[j])
                .map(|(a, b)| linop::norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()))
                .fold(0.0, f64::max);
            out.push(DeltaEstimate {
                first: i,
                second: j,
                lower_bound,
                samples,
            });
        }
    }
    Ok(out)
}
