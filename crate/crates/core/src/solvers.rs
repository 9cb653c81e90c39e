//! Accelerated proximal gradient (FISTA) and the Chambolle-Pock primal-dual
//! iteration for TV-regularized least squares.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::haar::{haar_analysis, haar_synthesis, CoeffPyramid, PyramidShape};
use crate::linop::{self, LinearOperator};
use crate::phantom::Image;
use crate::radon::Sinogram;
use crate::regularizers::{div_raw, grad_raw, shrink_in_place, tv_raw, weighted_l1_slice, GradField, WeightSpec};

/// `min f(x) + g(x)` with smooth `f` and prox-friendly `g`.
pub trait CompositeProblem {
    fn dim(&self) -> usize;
    fn grad_f(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Replaces `x` by `prox_{step g}(x)`.
    fn prox_g(&self, x: &mut [f64], step: f64);
    /// `(f(x) + g(x), data residual)`; only called when tracing.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)>;
    /// `f(x)`; required for backtracking.
    fn f_value(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::invalid("this problem does not expose f, so FISTA cannot backtrack"))
    }
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.f_value(x)?, self.grad_f(x)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FistaConfig {
    pub step: f64,
    pub iterations: usize,
    /// Stop once `||x_k - x_{k-1}|| <= tol * max(1, ||x_k||)`.
    pub tol: Option<f64>,
    pub record_trace: bool,
    /// Shrink factor for backtracking; `step` is then the initial step.
    pub backtrack: Option<f64>,
}

impl FistaConfig {
    pub fn new(step: f64, iterations: usize) -> Result<Self> {
        let cfg = FistaConfig {
            step,
            iterations,
            tol: None,
            record_trace: true,
            backtrack: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        if let Some(eta) = self.backtrack {
            if !(eta > 1.0) || !eta.is_finite() {
                return Err(Error::invalid(format!("backtracking factor must exceed 1, got {eta}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// Objective after each iteration (empty unless tracing).
    pub objective: Vec<f64>,
    /// Data residual `||K u - v||` after each iteration (empty unless tracing).
    pub residual: Vec<f64>,
    pub initial_objective: Option<f64>,
    pub initial_residual: Option<f64>,
    pub iterations: usize,
    /// Whether the stopping tolerance was met before the budget ran out.
    pub converged: bool,
    /// Step in use at the end (differs from the configured one after backtracking).
    pub final_step: f64,
    pub seconds: f64,
}

impl SolveReport {
    /// Running minimum of the objective trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.objective
            .iter()
            .map(|&o| {
                best = best.min(o);
                best
            })
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iter,objective,residual")?;
        for (i, (o, r)) in self.objective.iter().zip(&self.residual).enumerate() {
            writeln!(w, "{},{},{}", i + 1, o, r)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn check_finite(x: &[f64], iteration: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { iteration })
    }
}

/// Per-iteration step growth under backtracking, capped at the configured step.
const STEP_RECOVERY: f64 = 1.1;

/// Beck-Teboulle FISTA with `t_1 = 1`.
///
/// With a constant step the smooth part must have a Lipschitz gradient
/// with constant at most `1 / step`. With `backtrack = Some(eta)` the step
/// is divided by `eta` until the quadratic upper bound holds at the trial
/// point, then regrows by `STEP_RECOVERY` per iteration up to the configured
/// step. Momentum is restarted whenever it points against the last step.
/// That variant suits smooth parts whose gradient constant is unknown.
pub fn fista(problem: &dyn CompositeProblem, x0: &[f64], cfg: &FistaConfig) -> Result<SolveReport> {
    cfg.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::ShapeMismatch {
            op: "fista",
            left: vec![problem.dim()],
            right: vec![x0.len()],
        });
    }
    let start = Instant::now();
    let mut report = SolveReport::default();
    if cfg.record_trace {
        let (o, r) = problem.evaluate(x0)?;
        report.initial_objective = Some(o);
        report.initial_residual = Some(r);
    }
    let mut x_prev = x0.to_vec();
    let mut y = x0.to_vec();
    let mut t = 1.0f64;
    let mut step = cfg.step;
    for k in 1..=cfg.iterations {
        let x = match cfg.backtrack {
            None => {
                let g = problem.grad_f(&y)?;
                let mut x: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                problem.prox_g(&mut x, step);
                x
            }
            Some(eta) => {
                step = (step * STEP_RECOVERY).min(cfg.step);
                let (fy, g) = problem.value_and_grad(&y)?;
                check_finite(&g, k)?;
                loop {
                    let mut x: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                    problem.prox_g(&mut x, step);
                    let (mut lin, mut quad) = (0.0, 0.0);
                    for ((xi, yi), gi) in x.iter().zip(&y).zip(&g) {
                        lin += gi * (xi - yi);
                        quad += (xi - yi) * (xi - yi);
                    }
                    let fx = problem.f_value(&x)?;
                    if fx.is_finite() && fx <= fy + lin + quad / (2.0 * step) + 1e-12 * fy.abs() {
                        break x;
                    }
                    step /= eta;
                    if step < cfg.step * 1e-12 {
                        return Err(Error::Diverged { iteration: k });
                    }
                }
            }
        };
        check_finite(&x, k)?;
        let mut t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if cfg.backtrack.is_some() {
            let uphill: f64 = y.iter().zip(&x).zip(&x_prev).map(|((yi, xi), pi)| (yi - xi) * (xi - pi)).sum();
            if uphill > 0.0 {
                t = 1.0;
                t_next = 1.0;
            }
        }
        let beta = (t - 1.0) / t_next;
        for ((yi, &xi), &pi) in y.iter_mut().zip(&x).zip(&x_prev) {
            *yi = xi + beta * (xi - pi);
        }
        if cfg.record_trace {
            let (o, r) = problem.evaluate(&x)?;
            if !o.is_finite() {
                return Err(Error::Diverged { iteration: k });
            }
            report.objective.push(o);
            report.residual.push(r);
        }
        let change = x.iter().zip(&x_prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        x_prev = x;
        t = t_next;
        report.iterations = k;
        if let Some(tol) = cfg.tol {
            if change <= tol * linop::norm(&x_prev).max(1.0) {
                report.converged = true;
                break;
            }
        }
    }
    report.x = x_prev;
    report.final_step = step;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// A composite problem assembled from closures.
pub struct FnProblem<G, P, E> {
    pub dim: usize,
    pub grad: G,
    pub prox: P,
    pub eval: E,
}

impl<G, P, E> CompositeProblem for FnProblem<G, P, E>
where
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64], f64),
    E: Fn(&[f64]) -> (f64, f64),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn grad_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad)(x))
    }
    fn prox_g(&self, x: &mut [f64], step: f64) {
        (self.prox)(x, step)
    }
    fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok((self.eval)(x))
    }
}

/// Maps coefficients to images; the learned decoder and the Haar synthesis
/// both implement it.
pub trait SynthesisOperator: Sync {
    fn coeff_shape(&self) -> &PyramidShape;
    fn image_side(&self) -> usize;
    fn synthesize(&self, xi: &[f64]) -> Result<Vec<f64>>;
    /// Returns `D(xi)` and `J_D(xi)^T c` where `c = cotangent(D(xi))`.
    fn synthesize_vjp(
        &self,
        xi: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Orthonormal Haar synthesis of a single-channel pyramid.
#[derive(Clone, Debug)]
pub struct HaarSynthesis {
    shape: PyramidShape,
}

impl HaarSynthesis {
    pub fn new(side: usize, levels: usize) -> Result<Self> {
        Ok(HaarSynthesis {
            shape: PyramidShape::single(side, side, levels)?,
        })
    }
}

impl SynthesisOperator for HaarSynthesis {
    fn coeff_shape(&self) -> &PyramidShape {
        &self.shape
    }
    fn image_side(&self) -> usize {
        self.shape.height()
    }
    fn synthesize(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(haar_synthesis(&CoeffPyramid::new(self.shape.clone(), xi.to_vec())?)?.into_data())
    }
    fn synthesize_vjp(
        &self,
        xi: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let u = self.synthesize(xi)?;
        let c = cotangent(&u)?;
        let side = self.image_side();
        let g = haar_analysis(&Image::new(side, side, c)?, self.shape.levels())?;
        Ok((u, g.into_data()))
    }
}

/// `||K D(xi) - v||^2 + alpha * sum w |xi|` over flat coefficient vectors.
pub struct SynthesisProblem<'a> {
    pub k: &'a dyn LinearOperator,
    pub v: &'a [f64],
    pub d: &'a dyn SynthesisOperator,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

impl<'a> SynthesisProblem<'a> {
    pub fn new(
        k: &'a dyn LinearOperator,
        v: &'a [f64],
        d: &'a dyn SynthesisOperator,
        alpha: f64,
        w: WeightSpec,
    ) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        let side = d.image_side();
        if k.input_len() != side * side || k.output_len() != v.len() {
            return Err(Error::ShapeMismatch {
                op: "synthesis-problem",
                left: vec![k.input_len(), k.output_len()],
                right: vec![side * side, v.len()],
            });
        }
        Ok(SynthesisProblem {
            k,
            v,
            d,
            alpha,
            weights: w.weights_for(d.coeff_shape()),
        })
    }
}

impl CompositeProblem for SynthesisProblem<'_> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn grad_f(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut cot = |u: &[f64]| -> Result<Vec<f64>> {
            let r: Vec<f64> = self.k.apply(u).iter().zip(self.v).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok(self.k.apply_adjoint(&r))
        };
        Ok(self.d.synthesize_vjp(xi, &mut cot)?.1)
    }

    fn prox_g(&self, x: &mut [f64], step: f64) {
        shrink_in_place(x, step * self.alpha, &self.weights);
    }

    fn evaluate(&self, xi: &[f64]) -> Result<(f64, f64)> {
        let res = self.f_value(xi)?.sqrt();
        Ok((res * res + self.alpha * weighted_l1_slice(xi, &self.weights), res))
    }

    fn f_value(&self, xi: &[f64]) -> Result<f64> {
        let u = self.d.synthesize(xi)?;
        Ok(linop::norm(&sub(&self.k.apply(&u), self.v)).powi(2))
    }

    fn value_and_grad(&self, xi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut f = 0.0;
        let mut cot = |u: &[f64]| -> Result<Vec<f64>> {
            let r = sub(&self.k.apply(u), self.v);
            f = linop::norm(&r).powi(2);
            Ok(self.k.apply_adjoint(&r.iter().map(|x| 2.0 * x).collect::<Vec<_>>()))
        };
        let g = self.d.synthesize_vjp(xi, &mut cot)?.1;
        Ok((f, g))
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Exact value of `||K D(xi) - v||^2 + alpha R(xi)`.
pub fn objective_eval_desyre(
    xi: &CoeffPyramid,
    v: &Sinogram,
    d: &dyn SynthesisOperator,
    k: &dyn LinearOperator,
    alpha: f64,
    w: WeightSpec,
) -> Result<f64> {
    if xi.shape() != d.coeff_shape() {
        return Err(Error::invalid("coefficient pyramid does not match the synthesis operator"));
    }
    let p = SynthesisProblem::new(k, v.data(), d, alpha, w)?;
    Ok(p.evaluate(xi.data())?.0)
}

/// Primal-dual step sizes for the stacked operator `(K, grad)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdConfig {
    tau: f64,
    sigma: f64,
    iterations: usize,
    pub record_trace: bool,
}

impl PdConfig {
    /// `k_norm` must bound `||K||`; the gradient contributes at most 8 to `||A||^2`.
    pub fn new(tau: f64, sigma: f64, iterations: usize, k_norm: f64) -> Result<Self> {
        if !(tau > 0.0 && sigma > 0.0) || iterations == 0 {
            return Err(Error::invalid(format!(
                "primal-dual needs positive steps and iterations, got tau={tau} sigma={sigma} iterations={iterations}"
            )));
        }
        let bound = k_norm * k_norm + 8.0;
        if tau * sigma * bound > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "step condition violated: tau*sigma*||A||^2 = {} > 1",
                tau * sigma * bound
            )));
        }
        Ok(PdConfig {
            tau,
            sigma,
            iterations,
            record_trace: true,
        })
    }

    /// `tau = sigma = 1 / ||A||`.
    pub fn balanced(k_norm: f64, iterations: usize) -> Result<Self> {
        let s = 1.0 / (k_norm * k_norm + 8.0).sqrt();
        PdConfig::new(s, s, iterations, k_norm)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Primal iterate report plus the final TV dual variable.
#[derive(Clone, Debug)]
pub struct PdReport {
    pub report: SolveReport,
    pub dual_tv: GradField,
}

/// Chambolle-Pock for `min_u ||K u - v||^2 + alpha ||grad u||_1` (anisotropic).
pub fn chambolle_pock_tv(
    k: &dyn LinearOperator,
    v: &[f64],
    side: (usize, usize),
    alpha: f64,
    cfg: &PdConfig,
    x0: &[f64],
) -> Result<PdReport> {
    let (h, w) = side;
    let n = h * w;
    if k.input_len() != n || x0.len() != n || k.output_len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "chambolle-pock",
            left: vec![k.input_len(), k.output_len()],
            right: vec![n, v.len()],
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
    }
    let start = Instant::now();
    let (tau, sigma) = (cfg.tau, cfg.sigma);
    let mut report = SolveReport::default();
    let mut u = x0.to_vec();
    let mut ku = k.apply(&u);
    let mut kbar = ku.clone();
    let mut ubar = u.clone();
    let mut q = vec![0.0; v.len()];
    let mut p = GradField::zeros(h, w);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut dv = vec![0.0; n];
    let eval = |u: &[f64], ku: &[f64]| {
        let r = linop::norm(&sub(ku, v));
        (r * r + alpha * tv_raw(u, h, w), r)
    };
    if cfg.record_trace {
        let (o, r) = eval(&u, &ku);
        report.initial_objective = Some(o);
        report.initial_residual = Some(r);
    }
    for it in 1..=cfg.iterations {
        let scale = 1.0 / (1.0 + sigma / 2.0);
        for ((qi, &ki), &vi) in q.iter_mut().zip(&kbar).zip(v) {
            *qi = (*qi + sigma * (ki - vi)) * scale;
        }
        grad_raw(&ubar, h, w, &mut gx, &mut gy);
        for (pi, gi) in p.dx.iter_mut().zip(&gx).chain(p.dy.iter_mut().zip(&gy)) {
            *pi = (*pi + sigma * gi).clamp(-alpha, alpha);
        }
        let kt = k.apply_adjoint(&q);
        div_raw(&p.dx, &p.dy, h, w, &mut dv);
        let u_old = std::mem::take(&mut u);
        u = u_old.iter().zip(&kt).zip(&dv).map(|((x, a), b)| x - tau * (a - b)).collect();
        check_finite(&u, it)?;
        let ku_new = k.apply(&u);
        for i in 0..n {
            ubar[i] = 2.0 * u[i] - u_old[i];
        }
        for ((kb, &a), &b) in kbar.iter_mut().zip(&ku_new).zip(&ku) {
            *kb = 2.0 * a - b;
        }
        ku = ku_new;
        if cfg.record_trace {
            let (o, r) = eval(&u, &ku);
            report.objective.push(o);
            report.residual.push(r);
        }
        report.iterations = it;
    }
    report.x = u;
    report.converged = true;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(PdReport { report, dual_tv: p })
}

/// Primal minus dual objective for TV denoising `||u - v||^2 + alpha TV(u)`,
/// with `p` a feasible dual (`|p| <= alpha`).
pub fn tv_denoise_gap(u: &[f64], p: &GradField, v: &[f64], alpha: f64) -> f64 {
    let (h, w) = (p.height, p.width);
    let r = linop::norm(&sub(u, v));
    let primal = r * r + alpha * tv_raw(u, h, w);
    let mut dv = vec![0.0; h * w];
    div_raw(&p.dx, &p.dy, h, w, &mut dv);
    let dual = -linop::dot(v, &dv) - linop::dot(&dv, &dv) / 4.0;
    primal - dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::ScaledIdentity;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn least_squares<'a>(
        a: &'a DMatrix<f64>,
        b: &'a [f64],
        alpha: f64,
    ) -> FnProblem<impl Fn(&[f64]) -> Vec<f64> + 'a, impl Fn(&mut [f64], f64), impl Fn(&[f64]) -> (f64, f64) + 'a> {
        FnProblem {
            dim: a.ncols(),
            grad: move |x: &[f64]| a.apply_adjoint(&sub(&a.apply(x), b)).iter().map(|g| 2.0 * g).collect(),
            prox: move |x: &mut [f64], s: f64| x.iter_mut().for_each(|v| *v = crate::regularizers::soft_threshold(*v, s * alpha)),
            eval: move |x: &[f64]| {
                let r = linop::norm(&sub(&a.apply(x), b));
                (r * r + alpha * x.iter().map(|v| v.abs()).sum::<f64>(), r)
            },
        }
    }

    #[test]
    fn scalar_soft_threshold_problem() {
        let p = FnProblem {
            dim: 1,
            grad: |x: &[f64]| vec![x[0] - 1.0],
            prox: |x: &mut [f64], s: f64| x[0] = crate::regularizers::soft_threshold(x[0], s),
            eval: |x: &[f64]| (0.5 * (x[0] - 1.0).powi(2) + x[0].abs(), 0.0),
        };
        let r = fista(&p, &[5.0], &FistaConfig::new(0.5, 500).unwrap()).unwrap();
        assert!(r.x[0].abs() < 1e-6, "{}", r.x[0]);
        // with the unit weight scaled to one half the minimizer is 1 - 1/2
        let p = FnProblem {
            dim: 1,
            grad: |x: &[f64]| vec![x[0] - 1.0],
            prox: |x: &mut [f64], s: f64| x[0] = crate::regularizers::soft_threshold(x[0], 0.5 * s),
            eval: |x: &[f64]| (0.5 * (x[0] - 1.0).powi(2) + 0.5 * x[0].abs(), 0.0),
        };
        let r = fista(&p, &[-3.0], &FistaConfig::new(0.5, 500).unwrap()).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-6);
        assert_eq!(r.objective.len(), r.iterations);
    }

    #[test]
    fn plain_gradient_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::<f64>::identity(5, 5) * 3.0 + gaussian(5, 5, &mut rng) * 0.3;
        let b: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let p = least_squares(&a, &b, 0.0);
        let l = 2.0 * a.clone().svd(false, false).singular_values.max().powi(2);
        let r = fista(&p, &[0.0; 5], &FistaConfig::new(1.0 / l, 3000).unwrap()).unwrap();
        let exact = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..5 {
            assert!((r.x[i] - exact[i]).abs() < 1e-8);
        }
    }

    fn lasso_oracle(a: &DMatrix<f64>, b: &[f64], alpha: f64) -> f64 {
        let n = a.ncols();
        let obj = |x: &[f64]| {
            let r = linop::norm(&sub(&a.apply(x), b));
            r * r + alpha * x.iter().map(|v| v.abs()).sum::<f64>()
        };
        let mut best = obj(&vec![0.0; n]);
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if support.len() > a.nrows() {
                continue;
            }
            let sub_a = a.select_columns(&support);
            let gram = sub_a.transpose() * &sub_a * 2.0;
            let rhs0 = sub_a.transpose() * DVector::from_column_slice(b) * 2.0;
            let Some(inv) = gram.try_inverse() else { continue };
            for signs in 0u32..(1 << support.len()) {
                let s = DVector::from_fn(support.len(), |i, _| if signs >> i & 1 == 1 { 1.0 } else { -1.0 });
                let xs = &inv * (&rhs0 - s * alpha);
                let mut x = vec![0.0; n];
                for (k, &i) in support.iter().enumerate() {
                    x[i] = xs[k];
                }
                best = best.min(obj(&x));
            }
        }
        best
    }

    #[test]
    fn lasso_matches_sign_pattern_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = gaussian(6, 10, &mut rng);
        let b: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let alpha = 0.1;
        let p = least_squares(&a, &b, alpha);
        let l = 2.0 * a.clone().svd(false, false).singular_values.max().powi(2);
        let r = fista(&p, &[0.0; 10], &FistaConfig::new(1.0 / l, 5000).unwrap()).unwrap();
        let got = p.evaluate(&r.x).unwrap().0;
        let oracle = lasso_oracle(&a, &b, alpha);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        assert!(got >= oracle - 1e-9);
        let best = r.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Lasso<'a> {
        a: &'a DMatrix<f64>,
        b: &'a [f64],
        alpha: f64,
    }

    impl CompositeProblem for Lasso<'_> {
        fn dim(&self) -> usize {
            self.a.ncols()
        }
        fn grad_f(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.a.apply_adjoint(&sub(&self.a.apply(x), self.b)).iter().map(|g| 2.0 * g).collect())
        }
        fn prox_g(&self, x: &mut [f64], s: f64) {
            x.iter_mut().for_each(|v| *v = crate::regularizers::soft_threshold(*v, s * self.alpha));
        }
        fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
            let r = self.f_value(x)?.sqrt();
            Ok((r * r + self.alpha * x.iter().map(|v| v.abs()).sum::<f64>(), r))
        }
        fn f_value(&self, x: &[f64]) -> Result<f64> {
            Ok(linop::norm(&sub(&self.a.apply(x), self.b)).powi(2))
        }
    }

    #[test]
    fn backtracking_recovers_from_oversized_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = gaussian(6, 10, &mut rng);
        let b: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let p = Lasso { a: &a, b: &b, alpha: 0.1 };
        let l = 2.0 * a.clone().svd(false, false).singular_values.max().powi(2);
        let mut cfg = FistaConfig::new(1000.0 / l, 5000).unwrap();
        cfg.backtrack = Some(2.0);
        let r = fista(&p, &[0.0; 10], &cfg).unwrap();
        let got = p.evaluate(&r.x).unwrap().0;
        let oracle = lasso_oracle(&a, &b, 0.1);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");

        let q = least_squares(&a, &b, 0.1);
        assert!(fista(&q, &[0.0; 10], &cfg).is_err());
        cfg.backtrack = Some(1.0);
        assert!(fista(&p, &[0.0; 10], &cfg).is_err());
    }

    #[test]
    fn stays_finite_with_safe_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = gaussian(8, 12, &mut rng);
            let b: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let p = least_squares(&a, &b, 0.05);
            let l = 2.0 * linop::operator_norm(&a, 200, 1).unwrap().value.powi(2) * 1.01;
            let r = fista(&p, &[0.0; 12], &FistaConfig::new(1.0 / l, 300).unwrap());
            assert!(r.is_ok());
        }
    }

    #[test]
    fn divergence_reports_iteration() {
        let a = DMatrix::<f64>::identity(3, 3) * 10.0;
        let b = [1.0, 2.0, 3.0];
        let p = least_squares(&a, &b, 0.0);
        match fista(&p, &[1.0; 3], &FistaConfig::new(10.0, 10_000).unwrap()) {
            Err(Error::Diverged { iteration }) => assert!(iteration > 1),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(FistaConfig::new(0.0, 10).is_err());
        assert!(FistaConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn pd_rejects_large_steps() {
        assert!(PdConfig::new(1.0, 1.0, 10, 1.0).is_err());
        assert!(PdConfig::balanced(2.0, 10).is_ok());
    }

    fn blocky(side: usize) -> Vec<f64> {
        (0..side * side)
            .map(|i| {
                let (r, c) = (i / side, i % side);
                if (4..12).contains(&r) && (3..9).contains(&c) { 1.0 } else if c > 11 { 0.5 } else { 0.0 }
            })
            .collect()
    }

    #[test]
    fn denoising_converges_to_long_run() {
        let side = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = blocky(side).iter().map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let id = ScaledIdentity { n: side * side, factor: 1.0 };
        let run = |iters| {
            let mut cfg = PdConfig::balanced(1.0, iters).unwrap();
            cfg.record_trace = false;
            chambolle_pock_tv(&id, &v, (side, side), 0.2, &cfg, &v).unwrap()
        };
        let reference = run(50_000);
        let short = run(5_000);
        let dev = short.report.x.iter().zip(&reference.report.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-5, "{dev}");
        let initial = tv_denoise_gap(&v, &GradField::zeros(side, side), &v, 0.2);
        let last = tv_denoise_gap(&reference.report.x, &reference.dual_tv, &v, 0.2);
        assert!(last >= -1e-9 && last < 1e-6 * initial, "{last} vs {initial}");
    }

    #[test]
    fn huge_alpha_flattens() {
        let side = 16;
        let v = blocky(side);
        let id = ScaledIdentity { n: side * side, factor: 1.0 };
        let cfg = PdConfig::balanced(1.0, 3000).unwrap();
        let r = chambolle_pock_tv(&id, &v, (side, side), 1e4, &cfg, &v).unwrap();
        assert!(tv_raw(&r.report.x, side, side) < 1e-3 * tv_raw(&v, side, side));
    }
}
