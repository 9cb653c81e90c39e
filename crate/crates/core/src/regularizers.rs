//! Weighted l1 penalty on coefficient pyramids and anisotropic total variation.

use crate::error::{Error, Result};
use crate::haar::{CoeffPyramid, PyramidShape};
use crate::phantom::Image;

/// Per-coefficient weights of the l1 penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSpec {
    /// `w = 2^-l` for details at level `l`; the approximation band uses `2^-L`.
    Dyadic,
    /// All weights equal to one.
    Uniform,
}

impl WeightSpec {
    pub fn weight(self, level: usize) -> f64 {
        match self {
            WeightSpec::Dyadic => 0.5f64.powi(level as i32),
            WeightSpec::Uniform => 1.0,
        }
    }

    /// Smallest weight over the pyramid.
    pub fn floor(self, shape: &PyramidShape) -> f64 {
        self.weight(shape.levels())
    }

    pub fn weights_for(self, shape: &PyramidShape) -> Vec<f64> {
        shape.level_map().into_iter().map(|l| self.weight(l)).collect()
    }
}

impl std::str::FromStr for WeightSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dyadic" => Ok(WeightSpec::Dyadic),
            "uniform" => Ok(WeightSpec::Uniform),
            other => Err(Error::invalid(format!("unknown weight rule {other:?}"))),
        }
    }
}

pub fn weighted_l1_slice(x: &[f64], weights: &[f64]) -> f64 {
    x.iter().zip(weights).map(|(v, w)| w * v.abs()).sum()
}

pub fn weighted_l1(xi: &CoeffPyramid, w: WeightSpec) -> f64 {
    weighted_l1_slice(xi.data(), &w.weights_for(xi.shape()))
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// In-place soft-thresholding with per-component thresholds `tau * weights[i]`.
pub fn shrink_in_place(x: &mut [f64], tau: f64, weights: &[f64]) {
    for (v, w) in x.iter_mut().zip(weights) {
        *v = soft_threshold(*v, tau * w);
    }
}

/// Proximal map of `tau * R`.
pub fn prox_weighted_l1(xi: &CoeffPyramid, tau: f64, w: WeightSpec) -> Result<CoeffPyramid> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("prox step must be nonnegative, got {tau}")));
    }
    let mut out = xi.clone();
    shrink_in_place(out.data_mut(), tau, &w.weights_for(xi.shape()));
    Ok(out)
}

/// `(||xi||_2, R(xi) / min weight)`; the first never exceeds the second.
pub fn coercivity_bound(xi: &CoeffPyramid, w: WeightSpec) -> (f64, f64) {
    (xi.norm(), weighted_l1(xi, w) / w.floor(xi.shape()))
}

/// Forward differences of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    pub height: usize,
    pub width: usize,
    /// Horizontal differences `u[r, c+1] - u[r, c]`, zero in the last column.
    pub dx: Vec<f64>,
    /// Vertical differences `u[r+1, c] - u[r, c]`, zero in the last row.
    pub dy: Vec<f64>,
}

impl GradField {
    pub fn zeros(height: usize, width: usize) -> Self {
        GradField {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn dot(&self, other: &GradField) -> f64 {
        crate::linop::dot(&self.dx, &other.dx) + crate::linop::dot(&self.dy, &other.dy)
    }
}

pub(crate) fn grad_raw(u: &[f64], h: usize, w: usize, dx: &mut [f64], dy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            dx[i] = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            dy[i] = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// `div = -grad^T`.
pub(crate) fn div_raw(dx: &[f64], dy: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut v = 0.0;
            if c + 1 < w {
                v += dx[i];
            }
            if c > 0 {
                v -= dx[i - 1];
            }
            if r + 1 < h {
                v += dy[i];
            }
            if r > 0 {
                v -= dy[i - w];
            }
            out[i] = v;
        }
    }
}

pub fn grad(u: &Image) -> GradField {
    let mut g = GradField::zeros(u.height(), u.width());
    grad_raw(u.data(), u.height(), u.width(), &mut g.dx, &mut g.dy);
    g
}

pub fn div(p: &GradField) -> Result<Image> {
    let n = p.height * p.width;
    if p.dx.len() != n || p.dy.len() != n {
        return Err(Error::ShapeMismatch {
            op: "div",
            left: vec![p.height, p.width],
            right: vec![p.dx.len(), p.dy.len()],
        });
    }
    let mut out = vec![0.0; n];
    div_raw(&p.dx, &p.dy, p.height, p.width, &mut out);
    Image::new(p.height, p.width, out)
}

/// Anisotropic TV: `sum |dx| + |dy|`.
pub fn tv_seminorm(u: &Image) -> f64 {
    tv_raw(u.data(), u.height(), u.width())
}

pub(crate) fn tv_raw(u: &[f64], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                acc += (u[i + 1] - u[i]).abs();
            }
            if r + 1 < h {
                acc += (u[i + w] - u[i]).abs();
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pyramid(rng: &mut ChaCha8Rng, side: usize, levels: usize) -> CoeffPyramid {
        let shape = PyramidShape::single(side, side, levels).unwrap();
        let data = (0..shape.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        CoeffPyramid::new(shape, data).unwrap()
    }

    fn naive_l1(xi: &CoeffPyramid) -> f64 {
        let s = xi.shape();
        let mut acc = 0.0;
        for l in 1..=s.levels() {
            for &v in &xi.data()[s.detail_range(l)] {
                acc += v.abs() / (1u64 << l) as f64;
            }
        }
        for &v in xi.approx() {
            acc += v.abs() / (1u64 << s.levels()) as f64;
        }
        acc
    }

    #[test]
    fn zero_and_single_coefficient() {
        let shape = PyramidShape::single(8, 8, 2).unwrap();
        let mut xi = CoeffPyramid::zeros(shape.clone());
        assert_eq!(weighted_l1(&xi, WeightSpec::Dyadic), 0.0);
        assert_eq!(coercivity_bound(&xi, WeightSpec::Dyadic), (0.0, 0.0));
        let i = shape.detail_range(1).start + 5;
        xi.data_mut()[i] = -2.0;
        assert_eq!(weighted_l1(&xi, WeightSpec::Dyadic), 1.0);
        let (lhs, rhs) = coercivity_bound(&xi, WeightSpec::Dyadic);
        assert_eq!(lhs, 2.0);
        assert_eq!(rhs, 0.5 / 0.25 * 2.0);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for levels in 1..=4 {
            let xi = random_pyramid(&mut rng, 32, levels);
            let a = weighted_l1(&xi, WeightSpec::Dyadic);
            assert!((a - naive_l1(&xi)).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn prox_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.7, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
        let xi = CoeffPyramid::zeros(PyramidShape::single(4, 4, 1).unwrap());
        assert!(prox_weighted_l1(&xi, -1.0, WeightSpec::Uniform).is_err());
    }

    #[test]
    fn prox_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let t: f64 = rng.gen_range(0.0..2.0);
            let mut best = (f64::INFINITY, 0.0);
            let mut z = -4.0;
            while z <= 4.0 {
                let f = 0.5 * (z - x) * (z - x) + t * z.abs();
                if f < best.0 {
                    best = (f, z);
                }
                z += 1e-4;
            }
            assert!((soft_threshold(x, t) - best.1).abs() < 1e-3);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_seminorm(&Image::new(3, 3, vec![0.4; 9]).unwrap()), 0.0);
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        assert_eq!(tv_seminorm(&Image::new(1, 9, v).unwrap()), 2.0);
    }

    #[test]
    fn grad_div_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (h, w) in [(1, 7), (5, 1), (16, 16), (9, 13)] {
            let u = Image::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let mut p = GradField::zeros(h, w);
            p.dx.iter_mut().chain(p.dy.iter_mut()).for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let lhs = grad(&u).dot(&p);
            let rhs = -crate::linop::dot(u.data(), div(&p).unwrap().data());
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 16)
    }

    fn pyr(v: Vec<f64>) -> CoeffPyramid {
        CoeffPyramid::new(PyramidShape::single(4, 4, 2).unwrap(), v).unwrap()
    }

    proptest! {
        #[test]
        fn l1_is_a_norm(a in vec_strategy(), b in vec_strategy(), s in -3.0f64..3.0) {
            let w = WeightSpec::Dyadic;
            let (pa, pb) = (pyr(a.clone()), pyr(b.clone()));
            let sum = pyr(a.iter().zip(&b).map(|(x, y)| x + y).collect());
            let scaled = pyr(a.iter().map(|x| s * x).collect());
            let ra = weighted_l1(&pa, w);
            prop_assert!(weighted_l1(&sum, w) <= ra + weighted_l1(&pb, w) + 1e-12);
            prop_assert!((weighted_l1(&scaled, w) - s.abs() * ra).abs() <= 1e-12 * (1.0 + ra));
            let mid = pyr(a.iter().zip(&b).map(|(x, y)| 0.3 * x + 0.7 * y).collect());
            prop_assert!(weighted_l1(&mid, w) <= 0.3 * ra + 0.7 * weighted_l1(&pb, w) + 1e-12);
        }

        #[test]
        fn prox_firmly_nonexpansive(a in vec_strategy(), b in vec_strategy(), tau in 0.0f64..2.0) {
            let w = WeightSpec::Dyadic;
            let pa = prox_weighted_l1(&pyr(a.clone()), tau, w).unwrap();
            let pb = prox_weighted_l1(&pyr(b.clone()), tau, w).unwrap();
            let d: Vec<f64> = pa.data().iter().zip(pb.data()).map(|(x, y)| x - y).collect();
            let e: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let dd = crate::linop::dot(&d, &d);
            prop_assert!(dd <= crate::linop::dot(&d, &e) + 1e-12);
            prop_assert!(dd.sqrt() <= crate::linop::norm(&e) + 1e-12);
        }

        #[test]
        fn coercivity_holds(a in vec_strategy()) {
            let (lhs, rhs) = coercivity_bound(&pyr(a), WeightSpec::Dyadic);
            prop_assert!(lhs <= rhs * (1.0 + 1e-15));
        }

        #[test]
        fn tv_zero_iff_constant(v in proptest::collection::vec(-1.0f64..1.0, 20), c in -1.0f64..1.0) {
            let u = Image::new(4, 5, v.clone()).unwrap();
            let constant = v.iter().all(|&x| x == v[0]);
            prop_assert_eq!(tv_seminorm(&u) == 0.0, constant);
            prop_assert_eq!(tv_seminorm(&Image::new(4, 5, vec![c; 20]).unwrap()), 0.0);
        }
    }
}
