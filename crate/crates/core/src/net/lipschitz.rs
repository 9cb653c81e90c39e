//! Upper bounds on the Lipschitz constant of the decoder.

use crate::tensor::Tensor;

use super::DecoderNet;

/// One factor of a layer chain.
#[derive(Clone, Copy, Debug)]
pub enum LayerBound<'a> {
    /// Weights `(cout, cin, k, k)` of a zero-padded convolution.
    Conv(&'a Tensor),
    /// Per-channel scale of an affine layer.
    Affine(&'a Tensor),
    Relu,
    /// A fixed orthonormal Haar resampling.
    Haar,
}

/// Rigorous upper bound on the operator norm of a multichannel convolution.
///
/// Each channel pair is bounded by the l1 norm of its kernel (Young), and the
/// spectral norm of the resulting nonnegative matrix is bounded from above
/// by the Collatz-Wielandt ratio of a positive power-iteration vector.
pub fn conv_norm_bound(w: &Tensor) -> f64 {
    let s = w.shape();
    let (co, ci) = (s[0], s[1]);
    let kk: usize = s[2..].iter().product();
    let mut n = vec![0.0; co * ci];
    for (o, row) in n.chunks_mut(ci).enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let base = (o * ci + i) * kk;
            *v = w.data()[base..base + kk].iter().map(|x| x.abs()).sum();
        }
    }
    let gram = |x: &[f64]| -> Vec<f64> {
        let nx: Vec<f64> = n.chunks(ci).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        let mut out = vec![0.0; ci];
        for (row, &y) in n.chunks(ci).zip(&nx) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * y;
            }
        }
        out
    };
    let mut x = vec![1.0; ci];
    for _ in 0..200 {
        let y = gram(&x);
        let m = y.iter().copied().fold(0.0, f64::max);
        if m == 0.0 {
            return 0.0;
        }
        x = y.iter().map(|v| v / m + 1e-12).collect();
    }
    let y = gram(&x);
    let lambda = y.iter().zip(&x).map(|(a, b)| a / b).fold(0.0, f64::max);
    lambda.sqrt()
}

pub fn chain_bound(layers: &[LayerBound]) -> f64 {
    layers
        .iter()
        .map(|l| match l {
            LayerBound::Conv(w) => conv_norm_bound(w),
            LayerBound::Affine(s) => s.data().iter().map(|v| v.abs()).fold(0.0, f64::max),
            LayerBound::Relu | LayerBound::Haar => 1.0,
        })
        .product()
}

/// Upper bound on `||D(a) - D(b)|| / ||a - b||`.
///
/// Level `l` sees its own detail bands and the decoded lower levels through
/// orthogonal upsamplings, so its bound is `S_l * max(1, B_{l+1})` with `S_l`
/// the product over its two convolution blocks.
pub fn lipschitz_bound(net: &DecoderNet) -> f64 {
    let p = net.params();
    let t = |name: String| p.get(&name).expect("parameter present");
    let mut below = 1.0f64;
    for l in (1..=net.spec().levels).rev() {
        let (w3, s3, w4, s4) = (
            t(format!("dec{l}.w3")),
            t(format!("dec{l}.scale3")),
            t(format!("dec{l}.w4")),
            t(format!("dec{l}.scale4")),
        );
        let stage = chain_bound(&[
            LayerBound::Haar,
            LayerBound::Conv(w3),
            LayerBound::Affine(s3),
            LayerBound::Relu,
            LayerBound::Conv(w4),
            LayerBound::Affine(s4),
            LayerBound::Relu,
        ]);
        below = stage * below.max(1.0);
    }
    conv_norm_bound(t("out.w".into())) * below
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetSpec;
    use crate::solvers::SynthesisOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_by_one_kernel() {
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(conv_norm_bound(&w), 2.0);
        let with_relu = chain_bound(&[LayerBound::Conv(&w), LayerBound::Relu]);
        assert_eq!(with_relu, chain_bound(&[LayerBound::Conv(&w)]));
    }

    #[test]
    fn bounds_dense_spectral_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::new(vec![5, 3, 1, 1], data.clone()).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(5, 3, &data);
        let exact = m.svd(false, false).singular_values.max();
        let bound = conv_norm_bound(&w);
        assert!(bound >= exact * (1.0 - 1e-12));
    }

    #[test]
    fn bound_dominates_sampled_ratios() {
        let spec = NetSpec::new(16, 2, 4, 2).unwrap();
        let dec = DecoderNet::init(&spec, 8).unwrap();
        let bound = lipschitz_bound(&dec);
        let n = spec.pyramid_shape().len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (da, db) = (dec.synthesize(&a).unwrap(), dec.synthesize(&b).unwrap());
            let num = crate::linop::norm(&da.iter().zip(&db).map(|(x, y)| x - y).collect::<Vec<_>>());
            let den = crate::linop::norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            assert!(num <= bound * den);
        }
    }
}
