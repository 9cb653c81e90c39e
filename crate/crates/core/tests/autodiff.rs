mod common {
    pub mod gradcheck;
}

use common::gradcheck::{cases, relative_error};
use desyre::tensor::{vjp, Tape};
use desyre::Tensor;
use proptest::prelude::*;

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..3 {
        for case in cases(seed) {
            let err = relative_error(&case, 1e-6);
            assert!(err < 1e-5, "{}: relative error {err:e}", case.name);
        }
    }
}

#[test]
fn composite_chain_matches_central_differences() {
    // conv -> affine -> relu -> subsample -> upsample -> sum of squares
    let build = |t: &mut Tape, v: &[desyre::tensor::Var]| {
        let c = t.conv2d(v[0], v[1], None)?;
        let a = t.affine(c, v[2], v[3])?;
        let r = t.relu(a)?;
        let s = t.subsample(r, desyre::tensor::HaarFilter::Low)?;
        let u = t.upsample(s, desyre::tensor::HaarFilter::Low)?;
        t.sum_squares(u)
    };
    let x = Tensor::new(vec![1, 4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let w = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.91).cos() * 0.5).collect()).unwrap();
    let sc = Tensor::new(vec![2], vec![1.3, -0.7]).unwrap();
    let sh = Tensor::new(vec![2], vec![0.05, 0.11]).unwrap();
    let inputs = vec![x, w, sc, sh];
    let grads = vjp(build, &inputs, &Tensor::scalar(1.0)).unwrap();
    let value = |inp: &[Tensor]| {
        let mut t = Tape::new();
        let v: Vec<_> = inp.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &v).unwrap();
        t.value(out).data()[0]
    };
    let h = 1e-6;
    for (i, g) in grads.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..g.len() {
            let mut p = inputs.clone();
            p[i].data_mut()[j] += h;
            let mut m = inputs.clone();
            m[i].data_mut()[j] -= h;
            let fd = (value(&p) - value(&m)) / (2.0 * h);
            num += (fd - g.data()[j]).powi(2);
            den += g.data()[j].powi(2);
        }
        assert!(num.sqrt() < 1e-5 * den.sqrt().max(1e-12), "input {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vjp_is_linear_in_the_cotangent(data in prop::collection::vec(-2.0f64..2.0, 18), a in -3.0f64..3.0) {
        let x = Tensor::new(vec![2, 3, 3], data).unwrap();
        let net = |t: &mut Tape, v: &[desyre::tensor::Var]| t.relu(v[0]);
        let c1 = Tensor::new(vec![2, 3, 3], (0..18).map(|i| i as f64 / 9.0 - 1.0).collect()).unwrap();
        let c2 = Tensor::new(vec![2, 3, 3], c1.data().iter().map(|v| a * v).collect()).unwrap();
        let g1 = vjp(net, std::slice::from_ref(&x), &c1).unwrap();
        let g2 = vjp(net, &[x], &c2).unwrap();
        for (p, q) in g1[0].data().iter().zip(g2[0].data()) {
            prop_assert!((a * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}
