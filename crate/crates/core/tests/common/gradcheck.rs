//! Central finite-difference checks for tape primitives.

use desyre::tensor::{HaarFilter, Primitive, Tape};
use desyre::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub name: &'static str,
    pub op: Primitive,
    pub inputs: Vec<Tensor>,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    // magnitudes in [0.1, 1] keep kinks of relu and |x| out of the stencil
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let weights: Vec<f64> = (0..12).map(|i| 0.25 + i as f64 / 8.0).collect();
    vec![
        Case {
            name: "conv2d",
            op: Primitive::Conv2d,
            inputs: vec![random(&[2, 5, 4], r), random(&[3, 2, 3, 3], r)],
        },
        Case {
            name: "conv2d+bias",
            op: Primitive::Conv2d,
            inputs: vec![random(&[2, 4, 4], r), random(&[3, 2, 3, 3], r), random(&[3], r)],
        },
        Case {
            name: "conv2d-1x1",
            op: Primitive::Conv2d,
            inputs: vec![random(&[3, 4, 4], r), random(&[1, 3, 1, 1], r), random(&[1], r)],
        },
        Case {
            name: "conv2d-transpose",
            op: Primitive::Conv2dTranspose,
            inputs: vec![random(&[3, 4, 5], r), random(&[3, 2, 3, 3], r)],
        },
        Case {
            name: "relu",
            op: Primitive::Relu,
            inputs: vec![random(&[2, 3, 3], r)],
        },
        Case {
            name: "affine",
            op: Primitive::AffinePerChannel,
            inputs: vec![random(&[3, 4, 4], r), random(&[3], r), random(&[3], r)],
        },
        Case {
            name: "add",
            op: Primitive::Add,
            inputs: vec![random(&[2, 3, 3], r), random(&[2, 3, 3], r)],
        },
        Case {
            name: "concat",
            op: Primitive::ConcatChannels,
            inputs: vec![random(&[2, 4, 4], r), random(&[1, 4, 4], r), random(&[3, 4, 4], r)],
        },
        Case {
            name: "subsample-low",
            op: Primitive::Subsample(HaarFilter::Low),
            inputs: vec![random(&[2, 4, 6], r)],
        },
        Case {
            name: "subsample-detail",
            op: Primitive::Subsample(HaarFilter::Detail),
            inputs: vec![random(&[2, 4, 6], r)],
        },
        Case {
            name: "upsample-low",
            op: Primitive::Upsample(HaarFilter::Low),
            inputs: vec![random(&[2, 3, 2], r)],
        },
        Case {
            name: "upsample-detail",
            op: Primitive::Upsample(HaarFilter::Detail),
            inputs: vec![random(&[6, 3, 2], r)],
        },
        Case {
            name: "scale",
            op: Primitive::ScalarScale(-1.7),
            inputs: vec![random(&[2, 3, 3], r)],
        },
        Case {
            name: "sum",
            op: Primitive::Sum,
            inputs: vec![random(&[2, 3, 3], r)],
        },
        Case {
            name: "sum-abs-weighted",
            op: Primitive::SumAbsWeighted(weights),
            inputs: vec![random(&[3, 2, 2], r)],
        },
        Case {
            name: "sum-squares",
            op: Primitive::SumSquares,
            inputs: vec![random(&[2, 3, 3], r)],
        },
    ]
}

fn loss(op: &Primitive, inputs: &[Tensor], cot: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = tape.apply(op.clone(), &vars).unwrap();
    tape.value(out).data().iter().zip(cot).map(|(a, b)| a * b).sum()
}

/// Largest norm-wise relative error between the tape gradient of
/// `<c, op(inputs)>` and its central finite difference, over all inputs.
pub fn relative_error(case: &Case, h: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = tape.apply(case.op.clone(), &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cot: Vec<f64> = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads = tape.backward_from(out, &Tensor::new(shape, cot.clone()).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for (i, &v) in vars.iter().enumerate() {
        let g = grads.get(v);
        let mut fd = vec![0.0; g.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= h;
            *slot = (loss(&case.op, &plus, &cot) - loss(&case.op, &minus, &cot)) / (2.0 * h);
        }
        let diff: f64 = fd.iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = g.data().iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}
