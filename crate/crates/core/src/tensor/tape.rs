use crate::error::{Error, Result};
use crate::haar::{band_down, band_up, Band, DETAIL_BANDS};

use super::kernels::{conv2d_forward, conv2d_input_grad, conv2d_weight_grad, ConvDims};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which fixed Haar filter a resampling primitive uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HaarFilter {
    /// The low-pass (approximation) filter; channel count is unchanged.
    Low,
    /// The three high-pass filters. Subsampling maps `c` channels to `3c`
    /// (band-major: HL, LH, HH); upsampling maps `3c` to `3c`, one band each.
    Detail,
}

/// The recordable operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[x (ci,h,w), w (co,ci,k,k)]` or with a trailing bias `(co)`.
    Conv2d,
    /// `[y (co,h,w), w (co,ci,k,k)]`: the adjoint of `Conv2d` in its input.
    Conv2dTranspose,
    Relu,
    /// `[x (c,h,w), scale (c), shift (c)]`.
    AffinePerChannel,
    Add,
    ConcatChannels,
    Subsample(HaarFilter),
    Upsample(HaarFilter),
    ScalarScale(f64),
    Sum,
    /// Weighted sum of absolute values; one weight per element.
    SumAbsWeighted(Vec<f64>),
    SumSquares,
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Conv2d => "conv2d",
            Primitive::Conv2dTranspose => "conv2d-transpose",
            Primitive::Relu => "relu",
            Primitive::AffinePerChannel => "affine-per-channel",
            Primitive::Add => "add",
            Primitive::ConcatChannels => "concat-channels",
            Primitive::Subsample(_) => "subsample",
            Primitive::Upsample(_) => "upsample",
            Primitive::ScalarScale(_) => "scalar-scale",
            Primitive::Sum => "sum",
            Primitive::SumAbsWeighted(_) => "sum-abs-weighted",
            Primitive::SumSquares => "sum-squares",
        }
    }
}

struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Linear record of a forward computation.
///
/// Values are immutable once recorded. Nodes that do not depend on any leaf
/// created with [`Tape::leaf`] are skipped entirely during the backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the output does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn mismatch(op: &Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn arity(op: &Primitive, got: usize, allowed: &[usize]) -> Result<()> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} takes {allowed:?} inputs, got {got}", op.name())))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Option<Primitive>, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on recorded inputs and appends the result.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&op, &vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out, Some(op), inputs.to_vec(), requires_grad))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        match bias {
            Some(b) => self.apply(Primitive::Conv2d, &[x, w, b]),
            None => self.apply(Primitive::Conv2d, &[x, w]),
        }
    }

    pub fn conv2d_transpose(&mut self, y: Var, w: Var) -> Result<Var> {
        self.apply(Primitive::Conv2dTranspose, &[y, w])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.apply(Primitive::AffinePerChannel, &[x, scale, shift])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatChannels, parts)
    }

    pub fn subsample(&mut self, x: Var, filter: HaarFilter) -> Result<Var> {
        self.apply(Primitive::Subsample(filter), &[x])
    }

    pub fn upsample(&mut self, x: Var, filter: HaarFilter) -> Result<Var> {
        self.apply(Primitive::Upsample(filter), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(Primitive::ScalarScale(factor), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn sum_abs_weighted(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        self.apply(Primitive::SumAbsWeighted(weights), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::SumSquares, &[x])
    }

    /// Backpropagates `seed` from the most recently recorded node.
    pub fn backward(&self, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        self.backward_from(Var(self.nodes.len() - 1), seed)
    }

    /// Backpropagates `seed` from `output`, returning `d<seed, output>/d leaf`.
    pub fn backward_from(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out_val = &self.nodes[output.0].value;
        if seed.shape() != out_val.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: out_val.shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let vals: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = backward(op, &vals, &g, &needs);
            for ((var, need), ig) in node.inputs.iter().zip(needs).zip(input_grads) {
                if !need {
                    continue;
                }
                if let Some(ig) = ig {
                    match &mut grads[var.0] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        let mut shapes = Vec::with_capacity(self.nodes.len());
        let mut leaf_grads = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            shapes.push(node.value.shape().to_vec());
            let is_leaf = node.op.is_none() && node.requires_grad;
            leaf_grads.push(if is_leaf && i < n { grads[i].take() } else { None });
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes,
        })
    }
}

fn conv_dims(op: &Primitive, x: &Tensor, w: &Tensor, transpose: bool) -> Result<ConvDims> {
    let (c, h, wd) = x.chw(op.name())?;
    let [co, ci, k, k2] = *w.shape() else {
        return Err(mismatch(op, x, w));
    };
    let expected = if transpose { co } else { ci };
    if k != k2 || k % 2 == 0 || c != expected {
        return Err(mismatch(op, x, w));
    }
    Ok(ConvDims {
        cin: ci,
        cout: co,
        h,
        w: wd,
        k,
    })
}

fn resample(filter: HaarFilter, up: bool, x: &Tensor, op: &Primitive) -> Result<Tensor> {
    let (c, h, w) = x.chw(op.name())?;
    if up {
        if filter == HaarFilter::Detail && c % 3 != 0 {
            return Err(Error::invalid(format!("{}: detail upsampling needs 3k channels, got {c}", op.name())));
        }
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        let per_band = c / 3;
        for ch in 0..c {
            let band = match filter {
                HaarFilter::Low => Band::LL,
                HaarFilter::Detail => DETAIL_BANDS[ch / per_band],
            };
            band_up(band, &x.data()[ch * h * w..(ch + 1) * h * w], h, w, &mut out[ch * h2 * w2..(ch + 1) * h2 * w2]);
        }
        Ok(Tensor::from_parts(vec![c, h2, w2], out))
    } else {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("{}: odd extents {h}x{w}", op.name())));
        }
        let (h2, w2) = (h / 2, w / 2);
        let bands: &[Band] = match filter {
            HaarFilter::Low => &[Band::LL],
            HaarFilter::Detail => &DETAIL_BANDS,
        };
        let cout = c * bands.len();
        let mut out = vec![0.0; cout * h2 * w2];
        for (b, &band) in bands.iter().enumerate() {
            for ch in 0..c {
                let o = b * c + ch;
                band_down(band, &x.data()[ch * h * w..(ch + 1) * h * w], h, w, &mut out[o * h2 * w2..(o + 1) * h2 * w2]);
            }
        }
        Ok(Tensor::from_parts(vec![cout, h2, w2], out))
    }
}

fn forward(op: &Primitive, x: &[&Tensor]) -> Result<Tensor> {
    match op {
        Primitive::Conv2d => {
            arity(op, x.len(), &[2, 3])?;
            let d = conv_dims(op, x[0], x[1], false)?;
            let mut out = vec![0.0; d.cout * d.h * d.w];
            if let Some(b) = x.get(2) {
                if b.shape() != [d.cout] {
                    return Err(mismatch(op, x[1], b));
                }
                for (o, &bv) in b.data().iter().enumerate() {
                    out[o * d.h * d.w..(o + 1) * d.h * d.w].fill(bv);
                }
            }
            conv2d_forward(x[0].data(), x[1].data(), d, &mut out);
            Ok(Tensor::from_parts(vec![d.cout, d.h, d.w], out))
        }
        Primitive::Conv2dTranspose => {
            arity(op, x.len(), &[2])?;
            let d = conv_dims(op, x[0], x[1], true)?;
            let mut out = vec![0.0; d.cin * d.h * d.w];
            conv2d_input_grad(x[0].data(), x[1].data(), d, &mut out);
            Ok(Tensor::from_parts(vec![d.cin, d.h, d.w], out))
        }
        Primitive::Relu => {
            arity(op, x.len(), &[1])?;
            let data = x[0].data().iter().map(|&v| v.max(0.0)).collect();
            Ok(Tensor::from_parts(x[0].shape().to_vec(), data))
        }
        Primitive::AffinePerChannel => {
            arity(op, x.len(), &[3])?;
            let (c, h, w) = x[0].chw(op.name())?;
            if x[1].shape() != [c] {
                return Err(mismatch(op, x[0], x[1]));
            }
            if x[2].shape() != [c] {
                return Err(mismatch(op, x[0], x[2]));
            }
            let mut out = x[0].data().to_vec();
            for ch in 0..c {
                let (s, t) = (x[1].data()[ch], x[2].data()[ch]);
                for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                    *v = s * *v + t;
                }
            }
            Ok(Tensor::from_parts(vec![c, h, w], out))
        }
        Primitive::Add => {
            arity(op, x.len(), &[2])?;
            if x[0].shape() != x[1].shape() {
                return Err(mismatch(op, x[0], x[1]));
            }
            let data = x[0].data().iter().zip(x[1].data()).map(|(a, b)| a + b).collect();
            Ok(Tensor::from_parts(x[0].shape().to_vec(), data))
        }
        Primitive::ConcatChannels => {
            if x.is_empty() {
                return Err(Error::invalid("concat-channels needs at least one input"));
            }
            let (_, h, w) = x[0].chw(op.name())?;
            let mut c = 0;
            let mut data = Vec::new();
            for t in x {
                let (ct, ht, wt) = t.chw(op.name())?;
                if (ht, wt) != (h, w) {
                    return Err(mismatch(op, x[0], t));
                }
                c += ct;
                data.extend_from_slice(t.data());
            }
            Ok(Tensor::from_parts(vec![c, h, w], data))
        }
        Primitive::Subsample(f) => {
            arity(op, x.len(), &[1])?;
            resample(*f, false, x[0], op)
        }
        Primitive::Upsample(f) => {
            arity(op, x.len(), &[1])?;
            resample(*f, true, x[0], op)
        }
        Primitive::ScalarScale(a) => {
            arity(op, x.len(), &[1])?;
            let data = x[0].data().iter().map(|v| a * v).collect();
            Ok(Tensor::from_parts(x[0].shape().to_vec(), data))
        }
        Primitive::Sum => {
            arity(op, x.len(), &[1])?;
            Ok(Tensor::scalar(x[0].data().iter().sum()))
        }
        Primitive::SumAbsWeighted(wts) => {
            arity(op, x.len(), &[1])?;
            if wts.len() != x[0].len() {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: x[0].shape().to_vec(),
                    right: vec![wts.len()],
                });
            }
            Ok(Tensor::scalar(x[0].data().iter().zip(wts).map(|(v, w)| w * v.abs()).sum()))
        }
        Primitive::SumSquares => {
            arity(op, x.len(), &[1])?;
            Ok(Tensor::scalar(x[0].data().iter().map(|v| v * v).sum()))
        }
    }
}

/// Vector-Jacobian products of one primitive; `None` where not needed.
fn backward(op: &Primitive, x: &[&Tensor], g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let like = |t: &Tensor, data: Vec<f64>| Tensor::from_parts(t.shape().to_vec(), data);
    match op {
        Primitive::Conv2d => {
            let d = conv_dims(op, x[0], x[1], false).expect("validated in forward");
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; x[0].len()];
                conv2d_input_grad(g.data(), x[1].data(), d, &mut dx);
                like(x[0], dx)
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![0.0; x[1].len()];
                conv2d_weight_grad(g.data(), x[0].data(), d, &mut dw);
                like(x[1], dw)
            });
            let mut res = vec![dx, dw];
            if x.len() == 3 {
                let hw = d.h * d.w;
                res.push(needs[2].then(|| {
                    let db = (0..d.cout).map(|o| g.data()[o * hw..(o + 1) * hw].iter().sum()).collect();
                    like(x[2], db)
                }));
            }
            res
        }
        Primitive::Conv2dTranspose => {
            let d = conv_dims(op, x[0], x[1], true).expect("validated in forward");
            let dy = needs[0].then(|| {
                let mut dy = vec![0.0; x[0].len()];
                conv2d_forward(g.data(), x[1].data(), d, &mut dy);
                like(x[0], dy)
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![0.0; x[1].len()];
                conv2d_weight_grad(x[0].data(), g.data(), d, &mut dw);
                like(x[1], dw)
            });
            vec![dy, dw]
        }
        Primitive::Relu => {
            let data = x[0]
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect();
            vec![Some(like(x[0], data))]
        }
        Primitive::AffinePerChannel => {
            let (c, h, w) = x[0].chw("affine").expect("validated in forward");
            let hw = h * w;
            let scale = x[1].data();
            let dx = needs[0].then(|| {
                let mut dx = g.data().to_vec();
                for ch in 0..c {
                    for v in &mut dx[ch * hw..(ch + 1) * hw] {
                        *v *= scale[ch];
                    }
                }
                like(x[0], dx)
            });
            let ds = needs[1].then(|| {
                let data = (0..c)
                    .map(|ch| {
                        let r = ch * hw..(ch + 1) * hw;
                        g.data()[r.clone()].iter().zip(&x[0].data()[r]).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                like(x[1], data)
            });
            let dt = needs[2].then(|| {
                let data = (0..c).map(|ch| g.data()[ch * hw..(ch + 1) * hw].iter().sum()).collect();
                like(x[2], data)
            });
            vec![dx, ds, dt]
        }
        Primitive::Add => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
        Primitive::ConcatChannels => {
            let mut offset = 0;
            x.iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let n = t.len();
                    let part = need.then(|| like(t, g.data()[offset..offset + n].to_vec()));
                    offset += n;
                    part
                })
                .collect()
        }
        Primitive::Subsample(f) => {
            // adjoint of band-wise subsampling: upsample each band and sum into its source channel
            let (c, h, w) = x[0].chw("subsample").expect("validated in forward");
            let (h2, w2) = (h / 2, w / 2);
            let bands: &[Band] = match f {
                HaarFilter::Low => &[Band::LL],
                HaarFilter::Detail => &DETAIL_BANDS,
            };
            let mut dx = vec![0.0; x[0].len()];
            for (b, &band) in bands.iter().enumerate() {
                for ch in 0..c {
                    let o = b * c + ch;
                    band_up(band, &g.data()[o * h2 * w2..(o + 1) * h2 * w2], h2, w2, &mut dx[ch * h * w..(ch + 1) * h * w]);
                }
            }
            vec![Some(like(x[0], dx))]
        }
        Primitive::Upsample(f) => {
            let (c, h, w) = x[0].chw("upsample").expect("validated in forward");
            let (h2, w2) = (2 * h, 2 * w);
            let per_band = c / 3;
            let mut dx = vec![0.0; x[0].len()];
            for ch in 0..c {
                let band = match f {
                    HaarFilter::Low => Band::LL,
                    HaarFilter::Detail => DETAIL_BANDS[ch / per_band],
                };
                band_down(band, &g.data()[ch * h2 * w2..(ch + 1) * h2 * w2], h2, w2, &mut dx[ch * h * w..(ch + 1) * h * w]);
            }
            vec![Some(like(x[0], dx))]
        }
        Primitive::ScalarScale(a) => vec![Some(like(x[0], g.data().iter().map(|v| a * v).collect()))],
        Primitive::Sum => {
            let s = g.data()[0];
            vec![Some(Tensor::filled(x[0].shape(), s))]
        }
        Primitive::SumAbsWeighted(wts) => {
            let s = g.data()[0];
            let data = x[0]
                .data()
                .iter()
                .zip(wts)
                .map(|(&v, &w)| {
                    if v > 0.0 {
                        s * w
                    } else if v < 0.0 {
                        -s * w
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Some(like(x[0], data))]
        }
        Primitive::SumSquares => {
            let s = 2.0 * g.data()[0];
            vec![Some(like(x[0], x[0].data().iter().map(|v| s * v).collect()))]
        }
    }
}

/// `J^T cotangent` of `net` at `inputs`, one gradient per input.
pub fn vjp<F>(net: F, inputs: &[Tensor], cotangent: &Tensor) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, grads) = value_and_vjp(net, inputs, |out| {
        if out.shape() != cotangent.shape() {
            return Err(Error::ShapeMismatch {
                op: "vjp",
                left: out.shape().to_vec(),
                right: cotangent.shape().to_vec(),
            });
        }
        Ok(cotangent.clone())
    })?;
    Ok(grads)
}

/// Forward value of `net` together with `J^T c`, where the cotangent `c` may
/// depend on the forward value.
pub fn value_and_vjp<F, C>(net: F, inputs: &[Tensor], cotangent: C) -> Result<(Tensor, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
    C: FnOnce(&Tensor) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = net(&mut tape, &vars)?;
    let value = tape.value(out).clone();
    let seed = cotangent(&value)?;
    let grads = tape.backward_from(out, &seed)?;
    Ok((value, vars.iter().map(|&v| grads.get(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_kernel_conv() {
        let mut tape = Tape::new();
        let img = t(&[1, 3, 4], &(0..12).map(|i| i as f64 * 0.5 - 1.0).collect::<Vec<_>>());
        let x = tape.leaf(img.clone());
        let w = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, w, None).unwrap();
        assert_eq!(tape.value(y), &img);
    }

    #[test]
    fn ones_kernel_center_is_nine() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[1, 4, 4], 1.0));
        let w = tape.leaf(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, None).unwrap();
        assert_eq!(tape.value(y).data()[5], 9.0);
    }

    #[test]
    fn sum_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        tape.sum_squares(x).unwrap();
        let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn zero_scale_kills_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1, 1], &[1.5, -2.0]));
        let y = tape.scale(x, 0.0).unwrap();
        tape.sum(y).unwrap();
        let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
        assert!(g.get(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unreached_leaf_gets_zeros() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2], &[3.0, 4.0]));
        tape.sum_squares(a).unwrap();
        let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_tape_rejected() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(&Tensor::scalar(1.0)), Err(Error::EmptyTape)));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 2, 2]));
        let b = tape.leaf(Tensor::zeros(&[1, 2, 2]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 2, 2]") && err.contains("[1, 2, 2]"), "{err}");
        let w = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let err = tape.conv2d(a, w, None).unwrap_err().to_string();
        assert!(err.contains("conv2d"), "{err}");
    }

    #[test]
    fn seed_shape_checked() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2]));
        tape.sum(a).unwrap();
        assert!(tape.backward(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn identity_vjp_returns_cotangent() {
        let c = t(&[1, 2, 2], &[1.0, -2.0, 0.5, 4.0]);
        let g = vjp(|_, v| Ok(v[0]), &[Tensor::zeros(&[1, 2, 2])], &c).unwrap();
        assert_eq!(g[0], c);
    }
}
