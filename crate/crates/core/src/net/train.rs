//! Sparsity-penalized training of the encoder/decoder pair.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::phantom::Image;
use crate::regularizers::WeightSpec;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

use super::{decoder_graph, encoder_graph, Bound, DecoderNet, EncoderNet, NetSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the coefficient penalty.
    pub alpha: f64,
    /// Weight of the decoder parameter penalty.
    pub beta: f64,
    /// Weight of the encoder parameter penalty.
    pub gamma: f64,
    pub lr: f64,
    /// Anneal the learning rate along a half cosine from `lr` toward zero.
    pub cosine_decay: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: WeightSpec,
    /// Keep a copy of the decoder every this many epochs (and at initialization).
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-2,
            beta: 1e-4,
            gamma: 1e-4,
            lr: 1e-3,
            cosine_decay: false,
            epochs: 150,
            batch_size: 6,
            seed: 0,
            weights: WeightSpec::Dyadic,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot interval must be positive"));
        }
        Ok(())
    }
}

/// Batch-averaged loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// Mean of `||u - D(E u)||^2`.
    pub recon: f64,
    /// Mean of `R(E u)` (before multiplying by alpha).
    pub sparsity: f64,
    /// `beta ||theta||^2 + gamma ||eta||^2`.
    pub wpen: f64,
    /// `recon + alpha * sparsity + wpen`.
    pub total: f64,
    /// Largest `||u - D(E u)||` in the batch.
    pub max_residual: f64,
}

/// One row of the training trace; row 0 evaluates the untrained pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub recon: f64,
    pub sparsity: f64,
    pub wpen: f64,
    pub total: f64,
    pub constraint_violation: f64,
}

pub struct TrainOutcome {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub trace: Vec<TraceRow>,
    /// `(epoch, decoder)` copies taken according to `snapshot_every`.
    pub snapshots: Vec<(usize, DecoderNet)>,
}

impl TrainOutcome {
    pub fn write_trace(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,recon,sparsity,wpen,total,constraint_violation")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.recon, r.sparsity, r.wpen, r.total, r.constraint_violation
            )?;
        }
        Ok(())
    }

    pub fn save_trace(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_trace(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

struct Sample {
    recon: f64,
    sparsity: f64,
    residual: f64,
    grads: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

fn sample_pass(enc: &EncoderNet, dec: &DecoderNet, u: &Image, cfg: &TrainConfig, with_grad: bool) -> Result<Sample> {
    let spec = enc.spec();
    if u.height() != spec.side || u.width() != spec.side {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: vec![spec.side, spec.side],
            right: vec![u.height(), u.width()],
        });
    }
    let mut tape = Tape::new();
    let pe = Bound::new(&mut tape, enc.params(), with_grad);
    let pd = Bound::new(&mut tape, dec.params(), with_grad);
    let x = tape.constant(u.to_tensor());
    let parts = encoder_graph(&mut tape, spec, &pe, x)?;
    let out = decoder_graph(&mut tape, spec, &pd, &parts)?;
    let neg = tape.scale(x, -1.0)?;
    let diff = tape.add(out, neg)?;
    let recon = tape.sum_squares(diff)?;
    let mut sparsity = None;
    for (i, &part) in parts.iter().enumerate() {
        let level = (i + 1).min(spec.levels);
        let n = tape.value(part).len();
        let term = tape.sum_abs_weighted(part, vec![cfg.weights.weight(level); n])?;
        sparsity = Some(match sparsity {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let sparsity = sparsity.expect("at least one level");
    let penalty = tape.scale(sparsity, cfg.alpha)?;
    let loss = tape.add(recon, penalty)?;
    let r = tape.value(recon).data()[0];
    let s = tape.value(sparsity).data()[0];
    let grads = if with_grad {
        let mut g = tape.backward_from(loss, &Tensor::scalar(1.0))?;
        let ge = pe.vars().iter().map(|&v| g.take(v)).collect();
        let gd = pd.vars().iter().map(|&v| g.take(v)).collect();
        Some((ge, gd))
    } else {
        None
    };
    Ok(Sample {
        recon: r,
        sparsity: s,
        residual: r.sqrt(),
        grads,
    })
}

fn weight_penalty(enc: &EncoderNet, dec: &DecoderNet, cfg: &TrainConfig) -> f64 {
    cfg.beta * dec.params().squared_norm() + cfg.gamma * enc.params().squared_norm()
}

fn combine(samples: &[Sample], wpen: f64, alpha: f64) -> LossParts {
    let m = samples.len() as f64;
    let recon = samples.iter().map(|s| s.recon).sum::<f64>() / m;
    let sparsity = samples.iter().map(|s| s.sparsity).sum::<f64>() / m;
    LossParts {
        recon,
        sparsity,
        wpen,
        total: recon + alpha * sparsity + wpen,
        max_residual: samples.iter().map(|s| s.residual).fold(0.0, f64::max),
    }
}

/// Loss over `batch` and its gradients with respect to the encoder and
/// decoder parameters (in store order).
pub fn loss_and_grad(
    enc: &EncoderNet,
    dec: &DecoderNet,
    batch: &[Image],
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<Tensor>, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let samples: Vec<Sample> = par::map_slice(batch, |u| sample_pass(enc, dec, u, cfg, true))
        .into_iter()
        .collect::<Result<_>>()?;
    let parts = combine(&samples, weight_penalty(enc, dec, cfg), cfg.alpha);
    let inv = 1.0 / batch.len() as f64;
    let mut ge: Vec<Tensor> = enc.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut gd: Vec<Tensor> = dec.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    for s in &samples {
        let (e, d) = s.grads.as_ref().expect("gradients requested");
        for (acc, g) in ge.iter_mut().zip(e).chain(gd.iter_mut().zip(d)) {
            acc.add_assign(g);
        }
    }
    for ((_, p), g) in enc.params().iter().zip(&mut ge) {
        for (gi, pi) in g.data_mut().iter_mut().zip(p.data()) {
            *gi = *gi * inv + 2.0 * cfg.gamma * pi;
        }
    }
    for ((_, p), g) in dec.params().iter().zip(&mut gd) {
        for (gi, pi) in g.data_mut().iter_mut().zip(p.data()) {
            *gi = *gi * inv + 2.0 * cfg.beta * pi;
        }
    }
    Ok((parts, ge, gd))
}

/// Loss components over a whole image set, without gradients.
pub fn evaluate(enc: &EncoderNet, dec: &DecoderNet, images: &[Image], cfg: &TrainConfig) -> Result<LossParts> {
    if images.is_empty() {
        return Err(Error::invalid("empty image set"));
    }
    let samples: Vec<Sample> = par::map_slice(images, |u| sample_pass(enc, dec, u, cfg, false))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(combine(&samples, weight_penalty(enc, dec, cfg), cfg.alpha))
}

/// Fraction of encoder coefficients with magnitude below `threshold`.
pub fn sparsity_fraction(enc: &EncoderNet, images: &[Image], threshold: f64) -> Result<f64> {
    let counts: Vec<(usize, usize)> = par::map_slice(images, |u| {
        enc.encode(u).map(|xi| (xi.data().iter().filter(|v| v.abs() < threshold).count(), xi.len()))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (small, total) = counts.iter().fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    if total == 0 {
        return Err(Error::invalid("no coefficients to count"));
    }
    Ok(small as f64 / total as f64)
}

fn row(epoch: usize, p: &LossParts) -> TraceRow {
    TraceRow {
        epoch,
        recon: p.recon,
        sparsity: p.sparsity,
        wpen: p.wpen,
        total: p.total,
        constraint_violation: p.max_residual,
    }
}

/// Mini-batch Adam on the penalized autoencoder loss.
///
/// Deterministic for a fixed seed: the shuffle order is seeded per epoch and
/// per-sample gradients are summed in batch order.
pub fn train_pair(images: &[Image], spec: &NetSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut enc = EncoderNet::init(spec, cfg.seed)?;
    let mut dec = DecoderNet::init(spec, cfg.seed)?;
    let mut adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state_e = AdamState::new(enc.params());
    let mut state_d = AdamState::new(dec.params());
    let initial = evaluate(&enc, &dec, images, cfg)?;
    if !initial.total.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0, batch: 0 });
    }
    let mut trace = vec![row(0, &initial)];
    let mut snapshots = Vec::new();
    if cfg.snapshot_every.is_some() {
        snapshots.push((0, dec.clone()));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1000 + epoch as u64);
        order.shuffle(&mut rng);
        if cfg.cosine_decay {
            let progress = (epoch - 1) as f64 / cfg.epochs as f64;
            adam.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        let mut acc = LossParts::default();
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = || Error::TrainingDiverged { epoch, batch: b };
            let batch: Vec<Image> = chunk.iter().map(|&i| images[i].clone()).collect();
            let (parts, ge, gd) = loss_and_grad(&enc, &dec, &batch, cfg)?;
            if !parts.total.is_finite() {
                return Err(diverged());
            }
            adam_step(enc.params_mut(), &ge, &mut state_e, &adam).map_err(|_| diverged())?;
            adam_step(dec.params_mut(), &gd, &mut state_d, &adam).map_err(|_| diverged())?;
            let m = chunk.len() as f64;
            acc.recon += parts.recon * m;
            acc.sparsity += parts.sparsity * m;
            acc.wpen += parts.wpen * m;
            acc.max_residual = acc.max_residual.max(parts.max_residual);
            seen += chunk.len();
        }
        let n = seen as f64;
        let avg = LossParts {
            recon: acc.recon / n,
            sparsity: acc.sparsity / n,
            wpen: acc.wpen / n,
            total: (acc.recon + cfg.alpha * acc.sparsity + acc.wpen) / n,
            max_residual: acc.max_residual,
        };
        trace.push(row(epoch, &avg));
        if let Some(k) = cfg.snapshot_every {
            if epoch % k == 0 {
                snapshots.push((epoch, dec.clone()));
            }
        }
    }
    Ok(TrainOutcome {
        encoder: enc,
        decoder: dec,
        trace,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{gen_ellipse_phantom, PhantomSpec};
    use rand::Rng;

    fn tiny_images(n: u64) -> Vec<Image> {
        let spec = PhantomSpec::new(8, 3).unwrap();
        (0..n).map(|i| gen_ellipse_phantom(&spec, i)).collect()
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.alpha = -1.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let spec = NetSpec::new(8, 1, 4, 2).unwrap();
        let cfg = TrainConfig::default();
        // nonzero shifts keep pre-activations away from the ReLU kink on blank regions
        let mut enc = EncoderNet::init(&spec, 1).unwrap();
        let mut dec = DecoderNet::init(&spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for store in [enc.params_mut(), dec.params_mut()] {
            for i in 0..store.len() {
                if store.name(i).contains("shift") || store.name(i) == "out.b" {
                    store.tensor_mut(i).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.02..0.1));
                }
            }
        }
        let batch = tiny_images(2);
        let (_, ge, gd) = loss_and_grad(&enc, &dec, &batch, &cfg).unwrap();
        let total = |e: &EncoderNet, d: &DecoderNet| loss_and_grad(e, d, &batch, &cfg).unwrap().0.total;
        let h = 1e-6;
        for (pi, k) in [(0usize, 3usize), (3, 0), (4, 1), (5, 0)] {
            let mut plus = enc.clone();
            plus.params_mut().tensor_mut(pi).data_mut()[k] += h;
            let mut minus = enc.clone();
            minus.params_mut().tensor_mut(pi).data_mut()[k] -= h;
            let fd = (total(&plus, &dec) - total(&minus, &dec)) / (2.0 * h);
            let an = ge[pi].data()[k];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "enc {pi}/{k}: {fd} vs {an}");
        }
        for (pi, k) in [(0usize, 5usize), (2, 1), (6, 0), (7, 0)] {
            let mut plus = dec.clone();
            plus.params_mut().tensor_mut(pi).data_mut()[k] += h;
            let mut minus = dec.clone();
            minus.params_mut().tensor_mut(pi).data_mut()[k] -= h;
            let fd = (total(&enc, &plus) - total(&enc, &minus)) / (2.0 * h);
            let an = gd[pi].data()[k];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "dec {pi}/{k}: {fd} vs {an}");
        }
    }

    #[test]
    fn deterministic_training() {
        let spec = NetSpec::new(8, 1, 4, 2).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
        let images = tiny_images(5);
        let a = train_pair(&images, &spec, &cfg).unwrap();
        let b = train_pair(&images, &spec, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.decoder, b.decoder);
        assert_eq!(a.trace.len(), 3);
        let single = crate::par::with_threads(Some(1), || train_pair(&images, &spec, &cfg).unwrap());
        assert_eq!(single.decoder, a.decoder);
    }
}
