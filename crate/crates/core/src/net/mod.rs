//! The sparse synthesis encoder/decoder pair.
//!
//! Each encoder level applies two convolution blocks (3x3 convolution,
//! per-channel affine, ReLU) and splits the result with the fixed Haar
//! filters: the three detail bands are emitted as coefficients, the low-pass
//! band feeds the next level. The decoder mirrors this with the transposed
//! filters, two convolution blocks per level and a final 1x1 convolution.
//! There are no skip connections, so everything the decoder sees is in the
//! coefficient pyramid.

mod lipschitz;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::haar::{CoeffPyramid, PyramidShape};
use crate::io;
use crate::phantom::Image;
use crate::solvers::SynthesisOperator;
use crate::tensor::{HaarFilter, ParamStore, Role, Tape, Tensor, Var};

pub use lipschitz::{chain_bound, conv_norm_bound, lipschitz_bound, LayerBound};
pub use train::{
    loss_and_grad, sparsity_fraction, train_pair, LossParts, TraceRow, TrainConfig, TrainOutcome,
};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub side: usize,
    pub levels: usize,
    /// Channels of the first convolution block at level 1; doubles per level.
    pub base_channels: usize,
    /// Coefficient channels at level 1; doubles per level.
    pub latent_channels: usize,
    pub kernel: usize,
}

impl NetSpec {
    pub fn new(side: usize, levels: usize, base_channels: usize, latent_channels: usize) -> Result<Self> {
        let spec = NetSpec {
            side,
            levels,
            base_channels,
            latent_channels,
            kernel: 3,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 64x64 images, two levels, 16 base channels, 2 latent channels.
    pub fn desk() -> Self {
        NetSpec::new(64, 2, 16, 2).expect("valid default")
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 || self.latent_channels == 0 {
            return Err(Error::invalid("levels and channel counts must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.side == 0 || !self.side.is_multiple_of(1 << self.levels) {
            return Err(Error::invalid(format!(
                "side {} is not divisible by 2^{}",
                self.side, self.levels
            )));
        }
        Ok(())
    }

    /// Channels of the convolution blocks at `level` (1-based).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Coefficient channels at `level`.
    pub fn latent(&self, level: usize) -> usize {
        self.latent_channels << (level - 1)
    }

    pub fn pyramid_shape(&self) -> PyramidShape {
        PyramidShape::new(self.side, self.side, (1..=self.levels).map(|l| self.latent(l)).collect())
            .expect("validated spec")
    }

    /// Channels entering the decoder block at `level`.
    fn decoder_in(&self, level: usize) -> usize {
        let low = if level == self.levels { self.latent(level) } else { self.width(level + 1) };
        3 * self.latent(level) + low
    }

    pub fn manifest(&self) -> Vec<(String, String)> {
        vec![
            ("side".into(), self.side.to_string()),
            ("levels".into(), self.levels.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("latent_channels".into(), self.latent_channels.to_string()),
            ("kernel".into(), self.kernel.to_string()),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_manifest(path, &self.manifest())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = io::read_manifest(path)?;
        let spec = NetSpec {
            side: io::manifest_value(&m, "side", path)?,
            levels: io::manifest_value(&m, "levels", path)?,
            base_channels: io::manifest_value(&m, "base_channels", path)?,
            latent_channels: io::manifest_value(&m, "latent_channels", path)?,
            kernel: io::manifest_value(&m, "kernel", path)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

fn insert_block(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, idx: usize, cout: usize, cin: usize, k: usize) {
    let w = he_uniform(rng, [cout, cin, k, k]);
    store.insert(format!("{prefix}.w{idx}"), w).expect("fresh name");
    store.insert(format!("{prefix}.scale{idx}"), Tensor::filled(&[cout], 1.0)).expect("fresh name");
    store.insert(format!("{prefix}.shift{idx}"), Tensor::zeros(&[cout])).expect("fresh name");
}

fn check_store(spec: &NetSpec, store: &ParamStore, fresh: &ParamStore) -> Result<()> {
    if store.len() != fresh.len() {
        return Err(Error::invalid(format!(
            "parameter store has {} tensors, architecture needs {}",
            store.len(),
            fresh.len()
        )));
    }
    for (name, t) in fresh.iter() {
        match store.get(name) {
            Some(s) if s.shape() == t.shape() => {}
            Some(s) => {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: t.shape().to_vec(),
                    right: s.shape().to_vec(),
                })
            }
            None => return Err(Error::invalid(format!("parameter {name} missing for {spec:?}"))),
        }
    }
    Ok(())
}

/// Parameter handles on a tape, in store order.
pub(crate) struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub(crate) fn new(tape: &mut Tape, store: &'a ParamStore, trainable: bool) -> Self {
        let vars = store
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { store, vars }
    }

    fn var(&self, name: &str) -> Var {
        self.vars[self.store.index_of(name).expect("parameter present")]
    }

    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn block(tape: &mut Tape, p: &Bound, prefix: &str, idx: usize, x: Var) -> Result<Var> {
    let y = tape.conv2d(x, p.var(&format!("{prefix}.w{idx}")), None)?;
    let y = tape.affine(y, p.var(&format!("{prefix}.scale{idx}")), p.var(&format!("{prefix}.shift{idx}")))?;
    tape.relu(y)
}

/// Encoder forward graph; returns the detail stacks per level and the approximation.
pub(crate) fn encoder_graph(tape: &mut Tape, spec: &NetSpec, p: &Bound, x: Var) -> Result<Vec<Var>> {
    let mut parts = Vec::with_capacity(spec.levels + 1);
    let mut low = x;
    for l in 1..=spec.levels {
        let prefix = format!("enc{l}");
        let h = block(tape, p, &prefix, 1, low)?;
        let z = block(tape, p, &prefix, 2, h)?;
        parts.push(tape.subsample(z, HaarFilter::Detail)?);
        low = tape.subsample(z, HaarFilter::Low)?;
    }
    parts.push(low);
    Ok(parts)
}

/// Decoder forward graph from `[detail_1, .., detail_L, approx]` to a `(1, side, side)` image.
pub(crate) fn decoder_graph(tape: &mut Tape, spec: &NetSpec, p: &Bound, parts: &[Var]) -> Result<Var> {
    let levels = spec.levels;
    let mut low = parts[levels];
    for l in (1..=levels).rev() {
        let det = tape.upsample(parts[l - 1], HaarFilter::Detail)?;
        let up = tape.upsample(low, HaarFilter::Low)?;
        let x = tape.concat(&[det, up])?;
        let prefix = format!("dec{l}");
        let y = block(tape, p, &prefix, 3, x)?;
        low = block(tape, p, &prefix, 4, y)?;
    }
    tape.conv2d(low, p.var("out.w"), Some(p.var("out.b")))
}

/// The analysis network `E`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    spec: NetSpec,
    params: ParamStore,
}

impl EncoderNet {
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut store = ParamStore::new(Role::Encoder);
        let mut cin = 1;
        for l in 1..=spec.levels {
            let prefix = format!("enc{l}");
            insert_block(&mut store, &mut rng, &prefix, 1, spec.width(l), cin, spec.kernel);
            insert_block(&mut store, &mut rng, &prefix, 2, spec.latent(l), spec.width(l), spec.kernel);
            cin = spec.latent(l);
        }
        Ok(EncoderNet {
            spec: spec.clone(),
            params: store,
        })
    }

    pub fn from_params(spec: &NetSpec, params: ParamStore) -> Result<Self> {
        check_store(spec, &params, &EncoderNet::init(spec, 0)?.params)?;
        Ok(EncoderNet {
            spec: spec.clone(),
            params,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_image(&self, u: &Image) -> Result<()> {
        if u.height() != self.spec.side || u.width() != self.spec.side {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: vec![self.spec.side, self.spec.side],
                right: vec![u.height(), u.width()],
            });
        }
        Ok(())
    }

    pub fn encode(&self, u: &Image) -> Result<CoeffPyramid> {
        self.check_image(u)?;
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, false);
        let x = tape.constant(u.to_tensor());
        let parts = encoder_graph(&mut tape, &self.spec, &p, x)?;
        let tensors: Vec<Tensor> = parts.iter().map(|&v| tape.value(v).clone()).collect();
        CoeffPyramid::from_tensors(self.spec.pyramid_shape(), &tensors)
    }
}

/// The synthesis network `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet {
    spec: NetSpec,
    shape: PyramidShape,
    params: ParamStore,
}

impl DecoderNet {
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut store = ParamStore::new(Role::Decoder);
        for l in (1..=spec.levels).rev() {
            let prefix = format!("dec{l}");
            insert_block(&mut store, &mut rng, &prefix, 3, spec.width(l), spec.decoder_in(l), spec.kernel);
            insert_block(&mut store, &mut rng, &prefix, 4, spec.width(l), spec.width(l), spec.kernel);
        }
        let c0 = spec.width(1);
        store
            .insert("out.w", Tensor::filled(&[1, c0, 1, 1], 1.0 / c0 as f64))
            .expect("fresh name");
        store.insert("out.b", Tensor::zeros(&[1])).expect("fresh name");
        Ok(DecoderNet {
            spec: spec.clone(),
            shape: spec.pyramid_shape(),
            params: store,
        })
    }

    pub fn from_params(spec: &NetSpec, params: ParamStore) -> Result<Self> {
        check_store(spec, &params, &DecoderNet::init(spec, 0)?.params)?;
        Ok(DecoderNet {
            spec: spec.clone(),
            shape: spec.pyramid_shape(),
            params,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn split(&self, xi: &[f64]) -> Result<Vec<Tensor>> {
        if xi.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: vec![self.shape.len()],
                right: vec![xi.len()],
            });
        }
        Ok(CoeffPyramid::new(self.shape.clone(), xi.to_vec())?.to_tensors())
    }

    pub fn decode(&self, xi: &CoeffPyramid) -> Result<Image> {
        if xi.shape() != &self.shape {
            return Err(Error::invalid(format!(
                "pyramid shape {:?} does not match decoder {:?}",
                xi.shape().tensor_shapes(),
                self.shape.tensor_shapes()
            )));
        }
        let data = self.synthesize(xi.data())?;
        Image::new(self.spec.side, self.spec.side, data)
    }
}

impl SynthesisOperator for DecoderNet {
    fn coeff_shape(&self) -> &PyramidShape {
        &self.shape
    }

    fn image_side(&self) -> usize {
        self.spec.side
    }

    fn synthesize(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, false);
        let parts: Vec<Var> = self.split(xi)?.into_iter().map(|t| tape.constant(t)).collect();
        let out = decoder_graph(&mut tape, &self.spec, &p, &parts)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn synthesize_vjp(
        &self,
        xi: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, false);
        let parts: Vec<Var> = self.split(xi)?.into_iter().map(|t| tape.leaf(t)).collect();
        let out = decoder_graph(&mut tape, &self.spec, &p, &parts)?;
        let value = tape.value(out).clone();
        let cot = Tensor::new(value.shape().to_vec(), cotangent(value.data())?)?;
        let mut grads = tape.backward_from(out, &cot)?;
        let mut flat = Vec::with_capacity(xi.len());
        for &v in &parts {
            flat.extend_from_slice(grads.take(v).data());
        }
        Ok((value.into_data(), flat))
    }
}

/// Paths of a checkpoint directory.
pub struct CheckpointPaths {
    pub encoder: std::path::PathBuf,
    pub decoder: std::path::PathBuf,
    pub netspec: std::path::PathBuf,
}

impl CheckpointPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CheckpointPaths {
            encoder: dir.join("encoder.dsr"),
            decoder: dir.join("decoder.dsr"),
            netspec: dir.join("netspec.txt"),
        }
    }
}

pub fn save_checkpoint(dir: &Path, enc: &EncoderNet, dec: &DecoderNet) -> Result<()> {
    if enc.spec != dec.spec {
        return Err(Error::invalid("encoder and decoder specs differ"));
    }
    std::fs::create_dir_all(dir)?;
    let p = CheckpointPaths::in_dir(dir);
    enc.params.save(&p.encoder)?;
    dec.params.save(&p.decoder)?;
    enc.spec.save(&p.netspec)
}

pub fn load_checkpoint(dir: &Path) -> Result<(EncoderNet, DecoderNet)> {
    let p = CheckpointPaths::in_dir(dir);
    let spec = NetSpec::load(&p.netspec)?;
    let enc = EncoderNet::from_params(&spec, ParamStore::load(&p.encoder, Role::Encoder)?)?;
    let dec = DecoderNet::from_params(&spec, ParamStore::load(&p.decoder, Role::Decoder)?)?;
    Ok((enc, dec))
}

/// SHA-256 over the serialized spec and both parameter stores, in hex.
pub fn checkpoint_hash(enc: &EncoderNet, dec: &DecoderNet) -> String {
    let mut bytes = Vec::new();
    for (k, v) in enc.spec.manifest() {
        bytes.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    enc.params.write_to(&mut bytes).expect("in-memory write");
    dec.params.write_to(&mut bytes).expect("in-memory write");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
