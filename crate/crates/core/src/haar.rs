//! Orthonormal separable Haar analysis and synthesis on power-of-two grids.
//!
//! A 2x2 block `[a b; c d]` maps to
//! `LL = (a+b+c+d)/2`, `HL = (a-b+c-d)/2`, `LH = (a+b-c-d)/2`, `HH = (a-b-c+d)/2`,
//! so HL responds to variation along columns (x) and LH to variation along
//! rows (y). The transform is recursively applied to the LL band.
//!
//! Coefficients are stored flat, level-major: level 1 detail bands
//! (HL, LH, HH), level 2 detail bands, ..., and the approximation band last.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::phantom::Image;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    LL,
    HL,
    LH,
    HH,
}

pub const DETAIL_BANDS: [Band; 3] = [Band::HL, Band::LH, Band::HH];

impl Band {
    /// Signs for block positions (0,0), (0,1), (1,0), (1,1).
    fn signs(self) -> [f64; 4] {
        match self {
            Band::LL => [1.0, 1.0, 1.0, 1.0],
            Band::HL => [1.0, -1.0, 1.0, -1.0],
            Band::LH => [1.0, 1.0, -1.0, -1.0],
            Band::HH => [1.0, -1.0, -1.0, 1.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::HL => "HL",
            Band::LH => "LH",
            Band::HH => "HH",
        }
    }
}

/// Filters the `h x w` image `src` with `band` and subsamples by two into `dst`.
pub(crate) fn band_down(band: Band, src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let s = band.signs();
    let w2 = w / 2;
    for i in 0..h / 2 {
        let r0 = &src[2 * i * w..(2 * i + 1) * w];
        let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
        let out = &mut dst[i * w2..(i + 1) * w2];
        for (j, o) in out.iter_mut().enumerate() {
            *o = 0.5 * (s[0] * r0[2 * j] + s[1] * r0[2 * j + 1] + s[2] * r1[2 * j] + s[3] * r1[2 * j + 1]);
        }
    }
}

/// Adds the upsampled and `band`-filtered `h x w` array `src` into the `2h x 2w` array `dst`.
pub(crate) fn band_up(band: Band, src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let s = band.signs();
    let w2 = 2 * w;
    for i in 0..h {
        for j in 0..w {
            let v = 0.5 * src[i * w + j];
            let base = 2 * i * w2 + 2 * j;
            dst[base] += s[0] * v;
            dst[base + 1] += s[1] * v;
            dst[base + w2] += s[2] * v;
            dst[base + w2 + 1] += s[3] * v;
        }
    }
}

/// Layout of a multilevel coefficient stack.
///
/// `channels[l-1]` is the number of feature channels at level `l`; each
/// contributes three detail bands. The approximation band has
/// `channels[levels-1]` channels at the coarsest extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidShape {
    height: usize,
    width: usize,
    channels: Vec<usize>,
}

impl PyramidShape {
    pub fn new(height: usize, width: usize, channels: Vec<usize>) -> Result<Self> {
        let levels = channels.len();
        if levels == 0 {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        let div = 1usize << levels;
        if height == 0 || width == 0 || !height.is_multiple_of(div) || !width.is_multiple_of(div) {
            return Err(Error::invalid(format!(
                "{height}x{width} is not divisible by 2^{levels}"
            )));
        }
        if channels.contains(&0) {
            return Err(Error::invalid("pyramid channel counts must be positive"));
        }
        Ok(PyramidShape {
            height,
            width,
            channels,
        })
    }

    /// Single-channel shape of an image transform.
    pub fn single(height: usize, width: usize, levels: usize) -> Result<Self> {
        PyramidShape::new(height, width, vec![1; levels])
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self, level: usize) -> usize {
        self.channels[level - 1]
    }

    /// Spatial extent of the bands at `level` (1-based).
    pub fn extent(&self, level: usize) -> (usize, usize) {
        (self.height >> level, self.width >> level)
    }

    fn detail_len(&self, level: usize) -> usize {
        let (h, w) = self.extent(level);
        3 * self.channels(level) * h * w
    }

    pub fn detail_range(&self, level: usize) -> Range<usize> {
        let start: usize = (1..level).map(|l| self.detail_len(l)).sum();
        start..start + self.detail_len(level)
    }

    pub fn approx_range(&self) -> Range<usize> {
        let l = self.levels();
        let start = self.detail_range(l).end;
        let (h, w) = self.extent(l);
        start..start + self.channels(l) * h * w
    }

    pub fn len(&self) -> usize {
        self.approx_range().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Level of every coefficient; the approximation band reports `levels`.
    pub fn level_map(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for l in 1..=self.levels() {
            out.extend(std::iter::repeat_n(l, self.detail_len(l)));
        }
        out.extend(std::iter::repeat_n(self.levels(), self.approx_range().len()));
        out
    }

    /// Tensor shapes of the per-level detail stacks followed by the approximation.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes: Vec<Vec<usize>> = (1..=self.levels())
            .map(|l| {
                let (h, w) = self.extent(l);
                vec![3 * self.channels(l), h, w]
            })
            .collect();
        let (h, w) = self.extent(self.levels());
        shapes.push(vec![self.channels(self.levels()), h, w]);
        shapes
    }
}

/// Multiscale coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPyramid {
    shape: PyramidShape,
    data: Vec<f64>,
}

impl CoeffPyramid {
    pub fn new(shape: PyramidShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                op: "pyramid",
                left: vec![shape.len()],
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pyramid coefficients".into()));
        }
        Ok(CoeffPyramid { shape, data })
    }

    pub fn zeros(shape: PyramidShape) -> Self {
        let n = shape.len();
        CoeffPyramid {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &PyramidShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn detail(&self, level: usize) -> &[f64] {
        &self.data[self.shape.detail_range(level)]
    }

    /// Slice of one detail band (`band` in HL, LH, HH) at `level`.
    pub fn band(&self, level: usize, band: Band) -> &[f64] {
        let b = DETAIL_BANDS
            .iter()
            .position(|&x| x == band)
            .expect("detail band");
        let r = self.shape.detail_range(level);
        let n = r.len() / 3;
        &self.data[r.start + b * n..r.start + (b + 1) * n]
    }

    pub fn approx(&self) -> &[f64] {
        &self.data[self.shape.approx_range()]
    }

    /// Per-level detail tensors followed by the approximation tensor.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut offset = 0;
        self.shape
            .tensor_shapes()
            .into_iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::from_parts(s, self.data[offset..offset + n].to_vec());
                offset += n;
                t
            })
            .collect()
    }

    pub fn from_tensors(shape: PyramidShape, parts: &[Tensor]) -> Result<Self> {
        let expected = shape.tensor_shapes();
        if parts.len() != expected.len() {
            return Err(Error::invalid(format!(
                "pyramid needs {} tensors, got {}",
                expected.len(),
                parts.len()
            )));
        }
        let mut data = Vec::with_capacity(shape.len());
        for (t, s) in parts.iter().zip(&expected) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "pyramid",
                    left: s.clone(),
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        CoeffPyramid::new(shape, data)
    }

    /// Names and tensors in band order: `l{level}_{HL,LH,HH}` then `approx`.
    fn named_bands(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for l in 1..=self.shape.levels() {
            let (h, w) = self.shape.extent(l);
            let c = self.shape.channels(l);
            for band in DETAIL_BANDS {
                out.push((
                    format!("l{l}_{}", band.label()),
                    Tensor::from_parts(vec![c, h, w], self.band(l, band).to_vec()),
                ));
            }
        }
        let (h, w) = self.shape.extent(self.shape.levels());
        out.push((
            "approx".to_string(),
            Tensor::from_parts(vec![self.shape.channels(self.shape.levels()), h, w], self.approx().to_vec()),
        ));
        out
    }

    /// Writes the bands as a `DSR1` group plus a `<path>.bands` order manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bands = self.named_bands();
        let refs: Vec<(&str, &Tensor)> = bands.iter().map(|(n, t)| (n.as_str(), t)).collect();
        io::save_dsr(path, &refs)?;
        let mut manifest = vec![
            ("height".to_string(), self.shape.height.to_string()),
            ("width".to_string(), self.shape.width.to_string()),
            ("levels".to_string(), self.shape.levels().to_string()),
        ];
        let order: Vec<&str> = bands.iter().map(|(n, _)| n.as_str()).collect();
        manifest.push(("order".to_string(), order.join(",")));
        io::write_manifest(&band_manifest_path(path), &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = io::load_dsr(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let approx = entries
            .iter()
            .find(|(n, _)| n == "approx")
            .ok_or_else(|| bad("missing approx band".into()))?;
        let levels = (entries.len() - 1) / 3;
        if levels == 0 || entries.len() != 3 * levels + 1 {
            return Err(bad(format!("{} bands do not form a pyramid", entries.len())));
        }
        let channels: Vec<usize> = (0..levels).map(|l| entries[3 * l].1.shape()[0]).collect();
        let (ah, aw) = (approx.1.shape()[1], approx.1.shape()[2]);
        let shape = PyramidShape::new(ah << levels, aw << levels, channels)?;
        let mut data = Vec::with_capacity(shape.len());
        for l in 1..=levels {
            for (b, band) in DETAIL_BANDS.iter().enumerate() {
                let (name, t) = &entries[3 * (l - 1) + b];
                if *name != format!("l{l}_{}", band.label()) {
                    return Err(bad(format!("unexpected band {name}")));
                }
                data.extend_from_slice(t.data());
            }
        }
        data.extend_from_slice(approx.1.data());
        CoeffPyramid::new(shape, data)
    }
}

fn band_manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bands");
    s.into()
}

/// Orthonormal multilevel Haar analysis of a single-channel image.
pub fn haar_analysis(u: &Image, levels: usize) -> Result<CoeffPyramid> {
    let shape = PyramidShape::single(u.height(), u.width(), levels)?;
    let mut data = vec![0.0; shape.len()];
    let mut low = u.data().to_vec();
    let (mut h, mut w) = (u.height(), u.width());
    for l in 1..=levels {
        let r = shape.detail_range(l);
        let n = r.len() / 3;
        let det = &mut data[r];
        for (b, &band) in DETAIL_BANDS.iter().enumerate() {
            band_down(band, &low, h, w, &mut det[b * n..(b + 1) * n]);
        }
        let mut next = vec![0.0; n];
        band_down(Band::LL, &low, h, w, &mut next);
        low = next;
        h /= 2;
        w /= 2;
    }
    data[shape.approx_range()].copy_from_slice(&low);
    Ok(CoeffPyramid { shape, data })
}

/// Inverse (and adjoint) of [`haar_analysis`].
pub fn haar_synthesis(xi: &CoeffPyramid) -> Result<Image> {
    let shape = xi.shape();
    if shape.channels.iter().any(|&c| c != 1) {
        return Err(Error::invalid("haar synthesis expects a single-channel pyramid"));
    }
    let levels = shape.levels();
    let mut low = xi.approx().to_vec();
    for l in (1..=levels).rev() {
        let (h, w) = shape.extent(l);
        let mut up = vec![0.0; 4 * h * w];
        band_up(Band::LL, &low, h, w, &mut up);
        for band in DETAIL_BANDS {
            band_up(band, xi.band(l, band), h, w, &mut up);
        }
        low = up;
    }
    Image::new(shape.height(), shape.width(), low)
}
