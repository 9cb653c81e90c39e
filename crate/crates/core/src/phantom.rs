//! Synthetic phantoms, datasets and measurement noise.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io;
use crate::radon::Sinogram;
use crate::tensor::Tensor;

/// Real-valued image on the square `[-1, 1]^2`; row 0 is the top (`y = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "image",
                left: vec![height, width],
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Image { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            data.extend(self.data[r * self.width..(r + 1) * self.width].iter().rev());
        }
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// As a `(1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        match *t.shape() {
            [1, h, w] | [h, w] => Image::new(h, w, t.data().to_vec()),
            _ => Err(Error::invalid(format!("tensor of shape {:?} is not an image", t.shape()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_dsr(path, &[("image", &self.to_tensor())])
    }

    pub fn load(path: &Path) -> Result<Image> {
        Image::from_tensor(&io::load_single(path)?)
    }

    /// 16-bit PGM preview with `[0, 1]` mapped to the full range.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        io::write_pgm16(path, &self.data, self.height, self.width, 0.0, 1.0)
    }
}

/// Pixel-centre coordinates for an `n x n` grid on `[-1, 1]^2`.
pub(crate) fn pixel_center(n: usize, row: usize, col: usize) -> (f64, f64) {
    let d = 2.0 / n as f64;
    (-1.0 + (col as f64 + 0.5) * d, 1.0 - (row as f64 + 0.5) * d)
}

/// Filled ellipse with semi-axes `(a, b)` rotated by `phi` around its centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub phi: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (self.phi.cos(), self.phi.sin());
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }
}

/// Sub-samples per pixel along each axis.
const SUPERSAMPLE: usize = 8;

/// Sums ellipse indicators (averaged over a 4x4 sub-pixel grid), clips
/// negatives and rescales the maximum to 1.
pub fn rasterize(ellipses: &[Ellipse], side: usize) -> Image {
    let mut data = vec![0.0; side * side];
    let d = 2.0 / side as f64;
    let sub = d / SUPERSAMPLE as f64;
    for r in 0..side {
        for c in 0..side {
            let (x0, y0) = (-1.0 + c as f64 * d, 1.0 - r as f64 * d);
            let mut acc = 0.0;
            for i in 0..SUPERSAMPLE {
                for j in 0..SUPERSAMPLE {
                    let (x, y) = (x0 + (j as f64 + 0.5) * sub, y0 - (i as f64 + 0.5) * sub);
                    acc += ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum::<f64>();
                }
            }
            data[r * side + c] = acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    for v in &mut data {
        *v = v.max(0.0);
    }
    let peak = data.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut data {
            *v /= peak;
        }
    }
    Image {
        height: side,
        width: side,
        data,
    }
}

/// Parameters of the random ellipse phantom family.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub side: usize,
    /// Inclusive range for the number of inner ellipses.
    pub ellipses: (usize, usize),
    /// Range of inner-ellipse intensities.
    pub intensity: (f64, f64),
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(side: usize, seed: u64) -> Result<Self> {
        let spec = PhantomSpec {
            side,
            ellipses: (3, 8),
            intensity: (-0.4, 0.8),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 2 || !self.side.is_power_of_two() {
            return Err(Error::invalid(format!("phantom side {} is not a power of two", self.side)));
        }
        if self.ellipses.0 > self.ellipses.1 || self.intensity.0 > self.intensity.1 {
            return Err(Error::invalid("empty phantom parameter range"));
        }
        Ok(())
    }
}

/// Random ellipse phantom number `index`; a pure function of `(spec, index)`.
///
/// Non-empty phantoms consist of a faint body ellipse with smaller
/// ellipses of random sign on top. All supports stay inside the disk of
/// radius 1.25, so the image corners are background.
pub fn gen_ellipse_phantom(spec: &PhantomSpec, index: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let count = rng.gen_range(spec.ellipses.0..=spec.ellipses.1);
    if count == 0 {
        return Image::zeros(spec.side, spec.side);
    }
    let mut shapes = Vec::with_capacity(count + 1);
    shapes.push(Ellipse {
        center: (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
        axes: (rng.gen_range(0.6..0.85), rng.gen_range(0.5..0.8)),
        phi: rng.gen_range(0.0..std::f64::consts::PI),
        intensity: rng.gen_range(0.2..0.4),
    });
    for _ in 0..count {
        shapes.push(Ellipse {
            center: (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            axes: (rng.gen_range(0.05..0.35), rng.gen_range(0.05..0.35)),
            phi: rng.gen_range(0.0..std::f64::consts::PI),
            intensity: rng.gen_range(spec.intensity.0..=spec.intensity.1),
        });
    }
    rasterize(&shapes, spec.side)
}

/// The ten-ellipse Shepp-Logan head phantom (high-contrast intensities), in `[0, 1]`.
pub fn shepp_logan(side: usize) -> Result<Image> {
    if side < 16 {
        return Err(Error::invalid(format!("Shepp-Logan needs side >= 16, got {side}")));
    }
    let deg = std::f64::consts::PI / 180.0;
    // (x0, y0, a, b, phi, intensity)
    let table = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        (0.22, 0.0, 0.11, 0.31, -18.0 * deg, -0.2),
        (-0.22, 0.0, 0.16, 0.41, 18.0 * deg, -0.2),
        (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ];
    let shapes: Vec<Ellipse> = table
        .iter()
        .map(|&(x0, y0, a, b, phi, intensity)| Ellipse {
            center: (x0, y0),
            axes: (a, b),
            phi,
            intensity,
        })
        .collect();
    Ok(rasterize(&shapes, side))
}

/// Relative Gaussian noise level and its seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::invalid(format!("noise level must lie in [0, 1), got {level}")));
        }
        Ok(NoiseSpec { level, seed })
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation `level * RMS(v)`.
///
/// Returns the noisy data and the realized noise norm `||z||_2`.
pub fn add_noise(v: &Sinogram, noise: &NoiseSpec) -> Result<(Sinogram, f64)> {
    if noise.level == 0.0 {
        return Ok((v.clone(), 0.0));
    }
    let n = v.data().len() as f64;
    let sigma = noise.level * v.norm() / n.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = v.clone();
    let mut z2 = 0.0;
    for x in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let z = sigma * z;
        z2 += z * z;
        *x += z;
    }
    Ok((out, z2.sqrt()))
}

/// Train/test bookkeeping for a generated phantom set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub spec: PhantomSpec,
    pub train: usize,
    pub test: usize,
    pub split_seed: u64,
}

impl DatasetMeta {
    pub fn new(spec: PhantomSpec, train: usize, test: usize, split_seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(DatasetMeta {
            spec,
            train,
            test,
            split_seed,
        })
    }

    pub fn count(&self) -> usize {
        self.train + self.test
    }

    fn permutation(&self) -> Vec<u64> {
        let mut idx: Vec<u64> = (0..self.count() as u64).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split_seed));
        idx
    }

    /// Phantom indices of the training split, in a seed-stable order.
    pub fn train_indices(&self) -> Vec<u64> {
        self.permutation()[..self.train].to_vec()
    }

    pub fn test_indices(&self) -> Vec<u64> {
        self.permutation()[self.train..].to_vec()
    }

    pub fn image(&self, index: u64) -> Image {
        gen_ellipse_phantom(&self.spec, index)
    }

    pub fn train_images(&self) -> Vec<Image> {
        crate::par::map_slice(&self.train_indices(), |&i| self.image(i))
    }

    pub fn test_images(&self) -> Vec<(u64, Image)> {
        crate::par::map_slice(&self.test_indices(), |&i| (i, self.image(i)))
    }

    fn manifest(&self) -> Vec<(String, String)> {
        vec![
            ("side".into(), self.spec.side.to_string()),
            ("count".into(), self.count().to_string()),
            ("seed".into(), self.spec.seed.to_string()),
            ("split".into(), format!("{}/{}", self.train, self.test)),
            ("split_seed".into(), self.split_seed.to_string()),
            ("min_ellipses".into(), self.spec.ellipses.0.to_string()),
            ("max_ellipses".into(), self.spec.ellipses.1.to_string()),
            ("min_intensity".into(), format!("{:?}", self.spec.intensity.0)),
            ("max_intensity".into(), format!("{:?}", self.spec.intensity.1)),
        ]
    }

    /// Writes `img_%05d.dsr` for every phantom plus `manifest.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let paths = crate::par::map_range(self.count(), |i| -> Result<PathBuf> {
            let p = dir.join(format!("img_{i:05}.dsr"));
            self.image(i as u64).save(&p)?;
            Ok(p)
        });
        let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
        io::write_manifest(&dir.join("manifest.txt"), &self.manifest())?;
        Ok(paths)
    }

    /// Reads `manifest.txt` from a dataset directory.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let m = io::read_manifest(&path)?;
        let side = io::manifest_value(&m, "side", &path)?;
        let count: usize = io::manifest_value(&m, "count", &path)?;
        let seed = io::manifest_value(&m, "seed", &path)?;
        let split: String = io::manifest_value(&m, "split", &path)?;
        let (train, test) = split
            .split_once('/')
            .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: format!("bad split {split}"),
            })?;
        if train + test != count {
            return Err(Error::Format {
                path,
                reason: "split does not add up to count".into(),
            });
        }
        let spec = PhantomSpec {
            side,
            ellipses: (
                io::manifest_value(&m, "min_ellipses", &path)?,
                io::manifest_value(&m, "max_ellipses", &path)?,
            ),
            intensity: (
                io::manifest_value(&m, "min_intensity", &path)?,
                io::manifest_value(&m, "max_intensity", &path)?,
            ),
            seed,
        };
        DatasetMeta::new(spec, train, test, io::manifest_value(&m, "split_seed", &path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radon::RadonGeometry;

    #[test]
    fn zero_ellipses_give_zero_image() {
        let spec = PhantomSpec {
            ellipses: (0, 0),
            ..PhantomSpec::new(16, 1).unwrap()
        };
        assert!(gen_ellipse_phantom(&spec, 3).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_normalized() {
        let spec = PhantomSpec::new(64, 7).unwrap();
        let a = gen_ellipse_phantom(&spec, 0);
        assert_eq!(a, gen_ellipse_phantom(&spec, 0));
        assert_ne!(a, gen_ellipse_phantom(&spec, 1));
        assert_eq!(a.min(), 0.0);
        assert_eq!(a.max(), 1.0);
    }

    #[test]
    fn side_must_be_power_of_two() {
        assert!(PhantomSpec::new(48, 0).is_err());
    }

    #[test]
    fn shepp_logan_structure() {
        let u = shepp_logan(64).unwrap();
        assert!(u.at(32, 32) > 0.0);
        assert_eq!(u.at(0, 0), 0.0);
        assert!(u.min() >= 0.0 && u.max() <= 1.0);
        assert!(shepp_logan(8).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = RadonGeometry::new(8, 12, 16).unwrap();
        let v = g.forward(&shepp_logan(16).unwrap()).unwrap();
        let (w, delta) = add_noise(&v, &NoiseSpec::new(0.0, 3).unwrap()).unwrap();
        assert_eq!(w, v);
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn noise_level_concentrates() {
        let g = RadonGeometry::new(120, 96, 64).unwrap();
        let v = g.forward(&shepp_logan(64).unwrap()).unwrap();
        assert!(v.data().len() >= 10_000);
        let mut rms = Vec::new();
        for seed in [1, 2] {
            let (w, delta) = add_noise(&v, &NoiseSpec::new(0.05, seed).unwrap()).unwrap();
            let ratio = delta / v.norm();
            assert!((0.045..=0.055).contains(&ratio), "ratio {ratio}");
            let z: f64 = w.data().iter().zip(v.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((z - delta).abs() < 1e-9 * delta);
            rms.push(delta);
        }
        assert_ne!(rms[0], rms[1]);
        assert!((rms[0] / rms[1] - 1.0).abs() < 0.05);
        assert!(NoiseSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let meta = DatasetMeta::new(PhantomSpec::new(16, 1).unwrap(), 10, 4, 9).unwrap();
        let tr = meta.train_indices();
        let te = meta.test_indices();
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(tr.len() + te.len(), 14);
        assert_eq!(tr, meta.train_indices());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = DatasetMeta::new(PhantomSpec::new(16, 5).unwrap(), 3, 2, 1).unwrap();
        let paths = meta.write(dir.path()).unwrap();
        assert_eq!(paths.len(), 5);
        assert!(dir.path().join("img_00004.dsr").exists());
        assert_eq!(DatasetMeta::read(dir.path()).unwrap(), meta);
        assert_eq!(Image::load(&paths[2]).unwrap(), meta.image(2));
    }
}
