//! Datasets: MNIST-style IDX files and Gaussian-cluster synthetic data.

use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled examples, inputs row-major `[len × input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Shape(format!(
                "{} input values for {} labels of dimension {input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Shape(format!(
                "label {l} but only {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            input_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// A uniformly random subset of `n` examples, kept in original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = rng::stream(seed, Domain::Data, 9, 0);
        let mut picked = index::sample(&mut rng, self.len(), n).into_vec();
        picked.sort_unstable();
        self.select(&picked)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs,
            input_dim: self.input_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Zero-pad square `rows × cols` images to `target × target`, centred.
    pub fn pad_images(&self, rows: usize, cols: usize, target: usize) -> Result<Dataset> {
        if rows * cols != self.input_dim || target < rows || target < cols {
            return Err(Error::Shape(format!(
                "cannot pad {rows}x{cols} images of dimension {} to {target}x{target}",
                self.input_dim
            )));
        }
        let (top, left) = ((target - rows) / 2, (target - cols) / 2);
        let dim = target * target;
        let mut inputs = vec![0.0; self.len() * dim];
        for i in 0..self.len() {
            let src = self.row(i);
            let dst = &mut inputs[i * dim..(i + 1) * dim];
            for r in 0..rows {
                let start = (top + r) * target + left;
                dst[start..start + cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
            }
        }
        Ok(Dataset {
            inputs,
            input_dim: dim,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: format!("file ends after {} bytes inside the header", bytes.len()),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        message: format!("truncated: expected {len} payload bytes from byte {start}"),
    })
}

/// Parse a big-endian IDX image/label pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let n_images = read_u32(&images, 4, images_path)? as usize;
    let rows = read_u32(&images, 8, images_path)? as usize;
    let cols = read_u32(&images, 12, images_path)? as usize;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let n_labels = read_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("{n_labels} labels for {n_images} images"),
        });
    }

    let dim = rows * cols;
    let pixels = payload(&images, 16, n_images * dim, images_path)?;
    let label_bytes = payload(&labels, 8, n_labels, labels_path)?;
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(inputs, dim, labels, num_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_std: f64,
    #[serde(default)]
    pub seed: u64,
    /// Only the first `active_dims` coordinates carry signal and noise; the
    /// rest are exactly zero, like the empty border of a digit image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_dims: Option<usize>,
}

fn default_test_samples() -> usize {
    50
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "synthetic dataset dimensions must be positive: {self:?}"
            )));
        }
        if let Some(a) = self.active_dims {
            if a == 0 || a > self.input_dim {
                return Err(Error::Config(format!(
                    "active_dims must be in 1..={}, got {a}",
                    self.input_dim
                )));
            }
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Config(format!(
                "cluster_std must be non-negative, got {}",
                self.cluster_std
            )));
        }
        Ok(())
    }
}

const CLUSTER_RADIUS: f64 = 2.0;

/// Gaussian clusters, one per class, centred on a sphere of radius 2.
///
/// Train and test examples share the class means and use separate noise streams.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<DataSplit> {
    spec.validate()?;
    let active = spec.active_dims.unwrap_or(spec.input_dim);
    let mut rng = rng::stream(spec.seed, Domain::Data, 0, 0);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..active)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| CLUSTER_RADIUS * x / norm).collect()
        })
        .collect();

    let draw = |per_class: usize, stream: u64| -> Result<Dataset> {
        let mut rng = rng::stream(spec.seed, Domain::Data, stream, 0);
        let mut inputs = Vec::with_capacity(per_class * spec.num_classes * spec.input_dim);
        let mut labels = Vec::with_capacity(per_class * spec.num_classes);
        for _ in 0..per_class {
            for (class, mean) in means.iter().enumerate() {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    inputs.push(m + spec.cluster_std * z);
                }
                inputs.resize(inputs.len() + spec.input_dim - active, 0.0);
                labels.push(class);
            }
        }
        Dataset::new(inputs, spec.input_dim, labels, spec.num_classes)
    };

    Ok(DataSplit {
        train: draw(spec.samples_per_class, 1)?,
        test: draw(spec.test_samples_per_class, 2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{self, Batch, HeadMask, NetworkSpec};
    use crate::sgd::sgd_step;

    fn spec(cluster_std: f64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 3,
            samples_per_class: 20,
            test_samples_per_class: 5,
            input_dim: 6,
            cluster_std,
            seed: 42,
            active_dims: None,
        }
    }

    #[test]
    fn zero_spread_collapses_each_class() {
        let data = gen_synthetic(&spec(0.0)).unwrap().train;
        for class in 0..3 {
            let rows: Vec<&[f64]> = (0..data.len())
                .filter(|&i| data.labels[i] == class)
                .map(|i| data.row(i))
                .collect();
            assert_eq!(rows.len(), 20);
            assert!(rows.iter().all(|r| r == &rows[0]));
            let norm = rows[0].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(
            gen_synthetic(&spec(0.5)).unwrap(),
            gen_synthetic(&spec(0.5)).unwrap()
        );
        let mut other = spec(0.5);
        other.seed = 43;
        assert_ne!(
            gen_synthetic(&spec(0.5)).unwrap(),
            gen_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn separated_classes_are_linearly_separable() {
        let s = SyntheticSpec {
            num_classes: 2,
            samples_per_class: 50,
            test_samples_per_class: 1,
            input_dim: 4,
            cluster_std: 0.1,
            seed: 1,
            active_dims: None,
        };
        let data = gen_synthetic(&s).unwrap().train;
        let net = NetworkSpec::new(4, vec![], 2).unwrap();
        let batch = Batch::new(data.inputs.clone(), 4, data.labels.clone(), None).unwrap();
        let mask = HeadMask::full(2);
        let mut w = vec![0.0; net.num_params()];
        for _ in 0..200 {
            let (_, g) = engine::loss_and_gradient(&net, &w, &batch, &mask).unwrap();
            w = sgd_step(&w, &g, 0.5).unwrap().into_inner();
        }
        let z = engine::logits(&net, &w, &data.inputs, data.len()).unwrap();
        let correct = z
            .chunks(2)
            .zip(&data.labels)
            .filter(|(z, &l)| (z[1] > z[0]) == (l == 1))
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn subsample_and_pad() {
        let data = gen_synthetic(&spec(0.3)).unwrap().train;
        let sub = data.subsample(10, 3);
        assert_eq!(sub.len(), 10);
        assert_eq!(sub, data.subsample(10, 3));
        assert_eq!(data.subsample(100, 3), data);

        let img = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 4, vec![0], 1).unwrap();
        let padded = img.pad_images(2, 2, 4).unwrap();
        assert_eq!(padded.input_dim, 16);
        assert_eq!(padded.row(0)[5], 1.0);
        assert_eq!(padded.row(0)[6], 2.0);
        assert_eq!(padded.row(0)[9], 3.0);
        assert_eq!(padded.row(0)[10], 4.0);
        assert_eq!(padded.inputs.iter().sum::<f64>(), 10.0);
    }

    fn idx_files(
        images: &[u8],
        labels: &[u8],
    ) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (dir, ip, lp)
    }

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn idx_errors_name_offsets() {
        let mut images = header(IDX_IMAGES_MAGIC, &[1, 2, 2]);
        images.extend_from_slice(&[0, 255, 128, 1]);
        let mut labels = header(IDX_LABELS_MAGIC, &[1]);
        labels.push(7);

        let (_d, ip, lp) = idx_files(&header(0x0000_0801, &[1, 2, 2]), &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Parse { offset: 0, .. })
        ));

        let (_d, ip, lp) = idx_files(&images[..18], &labels);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 18, .. }), "{err}");

        let (_d, ip, lp) = idx_files(&images, &header(IDX_LABELS_MAGIC, &[2]));
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Parse { offset: 4, .. })
        ));

        let (_d, ip, lp) = idx_files(&images[..6], &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Parse { offset: 4, .. })
        ));

        let (_d, ip, lp) = idx_files(&images, &labels);
        let data = load_idx(&ip, &lp).unwrap();
        assert_eq!(data.inputs, vec![0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
        assert_eq!(data.labels, vec![7]);

        assert!(matches!(
            load_idx(ip.with_extension("missing"), &lp),
            Err(Error::Io { .. })
        ));
    }
}
