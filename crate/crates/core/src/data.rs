//! Training tuples `(x, edge, y)`: label synthesis, patch extraction, void
//! filtering and dataset loading.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect_eval::Center;
use crate::edges::{canny, CannyConfig, EdgeMap};
use crate::error::{Error, Result};
use crate::io;
use crate::numerics::{gaussian_kernel, Grid2D};

/// One aligned training patch. `centers` are patch-local annotated centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub x: Grid2D,
    pub edge: EdgeMap,
    pub y: Grid2D,
    pub centers: Vec<Center>,
}

impl TrainingTuple {
    pub fn new(x: Grid2D, edge: EdgeMap, y: Grid2D, centers: Vec<Center>) -> Result<Self> {
        if x.dims() != y.dims() || x.dims() != edge.grid().dims() {
            return Err(Error::dim("training tuple channels are not aligned"));
        }
        validate_centers(&centers, x.height(), x.width())?;
        Ok(Self { x, edge, y, centers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub patch: usize,
    pub stride: usize,
    pub label_sigma: f64,
    pub label_kernel: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch: 40,
            stride: 20,
            label_sigma: 2.0,
            label_kernel: 7,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 {
            return Err(Error::invalid("patch and stride must be >= 1"));
        }
        if !(self.label_sigma > 0.0) || self.label_kernel.is_multiple_of(2) {
            return Err(Error::invalid(
                "label_sigma must be > 0 and label_kernel odd",
            ));
        }
        Ok(())
    }
}

pub fn validate_centers(centers: &[Center], height: usize, width: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(centers.len());
    for &(row, col) in centers {
        if row >= height || col >= width {
            return Err(Error::OutOfBounds {
                row,
                col,
                height,
                width,
            });
        }
        if !seen.insert((row, col)) {
            return Err(Error::invalid(format!("duplicate center ({row}, {col})")));
        }
    }
    Ok(())
}

/// Soft label map: a peak-normalized Gaussian stamped at every center,
/// overlaps combined by maximum so values stay in [0, 1] with exactly 1 at
/// each center.
pub fn synth_labels(
    centers: &[Center],
    height: usize,
    width: usize,
    sigma: f64,
    ksize: usize,
) -> Result<Grid2D> {
    validate_centers(centers, height, width)?;
    let kernel = gaussian_kernel(sigma, ksize)?;
    let half = (ksize / 2) as isize;
    let mut y = Grid2D::zeros(height, width);
    for &(cr, cc) in centers {
        for u in 0..ksize {
            let r = cr as isize + u as isize - half;
            if r < 0 || r >= height as isize {
                continue;
            }
            for v in 0..ksize {
                let c = cc as isize + v as isize - half;
                if c < 0 || c >= width as isize {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let k = kernel.get(u, v);
                if k > y.get(r, c) {
                    y.set(r, c, k);
                }
            }
        }
    }
    Ok(y)
}

/// Aligned `patch`x`patch` crops on a regular grid with the given stride.
pub fn extract_patches(
    x: &Grid2D,
    edge: &EdgeMap,
    y: &Grid2D,
    centers: &[Center],
    patch: usize,
    stride: usize,
) -> Result<Vec<TrainingTuple>> {
    let (h, w) = x.dims();
    if edge.grid().dims() != (h, w) || y.dims() != (h, w) {
        return Err(Error::dim("image, edge map and labels differ in size"));
    }
    if patch == 0 || stride == 0 {
        return Err(Error::invalid("patch and stride must be >= 1"));
    }
    if h < patch || w < patch {
        return Err(Error::dim(format!(
            "{h}x{w} image smaller than {patch}x{patch} patch"
        )));
    }
    let mut out = Vec::new();
    for r0 in (0..=h - patch).step_by(stride) {
        for c0 in (0..=w - patch).step_by(stride) {
            let local: Vec<Center> = centers
                .iter()
                .filter(|&&(r, c)| (r0..r0 + patch).contains(&r) && (c0..c0 + patch).contains(&c))
                .map(|&(r, c)| (r - r0, c - c0))
                .collect();
            out.push(TrainingTuple {
                x: x.crop(r0, c0, patch, patch)?,
                edge: edge.crop(r0, c0, patch, patch)?,
                y: y.crop(r0, c0, patch, patch)?,
                centers: local,
            });
        }
    }
    Ok(out)
}

/// Drops tuples whose label patch holds no center (max(y) < 0.5); keeps order.
pub fn filter_void(tuples: Vec<TrainingTuple>) -> Vec<TrainingTuple> {
    tuples.into_iter().filter(|t| t.y.max() >= 0.5).collect()
}

/// Train/test proportions such as `50:50` or `100:20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("split {s:?} is not `train:test`")))?;
        let train = a.trim().parse().map_err(|_| Error::invalid(format!("bad split {s:?}")))?;
        let test = b.trim().parse().map_err(|_| Error::invalid(format!("bad split {s:?}")))?;
        if train + test == 0 {
            return Err(Error::invalid("split must not be 0:0"));
        }
        Ok(Self { train, test })
    }
}

impl Split {
    /// Number of training items out of `n`.
    pub fn train_count(&self, n: usize) -> usize {
        ((n * self.train) as f64 / (self.train + self.test) as f64).round() as usize
    }
}

/// Seeded shuffle of the (already sorted) item list; returns train and test
/// indices, each in ascending order.
pub fn split_indices(n: usize, split: Split, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = split.train_count(n);
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    image_dir: PathBuf,
    annotation_dir: PathBuf,
    #[serde(default = "default_split")]
    split: String,
    #[serde(default)]
    seed: u64,
}

fn default_split() -> String {
    "50:50".into()
}

/// Dataset description; relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub image_dir: PathBuf,
    pub annotation_dir: PathBuf,
    pub split: Split,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        let file: ManifestFile =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self {
            image_dir: base.join(file.image_dir),
            annotation_dir: base.join(file.annotation_dir),
            split: file.split.parse().map_err(|e: Error| Error::parse(path, e.to_string()))?,
            seed: file.seed,
        })
    }

    pub fn to_toml(&self) -> String {
        format!(
            "image_dir = {:?}\nannotation_dir = {:?}\nsplit = \"{}:{}\"\nseed = {}\n",
            self.image_dir.display().to_string(),
            self.annotation_dir.display().to_string(),
            self.split.train,
            self.split.test,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub name: String,
    pub image: Grid2D,
    pub centers: Vec<Center>,
    /// Precomputed edge map; computed on demand by [`training_tuples`] when absent.
    pub edge: Option<EdgeMap>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

fn annotation_path(dir: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default();
    dir.join(stem).with_extension("csv")
}

/// Reads every image with its annotation file and splits deterministically.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let files = io::list_images(&manifest.image_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no images in {}",
            manifest.image_dir.display()
        )));
    }
    for f in &files {
        let ann = annotation_path(&manifest.annotation_dir, f);
        if !ann.is_file() {
            return Err(Error::invalid(format!(
                "missing annotation {} for image {}",
                ann.display(),
                f.display()
            )));
        }
    }
    let (train_idx, test_idx) = split_indices(files.len(), manifest.split, manifest.seed);
    let load = |i: usize| -> Result<ImageRecord> {
        let path = &files[i];
        let image = io::read_gray(path)?;
        let centers = io::read_centers(&annotation_path(&manifest.annotation_dir, path))?;
        validate_centers(&centers, image.height(), image.width())
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(ImageRecord {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            image,
            centers,
            edge: None,
        })
    };
    let train = train_idx
        .par_iter()
        .map(|&i| load(i))
        .collect::<Result<Vec<_>>>()?;
    let test = test_idx
        .par_iter()
        .map(|&i| load(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { train, test })
}

/// Labels, patches and void filtering for a set of training images.
pub fn training_tuples(
    records: &[ImageRecord],
    config: &DataConfig,
    canny_config: &CannyConfig,
) -> Result<Vec<TrainingTuple>> {
    config.validate()?;
    let per_image = records
        .par_iter()
        .map(|rec| {
            let (h, w) = rec.image.dims();
            let y = synth_labels(&rec.centers, h, w, config.label_sigma, config.label_kernel)?;
            let edge = match &rec.edge {
                Some(e) => e.clone(),
                None => canny(&rec.image, canny_config)?,
            };
            let patches = extract_patches(&rec.image, &edge, &y, &rec.centers, config.patch, config.stride)?;
            Ok(filter_void(patches))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}
