use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::io::{read_point_cloud, write_xyz};
use crate::geometry::{synthesize_shapes, PointCloud};

/// Which half of a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Manifest path inside a dataset directory.
    pub fn manifest(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.manifest", self.name()))
    }
}

/// Labelled clouds loaded from a manifest.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clouds.iter().map(|c| c.label.unwrap_or(0)).collect()
    }

    /// Loads `split` of a dataset directory.
    pub fn load(dir: &Path, split: Split) -> Result<Dataset> {
        Self::from_manifest(&split.manifest(dir))
    }

    /// Reads `filename<TAB>class_id` lines; file names are relative to the
    /// manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut clouds = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Load(format!("{}: line {}: {msg}", path.display(), i + 1));
            let (file, class) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected 'filename<TAB>class_id'".into()))?;
            let class: usize = class
                .trim()
                .parse()
                .map_err(|_| bad(format!("invalid class id '{}'", class.trim())))?;
            let mut cloud = read_point_cloud(&base.join(file))?;
            cloud.label = Some(class);
            clouds.push(cloud);
        }
        if clouds.is_empty() {
            return Err(Error::Load(format!("{}: manifest lists no files", path.display())));
        }
        Ok(Dataset { clouds })
    }

    /// Synthetic shapes in memory; sample `i` has class `i mod classes`.
    pub fn synthetic(classes: usize, points: usize, count: usize, seed: u64, split: Split) -> Result<Dataset> {
        let clouds = (0..count)
            .map(|i| synthesize_shapes(i % classes, points, shape_seed(seed, split, i)))
            .collect::<Result<_>>()?;
        Ok(Dataset { clouds })
    }
}

/// Seed of one generated shape; distinct across splits and indices.
pub fn shape_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x7472_6169_6e00_0000u64,
        Split::Test => 0x7465_7374_0000_0000u64,
    };
    mix(seed ^ tag, index as u64)
}

/// SplitMix64 finalizer over a pair of words.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes a synthetic dataset as XYZ files plus `train.manifest` and
/// `test.manifest`. Returns the number of files written.
pub fn generate_dataset(
    dir: &Path,
    classes: usize,
    points: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<usize> {
    if classes == 0 {
        return Err(Error::param("need at least one class"));
    }
    let mut written = 0;
    for (split, count) in [(Split::Train, n_train), (Split::Test, n_test)] {
        let sub = dir.join(split.name());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let data = Dataset::synthetic(classes, points, count, seed, split)?;
        let mut manifest = String::new();
        for (i, cloud) in data.clouds.iter().enumerate() {
            let name = format!("{}/{:05}.xyz", split.name(), i);
            write_xyz(&dir.join(&name), cloud)?;
            let _ = writeln!(manifest, "{name}\t{}", i % classes);
            written += 1;
        }
        let path = split.manifest(dir);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }
    Ok(written)
}
