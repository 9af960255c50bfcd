//! Paired image data: directory loading, jitter augmentation, synthetic
//! involution tasks and batching.
//!
//! On disk a split is two directories of name-matched 8-bit PNGs:
//!
//! ```text
//! <root>/<split>A/<id>.png   domain X
//! <root>/<split>B/<id>.png   domain Y
//! ```

mod augment;
mod png_io;
mod synthetic;

pub use augment::{augment_pair, augment_pair_with_offset, crop, resize_bilinear, AugmentConfig};
pub use png_io::{pixel_to_unit, read_png, unit_to_pixel, write_png};
pub use synthetic::{generate_synthetic, SyntheticTask, SyntheticTaskSpec, Texture};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected train, val or test)"))),
        }
    }
}

/// An aligned `(x, y)` pair, each of shape `(1, c, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub x: ImageTensor,
    pub y: ImageTensor,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, x: ImageTensor, y: ImageTensor) -> Result<Self> {
        let id = id.into();
        if x.batch() != 1 {
            return Err(Error::shape("a single image (batch 1)", x.shape()));
        }
        if x.shape() != y.shape() {
            return Err(Error::Dataset(format!(
                "pair `{id}` has mismatched shapes: x {:?}, y {:?}",
                x.shape(),
                y.shape()
            )));
        }
        for (name, t) in [("x", &x), ("y", &y)] {
            if t.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Dataset(format!("pair `{id}`: {name} has values outside [-1, 1]")));
            }
        }
        Ok(PairedSample { id, x, y })
    }

    /// `(h, w)` of both images.
    pub fn hw(&self) -> (usize, usize) {
        (self.x.height(), self.x.width())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub split: Split,
    pub domain_names: (String, String),
}

impl PairedDataset {
    pub fn new(samples: Vec<PairedSample>, split: Split, domain_names: (String, String)) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id `{}` in {split} split", s.id)));
            }
        }
        if let Some(first) = samples.first() {
            let shape = first.x.shape();
            if let Some(bad) = samples.iter().find(|s| s.x.shape() != shape) {
                return Err(Error::Dataset(format!(
                    "sample `{}` has shape {:?}, expected {:?} like `{}`",
                    bad.id,
                    bad.x.shape(),
                    shape,
                    first.id
                )));
            }
        }
        Ok(PairedDataset {
            samples,
            split,
            domain_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(channels, h, w)` shared by every image, if any.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|s| {
            let [_, c, h, w] = s.x.shape();
            [c, h, w]
        })
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// The same pairs with the roles of X and Y exchanged.
    pub fn swapped(&self) -> PairedDataset {
        PairedDataset {
            samples: self
                .samples
                .iter()
                .map(|s| PairedSample {
                    id: s.id.clone(),
                    x: s.y.clone(),
                    y: s.x.clone(),
                })
                .collect(),
            split: self.split,
            domain_names: (self.domain_names.1.clone(), self.domain_names.0.clone()),
        }
    }
}

pub fn split_dirs(root: &Path, split: Split) -> (PathBuf, PathBuf) {
    (root.join(format!("{split}A")), root.join(format!("{split}B")))
}

fn png_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            out.insert(name, path);
        }
    }
    Ok(out)
}

/// Load `<root>/<split>A` and `<root>/<split>B`, pairing files by name in
/// lexicographic order. Sample ids are the file stems.
pub fn load_paired_dataset(root: &Path, split: Split, channels: usize) -> Result<PairedDataset> {
    let (dir_a, dir_b) = split_dirs(root, split);
    let names_a = png_names(&dir_a)?;
    let names_b = png_names(&dir_b)?;
    if let Some(name) = names_a.keys().find(|k| !names_b.contains_key(*k)) {
        return Err(Error::Orphan {
            name: name.clone(),
            dir: dir_b,
        });
    }
    if let Some(name) = names_b.keys().find(|k| !names_a.contains_key(*k)) {
        return Err(Error::Orphan {
            name: name.clone(),
            dir: dir_a,
        });
    }
    let mut samples = Vec::with_capacity(names_a.len());
    for (name, path_a) in &names_a {
        let x = read_png(path_a, channels)?;
        let y = read_png(&names_b[name], channels)?;
        if x.shape() != y.shape() {
            return Err(Error::Dataset(format!(
                "pair `{name}` has mismatched shapes: {} is {:?}, {} is {:?}",
                path_a.display(),
                x.shape(),
                names_b[name].display(),
                y.shape()
            )));
        }
        let id = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        samples.push(PairedSample { id, x, y });
    }
    PairedDataset::new(samples, split, ("A".into(), "B".into()))
}

/// Write `dataset` under `root` in the split A/B layout. Returns the written
/// files in order (A then B for each sample).
pub fn write_paired_dataset(root: &Path, dataset: &PairedDataset) -> Result<Vec<PathBuf>> {
    let (dir_a, dir_b) = split_dirs(root, dataset.split);
    for d in [&dir_a, &dir_b] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut files = Vec::with_capacity(2 * dataset.len());
    for s in &dataset.samples {
        let pa = dir_a.join(format!("{}.png", s.id));
        let pb = dir_b.join(format!("{}.png", s.id));
        write_png(&pa, &s.x)?;
        write_png(&pb, &s.y)?;
        files.push(pa);
        files.push(pb);
    }
    Ok(files)
}

/// Index groups of at most `batch_size`, in dataset order or shuffled by `rng`.
pub fn batch_indices<R: Rng + ?Sized>(len: usize, batch_size: usize, shuffle: bool, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Stack the listed samples into `(n, c, h, w)` batches.
pub fn stack_samples(samples: &[&PairedSample]) -> Result<(ImageTensor, ImageTensor)> {
    let xs: Vec<&ImageTensor> = samples.iter().map(|s| &s.x).collect();
    let ys: Vec<&ImageTensor> = samples.iter().map(|s| &s.y).collect();
    Ok((ImageTensor::stack(&xs)?, ImageTensor::stack(&ys)?))
}

/// Stream of stacked `(x, y)` batches; the last one may be partial.
pub fn batch_iter<'a, R: Rng + ?Sized>(
    dataset: &'a PairedDataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> impl Iterator<Item = (ImageTensor, ImageTensor)> + 'a {
    batch_indices(dataset.len(), batch_size, shuffle, rng).into_iter().map(move |idx| {
        let picked: Vec<&PairedSample> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        stack_samples(&picked).expect("dataset samples share one shape")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn tiny(n: usize) -> PairedDataset {
        let samples = (0..n)
            .map(|i| {
                let x = ImageTensor::full([1, 1, 4, 4], i as f32 / n as f32);
                PairedSample::new(format!("s{i}"), x.clone(), x.map(|v| -v)).unwrap()
            })
            .collect();
        PairedDataset::new(samples, Split::Train, ("X".into(), "Y".into())).unwrap()
    }

    #[test]
    fn batch_sizes_and_order() {
        let ds = tiny(5);
        let mut rng = stream(0, Purpose::Shuffle, 0);
        let sizes: Vec<usize> = batch_iter(&ds, 2, false, &mut rng).map(|(x, _)| x.batch()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let flat: Vec<usize> = batch_indices(5, 2, false, &mut rng).concat();
        assert_eq!(flat, vec![0, 1, 2, 3, 4]);
        let a = batch_indices(50, 8, true, &mut stream(3, Purpose::Shuffle, 0));
        let b = batch_indices(50, 8, true, &mut stream(3, Purpose::Shuffle, 0));
        assert_eq!(a, b);
        let mut sorted = a.concat();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(batch_iter(&tiny(0), 3, true, &mut rng).count(), 0);
    }

    #[test]
    fn rejects_invalid_samples() {
        let a = ImageTensor::zeros([1, 1, 4, 4]);
        assert!(PairedSample::new("a", a.clone(), ImageTensor::zeros([1, 1, 4, 5])).is_err());
        assert!(PairedSample::new("a", a.clone(), ImageTensor::full([1, 1, 4, 4], 1.5)).is_err());
        let s = PairedSample::new("a", a.clone(), a.clone()).unwrap();
        assert!(PairedDataset::new(vec![s.clone(), s], Split::Val, ("X".into(), "Y".into())).is_err());
    }

    #[test]
    fn load_orders_by_name_and_reports_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let (a, b) = split_dirs(root, Split::Train);
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        let img = |p: u8| ImageTensor::full([1, 1, 3, 3], pixel_to_unit(p));
        for (name, p) in [("b", 10u8), ("a", 200)] {
            write_png(&a.join(format!("{name}.png")), &img(p)).unwrap();
            write_png(&b.join(format!("{name}.png")), &img(255 - p)).unwrap();
        }
        let ds = load_paired_dataset(root, Split::Train, 1).unwrap();
        assert_eq!(ds.ids(), vec!["a", "b"]);
        assert_eq!(ds.samples[0].x.data()[0], pixel_to_unit(200));
        assert_eq!(ds.samples[0].y.data()[0], pixel_to_unit(55));

        write_png(&a.join("c.png"), &img(1)).unwrap();
        match load_paired_dataset(root, Split::Train, 1).unwrap_err() {
            Error::Orphan { name, .. } => assert_eq!(name, "c.png"),
            e => panic!("unexpected {e}"),
        }
        write_png(&b.join("c.png"), &ImageTensor::zeros([1, 1, 4, 3])).unwrap();
        let err = load_paired_dataset(root, Split::Train, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 1, 3, 3]") && err.contains("[1, 1, 4, 3]"), "{err}");
    }

    #[test]
    fn write_then_load_round_trips_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let x = ImageTensor::from_fn([1, 1, 8, 8], |[_, _, h, w]| pixel_to_unit((h * 30 + w) as u8));
        let ds = PairedDataset::new(
            vec![PairedSample::new("p0", x.clone(), x.map(|v| -v)).unwrap()],
            Split::Test,
            ("X".into(), "Y".into()),
        )
        .unwrap();
        write_paired_dataset(dir.path(), &ds).unwrap();
        let back = load_paired_dataset(dir.path(), Split::Test, 1).unwrap();
        assert_eq!(back.samples[0].x, x);
        for (a, b) in back.samples[0].y.data().iter().zip(x.data()) {
            assert!((a + b).abs() < 1e-6);
        }
    }
}
