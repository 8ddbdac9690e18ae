//! Datasets, IDX loading and pixel-permuted tasks.
//!
//! A [`PermutedTask`] holds the unpermuted splits plus the permutation and
//! reindexes pixels as examples are read, so a long task sequence shares one
//! copy of the underlying images.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Batch;
use crate::rng::seeded;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Random-access source of labelled examples.
pub trait Examples: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature width.
    fn width(&self) -> usize;

    fn label(&self, i: usize) -> usize;

    /// Writes the features of example `i` into `out` (length [`width`](Self::width)).
    fn fill_row(&self, i: usize, out: &mut [f64]);

    fn gather(&self, idx: &[usize]) -> Batch {
        let w = self.width();
        let mut inputs = Array2::zeros((idx.len(), w));
        for (mut row, &i) in inputs.rows_mut().into_iter().zip(idx) {
            self.fill_row(i, row.as_slice_mut().expect("standard layout"));
        }
        let labels = idx.iter().map(|&i| self.label(i)).collect();
        Batch { inputs, labels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<usize>,
    name: String,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pixels(&self) -> usize {
        self.images.ncols()
    }

    /// Number of distinct classes assuming labels are `0..k`.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        let w = self.pixels();
        let mut images = Array2::zeros((idx.len(), w));
        for (mut row, &i) in images.rows_mut().into_iter().zip(idx) {
            row.assign(&self.images.row(i));
        }
        Dataset {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            name: name.into(),
        }
    }

    /// First `n` rows of a seeded shuffle (all rows if `n >= len`).
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded(seed, 0));
        idx.truncate(n);
        self.select(&idx, format!("{}[{n}]", self.name))
    }
}

impl Examples for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn width(&self) -> usize {
        self.images.ncols()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.images.row(i).as_slice().expect("standard layout"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationKind {
    Full,
    Partial { side: usize, square_side: usize },
}

/// Pixel reindexing: output pixel `j` reads input pixel `mapping[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
    seed: u64,
    kind: PermutationKind,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>, seed: u64, kind: PermutationKind) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::invalid(format!(
                    "mapping is not a bijection on 0..{}",
                    mapping.len()
                )));
            }
        }
        Ok(Permutation {
            mapping,
            seed,
            kind,
        })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
            seed: 0,
            kind: PermutationKind::Full,
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> PermutationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (j, &m) in self.mapping.iter().enumerate() {
            inv[m] = j;
        }
        Permutation {
            mapping: inv,
            seed: self.seed,
            kind: self.kind,
        }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Permutation) -> Result<Permutation> {
        if next.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "permutation composition",
                expected: self.len(),
                found: next.len(),
            });
        }
        Ok(Permutation {
            mapping: next.mapping.iter().map(|&m| self.mapping[m]).collect(),
            seed: next.seed,
            kind: next.kind,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(j, &m)| j == m)
    }

    pub fn fixed_points(&self) -> usize {
        self.mapping.iter().enumerate().filter(|(j, &m)| *j == m).count()
    }

    pub fn apply_row(&self, src: &[f64], out: &mut [f64]) {
        for (o, &m) in out.iter_mut().zip(&self.mapping) {
            *o = src[m];
        }
    }
}

/// Uniformly random bijection on `0..n` (seeded Fisher-Yates).
pub fn make_permutation(n: usize, seed: u64) -> Result<Permutation> {
    if n == 0 {
        return Err(Error::invalid("permutation size must be >= 1"));
    }
    let mut mapping: Vec<usize> = (0..n).collect();
    mapping.shuffle(&mut seeded(seed, 0));
    Ok(Permutation {
        mapping,
        seed,
        kind: PermutationKind::Full,
    })
}

/// Shuffles only the centred `square_side x square_side` block of a
/// `side x side` image; every other pixel stays put.
///
/// The block is deranged (no pixel inside it keeps its position), so the
/// fixed points are exactly the pixels outside the block. A 1x1 block cannot
/// be deranged and yields the identity.
pub fn make_partial_permutation(side: usize, square_side: usize, seed: u64) -> Result<Permutation> {
    if side == 0 {
        return Err(Error::invalid("image side must be >= 1"));
    }
    if square_side > side {
        return Err(Error::invalid(format!(
            "square {square_side} larger than image side {side}"
        )));
    }
    let offset = (side - square_side) / 2;
    let block: Vec<usize> = (offset..offset + square_side)
        .flat_map(|r| (offset..offset + square_side).map(move |c| r * side + c))
        .collect();
    let mut mapping: Vec<usize> = (0..side * side).collect();
    if block.len() >= 2 {
        let mut rng = seeded(seed, 0);
        let mut order: Vec<usize> = (0..block.len()).collect();
        loop {
            order.shuffle(&mut rng);
            if order.iter().enumerate().all(|(k, &o)| k != o) {
                break;
            }
        }
        for (k, &o) in order.iter().enumerate() {
            mapping[block[k]] = block[o];
        }
    }
    Ok(Permutation {
        mapping,
        seed,
        kind: PermutationKind::Partial { side, square_side },
    })
}

/// Eagerly permuted copy of `ds`.
pub fn apply_permutation(ds: &Dataset, p: &Permutation) -> Result<Dataset> {
    if p.len() != ds.pixels() {
        return Err(Error::DimensionMismatch {
            what: "permutation length",
            expected: ds.pixels(),
            found: p.len(),
        });
    }
    let mut images = Array2::zeros(ds.images.dim());
    for (mut out, src) in images.rows_mut().into_iter().zip(ds.images.rows()) {
        p.apply_row(
            src.as_slice().expect("standard layout"),
            out.as_slice_mut().expect("standard layout"),
        );
    }
    Ok(Dataset {
        images,
        labels: ds.labels.clone(),
        name: ds.name.clone(),
    })
}

/// Seeded shuffle, then the first `round(n * valid_fraction)` rows become the
/// validation split. Returns `(train, valid)`.
pub fn split(ds: &Dataset, valid_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {valid_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed, 0));
    let (valid, train) = idx.split_at(n_valid);
    Ok((
        ds.select(train, format!("{}/train", ds.name)),
        ds.select(valid, format!("{}/valid", ds.name)),
    ))
}

/// Examples of a base dataset read through a permutation.
#[derive(Clone, Copy)]
pub struct PermutedView<'a> {
    base: &'a Dataset,
    permutation: &'a Permutation,
}

impl<'a> PermutedView<'a> {
    pub fn new(base: &'a Dataset, permutation: &'a Permutation) -> Result<Self> {
        if permutation.len() != base.pixels() {
            return Err(Error::DimensionMismatch {
                what: "permutation length",
                expected: base.pixels(),
                found: permutation.len(),
            });
        }
        Ok(PermutedView { base, permutation })
    }
}

impl Examples for PermutedView<'_> {
    fn len(&self) -> usize {
        self.base.len()
    }

    fn width(&self) -> usize {
        self.base.pixels()
    }

    fn label(&self, i: usize) -> usize {
        self.base.labels[i]
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        self.permutation
            .apply_row(self.base.images.row(i).as_slice().expect("standard layout"), out);
    }
}

/// One task: a permutation shared by its train, validation and test splits.
#[derive(Debug, Clone)]
pub struct PermutedTask {
    pub permutation: Permutation,
    train: Arc<Dataset>,
    valid: Arc<Dataset>,
    test: Arc<Dataset>,
}

impl PermutedTask {
    pub fn new(
        permutation: Permutation,
        train: Arc<Dataset>,
        valid: Arc<Dataset>,
        test: Arc<Dataset>,
    ) -> Result<Self> {
        for ds in [&train, &valid, &test] {
            PermutedView::new(ds, &permutation)?;
        }
        Ok(PermutedTask {
            permutation,
            train,
            valid,
            test,
        })
    }

    pub fn train(&self) -> PermutedView<'_> {
        PermutedView {
            base: &self.train,
            permutation: &self.permutation,
        }
    }

    pub fn valid(&self) -> PermutedView<'_> {
        PermutedView {
            base: &self.valid,
            permutation: &self.permutation,
        }
    }

    pub fn test(&self) -> PermutedView<'_> {
        PermutedView {
            base: &self.test,
            permutation: &self.permutation,
        }
    }

    /// Eagerly permuted `(train, valid, test)`.
    pub fn materialize(&self) -> Result<(Dataset, Dataset, Dataset)> {
        Ok((
            apply_permutation(&self.train, &self.permutation)?,
            apply_permutation(&self.valid, &self.permutation)?,
            apply_permutation(&self.test, &self.permutation)?,
        ))
    }

    pub fn classes(&self) -> usize {
        self.train.classes()
    }
}

/// Train/validation/test data shared by every task of a sequence.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Arc<Dataset>,
    pub valid: Arc<Dataset>,
    pub test: Arc<Dataset>,
}

impl TaskData {
    pub fn new(train: Dataset, valid: Dataset, test: Dataset) -> Self {
        TaskData {
            train: Arc::new(train),
            valid: Arc::new(valid),
            test: Arc::new(test),
        }
    }

    pub fn task(&self, permutation: Permutation) -> Result<PermutedTask> {
        PermutedTask::new(
            permutation,
            self.train.clone(),
            self.valid.clone(),
            self.test.clone(),
        )
    }

    /// `count` fully permuted tasks with permutation seeds `seed, seed+1, ...`.
    pub fn permuted_tasks(&self, count: usize, seed: u64) -> Result<Vec<PermutedTask>> {
        (0..count as u64)
            .map(|k| self.task(make_permutation(self.train.pixels(), seed.wrapping_add(k))?))
            .collect()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: start + len,
        available: bytes.len(),
    })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = body(bytes, 16, count * rows * cols, path)?;
    Ok((count, rows, cols, pixels.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    Ok(body(bytes, 8, count, path)?.to_vec())
}

/// Loads an IDX image/label pair; `.gz` files are decompressed transparently.
/// Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (count, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(ip)?, ip)?;
    let labels = parse_idx_labels(&read_maybe_gz(lp)?, lp)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let images = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.into_iter().map(|b| b as f64 / 255.0).collect(),
    )
    .expect("count * rows * cols pixels");
    let name = ip
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        images,
        labels: labels.into_iter().map(usize::from).collect(),
        name,
    })
}

/// Standard MNIST file names inside `dir`, preferring uncompressed files.
pub fn mnist_paths(dir: &Path, train: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let pick = |stem: String| {
        let plain = dir.join(&stem);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{stem}.gz"))
        }
    };
    (
        pick(format!("{prefix}-images-idx3-ubyte")),
        pick(format!("{prefix}-labels-idx1-ubyte")),
    )
}
