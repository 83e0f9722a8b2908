use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{read_image, read_labels, resize_labels, resize_nearest, ImageRecord, LabelMap};
use super::synthetic::make_synthetic_dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// `content[i]` is paired with `style[i]` (same basename on disk).
    Paired,
    /// Content and style are drawn from independent shuffles.
    Unpaired,
    /// One-hot label maps as content, the matching real images as targets.
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Directory,
}

/// Where training images come from and how they are shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: DataSource,
    pub mode: DataMode,
    /// Paired/unpaired content images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_dir: Option<PathBuf>,
    /// Paired/unpaired style images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_dir: Option<PathBuf>,
    /// Semantic mode: single-channel class-id masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_dir: Option<PathBuf>,
    /// Semantic mode: real images matching the masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    /// Semantic mode: class count; inferred from the masks if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub shuffle_seed: u64,
    /// Synthetic source: number of items and generator seed.
    #[serde(default = "default_count")]
    pub synthetic_count: usize,
    #[serde(default)]
    pub synthetic_seed: u64,
}

fn default_count() -> usize {
    8
}

impl DataSpec {
    pub fn synthetic(mode: DataMode, n: usize, h: usize, w: usize, seed: u64) -> Self {
        DataSpec {
            source: DataSource::Synthetic,
            mode,
            content_dir: None,
            style_dir: None,
            label_dir: None,
            image_dir: None,
            classes: None,
            height: h,
            width: w,
            shuffle_seed: seed,
            synthetic_count: n,
            synthetic_seed: seed,
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("image extent {}x{} must be positive", self.height, self.width)));
        }
        match self.source {
            DataSource::Synthetic => {
                make_synthetic_dataset(self.mode, self.synthetic_count, self.height, self.width, self.synthetic_seed)
            }
            DataSource::Directory => self.load_dirs(),
        }
    }

    fn load_dirs(&self) -> Result<Dataset> {
        let need = |d: &Option<PathBuf>, key: &str| {
            d.clone().ok_or_else(|| Error::Config(format!("data.{key} is required in {:?} mode", self.mode)))
        };
        let (h, w) = (self.height, self.width);
        let load_images = |dir: &Path| -> Result<Vec<ImageRecord>> {
            list_images(dir)?.iter().map(|p| resize_nearest(&read_image(p)?, h, w)).collect()
        };
        match self.mode {
            DataMode::Paired | DataMode::Unpaired => {
                let cdir = need(&self.content_dir, "content_dir")?;
                let sdir = need(&self.style_dir, "style_dir")?;
                let content = load_images(&cdir)?;
                let style = load_images(&sdir)?;
                if self.mode == DataMode::Paired {
                    check_pairing(content.iter().map(|r| r.source.as_str()), style.iter().map(|r| r.source.as_str()))?;
                }
                Dataset::new(self.mode, content, style, Vec::new(), 0)
            }
            DataMode::Semantic => {
                let ldir = need(&self.label_dir, "label_dir")?;
                let idir = need(&self.image_dir, "image_dir")?;
                let labels = list_images(&ldir)?
                    .iter()
                    .map(|p| resize_labels(&read_labels(p)?, h, w))
                    .collect::<Result<Vec<_>>>()?;
                let images = load_images(&idir)?;
                check_pairing(labels.iter().map(|m| m.source.as_str()), images.iter().map(|r| r.source.as_str()))?;
                let classes = match self.classes {
                    Some(c) => c,
                    None => labels.iter().flat_map(|m| m.labels.iter()).max().map_or(1, |&m| m as usize + 1),
                };
                Dataset::new(DataMode::Semantic, Vec::new(), images, labels, classes)
            }
        }
    }
}

/// Image files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "ppm", "pgm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .png/.ppm/.pgm images", dir.display())));
    }
    Ok(files)
}

fn stem(path: &str) -> &str {
    Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or(path)
}

fn check_pairing<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>) -> Result<()> {
    let a: Vec<&str> = a.collect();
    let b: Vec<&str> = b.collect();
    let sa: BTreeSet<&str> = a.iter().map(|p| stem(p)).collect();
    let sb: BTreeSet<&str> = b.iter().map(|p| stem(p)).collect();
    if let Some(x) = sa.symmetric_difference(&sb).next() {
        return Err(Error::Data(format!("paired mode: basename {x:?} has no counterpart")));
    }
    if sa.len() != a.len() || sb.len() != b.len() {
        return Err(Error::Data("paired mode: duplicate basenames".into()));
    }
    Ok(())
}

/// An in-memory dataset. In semantic mode `content` is empty and `labels`
/// holds the masks paired with `style` (the real images).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mode: DataMode,
    pub content: Vec<ImageRecord>,
    pub style: Vec<ImageRecord>,
    pub labels: Vec<LabelMap>,
    pub classes: usize,
}

/// Position in the deterministic batch stream; `(seed, epoch)` fixes the
/// visiting order of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCursor {
    pub seed: u64,
    pub epoch: u64,
    pub position: usize,
}

impl BatchCursor {
    pub fn new(seed: u64) -> Self {
        BatchCursor { seed, epoch: 0, position: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, C, H, W]`: images, or one-hot masks in semantic mode.
    pub content: Tensor<f32>,
    /// `[n, 3, H, W]`: style images, or real targets.
    pub style: Tensor<f32>,
    pub content_ids: Vec<usize>,
    pub style_ids: Vec<usize>,
}

/// Visiting order of `len` items for `(seed, epoch, stream)`.
pub fn epoch_order(seed: u64, epoch: u64, stream: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(2).wrapping_add(stream));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    Tensor::concat(parts, 0)
}

impl Dataset {
    pub fn new(
        mode: DataMode,
        content: Vec<ImageRecord>,
        style: Vec<ImageRecord>,
        labels: Vec<LabelMap>,
        classes: usize,
    ) -> Result<Self> {
        let ds = Dataset { mode, content, style, labels, classes };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.len() == 0 || self.style.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        match self.mode {
            DataMode::Paired if self.content.len() != self.style.len() => {
                return Err(Error::Data(format!(
                    "paired mode: {} content vs {} style images",
                    self.content.len(),
                    self.style.len()
                )))
            }
            DataMode::Semantic => {
                if self.labels.len() != self.style.len() {
                    return Err(Error::Data("semantic mode: masks and images differ in count".into()));
                }
                if let Some(m) = self.labels.iter().find(|m| m.labels.iter().any(|&l| l as usize >= self.classes)) {
                    return Err(Error::Data(format!("{}: label id >= class count {}", m.source, self.classes)));
                }
            }
            _ => {}
        }
        let extents: BTreeSet<(usize, usize)> = self
            .content
            .iter()
            .chain(&self.style)
            .map(|r| (r.height(), r.width()))
            .chain(self.labels.iter().map(|m| (m.h, m.w)))
            .collect();
        if extents.len() != 1 {
            return Err(Error::Data(format!("images differ in extent: {extents:?}")));
        }
        Ok(())
    }

    /// Number of content items (masks in semantic mode).
    pub fn len(&self) -> usize {
        match self.mode {
            DataMode::Semantic => self.labels.len(),
            _ => self.content.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.style[0].height(), self.style[0].width())
    }

    /// Channels of the content input.
    pub fn content_channels(&self) -> usize {
        match self.mode {
            DataMode::Semantic => self.classes,
            _ => 3,
        }
    }

    /// Content tensor `[1, C, H, W]` for item `i`.
    pub fn content_item(&self, i: usize) -> Result<Tensor<f32>> {
        match self.mode {
            DataMode::Semantic => one_hot(&self.labels[i], self.classes),
            _ => Ok(self.content[i].pixels.clone()),
        }
    }

    /// The next `n` items; advances `cursor`, rolling into a fresh epoch
    /// order when the current one is exhausted.
    pub fn next_batch(&self, cursor: &mut BatchCursor, n: usize) -> Result<Batch> {
        if n == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let len = self.len();
        let mut orders: Option<(u64, Vec<usize>, Vec<usize>)> = None;
        let (mut cids, mut sids) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            if cursor.position >= len {
                cursor.epoch += 1;
                cursor.position = 0;
            }
            if orders.as_ref().is_none_or(|o| o.0 != cursor.epoch) {
                let co = epoch_order(cursor.seed, cursor.epoch, 0, len);
                let so = match self.mode {
                    DataMode::Unpaired => epoch_order(cursor.seed, cursor.epoch, 1, self.style.len()),
                    _ => co.clone(),
                };
                orders = Some((cursor.epoch, co, so));
            }
            let (_, co, so) = orders.as_ref().expect("set above");
            cids.push(co[cursor.position]);
            sids.push(so[cursor.position % so.len()]);
            cursor.position += 1;
        }
        let content: Vec<Tensor<f32>> = cids.iter().map(|&i| self.content_item(i)).collect::<Result<_>>()?;
        let style: Vec<&Tensor<f32>> = sids.iter().map(|&i| &self.style[i].pixels).collect();
        Ok(Batch {
            content: stack(&content.iter().collect::<Vec<_>>())?,
            style: stack(&style)?,
            content_ids: cids,
            style_ids: sids,
        })
    }
}

/// `[1, classes, H, W]` indicator planes.
pub fn one_hot(map: &LabelMap, classes: usize) -> Result<Tensor<f32>> {
    let hw = map.h * map.w;
    let mut data = vec![0f32; classes * hw];
    for (i, &l) in map.labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::Data(format!("{}: label {l} >= class count {classes}", map.source)));
        }
        data[l * hw + i] = 1.0;
    }
    Tensor::from_vec(&[1, classes, map.h, map.w], data)
}

#[cfg(test)]
mod tests {
    use super::super::codec::{write_image, write_labels};
    use super::*;

    fn synth(mode: DataMode) -> Dataset {
        make_synthetic_dataset(mode, 8, 16, 16, 5).unwrap()
    }

    #[test]
    fn paired_batches_align() {
        let ds = synth(DataMode::Paired);
        let mut c = BatchCursor::new(1);
        for _ in 0..5 {
            let b = ds.next_batch(&mut c, 3).unwrap();
            assert_eq!(b.content_ids, b.style_ids);
            assert_eq!(b.content.shape(), &[3, 3, 16, 16]);
            for (k, &i) in b.content_ids.iter().enumerate() {
                assert_eq!(stem(&ds.content[i].source), stem(&ds.style[b.style_ids[k]].source));
            }
        }
    }

    #[test]
    fn order_is_a_function_of_seed_and_epoch() {
        let ds = synth(DataMode::Unpaired);
        let run = |seed| {
            let mut c = BatchCursor::new(seed);
            (0..6).map(|_| ds.next_batch(&mut c, 3).unwrap()).map(|b| (b.content_ids, b.style_ids)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        // each epoch visits every item exactly once
        let mut c = BatchCursor::new(9);
        let mut seen = ds.next_batch(&mut c, 8).unwrap().content_ids;
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        assert_eq!(c.epoch, 0);
        let b = ds.next_batch(&mut c, 1).unwrap();
        assert_eq!(c.epoch, 1);
        assert_eq!(b.content_ids[0], epoch_order(9, 1, 0, 8)[0]);
        // a resumed cursor continues the same stream
        let mut a = BatchCursor::new(2);
        ds.next_batch(&mut a, 5).unwrap();
        let mut resumed = a;
        assert_eq!(ds.next_batch(&mut a, 7).unwrap().content_ids, ds.next_batch(&mut resumed, 7).unwrap().content_ids);
    }

    #[test]
    fn semantic_one_hot_partitions() {
        let ds = synth(DataMode::Semantic);
        let mut c = BatchCursor::new(0);
        let b = ds.next_batch(&mut c, 2).unwrap();
        let (n, k, h, w) = b.content.dims4("t").unwrap();
        assert_eq!(k, ds.classes);
        for s in 0..n {
            for p in 0..h * w {
                let sum: f32 = (0..k).map(|l| b.content.data()[(s * k + l) * h * w + p]).sum();
                assert_eq!(sum, 1.0);
            }
        }
    }

    #[test]
    fn directory_loading_and_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth(DataMode::Paired);
        for sub in ["c", "s"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        for i in 0..3 {
            write_image(&dir.path().join(format!("c/im{i}.png")), &ds.content[i]).unwrap();
            write_image(&dir.path().join(format!("s/im{i}.ppm")), &ds.style[i]).unwrap();
        }
        let mut spec = DataSpec::synthetic(DataMode::Paired, 0, 8, 8, 0);
        spec.source = DataSource::Directory;
        spec.content_dir = Some(dir.path().join("c"));
        spec.style_dir = Some(dir.path().join("s"));
        let loaded = spec.load().unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.extent(), (8, 8));
        write_image(&dir.path().join("s/other.png"), &ds.style[0]).unwrap();
        assert!(matches!(spec.load(), Err(Error::Data(m)) if m.contains("other")));
        spec.mode = DataMode::Unpaired;
        assert_eq!(spec.load().unwrap().style.len(), 4);
        spec.content_dir = Some(dir.path().join("missing"));
        assert!(matches!(spec.load(), Err(Error::Data(m)) if m.contains("missing")));
    }

    #[test]
    fn semantic_directory() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth(DataMode::Semantic);
        for sub in ["l", "i"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        for i in 0..2 {
            write_labels(&dir.path().join(format!("l/{i}.png")), &ds.labels[i]).unwrap();
            write_image(&dir.path().join(format!("i/{i}.png")), &ds.style[i]).unwrap();
        }
        let mut spec = DataSpec::synthetic(DataMode::Semantic, 0, 16, 16, 0);
        spec.source = DataSource::Directory;
        spec.label_dir = Some(dir.path().join("l"));
        spec.image_dir = Some(dir.path().join("i"));
        spec.classes = Some(ds.classes);
        let loaded = spec.load().unwrap();
        assert_eq!(loaded.labels[1].labels, ds.labels[1].labels);
        spec.classes = Some(1);
        assert!(spec.load().is_err());
    }
}
