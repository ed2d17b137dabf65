use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Manifest, QualityLabel};
use crate::imgproc::{augment, load_image, AugmentFlags, RawImage};
use crate::{par, Error, Result};

/// Random access to labelled images.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> QualityLabel;
    fn load(&self, index: usize) -> Result<RawImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images on disk, resolved against a root directory.
pub struct ManifestSource {
    root: PathBuf,
    manifest: Manifest,
}

impl ManifestSource {
    pub fn new(root: impl AsRef<Path>, manifest: Manifest) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
            manifest,
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn label(&self, index: usize) -> QualityLabel {
        self.manifest.records()[index].label
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        let path = self.root.join(&self.manifest.records()[index].path);
        load_image(&path).map_err(|e| match e {
            Error::ImageLoad { .. } => e,
            other => Error::ImageLoad {
                path,
                message: other.to_string(),
            },
        })
    }
}

/// Images already in memory.
pub struct MemorySource {
    images: Vec<RawImage>,
    labels: Vec<QualityLabel>,
}

impl MemorySource {
    pub fn new(images: Vec<RawImage>, labels: Vec<QualityLabel>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch(images.len(), labels.len()));
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &[RawImage] {
        &self.images
    }

    pub fn labels(&self) -> &[QualityLabel] {
        &self.labels
    }
}

impl SampleSource for MemorySource {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn label(&self, index: usize) -> QualityLabel {
        self.labels[index]
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        Ok(self.images[index].clone())
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Source indices, in emission order.
    pub indices: Vec<usize>,
    pub images: Vec<RawImage>,
    pub labels: Vec<QualityLabel>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One epoch of batches. Images within a batch load in parallel; each
/// sample's augmentation stream is derived from `(seed, epoch, index)`.
pub struct BatchIter<'a, S: SampleSource + ?Sized> {
    source: &'a S,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    augment: Option<AugmentFlags>,
}

pub fn batch_iter<'a, S: SampleSource + ?Sized>(
    source: &'a S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    augment: Option<AugmentFlags>,
) -> Result<BatchIter<'a, S>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch])));
    Ok(BatchIter {
        source,
        order,
        pos: 0,
        batch_size,
        seed,
        epoch,
        augment,
    })
}

impl<S: SampleSource + ?Sized> BatchIter<'_, S> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<S: SampleSource + ?Sized> Iterator for BatchIter<'_, S> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (seed, epoch, flags, source) = (self.seed, self.epoch, self.augment, self.source);
        let loaded = par::map_range(indices.len(), |k| {
            let i = indices[k];
            let img = source.load(i)?;
            Ok(match flags {
                Some(f) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, i as u64]));
                    augment(&img, &mut rng, f)
                }
                None => img,
            })
        });
        let images = match loaded.into_iter().collect::<Result<Vec<_>>>() {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let labels = indices.iter().map(|&i| source.label(i)).collect();
        Some(Ok(Batch {
            indices,
            images,
            labels,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(n: usize) -> MemorySource {
        let images = (0..n)
            .map(|i| RawImage::from_fn(4, 4, |y, x| [(i as f32) / n as f32, y as f32 / 4.0, x as f32 / 4.0]))
            .collect();
        let labels = (0..n).map(|i| QualityLabel::ALL[i % 3]).collect();
        MemorySource::new(images, labels).unwrap()
    }

    #[test]
    fn partial_final_batch() {
        let s = source(20);
        let sizes: Vec<usize> = batch_iter(&s, 8, 1, 0, None).unwrap().map(|b| b.unwrap().len()).collect();
        assert_eq!(sizes, vec![8, 8, 4]);
    }

    #[test]
    fn epoch_is_a_permutation() {
        let s = source(23);
        let mut seen: Vec<usize> = batch_iter(&s, 5, 3, 2, None)
            .unwrap()
            .flat_map(|b| b.unwrap().indices)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let s = source(30);
        let run = |seed, epoch| -> Vec<Batch> {
            batch_iter(&s, 8, seed, epoch, Some(AugmentFlags::default()))
                .unwrap()
                .map(|b| b.unwrap())
                .collect()
        };
        let (a, b) = (run(4, 1), run(4, 1));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.indices, y.indices);
            assert_eq!(x.images, y.images);
        }
        assert_ne!(run(4, 2)[0].indices, a[0].indices);
    }

    #[test]
    fn labels_follow_indices() {
        let s = source(10);
        for b in batch_iter(&s, 3, 0, 0, None).unwrap() {
            let b = b.unwrap();
            for (i, l) in b.indices.iter().zip(&b.labels) {
                assert_eq!(*l, QualityLabel::ALL[i % 3]);
            }
        }
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batch_iter(&source(3), 0, 0, 0, None).is_err());
    }

    #[test]
    fn load_error_names_path() {
        let m = Manifest::parse("missing.png,good\n", "m").unwrap();
        let s = ManifestSource::new("/nonexistent-root", m);
        let err = batch_iter(&s, 1, 0, 0, None).unwrap().next().unwrap().unwrap_err();
        match err {
            Error::ImageLoad { path, .. } => assert!(path.ends_with("missing.png")),
            other => panic!("{other:?}"),
        }
    }
}
