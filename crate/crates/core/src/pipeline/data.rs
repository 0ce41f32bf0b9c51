use crate::dataset::{Stage, StageView};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::imaging::{augment, read_ppm, resize_bilinear, AugmentationConfig, Image, CHANNELS};
use crate::tensor::Tensor;

/// Images held in memory at network resolution with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub resolution: usize,
    pub stage: Option<Stage>,
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    /// Resizes every image to `resolution` square.
    pub fn new(ids: Vec<String>, images: Vec<Image>, labels: Vec<usize>, resolution: usize) -> Result<Self> {
        if ids.len() != images.len() || labels.len() != images.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} images and {} labels",
                ids.len(),
                images.len(),
                labels.len()
            )));
        }
        let images = images.iter().map(|i| resize_bilinear(i, resolution, resolution)).collect::<Result<_>>()?;
        Ok(LabeledSet { resolution, stage: None, ids, images, labels })
    }

    /// Reads and resizes every image of a stage view.
    pub fn load(view: &StageView, resolution: usize, exec: Exec) -> Result<Self> {
        let images = exec.try_map(view.records.len(), |i| {
            let img = read_ppm(view.root.join(&view.records[i].record.path))?;
            resize_bilinear(&img, resolution, resolution)
        })?;
        Ok(LabeledSet {
            resolution,
            stage: Some(view.stage),
            ids: view.records.iter().map(|r| r.record.id.clone()).collect(),
            images,
            labels: view.records.iter().map(|r| r.label.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the selected samples into an `N x 3 x R x R` tensor. With an
    /// augmentation config, sample `i` is augmented under key `key_base + i`.
    pub fn batch(&self, indices: &[usize], aug: Option<(&AugmentationConfig, u64)>) -> Result<Tensor> {
        let r = self.resolution;
        let per = CHANNELS * r * r;
        let mut data = vec![0.0f32; indices.len() * per];
        for (block, &i) in data.chunks_exact_mut(per).zip(indices) {
            match aug {
                Some((cfg, base)) => augment(&self.images[i], cfg, base + i as u64)?.write_chw(block),
                None => self.images[i].write_chw(block),
            }
        }
        Tensor::new(vec![indices.len(), CHANNELS, r, r], data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
