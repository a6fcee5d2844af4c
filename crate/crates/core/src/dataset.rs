//! Writes a synthetic dataset: one PGM image and one annotation file per
//! sample plus a manifest with the train/val/test assignment.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{ensure_dir, write_pgm, AnnotationFile, Manifest, ManifestEntry, Split};
use crate::synth::{generate_sample, randomized_config, CurveRanges, SpineGenConfig};

/// Sample counts per split, in manifest order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 60/20/20, rounding train and val down.
    pub fn default_for(count: usize) -> Self {
        let train = count * 3 / 5;
        let val = count / 5;
        Self {
            train,
            val,
            test: count - train - val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub base: SpineGenConfig,
    pub ranges: CurveRanges,
    /// Sample `i` is generated from seed `seed + i`.
    pub seed: u64,
    pub splits: Option<SplitCounts>,
}

impl DatasetSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            base: SpineGenConfig::default(),
            ranges: CurveRanges::default(),
            seed,
            splits: None,
        }
    }

    pub fn split_counts(&self) -> Result<SplitCounts> {
        let counts = self
            .splits
            .unwrap_or_else(|| SplitCounts::default_for(self.count));
        if counts.total() != self.count {
            return Err(Error::invalid(format!(
                "split counts {}/{}/{} do not add up to {}",
                counts.train, counts.val, counts.test, self.count
            )));
        }
        Ok(counts)
    }
}

pub fn sample_name(index: usize) -> String {
    format!("sample_{index:04}")
}

pub fn generate_dataset(out_dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    if spec.count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let counts = spec.split_counts()?;
    spec.base.validate()?;
    ensure_dir(out_dir)?;

    let mut manifest = Manifest::default();
    for i in 0..spec.count {
        let seed = spec.seed.wrapping_add(i as u64);
        let cfg = randomized_config(&spec.base, &spec.ranges, seed)?;
        let (image, ann) = generate_sample(&cfg)?;
        let name = sample_name(i);
        let (image_file, ann_file) = (format!("{name}.pgm"), format!("{name}.json"));
        write_pgm(&out_dir.join(&image_file), &image)?;
        AnnotationFile::new(&image_file, &ann).write(&out_dir.join(&ann_file))?;
        manifest.entries.push(ManifestEntry {
            split: counts.split_of(i),
            image: image_file,
            annotation: ann_file,
        });
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}
