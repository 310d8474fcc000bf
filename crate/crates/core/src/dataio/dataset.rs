use std::collections::HashMap;
use std::path::Path;

use super::container::{read_container, write_container, TensorRecord};
use crate::error::{OtsError, Result};
use crate::numcore::Matrix;
use crate::ofam::ObjectFeatures;

#[derive(Clone, Debug, PartialEq)]
struct StoredSample {
    present: Vec<bool>,
    // C x (present count); absent columns are implied zeros.
    columns: Matrix,
}

/// Labelled object-feature samples with a fixed `C x C'` shape.
///
/// Only present columns are stored; [`SceneDataset::sample`] rebuilds the
/// dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    channels: usize,
    objects: usize,
    class_names: Vec<String>,
    samples: Vec<StoredSample>,
    labels: Vec<usize>,
}

impl SceneDataset {
    pub fn new(channels: usize, objects: usize, class_names: Vec<String>) -> Result<Self> {
        if channels == 0 || objects == 0 || class_names.is_empty() {
            return Err(OtsError::Config(format!(
                "dataset needs C, C' and K positive (got {channels}, {objects}, {})",
                class_names.len()
            )));
        }
        Ok(Self {
            channels,
            objects,
            class_names,
            samples: Vec::new(),
            labels: Vec::new(),
        })
    }

    pub fn push(&mut self, x: &ObjectFeatures, label: usize) -> Result<()> {
        if x.channel_count() != self.channels || x.object_count() != self.objects {
            return Err(OtsError::shape(
                "SceneDataset::push",
                format!(
                    "expected {}x{}, got {}x{}",
                    self.channels,
                    self.objects,
                    x.channel_count(),
                    x.object_count()
                ),
            ));
        }
        if label >= self.classes() {
            return Err(OtsError::Config(format!(
                "label {label} out of range for {} classes",
                self.classes()
            )));
        }
        let present = x.present().to_vec();
        let kept: Vec<usize> = (0..self.objects).filter(|&j| present[j]).collect();
        let columns = Matrix::from_fn(self.channels, kept.len(), |c, k| x.matrix().get(c, kept[k]));
        self.samples.push(StoredSample { present, columns });
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn object_count(&self) -> usize {
        self.objects
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn presence(&self, i: usize) -> &[bool] {
        &self.samples[i].present
    }

    /// Dense `C x C'` features of sample `i`.
    pub fn sample(&self, i: usize) -> ObjectFeatures {
        let s = &self.samples[i];
        let mut m = Matrix::zeros(self.channels, self.objects);
        let mut k = 0;
        for (j, &p) in s.present.iter().enumerate() {
            if p {
                for c in 0..self.channels {
                    m.set(c, j, s.columns.get(c, k));
                }
                k += 1;
            }
        }
        ObjectFeatures::new(m, s.present.clone()).expect("stored samples keep absent columns at zero")
    }

    /// First `n` samples and the rest, both with the same classes.
    pub fn split_at(&self, n: usize) -> (SceneDataset, SceneDataset) {
        let n = n.min(self.len());
        let part = |range: std::ops::Range<usize>| SceneDataset {
            channels: self.channels,
            objects: self.objects,
            class_names: self.class_names.clone(),
            samples: self.samples[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        };
        (part(0..n), part(n..self.len()))
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Records `meta.shape`, `meta.classes`, and per sample `{i}.X`
    /// (present columns only), `{i}.present`, `{i}.y`.
    pub fn to_records(&self) -> Vec<TensorRecord> {
        let mut out = Vec::with_capacity(2 + 3 * self.len());
        out.push(
            TensorRecord::from_f64("meta.shape", vec![2], &[self.channels as f64, self.objects as f64])
                .expect("two values"),
        );
        out.push(TensorRecord::from_text("meta.classes", &self.class_names.join("\n")));
        for (i, (s, &y)) in self.samples.iter().zip(&self.labels).enumerate() {
            out.push(TensorRecord::from_matrix(format!("{i}.X"), &s.columns));
            out.push(presence_record(i, &s.present));
            out.push(label_record(i, y));
        }
        out
    }

    /// Inverse of [`SceneDataset::to_records`]. `{i}.X` may also be dense `C x C'`.
    pub fn from_records(records: &[TensorRecord]) -> Result<Self> {
        let by_name: HashMap<&str, &TensorRecord> = records.iter().map(|r| (r.name(), r)).collect();
        let get = |name: &str| {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| OtsError::format(0, format!("missing record {name:?}")))
        };
        let shape = get("meta.shape")?.to_f64();
        if shape.len() != 2 {
            return Err(OtsError::format(0, "meta.shape must hold two values"));
        }
        let names: Vec<String> = get("meta.classes")?.to_text()?.lines().map(str::to_string).collect();
        let mut ds = Self::new(shape[0] as usize, shape[1] as usize, names)
            .map_err(|e| OtsError::format(0, e.to_string()))?;
        let mut i = 0;
        while by_name.contains_key(format!("{i}.X").as_str()) {
            let x = get(&format!("{i}.X"))?.to_matrix()?;
            let present: Vec<bool> = get(&format!("{i}.present"))?.payload().iter().map(|&b| b != 0).collect();
            let y = read_label(get(&format!("{i}.y"))?, i)?;
            let sample_err = |msg: String| OtsError::format(0, format!("sample {i}: {msg}"));
            if present.len() != ds.objects || x.rows() != ds.channels {
                return Err(sample_err(format!(
                    "{}x{} features with {} flags do not fit {}x{}",
                    x.rows(),
                    x.cols(),
                    present.len(),
                    ds.channels,
                    ds.objects
                )));
            }
            let kept = present.iter().filter(|p| **p).count();
            let features = if x.cols() == ds.objects {
                ObjectFeatures::new(x, present)
            } else if x.cols() == kept {
                let idx: Vec<usize> = (0..ds.objects).filter(|&j| present[j]).collect();
                let mut dense = Matrix::zeros(ds.channels, ds.objects);
                for (k, &j) in idx.iter().enumerate() {
                    for c in 0..ds.channels {
                        dense.set(c, j, x.get(c, k));
                    }
                }
                ObjectFeatures::new(dense, present)
            } else {
                return Err(sample_err(format!("{} columns but {kept} present objects", x.cols())));
            }
            .map_err(|e| sample_err(e.to_string()))?;
            ds.push(&features, y).map_err(|e| sample_err(e.to_string()))?;
            i += 1;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path, &self.to_records())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(&read_container(path)?)
    }
}

pub(crate) fn presence_record(i: usize, present: &[bool]) -> TensorRecord {
    let flags: Vec<u8> = present.iter().map(|&p| p as u8).collect();
    TensorRecord::from_u8(format!("{i}.present"), vec![flags.len()], &flags).expect("flag length")
}

pub(crate) fn label_record(i: usize, y: usize) -> TensorRecord {
    TensorRecord::from_f64(format!("{i}.y"), vec![], &[y as f64]).expect("scalar")
}

pub(crate) fn read_label(r: &TensorRecord, i: usize) -> Result<usize> {
    let v = r.to_f64();
    match v.as_slice() {
        [y] if *y >= 0.0 && y.fract() == 0.0 => Ok(*y as usize),
        _ => Err(OtsError::format(0, format!("sample {i}: label must be one nonnegative integer"))),
    }
}
