use std::collections::HashMap;
use std::path::Path;

use super::container::{read_container, write_container, TensorRecord};
use super::dataset::{label_record, read_label};
use crate::error::{OtsError, Result};
use crate::ofam::{FeatureMap, ScoreMap};

/// One co-registered backbone map and score map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub features: FeatureMap,
    pub scores: ScoreMap,
    pub label: usize,
}

/// Samples `0..n` from records `{i}.F`, `{i}.S`, `{i}.y`.
pub fn pairs_from_records(records: &[TensorRecord]) -> Result<Vec<FeaturePair>> {
    let by_name: HashMap<&str, &TensorRecord> = records.iter().map(|r| (r.name(), r)).collect();
    let mut out = Vec::new();
    for i in 0.. {
        let names = [format!("{i}.F"), format!("{i}.S"), format!("{i}.y")];
        let found: Vec<Option<&&TensorRecord>> = names.iter().map(|n| by_name.get(n.as_str())).collect();
        if found.iter().all(Option::is_none) {
            break;
        }
        let err = |msg: String| OtsError::format(0, format!("sample {i}: {msg}"));
        let [f, s, y] = [found[0], found[1], found[2]];
        let (Some(f), Some(s), Some(y)) = (f, s, y) else {
            let missing: Vec<&str> = names
                .iter()
                .zip(&found)
                .filter(|(_, r)| r.is_none())
                .map(|(n, _)| n.as_str())
                .collect();
            return Err(err(format!("missing {}", missing.join(", "))));
        };
        let f = f.to_matrix().map_err(|e| err(e.to_string()))?;
        let s = s.to_matrix().map_err(|e| err(e.to_string()))?;
        if f.cols() != s.cols() {
            return Err(err(format!("F has N={} but S has N={}", f.cols(), s.cols())));
        }
        out.push(FeaturePair {
            features: FeatureMap::new(f).map_err(|e| err(e.to_string()))?,
            scores: ScoreMap::new(s).map_err(|e| err(e.to_string()))?,
            label: read_label(y, i)?,
        });
    }
    Ok(out)
}

pub fn pairs_to_records(pairs: &[FeaturePair]) -> Vec<TensorRecord> {
    let mut out = Vec::with_capacity(pairs.len() * 3);
    for (i, p) in pairs.iter().enumerate() {
        out.push(TensorRecord::from_matrix(format!("{i}.F"), p.features.matrix()));
        out.push(TensorRecord::from_matrix(format!("{i}.S"), p.scores.matrix()));
        out.push(label_record(i, p.label));
    }
    out
}

pub fn load_feature_pairs(path: impl AsRef<Path>) -> Result<Vec<FeaturePair>> {
    pairs_from_records(&read_container(path)?)
}

pub fn write_feature_pairs(path: impl AsRef<Path>, pairs: &[FeaturePair]) -> Result<()> {
    write_container(path, &pairs_to_records(pairs))
}
