use std::collections::HashMap;
use std::path::Path;

use super::container::{read_container, write_container, TensorRecord};
use crate::classifier::{ModelConfig, OtsModel};
use crate::error::{OtsError, Result};
use crate::numcore::Parameterized;

/// One record per named parameter plus a `config` text record.
pub fn checkpoint_records(model: &OtsModel) -> Vec<TensorRecord> {
    let mut out = vec![TensorRecord::from_text("config", &model.config().to_text())];
    for (name, p) in model.named_params() {
        out.push(TensorRecord::from_matrix(name, p.value()));
    }
    out
}

/// Rebuilds a model from [`checkpoint_records`] output.
pub fn model_from_records(records: &[TensorRecord]) -> Result<OtsModel> {
    let by_name: HashMap<&str, &TensorRecord> = records.iter().map(|r| (r.name(), r)).collect();
    let config_text = by_name
        .get("config")
        .ok_or_else(|| OtsError::format(0, "checkpoint has no config record"))?
        .to_text()?;
    let config = ModelConfig::from_text(&config_text)?;
    let mut model = OtsModel::new(config, 0)?;
    for (name, p) in model.named_params_mut() {
        let rec = by_name
            .get(name.as_str())
            .ok_or_else(|| OtsError::format(0, format!("checkpoint is missing {name:?}")))?;
        p.assign(rec.to_matrix()?)
            .map_err(|e| OtsError::format(0, format!("parameter {name:?}: {e}")))?;
    }
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &OtsModel) -> Result<()> {
    write_container(path, &checkpoint_records(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OtsModel> {
    model_from_records(&read_container(path)?)
}
