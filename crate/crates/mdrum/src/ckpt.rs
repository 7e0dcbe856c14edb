//! Checkpoint directories: `model.cfg` plus one binary file per component.

use std::path::{Path, PathBuf};

use mdrum_core::checkpoint;
use mdrum_core::model::{Component, Model};

use crate::config::{parse_model_config, render_model_config};
use crate::error::{AppError, AppResult};
use crate::fsio::{atomic_write, read, read_to_string};

pub const MODEL_CFG: &str = "model.cfg";

pub fn component_path(dir: &Path, c: Component) -> PathBuf {
    dir.join(format!("{}.ckpt", c.file_stem()))
}

pub fn save_model(dir: &Path, model: &Model) -> AppResult<()> {
    atomic_write(&dir.join(MODEL_CFG), render_model_config(&model.config).as_bytes())?;
    for c in Component::ALL {
        atomic_write(&component_path(dir, c), &checkpoint::encode(model, c))?;
    }
    Ok(())
}

/// Rebuild the model from `model.cfg`, then overwrite every group from its file.
pub fn load_model(dir: &Path) -> AppResult<Model> {
    let cfg_path = dir.join(MODEL_CFG);
    if !cfg_path.is_file() {
        return Err(AppError::Data(format!("no checkpoint at {}", dir.display())));
    }
    let config = parse_model_config(&read_to_string(&cfg_path)?).map_err(|e| e.context(&cfg_path.display().to_string()))?;
    let mut model = Model::new(config, 0)?;
    for c in Component::ALL {
        let p = component_path(dir, c);
        let bytes = read(&p)?;
        checkpoint::decode_into(&mut model, c, &bytes)
            .map_err(|e| AppError::from(e).context(&p.display().to_string()))?;
    }
    Ok(model)
}
