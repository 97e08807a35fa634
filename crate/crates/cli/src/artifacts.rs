use std::path::Path;

use hecsb_core::{checkpoint, TeacherModel, Tensor};

use crate::error::CliError;

pub const TEACHER_FILE: &str = "teacher.ckpt";

/// Writes the classifier as one checkpoint holding both halves.
pub fn save_teacher(path: &Path, model: &TeacherModel) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io_at(dir, e))?;
    }
    let mut tensors = checkpoint::mlp_tensors("front", &model.front);
    tensors.extend(checkpoint::mlp_tensors("tail", &model.tail));
    let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    checkpoint::save(path, &refs)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_teacher`].
pub fn load_teacher(path: &Path) -> Result<TeacherModel, CliError> {
    if !path.exists() {
        return Err(CliError::Artifact(format!(
            "teacher checkpoint not found at {}; run `hecsb train-teacher` first",
            path.display()
        )));
    }
    let map = checkpoint::load_map(path)?;
    let front = checkpoint::mlp_from_map("front", &map)?;
    let tail = checkpoint::mlp_from_map("tail", &map)?;
    Ok(TeacherModel { front, tail })
}
