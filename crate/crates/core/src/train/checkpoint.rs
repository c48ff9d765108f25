//! On-disk model: `meta.json` (configuration, class names and a manifest of
//! parameter names, shapes and offsets), `weights.bin` (little-endian f32 in
//! manifest order) and `vocab.txt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, ModelConfig};
use crate::tensor::{ParamSet, Real, Tensor};
use crate::text::Vocabulary;

pub const META_FILE: &str = "meta.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Position of the first value, counted in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub params: Vec<ManifestEntry>,
}

/// A loaded model with everything needed to encode new text.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Classifier<f32>,
    pub vocab: Vocabulary,
    pub class_names: Vec<String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bad(dir: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: dir.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes the three checkpoint files into `dir`, creating it if needed.
pub fn save_checkpoint<S: Real>(
    dir: &Path,
    model: &Classifier<S>,
    vocab: &Vocabulary,
    class_names: &[String],
) -> Result<()> {
    if class_names.len() != model.config().classes {
        return Err(Error::Contract(format!(
            "{} class names for {} classes",
            class_names.len(),
            model.config().classes
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::new();
    let mut bytes = Vec::with_capacity(model.params().num_scalars() * 4);
    for (_, name, t) in model.params().iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: bytes.len() / 4,
        });
        for &x in t.data() {
            bytes.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        class_names: class_names.to_vec(),
        params: manifest,
    };
    write_atomic(&dir.join(WEIGHTS_FILE), &bytes)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    write_atomic(&dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join(META_FILE);
    let body = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&body).map_err(|e| bad(&meta_path, format!("invalid metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(bad(
            &meta_path,
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    meta.config.validate()?;
    if meta.class_names.len() != meta.config.classes {
        return Err(bad(&meta_path, "class name count does not match classes"));
    }

    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(bad(&weights_path, "length is not a multiple of 4 bytes"));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for entry in &meta.params {
        let numel: usize = entry.shape.iter().product();
        if entry.offset != expected_offset {
            return Err(bad(
                &meta_path,
                format!("parameter `{}` has offset {}", entry.name, entry.offset),
            ));
        }
        let end = entry.offset + numel;
        let data = values
            .get(entry.offset..end)
            .ok_or_else(|| bad(&weights_path, format!("truncated at parameter `{}`", entry.name)))?;
        params.add(entry.name.clone(), Tensor::new(&entry.shape, data.to_vec())?);
        expected_offset = end;
    }
    if expected_offset != values.len() {
        return Err(bad(
            &weights_path,
            format!("{} values for a manifest of {expected_offset}", values.len()),
        ));
    }
    let model = Classifier::from_params(meta.config, params)
        .map_err(|e| bad(&meta_path, format!("parameters do not match the configuration: {e}")))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() > model.config().vocab_size {
        return Err(bad(dir, "vocabulary is larger than the embedding table"));
    }
    Ok(Checkpoint {
        model,
        vocab,
        class_names: meta.class_names,
    })
}

/// Where training writes its best model.
#[derive(Clone, Copy, Debug)]
pub struct CheckpointTarget<'a> {
    pub dir: &'a Path,
    pub vocab: &'a Vocabulary,
    pub class_names: &'a [String],
}
