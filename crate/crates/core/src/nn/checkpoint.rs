//! Model checkpoints: one FMAT container per parameter array plus a JSON
//! manifest naming the arrays and carrying the model config and the feature
//! normalization statistics.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, NnError};
use crate::fmat::{self, FmatError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Fmat(#[from] FmatError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("array {name}: expected {expected} values, file holds {found}")]
    ArraySize {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("manifest lists {listed} arrays, model has {actual}")]
    ArrayCount { listed: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-mel-bin standardization fitted on the training set and applied before
/// the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_mels: usize) -> Self {
        Normalizer {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    /// Mean and standard deviation per column over all frames of all
    /// matrices. Constant columns get unit scale.
    pub fn fit<'a, I>(features: I) -> Self
    where
        I: IntoIterator<Item = &'a Array2<f64>> + Clone,
    {
        let mut n_mels = 0;
        let mut count = 0.0f64;
        let mut sum: Vec<f64> = Vec::new();
        for f in features.clone() {
            if sum.is_empty() {
                n_mels = f.ncols();
                sum = vec![0.0; n_mels];
            }
            for row in f.rows() {
                for (s, v) in sum.iter_mut().zip(row.iter()) {
                    *s += v;
                }
            }
            count += f.nrows() as f64;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1.0)).collect();

        let mut sq = vec![0.0; n_mels];
        for f in features {
            for row in f.rows() {
                for ((q, v), m) in sq.iter_mut().zip(row.iter()).zip(mean.iter()) {
                    *q += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|q| (q / count.max(1.0)).sqrt().max(1e-6))
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(self.mean.iter()).zip(self.std.iter()) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    normalizer: Normalizer,
    arrays: Vec<ArrayEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";

fn array_file_name(param: &str) -> String {
    format!("{}.fmat", param.replace('.', "_"))
}

/// Write the model parameters (f32-quantized FMAT files) and manifest.
pub fn save_checkpoint(dir: &Path, model: &Model, normalizer: &Normalizer) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut arrays = Vec::new();
    for (name, values) in model.params() {
        let file = array_file_name(&name);
        let matrix = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row vector");
        fmat::write_matrix(&dir.join(&file), &matrix)?;
        arrays.push(ArrayEntry {
            name,
            len: values.len(),
            file,
        });
    }
    let manifest = Manifest {
        config: model.config.clone(),
        normalizer: normalizer.clone(),
        arrays,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Rebuild a model from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Normalizer), CheckpointError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut model = Model::init(manifest.config, 0)?;
    let mut params = model.params_mut();
    if params.len() != manifest.arrays.len() {
        return Err(CheckpointError::ArrayCount {
            listed: manifest.arrays.len(),
            actual: params.len(),
        });
    }
    for (entry, (name, values)) in manifest.arrays.iter().zip(params.iter_mut()) {
        debug_assert_eq!(&entry.name, name, "parameter order is fixed");
        let matrix = fmat::read_matrix(&dir.join(&entry.file))?;
        if matrix.len() != values.len() {
            return Err(CheckpointError::ArraySize {
                name: entry.name.clone(),
                expected: values.len(),
                found: matrix.len(),
            });
        }
        for (dst, src) in values.iter_mut().zip(matrix.iter()) {
            *dst = *src;
        }
    }
    drop(params);
    Ok((model, manifest.normalizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Gating, HeadKind};
    use ndarray::array;

    fn small_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            classes: 2,
            head: HeadKind::Ctc,
            gating: Gating::Glu,
            blocks: vec![crate::nn::ConvBlockSpec {
                channels: 2,
                kernel_t: 3,
                kernel_m: 3,
                pool: 2,
            }],
            rnn_hidden: 2,
            dropout: 0.0,
            n_mels: 4,
        };
        Model::init(cfg, seed).unwrap()
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let model = small_model(11);
        let norm = Normalizer {
            mean: vec![0.1, -0.2, 0.3, 0.0],
            std: vec![1.0, 2.0, 0.5, 1.5],
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &norm).unwrap();
        let (loaded, norm_back) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(norm, norm_back);
        assert_eq!(loaded.config, model.config);

        // Outputs agree to f32 quantization.
        let x = Array2::from_shape_fn((6, 4), |(t, m)| ((t * 4 + m) as f64 * 0.37).sin());
        let a = model.logits(&x).unwrap();
        let b = loaded.logits(&x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-4, "{u} vs {v}");
        }
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let model = small_model(5);
        let norm = Normalizer::identity(4);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_checkpoint(d1.path(), &model, &norm).unwrap();
        save_checkpoint(d2.path(), &model, &norm).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.contains(&MANIFEST_FILE.to_string()));
        for name in names {
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn normalizer_standardizes_columns() {
        let f = array![[1.0, 10.0], [3.0, 10.0]];
        let norm = Normalizer::fit([&f]);
        assert!((norm.mean[0] - 2.0).abs() < 1e-12);
        assert!((norm.std[0] - 1.0).abs() < 1e-12);
        // Constant column: unit scale, zero output.
        assert!((norm.std[1] - 1e-6).abs() < 1e-12 || norm.std[1] == 1e-6);
        let z = norm.apply(&f);
        assert!((z[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((z[[1, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(z[[0, 1]], 0.0);
    }
}
