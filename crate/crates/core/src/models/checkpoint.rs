//! Single-file checkpoint format: a text header echoing the configuration
//! followed by named raw-binary parameter tensors.
//!
//! ```text
//! E2DCKPT1\n
//! config <key>=<value>\n          (one per pair)
//! tensor <name> <f32|f64> <len>\n<len * size raw little-endian bytes>\n
//! end\n
//! ```

use super::{ModelError, SoundToImage};
use crate::nn::{ParamOwner, Scalar};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

const MAGIC: &str = "E2DCKPT1";

/// Parsed checkpoint: config echo plus tensors widened to `f64`.
pub struct CheckpointData {
    pub pairs: Vec<(String, String)>,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

impl CheckpointData {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes model parameters and batch-norm buffers with a config echo.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    pairs: &[(String, String)],
    model: &mut SoundToImage<T>,
) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    for (k, v) in model.config.to_pairs().iter().chain(pairs.iter()) {
        out.extend_from_slice(format!("config {k}={v}\n").as_bytes());
    }
    {
        let mut write_tensor = |name: &str, values: &[T]| {
            out.extend_from_slice(
                format!("tensor {name} {} {}\n", T::DTYPE, values.len()).as_bytes(),
            );
            for v in values {
                let wide = <T as Scalar>::to_f64(*v);
                if std::mem::size_of::<T>() == 4 {
                    out.extend_from_slice(&(wide as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&wide.to_le_bytes());
                }
            }
            out.push(b'\n');
        };
        model.visit_params("", &mut |name, value, _| write_tensor(name, value));
        model.visit_buffers(&mut |name, value| write_tensor(name, value));
    }
    out.extend_from_slice(b"end\n");
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))?;
    Ok(())
}

/// Reads a checkpoint file into memory.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointData, ModelError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |msg: &str| ModelError::Checkpoint(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<String, ModelError> {
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos] != b'\n' {
            *pos += 1;
        }
        if *pos >= bytes.len() {
            return Err(bad("truncated"));
        }
        let line = std::str::from_utf8(&bytes[start..*pos])
            .map_err(|_| bad("non-utf8 header line"))?
            .to_string();
        *pos += 1;
        Ok(line)
    };

    if next_line(&mut pos)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut pairs = Vec::new();
    let mut tensors = BTreeMap::new();
    loop {
        let line = next_line(&mut pos)?;
        if line == "end" {
            break;
        }
        if let Some(rest) = line.strip_prefix("config ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| bad("malformed config line"))?;
            pairs.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let mut it = rest.split_whitespace();
            let name = it.next().ok_or_else(|| bad("missing tensor name"))?;
            let dtype = it.next().ok_or_else(|| bad("missing dtype"))?;
            let len: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("missing tensor length"))?;
            let width = match dtype {
                "f32" => 4,
                "f64" => 8,
                _ => return Err(bad("unknown dtype")),
            };
            let nbytes = len * width;
            if pos + nbytes + 1 > bytes.len() {
                return Err(bad("tensor payload truncated"));
            }
            let payload = &bytes[pos..pos + nbytes];
            let mut values = Vec::with_capacity(len);
            if width == 4 {
                for c in payload.chunks_exact(4) {
                    values.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
                }
            } else {
                for c in payload.chunks_exact(8) {
                    values.push(f64::from_le_bytes([
                        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                    ]));
                }
            }
            pos += nbytes;
            if bytes[pos] != b'\n' {
                return Err(bad("missing tensor terminator"));
            }
            pos += 1;
            tensors.insert(name.to_string(), values);
        } else {
            return Err(bad("unexpected line"));
        }
    }
    Ok(CheckpointData { pairs, tensors })
}

impl<T: Scalar> SoundToImage<T> {
    /// Rebuilds a model from a checkpoint written by [`save_checkpoint`].
    pub fn from_checkpoint(path: &Path) -> Result<(Self, CheckpointData), ModelError> {
        let data = load_checkpoint(path)?;
        let config = super::ModelConfig::from_pairs(&data.pairs)?;
        let mut model = Self::new(config, 0)?;
        let mut missing = Vec::new();
        let mut assign = |name: &str, value: &mut [T]| {
            match data.tensors.get(name) {
                Some(stored) if stored.len() == value.len() => {
                    for (dst, &src) in value.iter_mut().zip(stored.iter()) {
                        *dst = T::from_f64(src);
                    }
                }
                Some(_) => missing.push(format!("{name} (size mismatch)")),
                None => missing.push(name.to_string()),
            };
        };
        model.visit_params("", &mut |name, value, _| assign(name, value));
        model.visit_buffers(&mut |name, value| assign(name, value));
        if !missing.is_empty() {
            return Err(ModelError::Checkpoint(format!(
                "{}: missing or mismatched tensors: {}",
                path.display(),
                missing.join(", ")
            )));
        }
        Ok((model, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AudioBatch, EncoderKind, GeneratorKind, ModelConfig};
    use ndarray::Array3;

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = ModelConfig {
            encoder: EncoderKind::WaveformEarly,
            generator: GeneratorKind::Direct,
            resolution: 16,
            log_spectrogram: false,
        };
        let mut model = SoundToImage::<f32>::new(config, 42).unwrap();
        let mut x = Array3::<f32>::zeros((1, 2, crate::CLIP_LEN));
        x[[0, 0, 100]] = 0.5;
        x[[0, 1, 200]] = -0.25;
        let before = model.forward(&AudioBatch::Waveform(x.clone()), false).unwrap();
        save_checkpoint(
            &path,
            &[("note".into(), "test".into())],
            &mut model,
        )
        .unwrap();

        let (mut loaded, data) = SoundToImage::<f32>::from_checkpoint(&path).unwrap();
        assert_eq!(data.get("note"), Some("test"));
        let after = loaded.forward(&AudioBatch::Waveform(x), false).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOTACKPT\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
