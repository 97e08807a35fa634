//! Binary checkpoint container for model weights.
//!
//! Layout: 6-byte magic `HECSB1`, then one record per tensor until EOF:
//! `u32 LE` name length, the UTF-8 name, `u32 LE` rank, one `u32 LE` extent
//! per dimension, and the row-major `f32 LE` data. Checkpoints are 32-bit
//! only; that is the precision models train and ship in.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::{Activation, DenseLayerBase, MlpBase};
use crate::tensor::TensorBase;
use crate::CoreError;

const MAGIC: &[u8; 6] = b"HECSB1";
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

/// Writes named tensors in the given order.
pub fn save(path: &Path, tensors: &[(&str, &TensorBase<f32>)]) -> Result<(), CoreError> {
    let mut seen = HashMap::new();
    for (name, _) in tensors {
        if seen.insert(*name, ()).is_some() {
            return Err(CoreError::Checkpoint(format!(
                "duplicate tensor name `{name}`"
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() as u32 > MAX_NAME_LEN {
            return Err(CoreError::Checkpoint(format!(
                "tensor name longer than {MAX_NAME_LEN} bytes"
            )));
        }
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for v in tensor.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every tensor record, in file order.
pub fn load(path: &Path) -> Result<Vec<(String, TensorBase<f32>)>, CoreError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Checkpoint("file shorter than the magic".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let mut out = Vec::new();
    let mut names = HashMap::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read(&mut len4)? {
            0 => break,
            4 => {}
            n => {
                // Fill the remainder or report truncation.
                r.read_exact(&mut len4[n..])
                    .map_err(|_| CoreError::Checkpoint("truncated record header".into()))?;
            }
        }
        let name_len = u32::from_le_bytes(len4);
        if name_len > MAX_NAME_LEN {
            return Err(CoreError::Checkpoint(format!(
                "tensor name length {name_len} exceeds {MAX_NAME_LEN}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)
            .map_err(|_| CoreError::Checkpoint("truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CoreError::Checkpoint("tensor name is not UTF-8".into()))?;
        if names.insert(name.clone(), ()).is_some() {
            return Err(CoreError::Checkpoint(format!(
                "duplicate tensor name `{name}`"
            )));
        }
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(CoreError::Checkpoint(format!(
                "tensor rank {rank} exceeds {MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut len = 1usize;
        for _ in 0..rank {
            let extent = read_u32(&mut r)? as usize;
            len = len.checked_mul(extent).ok_or_else(|| {
                CoreError::Checkpoint("tensor extents overflow".into())
            })?;
            shape.push(extent);
        }
        let mut data = vec![0f32; len];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| CoreError::Checkpoint(format!("truncated data for `{name}`")))?;
            *v = f32::from_le_bytes(buf);
        }
        let tensor = TensorBase::new(shape, data).map_err(|e| {
            CoreError::Checkpoint(format!("invalid tensor `{name}`: {e}"))
        })?;
        out.push((name, tensor));
    }
    Ok(out)
}

/// Reads a checkpoint into a name -> tensor map.
pub fn load_map(path: &Path) -> Result<HashMap<String, TensorBase<f32>>, CoreError> {
    Ok(load(path)?.into_iter().collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CoreError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| CoreError::Checkpoint("truncated record header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Flattens a network into named tensors: `{prefix}.{i}.weight`,
/// `{prefix}.{i}.bias`, plus a `{prefix}.arch` vector holding one activation
/// code per layer so the network can be rebuilt without out-of-band shape
/// information.
pub fn mlp_tensors(prefix: &str, mlp: &MlpBase<f32>) -> Vec<(String, TensorBase<f32>)> {
    let mut out = Vec::with_capacity(mlp.layers().len() * 2 + 1);
    let arch: Vec<f32> = mlp
        .layers()
        .iter()
        .map(|l| l.activation.code() as f32)
        .collect();
    out.push((
        format!("{prefix}.arch"),
        TensorBase::from_parts(vec![arch.len()], arch),
    ));
    for (i, layer) in mlp.layers().iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), layer.weight.clone()));
        out.push((format!("{prefix}.{i}.bias"), layer.bias.clone()));
    }
    out
}

/// Rebuilds a network written by [`mlp_tensors`].
pub fn mlp_from_map(
    prefix: &str,
    map: &HashMap<String, TensorBase<f32>>,
) -> Result<MlpBase<f32>, CoreError> {
    let arch = map
        .get(&format!("{prefix}.arch"))
        .ok_or_else(|| CoreError::Checkpoint(format!("missing `{prefix}.arch`")))?;
    let mut layers = Vec::with_capacity(arch.len());
    for (i, code) in arch.as_slice().iter().enumerate() {
        let rounded = code.round();
        if (code - rounded).abs() > 1e-6 || rounded < 0.0 {
            return Err(CoreError::Checkpoint(format!(
                "`{prefix}.arch[{i}]` is not an activation code: {code}"
            )));
        }
        let activation = Activation::from_code(rounded as u32)?;
        let weight = map
            .get(&format!("{prefix}.{i}.weight"))
            .ok_or_else(|| CoreError::Checkpoint(format!("missing `{prefix}.{i}.weight`")))?;
        let bias = map
            .get(&format!("{prefix}.{i}.bias"))
            .ok_or_else(|| CoreError::Checkpoint(format!("missing `{prefix}.{i}.bias`")))?;
        layers.push(DenseLayerBase::from_parts(
            weight.clone(),
            bias.clone(),
            activation,
        )?);
    }
    MlpBase::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn round_trip_preserves_order_names_shapes_and_bits() {
        let dir = tmp();
        let path = dir.path().join("w.ckpt");
        let a = TensorBase::new(vec![2, 3], vec![1.5f32, -2.25, 0.0, 3.5, 1e-20, 8.0]).unwrap();
        let b = TensorBase::new(vec![4], vec![0.1f32, 0.2, 0.3, 0.4]).unwrap();
        save(&path, &[("alpha", &a), ("beta.0.weight", &b)]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "alpha");
        assert_eq!(loaded[1].0, "beta.0.weight");
        assert_eq!(loaded[0].1.shape(), &[2, 3]);
        assert_eq!(loaded[0].1.as_slice(), a.as_slice());
        assert_eq!(loaded[1].1.as_slice(), b.as_slice());
    }

    #[test]
    fn rejects_bad_magic_truncation_and_duplicates() {
        let dir = tmp();
        let path = dir.path().join("w.ckpt");
        let a = TensorBase::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        save(&path, &[("a", &a)]).unwrap();

        let good = std::fs::read(&path).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Checkpoint(_))));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Checkpoint(_))));

        assert!(save(&path, &[("a", &a), ("a", &a)]).is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let dir = tmp();
        let path = dir.path().join("w.ckpt");
        let a = TensorBase::new(vec![1], vec![1.0f32]).unwrap();
        save(&path, &[("a", &a)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Checkpoint(_))));
    }

    #[test]
    fn mlp_round_trip_reproduces_outputs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpBase::<f32>::relu_net(&[6, 9, 4], &mut rng).unwrap();
        let dir = tmp();
        let path = dir.path().join("net.ckpt");
        let tensors = mlp_tensors("net", &net);
        let refs: Vec<(&str, &TensorBase<f32>)> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        save(&path, &refs).unwrap();
        let rebuilt = mlp_from_map("net", &load_map(&path).unwrap()).unwrap();
        let x = TensorBase::new(vec![3, 6], (0..18).map(|v| v as f32 * 0.1).collect()).unwrap();
        assert_eq!(
            net.forward(&x).unwrap().as_slice(),
            rebuilt.forward(&x).unwrap().as_slice()
        );
        assert_eq!(rebuilt.layers()[0].activation, Activation::Relu);
        assert_eq!(rebuilt.layers()[1].activation, Activation::Identity);
    }

    #[test]
    fn mlp_from_map_reports_missing_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = MlpBase::<f32>::relu_net(&[3, 2], &mut rng).unwrap();
        let mut map: HashMap<_, _> = mlp_tensors("m", &net).into_iter().collect();
        map.remove("m.0.bias");
        let err = mlp_from_map("m", &map).unwrap_err();
        assert!(err.to_string().contains("m.0.bias"));
        assert!(mlp_from_map("other", &map).is_err());
    }
}
