//! Parameter initialization and the binary weights container.
//!
//! File layout (all little-endian): magic `LLW1`, u32 tensor count, then per
//! tensor a u16 name length, the UTF-8 name, a u8 rank, rank u32 dims, and
//! dim-product f32 values in row-major order. Tensors are written in sorted
//! name order so identical parameter sets serialize to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{ParamSet, Tensor};

use super::{ModelConfig, ModelError};

const MAGIC: &[u8; 4] = b"LLW1";

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std > 0");
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("weight shape")
}

/// Seeded Xavier-style initialization of every decoder parameter.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let d = cfg.d_model;

    params.insert("proj.w", xavier(&mut rng, cfg.token_width(), d));
    params.insert("proj.b", Tensor::vector(&vec![0.0; d]));
    for layer in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{layer}.{s}");
        params.insert(p("ln1.g"), Tensor::vector(&vec![1.0; d]));
        params.insert(p("ln1.b"), Tensor::vector(&vec![0.0; d]));
        for proj in ["q", "k", "v", "o"] {
            params.insert(p(&format!("attn.w{proj}")), xavier(&mut rng, d, d));
            params.insert(p(&format!("attn.b{proj}")), Tensor::vector(&vec![0.0; d]));
        }
        params.insert(p("ln2.g"), Tensor::vector(&vec![1.0; d]));
        params.insert(p("ln2.b"), Tensor::vector(&vec![0.0; d]));
        params.insert(p("ff.w1"), xavier(&mut rng, d, 4 * d));
        params.insert(p("ff.b1"), Tensor::vector(&vec![0.0; 4 * d]));
        params.insert(p("ff.w2"), xavier(&mut rng, 4 * d, d));
        params.insert(p("ff.b2"), Tensor::vector(&vec![0.0; d]));
    }
    params.insert("head.w", xavier(&mut rng, d, 3));
    params.insert("head.b", Tensor::vector(&vec![0.0; 3]));
    params
}

/// Writes a parameter set in the LLW container format.
pub fn write_weights<W: Write>(mut w: W, params: &ParamSet) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(ModelError::WeightsFormat(format!(
                "tensor name too long: {name}"
            )));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = t.shape();
        if shape.len() > u8::MAX as usize {
            return Err(ModelError::WeightsFormat("rank exceeds u8".into()));
        }
        w.write_all(&[shape.len() as u8])?;
        for &dim in shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a parameter set from the LLW container format.
pub fn read_weights<R: Read>(mut r: R) -> Result<ParamSet, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::WeightsFormat(format!(
            "bad magic {magic:?}, expected LLW1"
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| ModelError::WeightsFormat(format!("tensor name not UTF-8: {e}")))?;
        let mut rank_buf = [0u8; 1];
        r.read_exact(&mut rank_buf)?;
        let mut shape = Vec::with_capacity(rank_buf[0] as usize);
        for _ in 0..rank_buf[0] {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf) as f64);
        }
        params.insert(
            name,
            Tensor::new(shape, data).map_err(|e| ModelError::WeightsFormat(e.to_string()))?,
        );
    }
    Ok(params)
}

/// Writes weights to a file path.
pub fn save_weights(path: &Path, params: &ParamSet) -> Result<(), ModelError> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    write_weights(&mut w, params)?;
    w.flush()?;
    Ok(())
}

/// Reads weights from a file path.
pub fn load_weights(path: &Path) -> Result<ParamSet, ModelError> {
    let f = File::open(path)?;
    read_weights(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LagSet, LossMode, PosEncoding};

    fn cfg() -> ModelConfig {
        ModelConfig {
            lag_set: LagSet::new(vec![1, 2]).unwrap(),
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            dropout_p: 0.1,
            n_covariates: 3,
            loss_mode: LossMode::StudentTNll,
            rope_base: 10000.0,
            pos_encoding: PosEncoding::Rotary,
        }
    }

    #[test]
    fn init_is_seeded_and_complete() {
        let a = init_weights(&cfg(), 42);
        let b = init_weights(&cfg(), 42);
        assert_eq!(a, b);
        let c = init_weights(&cfg(), 43);
        assert_ne!(a, c);
        for name in ["proj.w", "layer0.attn.wq", "layer1.ff.w2", "head.b"] {
            assert!(a.get(name).is_some(), "missing {name}");
        }
    }

    #[test]
    fn container_round_trip_is_f32_exact() {
        let params = init_weights(&cfg(), 7);
        let mut buf = Vec::new();
        write_weights(&mut buf, &params).unwrap();
        assert_eq!(&buf[..4], b"LLW1");
        let back = read_weights(buf.as_slice()).unwrap();
        assert_eq!(back.len(), params.len());
        for (name, t) in back.iter() {
            let orig = params.get(name).unwrap();
            assert_eq!(t.shape(), orig.shape());
            for (a, b) in t.data().iter().zip(orig.data()) {
                assert_eq!(*a, *b as f32 as f64, "f32 round trip for {name}");
            }
        }
    }

    #[test]
    fn serialization_is_byte_stable() {
        let params = init_weights(&cfg(), 7);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_weights(&mut a, &params).unwrap();
        write_weights(&mut b, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_rejected() {
        let err = read_weights(&b"NOPE\x00\x00\x00\x00"[..]);
        assert!(matches!(err, Err(ModelError::WeightsFormat(_))));
    }
}
