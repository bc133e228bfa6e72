//! Binary checkpoint container: a magic tag, a small JSON header, named
//! float64 blocks with explicit shapes, and a CRC32 trailer. Writes go to a
//! temp file in the target directory and are renamed into place, so readers
//! never see a half-written checkpoint.

use crate::model::{ConvBlock, StudentParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::error::Error;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 5] = b"LISR1";

#[derive(Debug)]
pub enum CheckpointError {
    Io { path: PathBuf, detail: String },
    BadMagic,
    Corrupt { detail: String },
    MissingBlock { name: String },
    ShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io { path, detail } => write!(f, "{}: {detail}", path.display()),
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::Corrupt { detail } => write!(f, "corrupt checkpoint: {detail}"),
            CheckpointError::MissingBlock { name } => write!(f, "checkpoint lacks block '{name}'"),
            CheckpointError::ShapeMismatch { name, expected, got } => {
                write!(f, "block '{name}': expected shape {expected:?}, found {got:?}")
            }
        }
    }
}

impl Error for CheckpointError {}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub k_s: usize,
    pub k_v: usize,
    pub class_names: Vec<String>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<Block>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt { detail: "unexpected end of file".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Serialize to bytes: magic, header length + JSON, block count, then per
/// block (name, rank, dims, float64 little-endian data), and a trailing
/// CRC32 of everything before it.
pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let header = serde_json::to_vec(&ck.header).expect("header serializes");
    push_u32(&mut buf, header.len() as u32);
    buf.extend_from_slice(&header);
    push_u32(&mut buf, ck.blocks.len() as u32);
    for b in &ck.blocks {
        push_u32(&mut buf, b.name.len() as u32);
        buf.extend_from_slice(b.name.as_bytes());
        push_u32(&mut buf, b.shape.len() as u32);
        for &d in &b.shape {
            push_u32(&mut buf, d as u32);
        }
        for v in &b.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    push_u32(&mut buf, crc);
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CheckpointError::Corrupt {
            detail: format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        });
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Corrupt { detail: format!("bad header: {e}") })?;
    let n_blocks = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt { detail: "block name is not UTF-8".into() })?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push(Block { name, shape, data });
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt { detail: format!("{} trailing bytes", body.len() - r.pos) });
    }
    Ok(Checkpoint { header, blocks })
}

/// Write atomically: temp file in the same directory, then rename.
/// Write bytes via a temp file and rename, creating parent directories, so
/// interrupted runs never leave a half-written file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_file(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck);
    write_atomic(path, &bytes)
        .map_err(|e| CheckpointError::Io { path: path.into(), detail: e.to_string() })
}

pub fn read_file(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io { path: path.into(), detail: e.to_string() })?;
    decode(&bytes)
}

fn stats_block(name: &str, values: &[f64]) -> Block {
    Block { name: name.into(), shape: vec![values.len()], data: values.to_vec() }
}

/// Pack student parameters (trainable tensors plus batch-norm running
/// statistics) into a checkpoint.
pub fn from_student(params: &StudentParams, class_names: &[String], config_digest: &str) -> Checkpoint {
    let mut blocks: Vec<Block> = params
        .trainable()
        .iter()
        .map(|p| Block { name: p.name.into(), shape: p.tensor.shape().to_vec(), data: p.tensor.data().to_vec() })
        .collect();
    for (name, values) in params.running_stats() {
        blocks.push(stats_block(name, values));
    }
    Checkpoint {
        header: CheckpointHeader {
            k_s: params.k_s,
            k_v: params.k_v,
            class_names: class_names.to_vec(),
            config_digest: config_digest.into(),
        },
        blocks,
    }
}

/// Rebuild student parameters, verifying that every expected block is
/// present with the right shape.
pub fn to_student(ck: &Checkpoint) -> Result<StudentParams> {
    let find = |name: &str| -> Result<&Block> {
        ck.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| CheckpointError::MissingBlock { name: name.into() })
    };
    let tensor = |name: &str, shape: Vec<usize>| -> Result<Tensor> {
        let b = find(name)?;
        if b.shape != shape {
            return Err(CheckpointError::ShapeMismatch { name: name.into(), expected: shape, got: b.shape.clone() });
        }
        Tensor::new(shape, b.data.clone())
            .map_err(|e| CheckpointError::Corrupt { detail: format!("block '{name}': {e}") })
    };
    let stats = |name: &str| -> Result<Vec<f64>> {
        let b = find(name)?;
        if b.shape != [64] {
            return Err(CheckpointError::ShapeMismatch { name: name.into(), expected: vec![64], got: b.shape.clone() });
        }
        Ok(b.data.clone())
    };
    let conv = |tag: &str, cin: usize, kh: usize, kw: usize| -> Result<ConvBlock> {
        Ok(ConvBlock {
            weight: tensor(&format!("{tag}.weight"), vec![64, cin, kh, kw])?,
            bias: tensor(&format!("{tag}.bias"), vec![64])?,
            gamma: tensor(&format!("{tag}.bn_gamma"), vec![64])?,
            beta: tensor(&format!("{tag}.bn_beta"), vec![64])?,
            running_mean: stats(&format!("{tag}.running_mean"))?,
            running_var: stats(&format!("{tag}.running_var"))?,
        })
    };
    let (k_s, k_v) = (ck.header.k_s, ck.header.k_v);
    Ok(StudentParams {
        k_s,
        k_v,
        conv1: conv("conv1", 1, 3, 3)?,
        conv2: conv("conv2", 64, 3, 3)?,
        conv3: conv("conv3", 64, 3, 1)?,
        lstm_w_ih: tensor("lstm.w_ih", vec![256, 128])?,
        lstm_w_hh: tensor("lstm.w_hh", vec![256, 64])?,
        lstm_b_ih: tensor("lstm.b_ih", vec![256])?,
        lstm_b_hh: tensor("lstm.b_hh", vec![256])?,
        sup_w: tensor("sup.weight", vec![k_s, 64])?,
        sup_b: tensor("sup.bias", vec![k_s])?,
        sd_w1: tensor("sd.weight1", vec![32, 64])?,
        sd_b1: tensor("sd.bias1", vec![32])?,
        sd_w2: tensor("sd.weight2", vec![k_s, 32])?,
        sd_b2: tensor("sd.bias2", vec![k_s])?,
        vd_w1: tensor("vd.weight1", vec![32, 64])?,
        vd_b1: tensor("vd.bias1", vec![32])?,
        vd_w2: tensor("vd.weight2", vec![k_v, 32])?,
        vd_b2: tensor("vd.bias2", vec![k_v])?,
    })
}

/// Save a student checkpoint to disk (atomic).
pub fn save_student(path: &Path, params: &StudentParams, class_names: &[String], config_digest: &str) -> Result<()> {
    write_file(path, &from_student(params, class_names, config_digest))
}

/// Load a student checkpoint from disk.
pub fn load_student(path: &Path) -> Result<(StudentParams, CheckpointHeader)> {
    let ck = read_file(path)?;
    let params = to_student(&ck)?;
    Ok((params, ck.header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForwardMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn student_round_trip_is_bit_exact_including_running_stats() {
        let mut params = StudentParams::init(5, 4, 42).unwrap();
        // Perturb running stats away from their init values so the
        // round-trip actually exercises them.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..2 * 5 * 64 * 90).map(|_| rng.random::<f64>()).collect();
        let batch = Tensor::new(vec![2, 1, 64, 90], data[..2 * 64 * 90].to_vec()).unwrap();
        crate::model::forward(&mut params, &batch, ForwardMode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lisr");
        save_student(&path, &params, &names(5), "digest123").unwrap();
        let (loaded, header) = load_student(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(header.k_s, 5);
        assert_eq!(header.k_v, 4);
        assert_eq!(header.class_names, names(5));
        assert_eq!(header.config_digest, "digest123");
        assert!(!path.with_extension("tmp").exists(), "temp file must be renamed away");
    }

    #[test]
    fn corruption_is_detected() {
        let params = StudentParams::init(3, 2, 1).unwrap();
        let mut bytes = encode(&from_student(&params, &names(3), ""));

        let flip = bytes.len() / 2;
        bytes[flip] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(CheckpointError::Corrupt { .. })));

        bytes[flip] ^= 0x40;
        decode(&bytes).unwrap();

        let truncated = &bytes[..bytes.len() - 9];
        assert!(decode(truncated).is_err());

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(decode(&wrong_magic), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn missing_and_misshapen_blocks_are_rejected() {
        let params = StudentParams::init(3, 2, 1).unwrap();
        let mut ck = from_student(&params, &names(3), "");
        let idx = ck.blocks.iter().position(|b| b.name == "lstm.w_hh").unwrap();
        let removed = ck.blocks.remove(idx);
        let err = to_student(&ck).unwrap_err();
        assert!(matches!(err, CheckpointError::MissingBlock { ref name } if name == "lstm.w_hh"), "{err}");

        let mut bad = removed;
        bad.shape = vec![256, 65];
        bad.data = vec![0.0; 256 * 65];
        ck.blocks.push(bad);
        assert!(matches!(to_student(&ck), Err(CheckpointError::ShapeMismatch { .. })));
    }

    #[test]
    fn header_class_counts_drive_head_shapes() {
        let params = StudentParams::init(6, 4, 7).unwrap();
        let ck = from_student(&params, &names(6), "");
        let restored = to_student(&ck).unwrap();
        assert_eq!(restored.sup_w.shape(), &[6, 64]);
        assert_eq!(restored.vd_w2.shape(), &[4, 32]);
    }
}
