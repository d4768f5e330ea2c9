//! Parameter snapshot files: a `.bin` of little-endian f32 blocks next to a
//! `.json` sidecar listing block names, shapes and provenance (seed, config
//! hash). Writing the same parameters twice produces byte-identical files,
//! which is what the pipeline's reproducibility checks compare.

use crate::error::{Error, Result};

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// One named tensor in a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let block = Block {
            name: name.into(),
            shape,
            data,
        };
        debug_assert_eq!(
            block.shape.iter().product::<usize>(),
            block.data.len(),
            "block {} shape/data mismatch",
            block.name
        );
        block
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Block::new(name, vec![1], vec![value])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SidecarBlock {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the .bin file, in f32 elements.
    pub offset: usize,
    /// Length in f32 elements.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sidecar {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub blocks: Vec<SidecarBlock>,
}

fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

fn json_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Write `<base>.bin` and `<base>.json`.
pub fn write_snapshot(
    base: &Path,
    kind: &str,
    seed: u64,
    config_hash: &str,
    blocks: &[Block],
) -> Result<()> {
    let mut sidecar_blocks = Vec::with_capacity(blocks.len());
    let mut bin: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for b in blocks {
        sidecar_blocks.push(SidecarBlock {
            name: b.name.clone(),
            shape: b.shape.clone(),
            offset,
            len: b.data.len(),
        });
        for &v in &b.data {
            bin.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += b.data.len();
    }
    let sidecar = Sidecar {
        format_version: SNAPSHOT_FORMAT_VERSION,
        kind: kind.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        blocks: sidecar_blocks,
    };

    let mut f = std::fs::File::create(bin_path(base))?;
    f.write_all(&bin)?;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::invalid(format!("sidecar serialization: {e}")))?;
    let mut f = std::fs::File::create(json_path(base))?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Read `<base>.bin` + `<base>.json` back into blocks (f32-precision values).
pub fn read_snapshot(base: &Path) -> Result<(Sidecar, Vec<Block>)> {
    let json = std::fs::read_to_string(json_path(base))?;
    let sidecar: Sidecar = serde_json::from_str(&json).map_err(|e| Error::Format {
        offset: 0,
        msg: format!("sidecar parse: {e}"),
    })?;
    if sidecar.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::Format {
            offset: 0,
            msg: format!("unsupported snapshot version {}", sidecar.format_version),
        });
    }
    let mut bin = Vec::new();
    std::fs::File::open(bin_path(base))?.read_to_end(&mut bin)?;
    if bin.len() % 4 != 0 {
        return Err(Error::Format {
            offset: bin.len() as u64,
            msg: "blob length is not a multiple of 4".into(),
        });
    }
    let total = bin.len() / 4;
    let mut blocks = Vec::with_capacity(sidecar.blocks.len());
    for sb in &sidecar.blocks {
        if sb.offset + sb.len > total {
            return Err(Error::Format {
                offset: (sb.offset * 4) as u64,
                msg: format!(
                    "block {} extends past blob end ({} + {} > {total})",
                    sb.name, sb.offset, sb.len
                ),
            });
        }
        if sb.shape.iter().product::<usize>() != sb.len {
            return Err(Error::Format {
                offset: (sb.offset * 4) as u64,
                msg: format!("block {} shape does not match len", sb.name),
            });
        }
        let mut data = Vec::with_capacity(sb.len);
        for i in 0..sb.len {
            let at = (sb.offset + i) * 4;
            let v = f32::from_le_bytes([bin[at], bin[at + 1], bin[at + 2], bin[at + 3]]);
            data.push(v as f64);
        }
        blocks.push(Block {
            name: sb.name.clone(),
            shape: sb.shape.clone(),
            data,
        });
    }
    Ok((sidecar, blocks))
}

/// Pull a named block out of a snapshot, with a shape check.
pub fn take_block(blocks: &[Block], name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let b = blocks
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::Format {
            offset: 0,
            msg: format!("snapshot missing block {name}"),
        })?;
    if b.shape != shape {
        return Err(Error::shape(format!(
            "block {name}: snapshot shape {:?}, expected {:?}",
            b.shape, shape
        )));
    }
    Ok(b.data.clone())
}

/// Raw bytes of both snapshot files, for byte-identity comparisons.
pub fn snapshot_bytes(base: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    Ok((
        std::fs::read(bin_path(base))?,
        std::fs::read(json_path(base))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = std::env::temp_dir().join("vata_snapshot_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("weights");
        let blocks = vec![
            Block::new("w", vec![2, 2], vec![1.5, -2.25, 0.0, 3.0]),
            Block::scalar("gate", 0.125),
        ];
        write_snapshot(&base, "test", 42, "deadbeef", &blocks).unwrap();
        let (sidecar, read) = read_snapshot(&base).unwrap();
        assert_eq!(sidecar.seed, 42);
        assert_eq!(sidecar.config_hash, "deadbeef");
        assert_eq!(read, blocks); // all values are f32-exact
    }

    #[test]
    fn identical_writes_are_byte_identical() {
        let dir = std::env::temp_dir().join("vata_snapshot_bytes");
        std::fs::create_dir_all(&dir).unwrap();
        let blocks = vec![Block::new("w", vec![3], vec![0.1, 0.2, 0.3])];
        let a = dir.join("a");
        let b = dir.join("b");
        write_snapshot(&a, "test", 7, "cafe", &blocks).unwrap();
        write_snapshot(&b, "test", 7, "cafe", &blocks).unwrap();
        assert_eq!(snapshot_bytes(&a).unwrap(), snapshot_bytes(&b).unwrap());
    }

    #[test]
    fn missing_block_and_bad_shape_error() {
        let blocks = vec![Block::new("w", vec![2], vec![1.0, 2.0])];
        assert!(take_block(&blocks, "nope", &[2]).is_err());
        assert!(take_block(&blocks, "w", &[3]).is_err());
        assert!(take_block(&blocks, "w", &[2]).is_ok());
    }
}
