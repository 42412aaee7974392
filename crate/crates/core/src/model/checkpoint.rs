//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "UNETCKPT"
//! 8       4     format version, u32 LE
//! 12      8     header length H, u64 LE
//! 20      H     UTF-8 JSON header (config, source, epoch, history, counts)
//! 20+H    8     value count N, u64 LE
//! 28+H    4N    f32 LE values: parameters in flat order, then running stats
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::EpochRecord;
use super::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::sample::StemName;

pub const MAGIC: &[u8; 8] = b"UNETCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: UNetConfig,
    pub source: Option<StemName>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub param_count: usize,
    pub stat_count: usize,
}

impl CheckpointHeader {
    pub fn new(model: &UNet, source: Option<StemName>, epoch: usize, history: &[EpochRecord]) -> Self {
        CheckpointHeader {
            config: model.config().clone(),
            source,
            epoch,
            history: history.to_vec(),
            param_count: model.param_count(),
            stat_count: model.running_stats().len(),
        }
    }
}

pub fn encode_checkpoint(model: &UNet, header: &CheckpointHeader) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let values = model.params().iter().chain(model.running_stats());
    let count = model.param_count() + model.running_stats().len();
    let mut out = Vec::with_capacity(28 + json.len() + 4 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().expect("8 bytes")))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(UNet, CheckpointHeader)> {
    let b = &mut bytes;
    if take(b, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = read_u64(b)? as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(b, hlen)?)?;
    let count = read_u64(b)? as usize;
    if count != header.param_count + header.stat_count {
        return Err(Error::Checkpoint(format!(
            "value count {count} does not match header ({} + {})",
            header.param_count, header.stat_count
        )));
    }
    let raw = take(b, 4 * count)?;
    if !b.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (params, stats) = values.split_at(header.param_count);
    let model = UNet::from_parts(header.config.clone(), params.to_vec(), stats.to_vec())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &UNet, header: &CheckpointHeader) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(model, header)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(UNet, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> UNet {
        UNet::new(UNetConfig { depth: 2, base_channels: 2, frames: 8, bins: 8, ..Default::default() }, 3).unwrap()
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let m = model();
        let h = CheckpointHeader::new(&m, Some(StemName::Vocals), 4, &[]);
        let bytes = encode_checkpoint(&m, &h).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (back, hb) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(hb, h);
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // a second round trip is lossless
        let again = encode_checkpoint(&back, &hb).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn layout_offsets() {
        let m = model();
        let h = CheckpointHeader::new(&m, None, 0, &[]);
        let bytes = encode_checkpoint(&m, &h).unwrap();
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[20 + hlen..28 + hlen].try_into().unwrap()) as usize;
        assert_eq!(count, m.param_count() + m.running_stats().len());
        assert_eq!(bytes.len(), 28 + hlen + 4 * count);
        let first = f32::from_le_bytes(bytes[28 + hlen..32 + hlen].try_into().unwrap());
        assert_eq!(first, m.params()[0] as f32);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = model();
        let bytes = encode_checkpoint(&m, &CheckpointHeader::new(&m, None, 0, &[])).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }
}
