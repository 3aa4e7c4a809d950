//! Binary logits dump.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "MACCDMP1"
//! n_classes        u32
//! n_examples       u64
//! model_checksum   u64
//! body_checksum    u64      first 8 bytes of SHA-256(body), read as u64
//! has_temperature  u8       0 or 1
//! temperature      f64      0.0 when absent
//! dataset_id_len   u16
//! dataset_id       utf-8 bytes
//! body             n_examples × (n_classes × f64 logits, u32 label)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::PredictionBatch;

pub const DUMP_MAGIC: &[u8; 8] = b"MACCDMP1";

/// Fixed part of the header, before the dataset id bytes.
const FIXED_HEADER: usize = 8 + 4 + 8 + 8 + 8 + 1 + 8 + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsDump {
    pub dataset_id: String,
    pub model_checksum: u64,
    pub temperature: Option<f64>,
    /// `[n × K]`
    pub logits: Array2<f64>,
    pub labels: Vec<u32>,
}

impl LogitsDump {
    pub fn new(dataset_id: &str, model_checksum: u64, logits: Array2<f64>, labels: Vec<u32>) -> Result<Self> {
        if logits.nrows() != labels.len() {
            return Err(Error::domain(format!(
                "{} logit rows but {} labels",
                logits.nrows(),
                labels.len()
            )));
        }
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            model_checksum,
            temperature: None,
            logits,
            labels,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER + self.dataset_id.len()
    }

    /// Exact encoded size: header plus `n · (8K + 4)` body bytes.
    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.len() * (8 * self.n_classes() + 4)
    }

    /// Prediction batch from the stored logits, with the stored temperature applied.
    pub fn to_batch(&self) -> Result<PredictionBatch> {
        let t = self.temperature.unwrap_or(1.0);
        PredictionBatch::from_logits(&self.logits / t, self.labels.iter().map(|&y| y as usize).collect())
    }

    fn body(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(self.len() * (8 * self.n_classes() + 4));
        for (row, &label) in self.logits.rows().into_iter().zip(&self.labels) {
            for &z in row {
                body.extend_from_slice(&z.to_le_bytes());
            }
            body.extend_from_slice(&label.to_le_bytes());
        }
        body
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let id = self.dataset_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::domain("dataset id longer than 65535 bytes"))?;
        let k = u32::try_from(self.n_classes()).map_err(|_| Error::domain("too many classes"))?;
        let body = self.body();
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.model_checksum.to_le_bytes());
        out.extend_from_slice(&checksum(&body).to_le_bytes());
        out.push(u8::from(self.temperature.is_some()));
        out.extend_from_slice(&self.temperature.unwrap_or(0.0).to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::format(path, msg);
        if bytes.len() < FIXED_HEADER {
            return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != DUMP_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let mut cur = Cursor { bytes, at: 8 };
        let k = cur.u32() as usize;
        let n = cur.u64() as usize;
        let model_checksum = cur.u64();
        let body_checksum = cur.u64();
        let has_t = cur.take(1)[0];
        let t = f64::from_le_bytes(cur.take(8).try_into().expect("8 bytes"));
        let id_len = cur.u16() as usize;
        if has_t > 1 {
            return Err(fail(format!("temperature flag {has_t} is not 0 or 1")));
        }
        if bytes.len() < FIXED_HEADER + id_len {
            return Err(fail("dataset id runs past end of file".into()));
        }
        let dataset_id = String::from_utf8(cur.take(id_len).to_vec())
            .map_err(|_| fail("dataset id is not utf-8".into()))?;
        let body = &bytes[cur.at..];
        let record = 8 * k + 4;
        let expected = n
            .checked_mul(record)
            .ok_or_else(|| fail("header counts overflow".into()))?;
        if body.len() != expected {
            return Err(fail(format!(
                "header declares {n} records of {record} bytes ({expected} bytes), body has {} bytes",
                body.len()
            )));
        }
        if checksum(body) != body_checksum {
            return Err(fail("body checksum mismatch".into()));
        }
        let mut logits = Array2::zeros((n, k));
        let mut labels = Vec::with_capacity(n);
        let mut body_cur = Cursor { bytes: body, at: 0 };
        for i in 0..n {
            for j in 0..k {
                logits[[i, j]] = f64::from_le_bytes(body_cur.take(8).try_into().expect("8 bytes"));
            }
            labels.push(body_cur.u32());
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
            return Err(fail(format!("label {bad} outside 0..{k}")));
        }
        Ok(Self {
            dataset_id,
            model_checksum,
            temperature: (has_t == 1).then_some(t),
            logits,
            labels,
        })
    }
}

fn checksum(body: &[u8]) -> u64 {
    let digest = Sha256::digest(body);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        s
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().expect("2 bytes"))
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().expect("8 bytes"))
    }
}

pub fn write_dump(path: &Path, dump: &LogitsDump) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, dump.encode()?).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<LogitsDump> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    LogitsDump::decode(&bytes, path)
}
