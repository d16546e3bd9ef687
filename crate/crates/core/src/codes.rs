//! Bit-packed binary codes.
//!
//! Bit `r` of a code lives in word `r / 64` at bit position `r % 64`. A set
//! bit encodes +1 and a clear bit encodes −1. Bits at positions `>= dim` in
//! the last word are always zero, so whole-word comparisons are exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::AttributeMatrix;
use crate::model::ModelParams;

pub const CODE_MAGIC: [u8; 4] = *b"BNEC";
pub const CODE_VERSION: u32 = 1;
pub const CODE_HEADER_LEN: usize = 20;

#[inline]
pub fn words_for(dim: usize) -> usize {
    dim.div_ceil(64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    node_count: usize,
    dim: usize,
    words: usize,
    data: Vec<u64>,
}

impl CodeMatrix {
    pub fn zeros(node_count: usize, dim: usize) -> Self {
        let words = words_for(dim);
        CodeMatrix {
            node_count,
            dim,
            words,
            data: vec![0; node_count * words],
        }
    }

    /// Builds from packed words; fails if the length is wrong or any tail bit is set.
    pub fn from_words(node_count: usize, dim: usize, data: Vec<u64>) -> Result<Self> {
        let words = words_for(dim);
        if data.len() != node_count * words {
            return Err(Error::DimensionMismatch {
                expected: node_count * words,
                actual: data.len(),
            });
        }
        let m = CodeMatrix {
            node_count,
            dim,
            words,
            data,
        };
        if !m.is_canonical() {
            return Err(Error::Config("code words have bits set beyond the code length".into()));
        }
        Ok(m)
    }

    /// Bit `r` of row `i` is set iff `signs[i][r] >= 0`.
    pub fn from_signs<R: AsRef<[f32]>>(rows: &[R], dim: usize) -> Result<Self> {
        let mut m = CodeMatrix::zeros(rows.len(), dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            m.pack_row(i, row.iter().map(|&x| x >= 0.0));
        }
        Ok(m)
    }

    /// Raw-feature codes: one bit per attribute, set iff X_ij > 0.
    pub fn from_attributes(attrs: &AttributeMatrix) -> Self {
        let mut m = CodeMatrix::zeros(attrs.node_count(), attrs.attr_count());
        for t in attrs.entries() {
            m.set(t.node as usize, t.attr as usize, true);
        }
        m
    }

    fn pack_row(&mut self, i: usize, bits: impl Iterator<Item = bool>) {
        let row = &mut self.data[i * self.words..(i + 1) * self.words];
        row.fill(0);
        for (r, bit) in bits.enumerate().take(self.dim) {
            if bit {
                row[r / 64] |= 1u64 << (r % 64);
            }
        }
    }

    pub fn set(&mut self, i: usize, r: usize, bit: bool) {
        assert!(r < self.dim, "bit {r} out of range for {}-bit codes", self.dim);
        let w = &mut self.data[i * self.words + r / 64];
        let mask = 1u64 << (r % 64);
        if bit {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize) -> bool {
        self.data[i * self.words + r / 64] >> (r % 64) & 1 == 1
    }

    /// Code of node `i` as ±1 values.
    pub fn signs(&self, i: usize) -> Vec<i8> {
        (0..self.dim).map(|r| if self.get(i, r) { 1 } else { -1 }).collect()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words_per_code(&self) -> usize {
        self.words
    }

    /// Bytes of packed code words (the file minus its header).
    pub fn payload_bytes(&self) -> usize {
        self.data.len() * 8
    }

    /// Mask of valid bits in the last word of each code.
    pub fn tail_mask(&self) -> u64 {
        match self.dim % 64 {
            0 => u64::MAX,
            rem => (1u64 << rem) - 1,
        }
    }

    pub fn is_canonical(&self) -> bool {
        if self.words == 0 {
            return true;
        }
        let mask = self.tail_mask();
        (0..self.node_count).all(|i| self.data[(i + 1) * self.words - 1] & !mask == 0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
        write(&CODE_MAGIC)?;
        write(&CODE_VERSION.to_le_bytes())?;
        write(&(self.node_count as u64).to_le_bytes())?;
        write(&(self.dim as u32).to_le_bytes())?;
        for w in &self.data {
            write(&w.to_le_bytes())?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut input = BufReader::new(file);
        let mut header = [0u8; CODE_HEADER_LEN];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::format(path, "truncated code header"))?;
        if header[0..4] != CODE_MAGIC {
            return Err(Error::format(path, "bad magic (expected BNEC)"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != CODE_VERSION {
            return Err(Error::format(path, format!("unsupported code file version {version}")));
        }
        let node_count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let expected = (node_count as u64)
            .checked_mul(words_for(dim) as u64 * 8)
            .and_then(|b| b.checked_add(CODE_HEADER_LEN as u64))
            .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
        if file_len != expected {
            return Err(Error::format(
                path,
                format!("file is {file_len} bytes, header implies {expected}"),
            ));
        }
        let mut bytes = Vec::with_capacity((expected as usize) - CODE_HEADER_LEN);
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        CodeMatrix::from_words(node_count, dim, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Codes from trained parameters: bit `r` of node `i` is set iff
/// `W_in[i][r] >= 0`, which equals thresholding `tanh(β·W_in[i][r])` at zero
/// for every β > 0.
pub fn binarize(params: &ModelParams) -> CodeMatrix {
    let dim = params.dim();
    let mut m = CodeMatrix::zeros(params.node_count(), dim);
    for i in 0..params.node_count() {
        m.pack_row(i, params.w_in_row(i).iter().map(|&x| x >= 0.0));
    }
    m
}

/// Codes from the relaxed hidden layer at sharpness `beta`.
pub fn binarize_relaxed(params: &ModelParams, beta: f64) -> CodeMatrix {
    let dim = params.dim();
    let mut m = CodeMatrix::zeros(params.node_count(), dim);
    for i in 0..params.node_count() {
        m.pack_row(i, params.w_in_row(i).iter().map(|&x| (beta * x as f64).tanh() >= 0.0));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AttrEntry;

    #[test]
    fn sign_convention() {
        let mut p = ModelParams::zeros(2, 0, 3);
        p.w_in_row_mut(0).copy_from_slice(&[0.3, -0.2, 0.0]);
        p.w_in_row_mut(1).copy_from_slice(&[-1.0, -0.5, -1e-30]);
        let c = binarize(&p);
        assert_eq!(c.signs(0), vec![1, -1, 1]);
        assert_eq!(c.row(0), &[0b101]);
        assert_eq!(c.row(1), &[0]);
        for beta in [0.01, 0.1, 1.0, 10.0] {
            assert_eq!(binarize_relaxed(&p, beta), c);
        }
    }

    #[test]
    fn negative_zero_is_plus_one() {
        let mut p = ModelParams::zeros(1, 0, 1);
        p.w_in_row_mut(0)[0] = -0.0;
        assert!(binarize(&p).get(0, 0));
    }

    #[test]
    fn tail_bits_stay_zero() {
        for dim in [1, 63, 64, 65, 128, 200] {
            let p = ModelParams::zeros(3, 0, dim);
            let c = binarize(&p);
            assert!(c.is_canonical());
            assert_eq!(c.row(0).last().unwrap().count_ones() as usize, (dim - 1) % 64 + 1);
        }
        assert!(CodeMatrix::from_words(1, 3, vec![0b1000]).is_err());
        assert!(CodeMatrix::from_words(1, 3, vec![0b111]).is_ok());
    }

    #[test]
    fn attribute_codes() {
        let x = AttributeMatrix::from_triplets(
            2,
            70,
            [
                AttrEntry { node: 0, attr: 69, weight: 2.0 },
                AttrEntry { node: 1, attr: 0, weight: 0.5 },
            ],
        )
        .unwrap();
        let c = CodeMatrix::from_attributes(&x);
        assert_eq!(c.row(0), &[0, 1 << 5]);
        assert_eq!(c.row(1), &[1, 0]);
    }

    #[test]
    fn file_layout() {
        let c = CodeMatrix::from_words(2, 65, vec![1, 1, u64::MAX, 0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        c.save(f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        assert_eq!(bytes.len(), 20 + 4 * 8);
        assert_eq!(&bytes[..4], b"BNEC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &65u32.to_le_bytes());
        assert_eq!(&bytes[20..28], &1u64.to_le_bytes());
        assert_eq!(CodeMatrix::load(f.path()).unwrap(), c);
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let c = CodeMatrix::zeros(0, 128);
        let f = tempfile::NamedTempFile::new().unwrap();
        c.save(f.path()).unwrap();
        assert_eq!(std::fs::metadata(f.path()).unwrap().len(), 20);
        assert_eq!(CodeMatrix::load(f.path()).unwrap(), c);
    }

    #[test]
    fn load_errors() {
        let c = CodeMatrix::zeros(3, 64);
        let f = tempfile::NamedTempFile::new().unwrap();
        c.save(f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();

        std::fs::write(f.path(), &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(CodeMatrix::load(f.path()), Err(Error::Format { .. })));
        std::fs::write(f.path(), &bytes[..10]).unwrap();
        assert!(matches!(CodeMatrix::load(f.path()), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[3] = b'P';
        std::fs::write(f.path(), &bad).unwrap();
        assert!(matches!(CodeMatrix::load(f.path()), Err(Error::Format { .. })));
        let mut wide = bytes.clone();
        wide[16..20].copy_from_slice(&65u32.to_le_bytes());
        std::fs::write(f.path(), &wide).unwrap();
        assert!(matches!(CodeMatrix::load(f.path()), Err(Error::Format { .. })));
    }
}
