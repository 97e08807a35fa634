use crate::CodecError;

/// An entropy-coded byte stream plus the metadata needed to decode it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
    bit_len: u64,
    symbol_count: u32,
}

impl Bitstream {
    pub(crate) fn new(bytes: Vec<u8>, symbol_count: u32) -> Self {
        let bit_len = bytes.len() as u64 * 8;
        Bitstream {
            bytes,
            bit_len,
            symbol_count,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn symbol_count(&self) -> u32 {
        self.symbol_count
    }

    /// Coded payload size in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.bytes.len()
    }

    /// Wire layout: u32 symbol count, u32 bit length, payload bytes.
    /// Integers big-endian.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.bytes.len());
        out.extend_from_slice(&self.symbol_count.to_be_bytes());
        out.extend_from_slice(&(self.bit_len as u32).to_be_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    /// Parses the [`to_wire`](Self::to_wire) layout, validating lengths.
    pub fn from_wire(data: &[u8]) -> Result<Self, CodecError> {
        if data.len() < 8 {
            return Err(CodecError::Truncated {
                offset: data.len(),
                len: 8,
            });
        }
        let symbol_count = u32::from_be_bytes(data[0..4].try_into().unwrap());
        let bit_len = u32::from_be_bytes(data[4..8].try_into().unwrap()) as u64;
        let payload = &data[8..];
        let expected = bit_len.div_ceil(8);
        if (payload.len() as u64) < expected {
            return Err(CodecError::Truncated {
                offset: data.len(),
                len: 8 + expected as usize,
            });
        }
        if payload.len() as u64 > expected {
            return Err(CodecError::Corrupt {
                reason: format!(
                    "{} payload bytes but bit length {bit_len}",
                    payload.len()
                ),
            });
        }
        if bit_len != payload.len() as u64 * 8 {
            return Err(CodecError::Corrupt {
                reason: format!("bit length {bit_len} is not byte-aligned"),
            });
        }
        Ok(Bitstream {
            bytes: payload.to_vec(),
            bit_len,
            symbol_count,
        })
    }
}
