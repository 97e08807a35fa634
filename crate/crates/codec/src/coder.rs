use crate::{Bitstream, CdfTable, CodecError, FREQ_TOTAL};

const TOP: u32 = 1 << 24;

/// Encodes a symbol stream against `table`. Symbol `i` uses table dimension
/// `i % dim_count`, so latent vectors line up with their per-dimension
/// models and longer i.i.d. streams simply cycle a one-dimension table.
///
/// The result decodes back exactly and its length stays within
/// `Σ ⌈−log₂ p_i⌉ + 64` bits of the table's ideal code length.
pub fn encode(symbols: &[i32], table: &CdfTable) -> Result<Bitstream, CodecError> {
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        let (lo, hi) = table.interval(i % table.dim_count(), s)?;
        enc.encode(lo, hi);
    }
    Ok(Bitstream::new(enc.finish(), symbols.len() as u32))
}

/// Decodes exactly `count` symbols. `count` must match what the stream was
/// encoded with; a mismatch, truncation, or trailing garbage is an error,
/// never a silently wrong answer.
pub fn decode(
    bs: &Bitstream,
    table: &CdfTable,
    count: usize,
) -> Result<Vec<i32>, CodecError> {
    if count as u32 != bs.symbol_count() {
        return Err(CodecError::CountMismatch {
            stream: bs.symbol_count(),
            requested: count as u32,
        });
    }
    let mut dec = RangeDecoder::new(bs.bytes())?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let dim = i % table.dim_count();
        out.push(dec.decode(table, dim)?);
    }
    dec.verify_consumed()?;
    Ok(out)
}

/// Carry-propagating byte-renormalizing range encoder (32-bit range,
/// 16-bit frequency precision). `low` keeps 33 bits so a pending carry is
/// visible in bit 32; `cache`/`pending` delay bytes that a carry could
/// still increment.
struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 0,
            first: true,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, cum_lo: u32, cum_hi: u32) {
        let r = self.range / FREQ_TOTAL;
        self.low += u64::from(cum_lo) * u64::from(r);
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            if !self.first {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = (self.low >> 24) as u8;
            self.first = false;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self, CodecError> {
        let mut dec = RangeDecoder {
            code: 0,
            range: u32::MAX,
            bytes,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | u32::from(dec.next_byte()?);
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.bytes.get(self.pos).ok_or(CodecError::Truncated {
            offset: self.pos,
            len: self.bytes.len(),
        })?;
        self.pos += 1;
        Ok(b)
    }

    fn decode(&mut self, table: &CdfTable, dim: usize) -> Result<i32, CodecError> {
        let r = self.range / FREQ_TOTAL;
        let value = (self.code / r).min(FREQ_TOTAL - 1);
        let (symbol, cum_lo, cum_hi) = table.locate(dim, value);
        self.code -= cum_lo * r;
        self.range = r * (cum_hi - cum_lo);
        if self.code >= self.range {
            return Err(CodecError::Corrupt {
                reason: "code value outside symbol interval".into(),
            });
        }
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// After the last symbol the stream must hold nothing but the
    /// encoder's flush tail; more than that means count/stream mismatch.
    fn verify_consumed(&self) -> Result<(), CodecError> {
        let left = self.bytes.len() - self.pos;
        if left > 4 {
            return Err(CodecError::Corrupt {
                reason: format!("{left} unread bytes after final symbol"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> CdfTable {
        CdfTable::from_pmfs(&[(0, vec![0.25; 4])]).unwrap()
    }

    #[test]
    fn empty_stream_is_fixed_size_terminator_only() {
        let t = uniform4();
        let bs = encode(&[], &t).unwrap();
        assert_eq!(bs.symbol_count(), 0);
        assert_eq!(bs.payload_bytes(), 4);
        assert_eq!(decode(&bs, &t, 0).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn single_symbol_round_trips() {
        let t = uniform4();
        for s in 0..4 {
            let bs = encode(&[s], &t).unwrap();
            assert_eq!(decode(&bs, &t, 1).unwrap(), vec![s]);
        }
    }

    #[test]
    fn thousand_uniform_symbols_cost_about_two_bits_each() {
        let t = uniform4();
        let symbols: Vec<i32> = (0..1000).map(|i| (i * 7 + 3) % 4).collect();
        let bs = encode(&symbols, &t).unwrap();
        let bits = bs.bit_len();
        assert!(bits >= 2000, "impossibly short: {bits} bits");
        assert!(bits <= 2000 + 64, "too long: {bits} bits");
        assert_eq!(decode(&bs, &t, 1000).unwrap(), symbols);
    }

    #[test]
    fn peaked_prior_compresses_a_thousand_zeros_to_a_few_bytes() {
        let t = CdfTable::from_pmfs(&[(0, vec![0.99, 0.005, 0.005])]).unwrap();
        let symbols = vec![0i32; 1000];
        let bs = encode(&symbols, &t).unwrap();
        assert!(
            bs.bit_len() <= 30 + 64,
            "1000 near-certain symbols took {} bits",
            bs.bit_len()
        );
        assert_eq!(decode(&bs, &t, 1000).unwrap(), symbols);
    }

    #[test]
    fn multi_dimension_streams_cycle_through_tables() {
        let t = CdfTable::from_pmfs(&[
            (-2, vec![0.7, 0.1, 0.1, 0.05, 0.05]),
            (0, vec![0.5, 0.5]),
            (10, vec![0.1, 0.1, 0.8]),
        ])
        .unwrap();
        let symbols = vec![-2, 1, 12, 2, 0, 10, -1, 1, 11];
        let bs = encode(&symbols, &t).unwrap();
        assert_eq!(decode(&bs, &t, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn out_of_support_symbol_is_a_range_error() {
        let t = uniform4();
        assert!(matches!(
            encode(&[4], &t),
            Err(CodecError::SymbolOutOfSupport { symbol: 4, .. })
        ));
        assert!(matches!(
            encode(&[-1], &t),
            Err(CodecError::SymbolOutOfSupport { symbol: -1, .. })
        ));
    }

    #[test]
    fn wrong_count_is_never_silent() {
        let t = uniform4();
        let symbols: Vec<i32> = (0..50).map(|i| i % 4).collect();
        let bs = encode(&symbols, &t).unwrap();
        assert!(matches!(
            decode(&bs, &t, 49),
            Err(CodecError::CountMismatch { stream: 50, requested: 49 })
        ));
        assert!(matches!(
            decode(&bs, &t, 51),
            Err(CodecError::CountMismatch { stream: 50, requested: 51 })
        ));
    }

    #[test]
    fn truncated_stream_is_a_decode_error() {
        let t = uniform4();
        let symbols: Vec<i32> = (0..200).map(|i| (i * 13) % 4).collect();
        let bs = encode(&symbols, &t).unwrap();
        let wire = bs.to_wire();
        // Cut the wire form short: parsing alone must reject it.
        assert!(matches!(
            Bitstream::from_wire(&wire[..wire.len() - 3]),
            Err(CodecError::Truncated { .. })
        ));
    }

    #[test]
    fn carry_chains_round_trip() {
        // A long run of the most probable symbol after an improbable one
        // drives `low` to the carry boundary repeatedly.
        let t = CdfTable::from_pmfs(&[(0, vec![0.999, 0.001])]).unwrap();
        let mut symbols = vec![1i32];
        symbols.extend(std::iter::repeat(0).take(3000));
        symbols.push(1);
        let bs = encode(&symbols, &t).unwrap();
        assert_eq!(decode(&bs, &t, symbols.len()).unwrap(), symbols);
    }
}
