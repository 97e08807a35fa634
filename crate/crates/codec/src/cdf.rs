use std::io::{Read, Write};

use crate::CodecError;

/// Frequencies per dimension always sum to exactly this (16-bit precision).
pub const FREQ_TOTAL: u32 = 1 << 16;

/// One dimension's cumulative frequencies over a contiguous signed support.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CdfDim {
    min_symbol: i32,
    /// `cum[s+1] - cum[s]` is the frequency of `min_symbol + s`;
    /// `cum[0] = 0`, `cum[last] = FREQ_TOTAL`, strictly increasing.
    cum: Vec<u32>,
}

impl CdfDim {
    fn max_symbol(&self) -> i32 {
        self.min_symbol + (self.cum.len() as i32 - 2)
    }
}

/// Per-dimension integer cumulative-frequency tables driving the range coder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    dims: Vec<CdfDim>,
}

impl CdfTable {
    /// Builds a table from one `(min_symbol, pmf)` pair per dimension.
    ///
    /// Each pmf is quantized to integer frequencies summing to exactly
    /// [`FREQ_TOTAL`] with every symbol granted at least one count, so no
    /// in-support symbol is uncodable. Quantization is deterministic:
    /// floor-then-largest-remainder with index order breaking ties.
    pub fn from_pmfs(pmfs: &[(i32, Vec<f64>)]) -> Result<Self, CodecError> {
        let mut dims = Vec::with_capacity(pmfs.len());
        for (dim, (min_symbol, pmf)) in pmfs.iter().enumerate() {
            dims.push(CdfDim {
                min_symbol: *min_symbol,
                cum: cumulative(&quantize_pmf(pmf, dim)?),
            });
        }
        Ok(CdfTable { dims })
    }

    pub fn dim_count(&self) -> usize {
        self.dims.len()
    }

    /// Support bounds `(min, max)` of a dimension.
    pub fn support(&self, dim: usize) -> (i32, i32) {
        let d = &self.dims[dim];
        (d.min_symbol, d.max_symbol())
    }

    /// Frequency of `symbol` in `dim`, if in support.
    pub fn frequency(&self, dim: usize, symbol: i32) -> Option<u32> {
        let d = &self.dims[dim];
        if symbol < d.min_symbol || symbol > d.max_symbol() {
            return None;
        }
        let s = (symbol - d.min_symbol) as usize;
        Some(d.cum[s + 1] - d.cum[s])
    }

    /// Ideal code length for one stream: Σ ⌈−log₂ p_i⌉ bits, with
    /// p_i = freq/total taken straight from the table.
    pub fn ideal_bits(&self, symbols: &[i32]) -> Result<u64, CodecError> {
        let mut bits = 0u64;
        for (i, &s) in symbols.iter().enumerate() {
            let dim = i % self.dims.len();
            let f = self
                .frequency(dim, s)
                .ok_or_else(|| self.out_of_support(dim, s))?;
            let p = f as f64 / FREQ_TOTAL as f64;
            bits += (-p.log2()).ceil() as u64;
        }
        Ok(bits)
    }

    pub(crate) fn interval(
        &self,
        dim: usize,
        symbol: i32,
    ) -> Result<(u32, u32), CodecError> {
        let d = &self.dims[dim];
        if symbol < d.min_symbol || symbol > d.max_symbol() {
            return Err(self.out_of_support(dim, symbol));
        }
        let s = (symbol - d.min_symbol) as usize;
        Ok((d.cum[s], d.cum[s + 1]))
    }

    /// Symbol whose cumulative interval contains `value` (binary search).
    pub(crate) fn locate(&self, dim: usize, value: u32) -> (i32, u32, u32) {
        let d = &self.dims[dim];
        let mut lo = 0usize;
        let mut hi = d.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if d.cum[mid] <= value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (d.min_symbol + lo as i32, d.cum[lo], d.cum[lo + 1])
    }

    fn out_of_support(&self, dim: usize, symbol: i32) -> CodecError {
        let (min, max) = self.support(dim);
        CodecError::SymbolOutOfSupport {
            symbol,
            min,
            max,
            dim,
        }
    }
}

fn quantize_pmf(pmf: &[f64], dim: usize) -> Result<Vec<u32>, CodecError> {
    let total: f64 = pmf.iter().filter(|p| p.is_finite() && **p > 0.0).sum();
    if pmf.len() < 2 || pmf.len() as u32 > FREQ_TOTAL / 2 || total <= 0.0 {
        return Err(CodecError::InvalidPmf { dim });
    }
    let budget = FREQ_TOTAL - pmf.len() as u32;
    let mut freqs = Vec::with_capacity(pmf.len());
    let mut fracs = Vec::with_capacity(pmf.len());
    let mut assigned = 0u32;
    for &p in pmf {
        let w = if p.is_finite() && p > 0.0 { p / total } else { 0.0 };
        let raw = w * budget as f64;
        let f = raw.floor() as u32;
        freqs.push(1 + f);
        fracs.push(raw - f as f64);
        assigned += f;
    }
    // Hand out the remaining counts by largest fractional part, index order
    // breaking ties, so the table is a pure function of the pmf.
    let mut order: Vec<usize> = (0..pmf.len()).collect();
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
    for &i in order.iter().take((budget - assigned) as usize) {
        freqs[i] += 1;
    }
    Ok(freqs)
}

fn cumulative(freqs: &[u32]) -> Vec<u32> {
    let mut cum = Vec::with_capacity(freqs.len() + 1);
    let mut acc = 0u32;
    cum.push(0);
    for &f in freqs {
        acc += f;
        cum.push(acc);
    }
    cum
}

const FILE_MAGIC: &[u8; 8] = b"HECSCDF1";

/// Writes a table as: magic, u32 dimension count, then per dimension an
/// i32 minimum symbol, u32 symbol count, and the 16-bit frequencies.
/// All integers big-endian.
pub fn write_cdf<W: Write>(table: &CdfTable, mut w: W) -> Result<(), CodecError> {
    w.write_all(FILE_MAGIC)?;
    w.write_all(&(table.dims.len() as u32).to_be_bytes())?;
    for d in &table.dims {
        w.write_all(&d.min_symbol.to_be_bytes())?;
        let count = d.cum.len() - 1;
        w.write_all(&(count as u32).to_be_bytes())?;
        for s in 0..count {
            let f = d.cum[s + 1] - d.cum[s];
            w.write_all(&(f as u16).to_be_bytes())?;
        }
    }
    Ok(())
}

/// Reads a table written by [`write_cdf`], validating magic, frequency
/// positivity, and per-dimension totals.
pub fn read_cdf<R: Read>(mut r: R) -> Result<CdfTable, CodecError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FILE_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let dim_count = read_u32(&mut r)?;
    let mut dims = Vec::with_capacity(dim_count as usize);
    for dim in 0..dim_count {
        let min_symbol = i32::from_be_bytes(read_array(&mut r)?);
        let count = read_u32(&mut r)?;
        if count < 2 || count > FREQ_TOTAL / 2 {
            return Err(CodecError::CorruptTable {
                reason: format!("dimension {dim}: symbol count {count}"),
            });
        }
        let mut freqs = Vec::with_capacity(count as usize);
        let mut total = 0u32;
        for s in 0..count {
            let f = u16::from_be_bytes(read_array(&mut r)?) as u32;
            if f == 0 {
                return Err(CodecError::CorruptTable {
                    reason: format!("dimension {dim}: zero frequency at symbol {s}"),
                });
            }
            total += f;
            freqs.push(f);
        }
        if total != FREQ_TOTAL {
            return Err(CodecError::CorruptTable {
                reason: format!("dimension {dim}: frequencies sum to {total}"),
            });
        }
        dims.push(CdfDim {
            min_symbol,
            cum: cumulative(&freqs),
        });
    }
    Ok(CdfTable { dims })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CodecError> {
    Ok(u32::from_be_bytes(read_array(r)?))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], CodecError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_pmf_over_four_symbols_gets_exact_quarters() {
        let t = CdfTable::from_pmfs(&[(0, vec![0.25; 4])]).unwrap();
        for s in 0..4 {
            assert_eq!(t.frequency(0, s), Some(16384));
        }
    }

    #[test]
    fn frequencies_sum_to_total_per_dimension() {
        let pmfs = vec![
            (-2, vec![0.1, 0.4, 0.3, 0.15, 0.05]),
            (0, vec![0.9, 0.0999, 1e-4]),
        ];
        let t = CdfTable::from_pmfs(&pmfs).unwrap();
        for dim in 0..t.dim_count() {
            let (min, max) = t.support(dim);
            let sum: u32 = (min..=max).map(|s| t.frequency(dim, s).unwrap()).sum();
            assert_eq!(sum, FREQ_TOTAL);
        }
    }

    #[test]
    fn symmetric_pmf_builds_symmetric_table_within_one_count() {
        let pmf: Vec<f64> = (-32..=32)
            .map(|v| (-(v as f64).powi(2) / 8.0).exp())
            .collect();
        let t = CdfTable::from_pmfs(&[(-32, pmf)]).unwrap();
        for v in 1..=32 {
            let a = t.frequency(0, v).unwrap() as i64;
            let b = t.frequency(0, -v).unwrap() as i64;
            assert!((a - b).abs() <= 1, "asymmetry at {v}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_and_negative_mass_symbols_still_get_one_count() {
        let t = CdfTable::from_pmfs(&[(0, vec![1.0, 0.0, -3.0, f64::NAN])]).unwrap();
        assert_eq!(t.frequency(0, 1), Some(1));
        assert_eq!(t.frequency(0, 2), Some(1));
        assert_eq!(t.frequency(0, 3), Some(1));
        assert_eq!(t.frequency(0, 0), Some(FREQ_TOTAL - 3));
    }

    #[test]
    fn degenerate_pmfs_are_rejected() {
        assert!(matches!(
            CdfTable::from_pmfs(&[(0, vec![1.0])]),
            Err(CodecError::InvalidPmf { dim: 0 })
        ));
        assert!(matches!(
            CdfTable::from_pmfs(&[(0, vec![0.5, 0.5]), (0, vec![0.0, 0.0])]),
            Err(CodecError::InvalidPmf { dim: 1 })
        ));
    }

    #[test]
    fn file_round_trip_is_identical() {
        let pmfs = vec![
            (-32, (0..65).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect()),
            (-1, vec![0.2, 0.5, 0.3]),
        ];
        let t = CdfTable::from_pmfs(&pmfs).unwrap();
        let mut bytes = Vec::new();
        write_cdf(&t, &mut bytes).unwrap();
        let back = read_cdf(&bytes[..]).unwrap();
        assert_eq!(t, back);

        let mut again = Vec::new();
        write_cdf(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let t = CdfTable::from_pmfs(&[(0, vec![0.5, 0.5])]).unwrap();
        let mut bytes = Vec::new();
        write_cdf(&t, &mut bytes).unwrap();

        assert!(matches!(
            read_cdf(&bytes[..bytes.len() - 1]),
            Err(CodecError::Io(_))
        ));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] ^= 0xFF;
        assert!(matches!(read_cdf(&wrong_magic[..]), Err(CodecError::BadMagic)));
        let mut bad_total = bytes.clone();
        let last = bad_total.len() - 1;
        bad_total[last] ^= 0x01;
        assert!(matches!(
            read_cdf(&bad_total[..]),
            Err(CodecError::CorruptTable { .. })
        ));
    }
}
