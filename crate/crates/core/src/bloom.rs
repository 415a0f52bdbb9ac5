//! Q-gram extraction, CLK Bloom filter encoding, segmentation and the Dice
//! similarity family.
//!
//! Every q-gram of every QID value of a record is hashed into one filter of
//! `l` bits with `k` keyed hash functions built by double hashing:
//! `h_i(g) = (H1(g) + i * H2(g)) mod l` for `i` in `1..=k`, where `H1` and
//! `H2` are the first 8 bytes of HMAC-SHA256 under the two shared secrets.

use std::collections::BTreeSet;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::bits::BitVec;
use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;

/// Parameters every party agrees on before encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomParams {
    pub bit_len: usize,
    pub num_hashes: usize,
    pub gram_len: usize,
    pub parties: usize,
    pub key1: Vec<u8>,
    pub key2: Vec<u8>,
}

impl BloomParams {
    pub fn new(
        bit_len: usize,
        num_hashes: usize,
        gram_len: usize,
        parties: usize,
        key1: impl Into<Vec<u8>>,
        key2: impl Into<Vec<u8>>,
    ) -> Result<Self> {
        let p = Self {
            bit_len,
            num_hashes,
            gram_len,
            parties,
            key1: key1.into(),
            key2: key2.into(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bit_len == 0 {
            return Err(Error::InvalidParams("bit length must be positive".into()));
        }
        if self.num_hashes == 0 {
            return Err(Error::InvalidParams("need at least one hash function".into()));
        }
        if self.gram_len == 0 {
            return Err(Error::InvalidParams("gram length must be positive".into()));
        }
        if self.parties < 3 {
            return Err(Error::InvalidParams(format!(
                "at least 3 parties required, got {}",
                self.parties
            )));
        }
        if !self.bit_len.is_multiple_of(self.parties) {
            return Err(Error::InvalidParams(format!(
                "bit length {} is not divisible by party count {}",
                self.bit_len, self.parties
            )));
        }
        Ok(())
    }

    pub fn segment_len(&self) -> usize {
        self.bit_len / self.parties
    }

    /// Smallest multiple of `parties` that is at least `bit_len`.
    pub fn splittable_len(bit_len: usize, parties: usize) -> usize {
        bit_len.div_ceil(parties) * parties
    }
}

/// Distinct q-grams of one or more values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QgramSet {
    grams: BTreeSet<String>,
}

impl QgramSet {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.grams.iter().map(String::as_str)
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }

    pub fn extend(&mut self, other: QgramSet) {
        self.grams.extend(other.grams);
    }
}

/// All contiguous length-`q` substrings of the lowercased, trimmed value.
/// No padding; values shorter than `q` produce nothing.
pub fn qgrams(value: &str, q: usize) -> QgramSet {
    assert!(q >= 1, "q must be at least 1");
    let chars: Vec<char> = value.trim().to_lowercase().chars().collect();
    let grams = if chars.len() < q {
        BTreeSet::new()
    } else {
        chars.windows(q).map(|w| w.iter().collect()).collect()
    };
    QgramSet { grams }
}

/// Union of the q-grams of several QID values.
pub fn record_qgrams<S: AsRef<str>>(values: &[S], q: usize) -> QgramSet {
    let mut set = QgramSet::default();
    for v in values {
        set.extend(qgrams(v.as_ref(), q));
    }
    set
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BloomFilter {
    bits: BitVec,
    ones: u32,
}

impl BloomFilter {
    pub fn from_bits(bits: BitVec) -> Self {
        let ones = bits.count_ones();
        Self { bits, ones }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> u32 {
        self.ones
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn fill_ratio(&self) -> f64 {
        self.ones as f64 / self.len() as f64
    }
}

/// The `index`-th (1-based) of `P` equal slices of a filter.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub index: usize,
    pub bits: BitVec,
}

impl Segment {
    pub fn ones(&self) -> u32 {
        self.bits.count_ones()
    }
}

/// Keyed double-hashing encoder. Holds the HMAC states so that encoding many
/// records does not re-derive the key pads.
#[derive(Clone)]
pub struct ClkEncoder {
    params: BloomParams,
    mac1: HmacSha256,
    mac2: HmacSha256,
}

impl ClkEncoder {
    pub fn new(params: &BloomParams) -> Result<Self> {
        params.validate()?;
        let mac1 = HmacSha256::new_from_slice(&params.key1)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        let mac2 = HmacSha256::new_from_slice(&params.key2)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        Ok(Self {
            params: params.clone(),
            mac1,
            mac2,
        })
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    fn keyed(mac: &HmacSha256, gram: &str) -> u64 {
        let mut m = mac.clone();
        m.update(gram.as_bytes());
        let digest = m.finalize().into_bytes();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Bit positions `h_1(g) .. h_k(g)`, possibly with repeats.
    pub fn positions(&self, gram: &str) -> impl Iterator<Item = usize> {
        let h1 = Self::keyed(&self.mac1, gram) as u128;
        let h2 = Self::keyed(&self.mac2, gram) as u128;
        let l = self.params.bit_len as u128;
        (1..=self.params.num_hashes as u128).map(move |i| ((h1 + i * h2) % l) as usize)
    }

    pub fn encode_grams(&self, grams: &QgramSet) -> Result<BloomFilter> {
        if grams.is_empty() {
            return Err(Error::Unencodable);
        }
        let mut bits = BitVec::zeros(self.params.bit_len);
        for g in grams.iter() {
            for pos in self.positions(g) {
                bits.set(pos);
            }
        }
        Ok(BloomFilter::from_bits(bits))
    }

    pub fn encode<S: AsRef<str>>(&self, qids: &[S]) -> Result<BloomFilter> {
        self.encode_grams(&record_qgrams(qids, self.params.gram_len))
    }
}

/// One-shot CLK encoding of a record's QID values.
pub fn encode_clk<S: AsRef<str>>(qids: &[S], params: &BloomParams) -> Result<BloomFilter> {
    ClkEncoder::new(params)?.encode(qids)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Two-filter Dice: `2c / (x1 + x2)`, zero when both are empty.
pub fn dice_pair(b1: &BloomFilter, b2: &BloomFilter) -> Result<f64> {
    check_len(b1.len(), b2.len())?;
    let c = b1.bits.and_count(&b2.bits);
    Ok(dice_from_counts(2, c as u64, (b1.ones + b2.ones) as u64))
}

/// Multi-filter Dice: `P * c / sum(x_i)` with `c` the popcount of the AND of
/// all filters.
pub fn dice_multi(filters: &[BloomFilter]) -> Result<f64> {
    if filters.len() < 2 {
        return Err(Error::InvalidParams("dice_multi needs at least two filters".into()));
    }
    let mut acc = filters[0].bits.clone();
    let mut total = filters[0].ones as u64;
    for f in &filters[1..] {
        check_len(acc.len(), f.len())?;
        acc.and_assign(&f.bits);
        total += f.ones as u64;
    }
    Ok(dice_from_counts(
        filters.len(),
        acc.count_ones() as u64,
        total,
    ))
}

/// `n * common / total`, defined as 0 for an empty denominator.
pub fn dice_from_counts(n: usize, common: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        (n as u64 * common) as f64 / total as f64
    }
}

/// Splits a filter into `parties` contiguous segments, indexed from 1.
pub fn split(b: &BloomFilter, parties: usize) -> Result<Vec<Segment>> {
    if parties == 0 || !b.len().is_multiple_of(parties) {
        return Err(Error::InvalidParams(format!(
            "cannot split {} bits into {} equal segments",
            b.len(),
            parties
        )));
    }
    let seg = b.len() / parties;
    Ok((0..parties)
        .map(|i| Segment {
            index: i + 1,
            bits: b.bits.slice(i * seg, seg),
        })
        .collect())
}

/// Reassembles segments (in index order) into a filter.
pub fn concat_segments(segments: &[Segment]) -> BloomFilter {
    let mut ordered: Vec<&Segment> = segments.iter().collect();
    ordered.sort_by_key(|s| s.index);
    BloomFilter::from_bits(BitVec::concat(ordered.into_iter().map(|s| &s.bits)))
}

/// Bitwise AND of segments sharing one index.
pub fn conjunct(segments: &[Segment]) -> Result<Segment> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidParams("conjunction of no segments".into()))?;
    let mut bits = first.bits.clone();
    for s in &segments[1..] {
        if s.index != first.index {
            return Err(Error::InvalidParams(format!(
                "segment index mismatch: {} vs {}",
                first.index, s.index
            )));
        }
        check_len(bits.len(), s.bits.len())?;
        bits.and_assign(&s.bits);
    }
    Ok(Segment {
        index: first.index,
        bits,
    })
}

/// Hash count minimising the false-positive rate for `grams` elements in
/// `bit_len` bits, rounded to nearest and at least 1.
pub fn optimal_k(bit_len: usize, grams: f64) -> usize {
    assert!(bit_len > 0 && grams > 0.0);
    let k = (bit_len as f64 / grams * std::f64::consts::LN_2).round();
    (k as usize).max(1)
}

/// False-positive rate at the optimal hash count: `(1 / 2^ln2)^(l/Q)`.
pub fn false_positive_rate(bit_len: usize, grams: f64) -> f64 {
    assert!(bit_len > 0 && grams > 0.0);
    let base = 1.0 / 2f64.powf(std::f64::consts::LN_2);
    base.powf(bit_len as f64 / grams)
}
