//! Wire format for everything that crosses a party boundary.
//!
//! Frame: `u32` little-endian length of the rest, then a 1-byte type tag,
//! the 16-byte run id, and the type-specific body. All integers are
//! little-endian. Segment bits are packed with bit 0 as the lowest Bloom
//! index of the segment.

use crate::bits::BitVec;
use crate::error::{Error, Result};
use crate::securesum::MaskedVector;

use super::{Pseudonym, RunId, SegmentShare};

pub const TAG_SEGMENTS: u8 = 1;
pub const TAG_MASKED: u8 = 2;
pub const TAG_RESULTS: u8 = 3;
pub const TAG_SURVIVORS: u8 = 4;

/// Fixed bytes before the body: length prefix, tag, run id.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 16;

/// All segment shares one party sends to the holder of segment `index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentBatch {
    pub index: u32,
    pub segment_len: u32,
    pub shares: Vec<SegmentShare>,
}

/// Candidate keys that survived filtering, passed around the ring and then
/// broadcast by the first party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurvivorSet {
    pub hops: u32,
    pub keys: Vec<u64>,
}

/// Matching candidate keys with their similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultBatch {
    pub matches: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Segments(SegmentBatch),
    Masked(MaskedVector),
    Results(ResultBatch),
    Survivors(SurvivorSet),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Segments(_) => TAG_SEGMENTS,
            Message::Masked(_) => TAG_MASKED,
            Message::Results(_) => TAG_RESULTS,
            Message::Survivors(_) => TAG_SURVIVORS,
        }
    }

    pub fn kind(&self) -> &'static str {
        kind_name(self.tag())
    }

    pub fn encode(&self, run: &RunId) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::Segments(b) => {
                put_u32(&mut body, b.index);
                put_u32(&mut body, b.segment_len);
                put_u32(&mut body, b.shares.len() as u32);
                for s in &b.shares {
                    encode_share(&mut body, s);
                }
            }
            Message::Masked(m) => {
                put_u32(&mut body, m.hops);
                put_u64(&mut body, m.keys.len() as u64);
                for (k, (c, x)) in m.keys.iter().zip(&m.sums) {
                    put_u64(&mut body, *k);
                    put_u64(&mut body, *c);
                    put_u64(&mut body, *x);
                }
            }
            Message::Results(r) => {
                put_u64(&mut body, r.matches.len() as u64);
                for (k, d) in &r.matches {
                    put_u64(&mut body, *k);
                    put_u64(&mut body, d.to_bits());
                }
            }
            Message::Survivors(s) => {
                put_u32(&mut body, s.hops);
                put_u64(&mut body, s.keys.len() as u64);
                for k in &s.keys {
                    put_u64(&mut body, *k);
                }
            }
        }
        let mut out = Vec::with_capacity(FRAME_OVERHEAD + body.len());
        put_u32(&mut out, (1 + 16 + body.len()) as u32);
        out.push(self.tag());
        out.extend_from_slice(&run.0);
        out.extend_from_slice(&body);
        out
    }

    /// Decodes one frame, returning the message and its run id.
    pub fn decode(bytes: &[u8]) -> Result<(RunId, Message)> {
        let mut r = Reader { buf: bytes };
        let len = r.u32()? as usize;
        if len != r.buf.len() {
            return Err(Error::Decode(format!("frame length {len}, have {}", r.buf.len())));
        }
        let tag = r.u8()?;
        let run = RunId(r.array()?);
        let msg = match tag {
            TAG_SEGMENTS => {
                let index = r.u32()?;
                let segment_len = r.u32()?;
                let n = r.u32()? as usize;
                let mut shares = Vec::with_capacity(n.min(r.buf.len()));
                for _ in 0..n {
                    shares.push(decode_share(&mut r, index as usize, segment_len as usize)?);
                }
                Message::Segments(SegmentBatch {
                    index,
                    segment_len,
                    shares,
                })
            }
            TAG_MASKED => {
                let hops = r.u32()?;
                let n = r.count(24)?;
                let mut keys = Vec::with_capacity(n);
                let mut sums = Vec::with_capacity(n);
                for _ in 0..n {
                    keys.push(r.u64()?);
                    sums.push((r.u64()?, r.u64()?));
                }
                Message::Masked(MaskedVector { keys, sums, hops })
            }
            TAG_RESULTS => {
                let n = r.count(16)?;
                let mut matches = Vec::with_capacity(n);
                for _ in 0..n {
                    matches.push((r.u64()?, f64::from_bits(r.u64()?)));
                }
                Message::Results(ResultBatch { matches })
            }
            TAG_SURVIVORS => {
                let hops = r.u32()?;
                let n = r.count(8)?;
                let keys = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
                Message::Survivors(SurvivorSet { hops, keys })
            }
            other => return Err(Error::Decode(format!("unknown message tag {other}"))),
        };
        if !r.buf.is_empty() {
            return Err(Error::Decode(format!("{} trailing bytes", r.buf.len())));
        }
        Ok((run, msg))
    }
}

pub fn kind_name(tag: u8) -> &'static str {
    match tag {
        TAG_SEGMENTS => "segments",
        TAG_MASKED => "masked_vector",
        TAG_RESULTS => "match_results",
        TAG_SURVIVORS => "survivors",
        _ => "unknown",
    }
}

/// Encoded size of one share, split into (segment bit payload, metadata).
pub fn share_size(share: &SegmentShare) -> (usize, usize) {
    (share.segment.bits.len().div_ceil(8), 16 + 2 + share.bkv.len())
}

fn encode_share(out: &mut Vec<u8>, s: &SegmentShare) {
    out.extend_from_slice(&s.pseudonym.0);
    out.extend_from_slice(&(s.bkv.len() as u16).to_le_bytes());
    out.extend_from_slice(s.bkv.as_bytes());
    out.extend_from_slice(&s.segment.bits.to_le_bytes());
}

fn decode_share(r: &mut Reader<'_>, index: usize, segment_len: usize) -> Result<SegmentShare> {
    let pseudonym = Pseudonym(r.array()?);
    let bkv_len = r.u16()? as usize;
    let bkv = String::from_utf8(r.take(bkv_len)?.to_vec())
        .map_err(|e| Error::Decode(format!("block key is not UTF-8: {e}")))?;
    let raw = r.take(segment_len.div_ceil(8))?;
    let bits = BitVec::from_le_bytes(raw, segment_len)
        .ok_or_else(|| Error::Decode("segment has bits beyond its length".into()))?;
    Ok(SegmentShare {
        pseudonym,
        bkv,
        segment: crate::bloom::Segment { index, bits },
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Decode(format!("truncated: need {n} bytes, have {}", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// Element count that must fit in the remaining buffer.
    fn count(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len()) {
            return Err(Error::Decode(format!("count {n} exceeds frame")));
        }
        Ok(n)
    }
}
