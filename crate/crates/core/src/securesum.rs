//! Ring-based secure summation of per-candidate `(c, x)` counts.
//!
//! The initiator adds a private random offset pair to each of its own
//! counts, every other party adds its counts to the running masked sums, and
//! the vector returns to the initiator, who alone can remove the offsets.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Offsets are drawn uniformly from `[0, OFFSET_RANGE)`.
pub const OFFSET_RANGE: u64 = 1 << 31;

/// One party's private `(c_i, x_i)` pair for one candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub key: u64,
    pub c: u64,
    pub x: u64,
}

impl Counts {
    pub fn new(key: u64, c: u64, x: u64) -> Self {
        Self { key, c, x }
    }
}

/// Running masked sums, passed around the ring like a token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedVector {
    pub keys: Vec<u64>,
    pub sums: Vec<(u64, u64)>,
    pub hops: u32,
}

impl MaskedVector {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// The initiator's private `(R_c, R_x)` per candidate. Never serialized.
#[derive(Clone, Debug, Default)]
pub struct RandomOffsets {
    offsets: BTreeMap<u64, (u64, u64)>,
}

impl RandomOffsets {
    pub fn generate<R: Rng + ?Sized>(keys: impl IntoIterator<Item = u64>, rng: &mut R) -> Self {
        let offsets = keys
            .into_iter()
            .map(|k| (k, (rng.random_range(0..OFFSET_RANGE), rng.random_range(0..OFFSET_RANGE))))
            .collect();
        Self { offsets }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, (u64, u64))>) -> Self {
        Self {
            offsets: pairs.into_iter().collect(),
        }
    }

    pub fn zeros(keys: impl IntoIterator<Item = u64>) -> Self {
        Self::from_pairs(keys.into_iter().map(|k| (k, (0, 0))))
    }

    fn get(&self, key: u64) -> Result<(u64, u64)> {
        self.offsets
            .get(&key)
            .copied()
            .ok_or_else(|| Error::protocol("secure-sum", format!("no offset for candidate {key}")))
    }
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b)
        .ok_or_else(|| Error::protocol("secure-sum", "masked sum overflowed 64 bits"))
}

/// First hop: own counts plus the private offsets.
pub fn init_masked(own: &[Counts], offsets: &RandomOffsets) -> Result<MaskedVector> {
    let mut keys = Vec::with_capacity(own.len());
    let mut sums = Vec::with_capacity(own.len());
    for c in own {
        let (rc, rx) = offsets.get(c.key)?;
        keys.push(c.key);
        sums.push((add(rc, c.c)?, add(rx, c.x)?));
    }
    Ok(MaskedVector { keys, sums, hops: 1 })
}

/// Intermediate hop: add own counts element-wise. Key sets must agree.
pub fn add_own(mut incoming: MaskedVector, own: &[Counts]) -> Result<MaskedVector> {
    if incoming.keys.len() != own.len() || incoming.keys.iter().zip(own).any(|(k, c)| *k != c.key) {
        return Err(Error::protocol(
            "secure-sum",
            key_diff(&incoming.keys, &own.iter().map(|c| c.key).collect::<Vec<_>>()),
        ));
    }
    for (s, c) in incoming.sums.iter_mut().zip(own) {
        s.0 = add(s.0, c.c)?;
        s.1 = add(s.1, c.x)?;
    }
    incoming.hops += 1;
    Ok(incoming)
}

/// Removes the offsets once the vector has visited all `parties`.
pub fn unmask(final_vec: &MaskedVector, offsets: &RandomOffsets, parties: usize) -> Result<Vec<Counts>> {
    if final_vec.hops as usize != parties {
        return Err(Error::protocol(
            "secure-sum",
            format!("vector returned after {} hops, expected {parties}", final_vec.hops),
        ));
    }
    final_vec
        .keys
        .iter()
        .zip(&final_vec.sums)
        .map(|(&key, &(mc, mx))| {
            let (rc, rx) = offsets.get(key)?;
            let c = mc
                .checked_sub(rc)
                .ok_or_else(|| Error::protocol("secure-sum", "masked count below offset"))?;
            let x = mx
                .checked_sub(rx)
                .ok_or_else(|| Error::protocol("secure-sum", "masked count below offset"))?;
            Ok(Counts { key, c, x })
        })
        .collect()
}

/// Full ring pass over `per_party` (index 0 initiates). Used where the
/// message bus is not involved.
pub fn ring_sum(per_party: &[Vec<Counts>], offsets: &RandomOffsets) -> Result<Vec<Counts>> {
    let (first, rest) = per_party
        .split_first()
        .ok_or_else(|| Error::protocol("secure-sum", "no parties"))?;
    let mut token = init_masked(first, offsets)?;
    for own in rest {
        token = add_own(token, own)?;
    }
    unmask(&token, offsets, per_party.len())
}

pub(crate) fn key_diff(left: &[u64], right: &[u64]) -> String {
    let l: std::collections::BTreeSet<_> = left.iter().collect();
    let r: std::collections::BTreeSet<_> = right.iter().collect();
    let only_l: Vec<_> = l.difference(&r).take(8).collect();
    let only_r: Vec<_> = r.difference(&l).take(8).collect();
    format!(
        "candidate key sets diverge ({} vs {} keys); only in incoming: {:?}; only local: {:?}",
        left.len(),
        right.len(),
        only_l,
        only_r
    )
}
