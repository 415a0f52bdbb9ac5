//! Candidate-set enumeration and the per-party common 1-bit counts, with
//! and without segment-similarity filtering.
//!
//! Every party builds the same [`CandidateSpace`] from the pseudonyms and
//! block keys in its inbox: blocks in key order, members of each party
//! sorted by pseudonym, tuples in lexicographic order. A candidate's key is
//! its ordinal in that order, so keys agree across parties without any
//! extra communication.

use crate::bits::BitVec;
use crate::blocking::common_keys;
use crate::error::{Error, Result};
use crate::securesum::Counts;

use super::party::{Inbox, PartyState};
use super::{CandidateSet, Pseudonym};

#[derive(Clone, Debug)]
pub struct SpaceBlock {
    pub bkv: String,
    /// Key of the first candidate in this block.
    pub offset: u64,
    /// Per party, indices into `Inbox::from[p]`, sorted by pseudonym.
    pub members: Vec<Vec<usize>>,
    pub pseudonyms: Vec<Vec<Pseudonym>>,
}

impl SpaceBlock {
    pub fn size(&self) -> u64 {
        self.members.iter().map(|m| m.len() as u64).product()
    }

    fn strides(&self) -> Vec<u64> {
        let mut s = vec![1u64; self.members.len()];
        for p in (0..self.members.len().saturating_sub(1)).rev() {
            s[p] = s[p + 1] * self.members[p + 1].len() as u64;
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct CandidateSpace {
    parties: usize,
    blocks: Vec<SpaceBlock>,
    total: u64,
}

/// Block keys present in the shares of every party.
pub fn common_bkvs(inbox: &Inbox) -> Vec<String> {
    let sets: Vec<std::collections::BTreeSet<&String>> = inbox
        .from
        .iter()
        .map(|shares| shares.iter().map(|s| &s.bkv).collect())
        .collect();
    common_keys(sets.iter().map(|s| s.iter().copied()))
}

impl CandidateSpace {
    pub fn from_inbox(inbox: &Inbox, common: &[String]) -> Result<Self> {
        let parties = inbox.from.len();
        let index: std::collections::BTreeMap<&str, usize> =
            common.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut members: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); parties]; common.len()];
        for (p, shares) in inbox.from.iter().enumerate() {
            for (i, s) in shares.iter().enumerate() {
                if let Some(&b) = index.get(s.bkv.as_str()) {
                    members[b][p].push(i);
                }
            }
        }
        let mut blocks = Vec::with_capacity(common.len());
        let mut total = 0u64;
        for (bkv, mut per_party) in common.iter().zip(members) {
            for (p, m) in per_party.iter_mut().enumerate() {
                m.sort_by_key(|&i| inbox.from[p][i].pseudonym);
            }
            let pseudonyms = per_party
                .iter()
                .enumerate()
                .map(|(p, m)| m.iter().map(|&i| inbox.from[p][i].pseudonym).collect())
                .collect();
            let block = SpaceBlock {
                bkv: bkv.clone(),
                offset: total,
                members: per_party,
                pseudonyms,
            };
            let size = block
                .members
                .iter()
                .try_fold(1u64, |acc, m| acc.checked_mul(m.len() as u64));
            total = size
                .and_then(|s| total.checked_add(s))
                .ok_or_else(|| Error::protocol("candidates", "candidate count overflows 64 bits"))?;
            blocks.push(block);
        }
        Ok(Self { parties, blocks, total })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn blocks(&self) -> &[SpaceBlock] {
        &self.blocks
    }

    pub fn decode(&self, key: u64) -> Option<CandidateSet> {
        if key >= self.total {
            return None;
        }
        let b = self.blocks.partition_point(|b| b.offset <= key) - 1;
        let block = &self.blocks[b];
        let mut rest = key - block.offset;
        let members = block
            .strides()
            .iter()
            .enumerate()
            .map(|(p, &stride)| {
                let i = (rest / stride) as usize;
                rest %= stride;
                block.pseudonyms[p][i]
            })
            .collect();
        Some(CandidateSet {
            key,
            bkv: block.bkv.clone(),
            members,
        })
    }

    pub fn parties(&self) -> usize {
        self.parties
    }
}

/// Output of the local counting step at one party.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartyCounts {
    pub party: usize,
    /// Sorted by key.
    pub counts: Vec<Counts>,
    /// Full candidate sets whose conjunction was completed.
    pub comparisons: u64,
    /// Prefixes abandoned by the segment filter.
    pub pruned_prefixes: u64,
}

/// Common 1-bits `c_i` of the party's segment and its own `x_i` for every
/// candidate set in the common blocks.
pub fn compute_partial_counts(party: &PartyState, inbox: &Inbox, common: &[String]) -> Result<PartyCounts> {
    count(party, inbox, common, None)
}

/// As [`compute_partial_counts`], abandoning a prefix of parties as soon
/// as its segment similarity falls below `seg_threshold`.
pub fn compute_partial_counts_filtered(
    party: &PartyState,
    inbox: &Inbox,
    common: &[String],
    seg_threshold: f64,
) -> Result<PartyCounts> {
    if !(0.0..=1.0).contains(&seg_threshold) {
        return Err(Error::InvalidParams(format!("segment threshold {seg_threshold} outside [0, 1]")));
    }
    count(party, inbox, common, Some(seg_threshold))
}

fn count(party: &PartyState, inbox: &Inbox, common: &[String], filter: Option<f64>) -> Result<PartyCounts> {
    let me = party.index();
    let parties = inbox.from.len();
    if inbox.segment != me + 1 {
        return Err(Error::protocol(
            "partial-counts",
            format!("party {} handed the inbox for segment {}", me + 1, inbox.segment),
        ));
    }
    if parties != party.params().parties {
        return Err(Error::protocol("partial-counts", "inbox does not cover every party"));
    }
    let space = CandidateSpace::from_inbox(inbox, common)?;
    let mut out = PartyCounts {
        party: me,
        ..Default::default()
    };
    let seg_len = party.params().segment_len();
    let mut walk = Walk {
        acc: vec![BitVec::zeros(seg_len); parties],
        seg_ones: vec![0u64; parties],
        chosen: vec![0; parties],
        filter,
        out: &mut out,
    };
    for block in space.blocks() {
        if block.members.iter().any(Vec::is_empty) {
            return Err(Error::protocol("partial-counts", format!("block {} has no members for some party", block.bkv)));
        }
        let segs: Vec<Vec<(&BitVec, u64)>> = block
            .members
            .iter()
            .enumerate()
            .map(|(p, m)| {
                m.iter()
                    .map(|&i| {
                        let bits = &inbox.from[p][i].segment.bits;
                        (bits, bits.count_ones() as u64)
                    })
                    .collect()
            })
            .collect();
        let own_x = block.members[me]
            .iter()
            .map(|&i| {
                let p = inbox.from[me][i].pseudonym;
                party
                    .ones_of(&p)
                    .map(u64::from)
                    .ok_or_else(|| Error::protocol("partial-counts", format!("own record {p} not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        let strides = block.strides();
        walk.descend(0, block.offset, &segs, &strides, me, &own_x);
    }
    Ok(out)
}

struct Walk<'a> {
    acc: Vec<BitVec>,
    seg_ones: Vec<u64>,
    chosen: Vec<usize>,
    filter: Option<f64>,
    out: &'a mut PartyCounts,
}

impl Walk<'_> {
    /// Extends the current prefix with each member of party `depth`.
    fn descend(&mut self, depth: usize, key: u64, segs: &[Vec<(&BitVec, u64)>], strides: &[u64], me: usize, own_x: &[u64]) {
        let last = depth + 1 == segs.len();
        for (j, &(bits, ones)) in segs[depth].iter().enumerate() {
            if depth == 0 {
                self.acc[0].copy_from(bits);
                self.seg_ones[0] = ones;
            } else {
                let (done, rest) = self.acc.split_at_mut(depth);
                rest[0].assign_and(&done[depth - 1], bits);
                self.seg_ones[depth] = self.seg_ones[depth - 1] + ones;
            }
            let common = self.acc[depth].count_ones() as u64;
            let keep = match self.filter {
                Some(t) if depth > 0 => segment_similarity(depth + 1, common, self.seg_ones[depth]) >= t,
                _ => true,
            };
            self.chosen[depth] = j;
            let key = key + j as u64 * strides[depth];
            if last {
                self.out.comparisons += 1;
                if keep {
                    let x = own_x[if me == depth { j } else { self.chosen[me] }];
                    self.out.counts.push(Counts { key, c: common, x });
                }
            } else if keep {
                self.descend(depth + 1, key, segs, strides, me, own_x);
            } else {
                self.out.pruned_prefixes += 1;
            }
        }
    }
}

/// `n * common / total` for a prefix of `n` segments. A prefix whose
/// segments are all empty carries no evidence and is never filtered.
pub fn segment_similarity(n: usize, common: u64, total: u64) -> f64 {
    if total == 0 {
        1.0
    } else {
        (n as u64 * common) as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::{BloomFilter, BloomParams};
    use crate::protocol::bus::MessageBus;
    use crate::protocol::party::exchange_segments;
    use crate::protocol::RunId;
    use proptest::prelude::*;

    fn params(l: usize, p: usize) -> BloomParams {
        BloomParams::new(l, 2, 2, p, vec![1], vec![2]).unwrap()
    }

    fn filter(bits: &[usize], l: usize) -> BloomFilter {
        let mut v = BitVec::zeros(l);
        for &b in bits {
            v.set(b);
        }
        BloomFilter::from_bits(v)
    }

    /// `rows[p]` = (rid, bkv, filter) for party `p`.
    fn setup(params: &BloomParams, rows: Vec<Vec<(&str, &str, BloomFilter)>>) -> (Vec<PartyState>, Vec<Inbox>) {
        let parties: Vec<PartyState> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let r = r.into_iter().map(|(a, b, f)| (a.to_string(), b.to_string(), f)).collect();
                PartyState::from_filters(i, params, r, 42).unwrap()
            })
            .collect();
        let bus = MessageBus::new(RunId([0; 16]), parties.len());
        let inboxes = exchange_segments(&parties, &bus, false).unwrap();
        (parties, inboxes)
    }

    #[test]
    fn block_with_two_two_one_members_has_four_candidates() {
        let pr = params(12, 3);
        let f = || filter(&[0, 5, 9], 12);
        let (parties, inboxes) = setup(
            &pr,
            vec![
                vec![("RA1", "bk1", f()), ("RA2", "bk1", f())],
                vec![("RB1", "bk1", f()), ("RB2", "bk1", f())],
                vec![("RC1", "bk1", f()), ("RC2", "bk2", f())],
            ],
        );
        let common = common_bkvs(&inboxes[0]);
        assert_eq!(common, ["bk1"]);
        for (st, inbox) in parties.iter().zip(&inboxes) {
            let out = compute_partial_counts(st, inbox, &common).unwrap();
            assert_eq!(out.counts.len(), 4);
            assert_eq!(out.comparisons, 4);
        }
        assert_eq!(inboxes[0].len(), 6);
    }

    #[test]
    fn identical_records_count_own_segment() {
        let pr = params(12, 3);
        let f = filter(&[0, 1, 4, 6, 9, 11], 12);
        let segs = crate::bloom::split(&f, 3).unwrap();
        let (parties, inboxes) = setup(
            &pr,
            (0..3).map(|_| vec![("r", "b", f.clone())]).collect(),
        );
        for (i, (st, inbox)) in parties.iter().zip(&inboxes).enumerate() {
            let out = compute_partial_counts(st, inbox, &["b".to_string()]).unwrap();
            assert_eq!(out.counts, vec![Counts { key: 0, c: segs[i].ones() as u64, x: 6 }]);
        }
    }

    #[test]
    fn keys_decode_to_member_tuples() {
        let pr = params(12, 3);
        let f = || filter(&[2], 12);
        let (_, inboxes) = setup(
            &pr,
            vec![
                vec![("a", "x", f()), ("b", "y", f()), ("c", "y", f())],
                vec![("d", "x", f()), ("e", "y", f())],
                vec![("g", "y", f()), ("h", "y", f()), ("i", "x", f())],
            ],
        );
        let common = common_bkvs(&inboxes[1]);
        let space = CandidateSpace::from_inbox(&inboxes[1], &common).unwrap();
        assert_eq!(space.total(), 1 + 2 * 2);
        let all: Vec<CandidateSet> = (0..space.total()).map(|k| space.decode(k).unwrap()).collect();
        assert_eq!(all[0].bkv, "x");
        assert!(all[1..].iter().all(|c| c.bkv == "y"));
        let tuples: std::collections::BTreeSet<_> = all.iter().map(|c| c.members.clone()).collect();
        assert_eq!(tuples.len(), 5);
        assert!(space.decode(5).is_none());
        // the same space from another party's inbox
        let other = CandidateSpace::from_inbox(&inboxes[2], &common).unwrap();
        assert_eq!(other.decode(3), space.decode(3));
    }

    /// Three parties with 2, 2 and 3 block members; RA1 and RB2 share no
    /// bits while every other prefix stays similar.
    fn filtering_shape() -> (Vec<PartyState>, Vec<Inbox>) {
        let l = 30;
        let x: Vec<usize> = (0..30).step_by(2).collect();
        let y: Vec<usize> = (1..30).step_by(2).collect();
        let both: Vec<usize> = (0..30).collect();
        setup(
            &params(l, 3),
            vec![
                vec![("RA1", "bk", filter(&x, l)), ("RA2", "bk", filter(&both, l))],
                vec![("RB1", "bk", filter(&both, l)), ("RB2", "bk", filter(&y, l))],
                vec![("RC1", "bk", filter(&both, l)), ("RC2", "bk", filter(&both, l)), ("RC3", "bk", filter(&both, l))],
            ],
        )
    }

    #[test]
    fn pruned_prefix_drops_twelve_to_nine() {
        let (parties, inboxes) = filtering_shape();
        let common = vec!["bk".to_string()];
        for (st, inbox) in parties.iter().zip(&inboxes) {
            let full = compute_partial_counts(st, inbox, &common).unwrap();
            assert_eq!(full.comparisons, 12);
            let filtered = compute_partial_counts_filtered(st, inbox, &common, 0.5).unwrap();
            assert_eq!(filtered.comparisons, 9);
            assert_eq!(filtered.counts.len(), 9);
            assert_eq!(filtered.pruned_prefixes, 1);
            // survivors carry exactly the unfiltered counts
            for c in &filtered.counts {
                assert!(full.counts.contains(c));
            }
        }
    }

    #[test]
    fn zero_threshold_filters_nothing() {
        let (parties, inboxes) = filtering_shape();
        let common = vec!["bk".to_string()];
        for (st, inbox) in parties.iter().zip(&inboxes) {
            assert_eq!(
                compute_partial_counts_filtered(st, inbox, &common, 0.0).unwrap().counts,
                compute_partial_counts(st, inbox, &common).unwrap().counts
            );
        }
    }

    #[test]
    fn identical_filters_survive_threshold_one() {
        let f = filter(&[0, 3, 4, 8, 10], 12);
        let (parties, inboxes) = setup(
            &params(12, 3),
            (0..3).map(|_| vec![("a", "b", f.clone()), ("c", "b", f.clone())]).collect(),
        );
        for (st, inbox) in parties.iter().zip(&inboxes) {
            let out = compute_partial_counts_filtered(st, inbox, &["b".to_string()], 1.0).unwrap();
            assert_eq!(out.counts.len(), 8);
        }
    }

    #[test]
    fn rejects_wrong_inbox() {
        let (parties, inboxes) = filtering_shape();
        assert!(compute_partial_counts(&parties[0], &inboxes[1], &[]).is_err());
        assert!(compute_partial_counts_filtered(&parties[0], &inboxes[0], &[], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn summed_segments_equal_full_conjunction(
            raw in prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<bool>(), 30), 1..4), 3),
        ) {
            let l = 30;
            let rows: Vec<Vec<(&str, &str, BloomFilter)>> = raw
                .iter()
                .map(|recs| recs.iter().map(|b| ("r", "blk", BloomFilter::from_bits(BitVec::from_bools(b)))).collect())
                .collect();
            let (parties, inboxes) = setup(&params(l, 3), rows);
            let common = vec!["blk".to_string()];
            let per: Vec<PartyCounts> = parties.iter().zip(&inboxes).map(|(s, i)| compute_partial_counts(s, i, &common).unwrap()).collect();
            let space = CandidateSpace::from_inbox(&inboxes[0], &common).unwrap();
            for (n, c0) in per[0].counts.iter().enumerate() {
                let cand = space.decode(c0.key).unwrap();
                let filters: Vec<&BloomFilter> = cand.members.iter().zip(&parties).map(|(m, st)| st.filter_of(m).unwrap()).collect();
                let mut and = filters[0].bits().clone();
                for f in &filters[1..] { and.and_assign(f.bits()); }
                let c: u64 = per.iter().map(|p| p.counts[n].c).sum();
                let x: u64 = per.iter().map(|p| p.counts[n].x).sum();
                prop_assert_eq!(c, and.count_ones() as u64);
                prop_assert_eq!(x, filters.iter().map(|f| f.ones() as u64).sum::<u64>());
            }
        }
    }
}
