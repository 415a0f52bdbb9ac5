//! Ring passes over the message bus: survivor reconciliation after
//! filtering, secure summation, and the result broadcast.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::securesum::{add_own, init_masked, key_diff, unmask, Counts, RandomOffsets};

use super::bus::MessageBus;
use super::message::{Message, ResultBatch, SurvivorSet};

/// Intersects the surviving candidate keys of all parties: one pass
/// `p_1 -> ... -> p_P -> p_1`, then `p_1` broadcasts the result.
/// Returns the agreed key set as seen by each party.
pub fn reconcile_survivors(survivors: &[Vec<u64>], bus: &MessageBus) -> Result<Vec<Vec<u64>>> {
    const STEP: &str = "reconcile";
    let p = survivors.len();
    bus.send(0, 1, &Message::Survivors(SurvivorSet { hops: 1, keys: survivors[0].clone() }))?;
    for (t, own) in survivors.iter().enumerate().skip(1) {
        let (_, msg) = bus.expect(t, STEP)?;
        let Message::Survivors(mut set) = msg else {
            return Err(Error::protocol(STEP, "expected a survivor set"));
        };
        let mine: BTreeSet<u64> = own.iter().copied().collect();
        set.keys.retain(|k| mine.contains(k));
        set.hops += 1;
        bus.send(t, (t + 1) % p, &Message::Survivors(set))?;
    }
    let (_, msg) = bus.expect(0, STEP)?;
    let Message::Survivors(agreed) = msg else {
        return Err(Error::protocol(STEP, "expected a survivor set"));
    };
    if agreed.hops as usize != p {
        return Err(Error::protocol(STEP, format!("survivor set made {} hops", agreed.hops)));
    }
    for t in 1..p {
        bus.send(0, t, &Message::Survivors(agreed.clone()))?;
    }
    let mut views = vec![agreed.keys.clone()];
    for t in 1..p {
        let (_, msg) = bus.expect(t, STEP)?;
        let Message::Survivors(set) = msg else {
            return Err(Error::protocol(STEP, "expected a survivor set"));
        };
        views.push(set.keys);
    }
    Ok(views)
}

/// Keeps only counts whose key is in `keep` (both sorted).
pub fn restrict(counts: &[Counts], keep: &[u64]) -> Vec<Counts> {
    let keep: BTreeSet<u64> = keep.iter().copied().collect();
    counts.iter().filter(|c| keep.contains(&c.key)).copied().collect()
}

/// Unmasked sums for one shard, held by its initiator.
#[derive(Clone, Debug)]
pub struct ShardSums {
    pub initiator: usize,
    pub sums: Vec<Counts>,
}

/// Secure summation of every party's counts around the ring.
///
/// Without rotation `p_1` initiates for all candidates. With rotation the
/// candidates are sharded by `key mod P` and party `s` initiates shard `s`,
/// the ring running `s -> s+1 -> ... -> s`.
pub fn run_secure_sum(per_party: &[Vec<Counts>], bus: &MessageBus, seed: u64, rotate: bool) -> Result<Vec<ShardSums>> {
    const STEP: &str = "secure-sum";
    let p = per_party.len();
    if p != bus.parties() {
        return Err(Error::protocol(STEP, "party count does not match bus"));
    }
    let reference: Vec<u64> = per_party[0].iter().map(|c| c.key).collect();
    for (i, own) in per_party.iter().enumerate().skip(1) {
        let keys: Vec<u64> = own.iter().map(|c| c.key).collect();
        if keys != reference {
            return Err(Error::protocol(
                STEP,
                format!("party {} vs party 1: {}", i + 1, key_diff(&keys, &reference)),
            ));
        }
    }
    let shards: Vec<usize> = if rotate { (0..p).collect() } else { vec![0] };
    let mut out = Vec::with_capacity(shards.len());
    for &s in &shards {
        let shard_of = |c: &&Counts| !rotate || (c.key % p as u64) as usize == s;
        let own: Vec<Counts> = per_party[s].iter().filter(shard_of).copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5ec0_0000 + s as u64);
        let offsets = RandomOffsets::generate(own.iter().map(|c| c.key), &mut rng);
        bus.send(s, (s + 1) % p, &Message::Masked(init_masked(&own, &offsets)?))?;
        for hop in 1..p {
            let t = (s + hop) % p;
            let (from, msg) = bus.expect(t, STEP)?;
            let Message::Masked(token) = msg else {
                return Err(Error::protocol(STEP, "expected a masked vector"));
            };
            if from != (t + p - 1) % p {
                return Err(Error::protocol(STEP, format!("party {} heard from party {} out of turn", t + 1, from + 1)));
            }
            let mine: Vec<Counts> = per_party[t].iter().filter(shard_of).copied().collect();
            bus.send(t, (t + 1) % p, &Message::Masked(add_own(token, &mine)?))?;
        }
        let (_, msg) = bus.expect(s, STEP)?;
        let Message::Masked(token) = msg else {
            return Err(Error::protocol(STEP, "expected a masked vector"));
        };
        out.push(ShardSums {
            initiator: s,
            sums: unmask(&token, &offsets, p)?,
        });
    }
    Ok(out)
}

/// Each initiator sends its matches to every other party. Returns each
/// party's view of all matches, sorted by key.
pub fn broadcast_results(per_initiator: &[(usize, Vec<(u64, f64)>)], bus: &MessageBus) -> Result<Vec<Vec<(u64, f64)>>> {
    const STEP: &str = "classify";
    let p = bus.parties();
    let mut views: Vec<Vec<(u64, f64)>> = vec![Vec::new(); p];
    for (init, matches) in per_initiator {
        views[*init].extend(matches.iter().copied());
        for t in (0..p).filter(|t| t != init) {
            bus.send(*init, t, &Message::Results(ResultBatch { matches: matches.clone() }))?;
        }
    }
    for (t, view) in views.iter_mut().enumerate() {
        for (_, msg) in bus.drain(t)? {
            let Message::Results(batch) = msg else {
                return Err(Error::protocol(STEP, "expected match results"));
            };
            view.extend(batch.matches);
        }
        view.sort_by_key(|m| m.0);
    }
    Ok(views)
}
