//! Synthetic multi-party datasets with controlled overlap and corruption.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::record::{Database, Record};

pub const ATTRS: [&str; 4] = ["given_name", "surname", "suburb", "postcode"];

/// Value pools records are drawn from.
#[derive(Clone, Debug)]
pub struct Lexicons {
    pub given_names: Vec<String>,
    pub surnames: Vec<String>,
    pub suburbs: Vec<String>,
    pub postcodes: Vec<String>,
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

impl Lexicons {
    /// Common US given names and surnames, North Carolina towns and
    /// five-digit postcodes 27006..=28909.
    pub fn bundled() -> Self {
        Self {
            given_names: lines(include_str!("../data/given_names.txt")),
            surnames: lines(include_str!("../data/surnames.txt")),
            suburbs: lines(include_str!("../data/suburbs.txt")),
            postcodes: (27006..=28909).map(|p: u32| p.to_string()).collect(),
        }
    }

    fn pools(&self) -> [&[String]; 4] {
        [&self.given_names, &self.surnames, &self.suburbs, &self.postcodes]
    }

    fn capacity(&self) -> f64 {
        self.pools().iter().map(|p| p.len() as f64).product()
    }
}

#[derive(Clone, Debug)]
pub struct GenSpec {
    pub parties: usize,
    pub records_per_party: usize,
    /// Fraction of each party's records that belong to entities present at
    /// every party.
    pub overlap: f64,
    /// Fraction of overlap entities whose records are corrupted at some
    /// parties.
    pub corrupted: f64,
    /// Corrupted records receive between 1 and this many edits.
    pub max_edits: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(parties: usize, records_per_party: usize) -> Self {
        Self {
            parties,
            records_per_party,
            overlap: 0.5,
            corrupted: 0.0,
            max_edits: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if self.parties < 2 {
            return bad(format!("need at least 2 parties, got {}", self.parties));
        }
        if self.records_per_party == 0 {
            return bad("records per party must be positive".into());
        }
        for (name, f) in [("overlap", self.overlap), ("corrupted", self.corrupted)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} fraction {f} outside [0, 1]"));
            }
        }
        if !(1..=3).contains(&self.max_edits) {
            return bad(format!("max edits {} outside 1..=3", self.max_edits));
        }
        Ok(())
    }

    pub fn overlap_count(&self) -> usize {
        (self.overlap * self.records_per_party as f64).round() as usize
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub parties: Vec<Database>,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn party_path(dir: &Path, party: usize) -> PathBuf {
        dir.join(format!("party{}.csv", party + 1))
    }

    pub fn truth_path(dir: &Path) -> PathBuf {
        dir.join("truth.csv")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, db) in self.parties.iter().enumerate() {
            db.save(&Self::party_path(dir, i))?;
        }
        self.truth.save(&Self::truth_path(dir))
    }

    pub fn load(dir: &Path, parties: usize) -> Result<Self> {
        let dbs = (0..parties)
            .map(|i| Database::load(&Self::party_path(dir, i)))
            .collect::<Result<Vec<_>>>()?;
        let truth = GroundTruth::load(&Self::truth_path(dir))?;
        Ok(Self { parties: dbs, truth })
    }
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const DIGITS: &[u8] = b"0123456789";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edit {
    Insert,
    Delete,
    Substitute,
    Transpose,
}

const EDITS: [Edit; 4] = [Edit::Insert, Edit::Delete, Edit::Substitute, Edit::Transpose];

/// Applies one edit in place, or returns `false` when it cannot change `chars`.
pub fn apply_edit<R: Rng + ?Sized>(chars: &mut Vec<char>, edit: Edit, rng: &mut R) -> bool {
    let alphabet = if !chars.is_empty() && chars.iter().all(char::is_ascii_digit) { DIGITS } else { LETTERS };
    let pick = |rng: &mut R| *alphabet.choose(rng).expect("alphabet") as char;
    let n = chars.len();
    match edit {
        Edit::Insert => {
            let at = rng.random_range(0..=n);
            chars.insert(at, pick(rng));
        }
        Edit::Delete => {
            if n == 0 {
                return false;
            }
            chars.remove(rng.random_range(0..n));
        }
        Edit::Substitute => {
            if n == 0 {
                return false;
            }
            let at = rng.random_range(0..n);
            let old = chars[at];
            if alphabet.iter().all(|&c| c as char == old) {
                return false;
            }
            let mut c = pick(rng);
            while c == old {
                c = pick(rng);
            }
            chars[at] = c;
        }
        Edit::Transpose => {
            let spots: Vec<usize> = (0..n.saturating_sub(1)).filter(|&i| chars[i] != chars[i + 1]).collect();
            let Some(&at) = spots.choose(rng) else {
                return false;
            };
            chars.swap(at, at + 1);
        }
    }
    true
}

/// Applies `n_ops` random character edits to `value`. Inapplicable edits
/// are redrawn, and the result always differs from the input.
pub fn corrupt<R: Rng + ?Sized>(value: &str, n_ops: usize, rng: &mut R) -> Result<String> {
    if !(1..=3).contains(&n_ops) {
        return Err(Error::Generation(format!("edit count {n_ops} outside 1..=3")));
    }
    loop {
        let mut chars: Vec<char> = value.chars().collect();
        let mut done = 0;
        while done < n_ops {
            let edit = *EDITS.choose(rng).expect("edits");
            if apply_edit(&mut chars, edit, rng) {
                done += 1;
            }
        }
        let out: String = chars.into_iter().collect();
        if out != value {
            return Ok(out);
        }
    }
}

/// Spreads `n_ops` edits over the attributes uniformly at random.
fn corrupt_record<R: Rng + ?Sized>(values: &[String], n_ops: usize, rng: &mut R) -> Result<Vec<String>> {
    let mut per_attr = vec![0usize; values.len()];
    for _ in 0..n_ops {
        per_attr[rng.random_range(0..values.len())] += 1;
    }
    values
        .iter()
        .zip(per_attr)
        .map(|(v, n)| if n == 0 { Ok(v.clone()) } else { corrupt(v, n, rng) })
        .collect()
}

/// Generates one database per party plus the ground truth.
///
/// Every overlap entity appears at all parties. For the corrupted share of
/// them, a random non-empty proper subset of parties holds an edited copy.
/// The remaining records are distinct entities held by a single party.
pub fn generate(spec: &GenSpec, lex: &Lexicons) -> Result<Dataset> {
    spec.validate()?;
    if lex.pools().iter().any(|p| p.is_empty()) {
        return Err(Error::Generation("empty lexicon".into()));
    }
    let p = spec.parties;
    let n = spec.records_per_party;
    let n_overlap = spec.overlap_count();
    let n_entities = n_overlap + p * (n - n_overlap);
    // Rejection sampling for distinct entities stays cheap below this load.
    if lex.capacity() < 4.0 * n_entities as f64 {
        return Err(Error::Generation(format!(
            "lexicons allow {} distinct records, {} entities requested",
            lex.capacity(),
            n_entities
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut seen = HashSet::with_capacity(n_entities);
    let mut entities: Vec<Vec<String>> = Vec::with_capacity(n_entities);
    while entities.len() < n_entities {
        let e: Vec<String> = lex.pools().iter().map(|pool| pool.choose(&mut rng).expect("pool").clone()).collect();
        if seen.insert(e.clone()) {
            entities.push(e);
        }
    }

    let n_corrupt = (spec.corrupted * n_overlap as f64).round() as usize;
    let mut corrupt_order: Vec<usize> = (0..n_overlap).collect();
    corrupt_order.shuffle(&mut rng);
    let mut corrupt_mask = vec![0u64; n_overlap];
    for &e in &corrupt_order[..n_corrupt] {
        let full = (1u64 << p) - 1;
        corrupt_mask[e] = rng.random_range(1..full);
    }

    // (entity index, values) per party
    let mut rows: Vec<Vec<(Option<usize>, Vec<String>)>> = vec![Vec::with_capacity(n); p];
    for (e, values) in entities[..n_overlap].iter().enumerate() {
        for (party, out) in rows.iter_mut().enumerate() {
            let v = if corrupt_mask[e] >> party & 1 == 1 {
                let ops = rng.random_range(1..=spec.max_edits);
                corrupt_record(values, ops, &mut rng)?
            } else {
                values.clone()
            };
            out.push((Some(e), v));
        }
    }
    let mut rest = entities[n_overlap..].iter();
    for out in rows.iter_mut() {
        for _ in n_overlap..n {
            out.push((None, rest.next().expect("entity count").clone()));
        }
    }

    let mut truth_rids = vec![vec![String::new(); p]; n_overlap];
    let mut parties = Vec::with_capacity(p);
    for (party, mut out) in rows.into_iter().enumerate() {
        out.shuffle(&mut rng);
        let records = out
            .into_iter()
            .enumerate()
            .map(|(i, (e, values))| {
                let rid = format!("p{}-{:06}", party + 1, i + 1);
                if let Some(e) = e {
                    truth_rids[e][party] = rid.clone();
                }
                Record::new(rid, values)
            })
            .collect();
        parties.push(Database::new(ATTRS, records)?);
    }
    let truth = GroundTruth::new(
        p,
        truth_rids.into_iter().enumerate().map(|(e, rids)| (format!("e{:06}", e + 1), rids)).collect(),
    )?;
    Ok(Dataset { parties, truth })
}
