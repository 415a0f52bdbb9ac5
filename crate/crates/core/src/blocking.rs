//! Soundex phonetic blocking.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::record::Database;

/// Code assigned to values with no ASCII letters.
pub const EMPTY_SOUNDEX: &str = "Z000";

fn digit(c: char) -> Option<u8> {
    match c {
        'B' | 'F' | 'P' | 'V' => Some(1),
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => Some(2),
        'D' | 'T' => Some(3),
        'L' => Some(4),
        'M' | 'N' => Some(5),
        'R' => Some(6),
        _ => None,
    }
}

/// American Soundex. `H` and `W` do not separate equal codes; vowels and `Y` do.
pub fn soundex(value: &str) -> String {
    let letters: Vec<char> = value
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let Some(&first) = letters.first() else {
        return EMPTY_SOUNDEX.to_string();
    };
    let mut code = String::with_capacity(4);
    code.push(first);
    let mut last = digit(first);
    for &c in &letters[1..] {
        if code.len() == 4 {
            break;
        }
        match c {
            'H' | 'W' => {}
            'A' | 'E' | 'I' | 'O' | 'U' | 'Y' => last = None,
            _ => {
                let d = digit(c);
                if d != last {
                    if let Some(d) = d {
                        code.push(char::from(b'0' + d));
                    }
                }
                last = d;
            }
        }
    }
    while code.len() < 4 {
        code.push('0');
    }
    code
}

/// Blocking key value: the concatenated Soundex codes of the given values.
pub fn blocking_key<S: AsRef<str>>(values: &[S]) -> String {
    values.iter().map(|v| soundex(v.as_ref())).collect()
}

/// Block key value to the record ids in that block.
pub type BlockIndex = BTreeMap<String, Vec<String>>;

pub fn build_blocks<S: AsRef<str>>(db: &Database, blocking_attrs: &[S]) -> Result<BlockIndex> {
    let idx = db.attr_indices(blocking_attrs)?;
    let mut index = BlockIndex::new();
    for r in db.records() {
        let bkv = blocking_key(&db.project(r, &idx));
        index.entry(bkv).or_default().push(r.rid.clone());
    }
    Ok(index)
}

/// Sorted block keys present in every index.
pub fn common_blocks(indexes: &[&BlockIndex]) -> Vec<String> {
    common_keys(indexes.iter().map(|i| i.keys()))
}

pub(crate) fn common_keys<'a, I, K>(key_sets: I) -> Vec<String>
where
    I: IntoIterator<Item = K>,
    K: IntoIterator<Item = &'a String>,
{
    let mut iter = key_sets.into_iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut acc: BTreeSet<&String> = first.into_iter().collect();
    for keys in iter {
        let next: BTreeSet<&String> = keys.into_iter().collect();
        acc.retain(|k| next.contains(k));
    }
    acc.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Record;

    #[test]
    fn soundex_reference_codes() {
        for (name, code) in [
            ("robert", "R163"),
            ("rupert", "R163"),
            ("Rubin", "R150"),
            ("Ashcraft", "A261"),
            ("Ashcroft", "A261"),
            ("Tymczak", "T522"),
            ("Pfister", "P236"),
            ("Honeyman", "H555"),
            ("smith", "S530"),
            ("smyth", "S530"),
            ("Lee", "L000"),
            ("O'Brien", "O165"),
            ("", "Z000"),
            ("1234", "Z000"),
        ] {
            assert_eq!(soundex(name), code, "{name}");
        }
    }

    fn db(rows: &[(&str, &str)]) -> Database {
        Database::new(
            ["surname"],
            rows.iter().map(|(rid, s)| Record::new(*rid, [*s])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_keys_form_one_block() {
        let d = db(&[("a", "smith"), ("b", "smith"), ("c", "smith")]);
        let idx = build_blocks(&d, &["surname"]).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx["S530"].len(), 3);
    }

    #[test]
    fn blocks_partition_records() {
        let d = db(&[("a", "smith"), ("b", "jones"), ("c", "smyth"), ("d", ""), ("e", "johns")]);
        let idx = build_blocks(&d, &["surname"]).unwrap();
        let mut all: Vec<&String> = idx.values().flatten().collect();
        all.sort();
        assert_eq!(all, ["a", "b", "c", "d", "e"]);
        assert_eq!(idx["Z000"], ["d"]);
        assert!(build_blocks(&d, &["given_name"]).is_err());
    }

    #[test]
    fn running_example_block_shape() {
        let p1 = db(&[("RA1", "smith"), ("RA2", "smyth")]);
        let p2 = db(&[("RB1", "smithe"), ("RB2", "smith")]);
        let p3 = db(&[("RC1", "smith"), ("RC2", "jones")]);
        let idx: Vec<BlockIndex> = [p1, p2, p3].iter().map(|d| build_blocks(d, &["surname"]).unwrap()).collect();
        let common = common_blocks(&idx.iter().collect::<Vec<_>>());
        assert_eq!(common, ["S530"]);
        assert_eq!(idx[2]["J520"], ["RC2"]);
    }

    #[test]
    fn intersections() {
        let mk = |keys: &[&str]| -> BlockIndex { keys.iter().map(|k| (k.to_string(), vec![])).collect() };
        let (a, b, c) = (mk(&["a", "b", "c"]), mk(&["b", "c", "d"]), mk(&["c", "b"]));
        assert_eq!(common_blocks(&[&a, &b, &c]), ["b", "c"]);
        assert_eq!(common_blocks(&[&a, &a]), ["a", "b", "c"]);
        assert!(common_blocks(&[&a, &mk(&["x"])]).is_empty());
    }
}
