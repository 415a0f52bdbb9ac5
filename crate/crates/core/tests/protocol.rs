use mpprl::bloom::BloomParams;
use mpprl::datagen::{generate, GenSpec, Lexicons};
use mpprl::protocol::{run_linkage, LinkageOutcome, ProtocolConfig};
use mpprl::record::{Database, Record};

fn config(p: usize) -> ProtocolConfig {
    let l = BloomParams::splittable_len(500, p);
    ProtocolConfig::new(BloomParams::new(l, 20, 2, p, b"k1".to_vec(), b"k2".to_vec()).unwrap())
}

fn dataset(p: usize, n: usize, seed: u64) -> Vec<Database> {
    let mut spec = GenSpec::new(p, n);
    spec.corrupted = 0.3;
    spec.seed = seed;
    generate(&spec, &Lexicons::bundled()).unwrap().parties
}

fn summary(out: &LinkageOutcome) -> Vec<(Vec<String>, u64)> {
    let mut v: Vec<_> = out
        .evaluated
        .iter()
        .map(|m| (out.true_rids(&m.candidate), (m.dice * 1e12).round() as u64))
        .collect();
    v.sort();
    v
}

#[test]
fn identical_single_records_link_with_dice_one() {
    let dbs: Vec<Database> = (0..4)
        .map(|i| {
            Database::new(
                ["given_name", "surname", "suburb", "postcode"],
                vec![Record::new(format!("r{i}"), ["ada", "lovelace", "raleigh", "27601"])],
            )
            .unwrap()
        })
        .collect();
    let out = run_linkage(&dbs, &config(4)).unwrap();
    assert_eq!(out.matches.len(), 1);
    assert_eq!(out.matches[0].dice, 1.0);
    assert_eq!(out.true_rids(&out.matches[0].candidate), ["r0", "r1", "r2", "r3"]);
}

#[test]
fn segment_exchange_is_all_to_all() {
    for p in [3, 5] {
        let out = run_linkage(&dataset(p, 60, 1), &config(p)).unwrap();
        let seg = &out.report.bytes_by_kind["segments"];
        assert_eq!(seg.messages, (p * (p - 1)) as u64);
        assert!(out.report.messages >= seg.messages);
    }
}

#[test]
fn candidates_are_block_products_summed() {
    let out = run_linkage(&dataset(3, 200, 2), &config(3)).unwrap();
    let total: u64 = out.space.blocks().iter().map(|b| b.size()).sum();
    assert_eq!(out.report.candidates_total, total);
    assert_eq!(out.evaluated.len() as u64, total);
}

#[test]
fn rotation_and_threads_do_not_change_results() {
    let dbs = dataset(4, 150, 3);
    let base = summary(&run_linkage(&dbs, &config(4)).unwrap());
    assert!(!base.is_empty());
    for (rotate, threaded) in [(true, false), (false, true), (true, true)] {
        let mut c = config(4);
        c.rotate_initiator = rotate;
        c.threaded = threaded;
        assert_eq!(summary(&run_linkage(&dbs, &c).unwrap()), base, "rotate={rotate} threaded={threaded}");
    }
}

#[test]
fn filtering_keeps_only_a_subset_of_matches() {
    let dbs = dataset(3, 300, 4);
    let full = run_linkage(&dbs, &config(3)).unwrap();
    let mut c = config(3);
    c.segment_threshold = Some(0.8);
    let filtered = run_linkage(&dbs, &c).unwrap();
    assert!(filtered.report.candidates_after_filter <= full.report.candidates_total);
    let all: std::collections::HashSet<_> = full.matches.iter().map(|m| full.true_rids(&m.candidate)).collect();
    for m in &filtered.matches {
        assert!(all.contains(&filtered.true_rids(&m.candidate)));
    }
}
