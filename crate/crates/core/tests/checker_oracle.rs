mod common;

use common::criteria;
use common::histories::{brute_force_linearizable, random_history, rng, stale_read_mutations};
use freestore::checker::atomicity::{linearizable, minimal_counterexample, PendingMode};

#[test]
fn checker_agrees_with_brute_force_and_catches_stale_reads() {
    criteria::checker_oracle().unwrap();
}

#[test]
fn minimal_counterexamples_are_minimal_and_still_fail() {
    let mut rng = rng(11);
    let mut seen = 0;
    for _ in 0..2000 {
        let h = random_history(&mut rng, 8);
        if brute_force_linearizable(&h) {
            continue;
        }
        seen += 1;
        let min = minimal_counterexample(&h, PendingMode::Include);
        assert!(!brute_force_linearizable(&min));
        assert!(min.ops.iter().all(|o| h.ops.contains(o)));
    }
    assert!(seen > 100);
}

#[test]
fn pending_writes_may_be_dropped() {
    let mut rng = rng(5);
    for _ in 0..2000 {
        let h = random_history(&mut rng, 8);
        if linearizable(&h, PendingMode::Exclude) {
            assert!(linearizable(&h, PendingMode::Include));
        }
    }
}

#[test]
fn mutants_come_from_linearizable_histories() {
    let mut rng = rng(9);
    let total: usize = (0..500)
        .map(|_| random_history(&mut rng, 8))
        .filter(brute_force_linearizable)
        .map(|h| stale_read_mutations(&h).len())
        .sum();
    assert!(total > 50, "only {total} mutants");
}
