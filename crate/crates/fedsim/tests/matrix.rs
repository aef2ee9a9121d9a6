use fedsec_core::gatekeeper::Rule;
use fedsim::matrix::{decision_table, run_forwarding, run_validation_matrix, verdicts_with_order, Axes};
use fedsim::{build_federation, Topology};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn over_the_wire_verdicts_match_the_table() {
    let fed = build_federation(Topology::canonical()).await.unwrap();
    let axes = Axes::canonical();
    let report = run_validation_matrix(&fed, &axes).await.unwrap();
    assert!(report.results.len() >= 288);
    let bad = report.disagreements();
    for r in bad.iter().take(20) {
        eprintln!("{} expected {:?}/{} got {}/{:?}", r.cell, r.expected, r.expected_status, r.status, r.rule);
    }
    assert!(bad.is_empty(), "{} disagreements", bad.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_swapped_rule_order_is_noticed() {
    let fed = build_federation(Topology::canonical()).await.unwrap();
    let axes = Axes::canonical();
    let mut order = Rule::ORDER.to_vec();
    order.swap(0, 1);
    let changed: Vec<_> = verdicts_with_order(&fed, &axes, &order)
        .unwrap()
        .into_iter()
        .filter(|(cell, got)| *got != decision_table(&fed.topology, cell))
        .collect();
    assert!(!changed.is_empty());
    // only cells breaking both swapped rules move
    for (cell, got) in &changed {
        assert_eq!(*got, Some(Rule::R2), "{cell}");
        assert_eq!(decision_table(&fed.topology, cell), Some(Rule::R1), "{cell}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn forwarded_requests_are_judged_at_the_primary() {
    let fed = build_federation(Topology::canonical()).await.unwrap();
    let results = run_forwarding(&fed, "tenant1", "jobs").await.unwrap();
    assert!(results.iter().any(|r| r.rules_allow));
    assert!(results.iter().any(|r| !r.rules_allow));
    for r in &results {
        assert_eq!(r.forwarded_status == 200, r.rules_allow, "{}", r.cell);
        assert_eq!(r.forwarded, r.direct, "{}", r.cell);
        assert!(r.hops.as_deref().is_some_and(|h| h.contains("assoc1")), "{}: {:?}", r.cell, r.hops);
    }
}
