//! One line per acceptance criterion; the target fails if any criterion does.

use std::io::Write;

use impactlab::verify::{format_report, verify, Fault, VerifyOptions};

#[test]
fn acceptance() {
    let results = verify(&VerifyOptions::default());
    // straight to stdout so the report shows even when output is captured
    let mut out = std::io::stdout().lock();
    let _ = write!(out, "\n{}", format_report(&results));
    let _ = out.flush();
    assert_eq!(results.len(), 8);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn injected_sign_flip_fails_family_collapse() {
    let results = verify(&VerifyOptions {
        filter: Some("family-collapse".into()),
        fault: Some(Fault::FlipRelativeReachability),
    });
    print!("{}", format_report(&results));
    assert_eq!(results.len(), 1);
    assert!(!results[0].passed);
}
