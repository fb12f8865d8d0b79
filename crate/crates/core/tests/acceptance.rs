//! Runs every named check and prints one verdict line per criterion.
//!
//! The perturbative-scaling criterion asks for a cubic error law, but for a
//! single-cosine potential the cubic term vanishes identically and the
//! measured slope is 4. That criterion is listed in `KNOWN_RED`: its line
//! still prints FAIL, and the test asserts that nothing else fails and that
//! the known red really is red, so a change in either direction is noticed.

use std::io::Write;

use heatkern::verify;

const KNOWN_RED: &[&str] = &["perturbative_scaling"];

#[test]
fn acceptance() {
    let results = verify::run_all();
    // written to the raw handle so the report shows even when output is captured
    let mut err = std::io::stderr().lock();
    let mut report = String::from("\n");
    for r in &results {
        report += &format!("{r} ({:.1} s)\n", r.seconds);
        for m in &r.measurements {
            match &m.limit {
                Some(l) => report += &format!("      {} = {:.6e} ({l})\n", m.label, m.value),
                None => report += &format!("      {} = {:.6e}\n", m.label, m.value),
            }
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let passed = results.len() - failed.len();
    report += &format!("{passed}/{} criteria pass; failing: {failed:?}\n", results.len());
    err.write_all(report.as_bytes()).unwrap();
    drop(err);
    let unexpected: Vec<_> = failed.iter().filter(|n| !KNOWN_RED.contains(n)).collect();
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
    let recovered: Vec<_> = KNOWN_RED.iter().filter(|n| !failed.contains(n)).collect();
    assert!(recovered.is_empty(), "known-red criteria now pass, update KNOWN_RED: {recovered:?}");
}
