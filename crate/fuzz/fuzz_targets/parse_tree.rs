#![no_main]

use heif_forensics::boxes::{compute_coverage, parse_tree};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let tree = parse_tree(data);
    let cov = compute_coverage(&tree, std::iter::empty());
    let accounted: u64 = cov.accounted.iter().map(|r| r.span.len()).sum();
    assert_eq!(accounted + cov.unreferenced_total(), data.len() as u64);
    for node in tree.walk() {
        assert!(node.span().end <= data.len() as u64);
    }
});
