#![no_main]

use heif_forensics::analyzer::{analyze, AnalyzerOptions};
use heif_forensics::integrity::{hash_item, verify_mint};
use heif_forensics::semantics::ParsedFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let parsed = ParsedFile::parse(data);
    let a = analyze(&parsed, data, &AnalyzerOptions::default());
    assert_eq!(a.roles.len(), parsed.model.items.len());
    for item in &parsed.model.items {
        if let Ok(d) = hash_item(&parsed.model, data, item.item_id) {
            assert_eq!(d.byte_count, item.total_length());
        }
    }
    let _ = verify_mint(&parsed.model, data);
});
