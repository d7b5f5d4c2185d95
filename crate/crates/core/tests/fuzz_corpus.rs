//! Replays the checked-in fuzz seeds, plus truncated and bit-flipped
//! variants, through every fuzzed entry point on the stable toolchain.

use std::fs;
use std::path::Path;

use heif_forensics::analyzer::{analyze, AnalyzerOptions};
use heif_forensics::boxes::{compute_coverage, parse_tree};
use heif_forensics::carver;
use heif_forensics::fourcc::FourCC;
use heif_forensics::integrity::{hash_item, parse_mint_payload, verify_mint};
use heif_forensics::report::Report;
use heif_forensics::rewriter::{reveal_hidden, RevealOptions};
use heif_forensics::semantics::{
    detect_heif, exif_tiff_payload, parse_dref, parse_iloc, parse_infe, parse_ipma, parse_iref, parse_property,
    parse_tkhd, DrefScope, ParsedFile,
};

fn run(target: &str, data: &[u8]) {
    match target {
        "parse_tree" => {
            let tree = parse_tree(data);
            let cov = compute_coverage(&tree, std::iter::empty());
            let accounted: u64 = cov.accounted.iter().map(|r| r.span.len()).sum();
            assert_eq!(accounted + cov.unreferenced_total(), data.len() as u64);
        }
        "detect_heif" => {
            let d = detect_heif(data);
            assert!(!d.kind.is_heif() || d.brands.is_some());
        }
        "file_model" => {
            let parsed = ParsedFile::parse(data);
            let a = analyze(&parsed, data, &AnalyzerOptions::default());
            assert_eq!(a.roles.len(), parsed.model.items.len());
            for item in &parsed.model.items {
                if let Ok(d) = hash_item(&parsed.model, data, item.item_id) {
                    assert_eq!(d.byte_count, item.total_length());
                }
            }
            let _ = verify_mint(&parsed.model, data);
        }
        "parse_iloc" => {
            let _ = parse_iloc(data, 0);
        }
        "parse_infe" => {
            if let Ok(e) = parse_infe(data, 0) {
                assert_eq!(e.hidden(), data[e.flags_offset as usize + 2] & 1 == 1);
            }
        }
        "parse_iref" => {
            let _ = parse_iref(data, 0);
        }
        "parse_dref" => {
            let _ = parse_dref(data, 0, DrefScope::Meta);
        }
        "parse_tkhd" => {
            let _ = parse_tkhd(data, 0);
        }
        "parse_ipma" => {
            let _ = parse_ipma(data, 0);
        }
        "parse_property" => {
            if data.len() >= 4 {
                let _ = parse_property(FourCC([data[0], data[1], data[2], data[3]]), &data[4..]);
            }
        }
        "carve_scan" => {
            let found = carver::scan(data).unwrap();
            for c in found.heif.iter().chain(&found.non_heif) {
                assert_eq!(&data[c.start as usize + 4..c.start as usize + 8], b"ftyp");
            }
        }
        "mint_payload" => {
            let _ = parse_mint_payload(data);
        }
        "exif_payload" => {
            let _ = exif_tiff_payload(data);
        }
        "reveal" => {
            if let Ok(out) = reveal_hidden(data, &RevealOptions::default()) {
                assert_eq!(out.output.len(), data.len());
            }
        }
        "report_json" => {
            if let Ok(Ok(r)) = std::str::from_utf8(data).map(Report::from_json) {
                assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
            }
        }
        other => panic!("corpus directory {other} has no replay arm"),
    }
}

#[test]
fn seeds_replay_cleanly() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut targets = 0;
    for dir in fs::read_dir(&root).unwrap() {
        let dir = dir.unwrap().path();
        let target = dir.file_name().unwrap().to_str().unwrap().to_string();
        let mut seeds = 0;
        for seed in fs::read_dir(&dir).unwrap() {
            let data = fs::read(seed.unwrap().path()).unwrap();
            run(&target, &data);
            for cut in [data.len() / 3, data.len() / 2, data.len().saturating_sub(1)] {
                run(&target, &data[..cut]);
            }
            for k in 0..16 {
                if data.is_empty() {
                    break;
                }
                let mut m = data.clone();
                let at = (k * 7919 + 13) % m.len();
                m[at] ^= 1 << (k % 8);
                run(&target, &m);
            }
            seeds += 1;
        }
        assert!(seeds > 0, "{target} has no seeds");
        targets += 1;
    }
    assert_eq!(targets, 15);
}
