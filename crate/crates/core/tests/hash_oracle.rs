use std::path::Path;
use std::process::Command;

use heif_forensics::fixtures::{build_detailed, random_spec, BuiltFixture, FixtureSpec};
use heif_forensics::integrity::{hash_file, hash_item, DigestSet};
use heif_forensics::semantics::ParsedFile;

/// Runs `tool` (md5sum and friends) on `path` and returns the hex digest.
fn coreutils(tool: &str, path: &Path) -> String {
    let out = Command::new(tool)
        .arg(path)
        .output()
        .expect("coreutils hashing tool on PATH");
    assert!(out.status.success(), "{tool} failed");
    String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}

fn check(dir: &Path, name: &str, data: &[u8], got: &DigestSet) {
    let path = dir.join(name);
    std::fs::write(&path, data).unwrap();
    assert_eq!(got.md5_hex(), coreutils("md5sum", &path), "{name} md5");
    assert_eq!(got.sha1_hex(), coreutils("sha1sum", &path), "{name} sha1");
    assert_eq!(got.sha256_hex(), coreutils("sha256sum", &path), "{name} sha256");
    assert_eq!(got.byte_count, data.len() as u64);
}

/// Multi-extent items laid out back to front, so physical order and logical
/// order disagree.
fn reversed_extents(seed: u64) -> FixtureSpec {
    let mut spec = FixtureSpec::burst(3).with_seed(seed);
    for (k, it) in spec.items.iter_mut().enumerate() {
        *it = it.clone().payload_len(200 + k * 37).extents(3 + k as u16);
        it.reverse_extents = true;
    }
    spec
}

fn oracle_fixture(dir: &Path, tag: &str, built: &BuiltFixture) -> usize {
    let model = ParsedFile::parse(&built.bytes).model;
    check(dir, &format!("{tag}_file"), &built.bytes, &hash_file(&built.bytes));
    let mut multi = 0;
    for item in &built.items {
        if item.extents.is_empty() {
            continue;
        }
        let concat: Vec<u8> = item
            .extents
            .iter()
            .flat_map(|e| built.bytes[e.start as usize..e.end as usize].iter().copied())
            .collect();
        assert_eq!(concat, item.payload, "builder extents disagree with payload");
        let got = hash_item(&model, &built.bytes, item.id).unwrap();
        check(dir, &format!("{tag}_item{}", item.id), &concat, &got);
        if item.extents.len() > 1 {
            multi += 1;
            let mut physical = item.extents.clone();
            physical.sort_by_key(|e| e.start);
            if physical != item.extents {
                let wrong: Vec<u8> = physical
                    .iter()
                    .flat_map(|e| built.bytes[e.start as usize..e.end as usize].iter().copied())
                    .collect();
                if wrong != concat {
                    assert_ne!(hash_file(&wrong).sha256, got.sha256, "digest follows physical order");
                }
            }
        }
    }
    multi
}

#[test]
fn item_and_file_digests_match_coreutils() {
    let dir = tempfile::tempdir().unwrap();
    let mut multi = 0;
    for seed in 0..40 {
        let built = build_detailed(&random_spec(seed)).unwrap();
        multi += oracle_fixture(dir.path(), &format!("r{seed}"), &built);
    }
    for seed in 0..10 {
        let built = build_detailed(&reversed_extents(seed)).unwrap();
        multi += oracle_fixture(dir.path(), &format!("x{seed}"), &built);
    }
    assert!(multi >= 30, "only {multi} multi-extent items exercised");
}
