use heif_forensics::analyzer::{analyze, AnalyzerOptions, Finding, FindingCode};
use heif_forensics::boxes::{compute_coverage, parse_tree, Span};
use heif_forensics::carver;
use heif_forensics::fixtures::{build, build_detailed, mutate, random_spec, verify_round_trip, FixtureSpec, Mutation};
use heif_forensics::integrity::{hash_file, hash_item};
use heif_forensics::rewriter::{reveal_hidden, RevealOptions};
use heif_forensics::semantics::ParsedFile;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unhidden(seed: u64) -> FixtureSpec {
    let mut spec = random_spec(seed);
    for it in &mut spec.items {
        it.hidden = false;
    }
    spec
}

fn findings(bytes: &[u8]) -> Vec<Finding> {
    analyze(&ParsedFile::parse(bytes), bytes, &AnalyzerOptions::default()).findings
}

/// Offsets of the three flag bytes of every infe and tkhd box.
fn flag_bytes(bytes: &[u8]) -> Vec<u64> {
    let m = ParsedFile::parse(bytes).model;
    m.items
        .iter()
        .map(|i| i.infe_flags_offset)
        .chain(m.tracks.iter().map(|t| t.tkhd_flags_offset))
        .flat_map(|o| o..o + 3)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_tree_total_on_arbitrary_bytes(data in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let tree = parse_tree(&data);
        let parsed = ParsedFile::parse(&data);
        let cov = compute_coverage(&tree, parsed.model.referenced_spans());
        let mut cursor = 0;
        for r in &cov.accounted {
            prop_assert!(r.span.start >= cursor && r.span.end <= data.len() as u64);
            cursor = r.span.end;
        }
        let accounted: u64 = cov.accounted.iter().map(|r| r.span.len()).sum();
        prop_assert_eq!(accounted + cov.unreferenced_total(), data.len() as u64);
    }

    #[test]
    fn mutated_fixtures_never_panic(seed in any::<u64>(), cut in any::<prop::sample::Index>(), flip in any::<prop::sample::Index>()) {
        let mut bytes = build(&random_spec(seed)).unwrap();
        let at = flip.index(bytes.len());
        bytes[at] ^= 0xff;
        bytes.truncate(cut.index(bytes.len() + 1));
        let _ = findings(&bytes);
        let _ = reveal_hidden(&bytes, &RevealOptions::default());
        let _ = carver::scan(&bytes[..]).unwrap();
    }

    #[test]
    fn build_is_deterministic(seed in any::<u64>()) {
        let spec = random_spec(seed);
        prop_assert_eq!(build(&spec).unwrap(), build(&spec).unwrap());
    }

    #[test]
    fn round_trip(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let built = build_detailed(&spec).unwrap();
        prop_assert_eq!(verify_round_trip(&spec, &built), Ok(()));
    }

    #[test]
    fn trailing_garbage_is_exactly_the_slack(seed in any::<u64>(), garbage in proptest::collection::vec(any::<u8>(), 1..64)) {
        let mut spec = random_spec(seed);
        spec.trailing_garbage = garbage;
        let built = build_detailed(&spec).unwrap();
        prop_assert_eq!(verify_round_trip(&spec, &built), Ok(()));
        let slack: Vec<_> = findings(&built.bytes).into_iter().filter(|f| f.code == FindingCode::SlackRegion).collect();
        let start = (built.bytes.len() - spec.trailing_garbage.len()) as u64;
        if spec.trailing_garbage.len() > 16 {
            prop_assert_eq!(slack.len(), 1);
        }
        for f in &slack {
            let at = f.location.offset.unwrap();
            prop_assert!(at >= start && at <= start + 16);
            prop_assert_eq!(at + f.location.length.unwrap(), built.bytes.len() as u64);
        }
    }

    #[test]
    fn analysis_is_deterministic(seed in any::<u64>()) {
        let bytes = build(&random_spec(seed)).unwrap();
        prop_assert_eq!(findings(&bytes), findings(&bytes));
    }

    #[test]
    fn one_flipped_bit_one_finding(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let spec = unhidden(seed);
        let bytes = build(&spec).unwrap();
        let target = spec.items[pick.index(spec.items.len())].id;
        let flipped = mutate(&bytes, &Mutation::FlipHidden(target)).unwrap();
        let before = findings(&bytes);
        let mut after = findings(&flipped);
        let added: Vec<Finding> = after
            .iter()
            .filter(|f| matches!(f.code, FindingCode::HiddenItem | FindingCode::HiddenCover))
            .cloned()
            .collect();
        prop_assert!(added.iter().any(|f| f.code == FindingCode::HiddenItem));
        prop_assert!(added.iter().all(|f| f.location.item_id == Some(target)));
        if spec.primary != Some(target) {
            prop_assert_eq!(added.len(), 1);
        }
        after.retain(|f| !added.contains(f));
        prop_assert_eq!(after, before);
    }

    #[test]
    fn reveal_only_touches_flag_fields(seed in any::<u64>(), tracks in any::<bool>()) {
        let bytes = build(&random_spec(seed)).unwrap();
        let opts = RevealOptions { also_enable_tracks: tracks, ..Default::default() };
        let out = reveal_hidden(&bytes, &opts).unwrap();
        prop_assert_eq!(out.output.len(), bytes.len());
        let allowed = flag_bytes(&bytes);
        for (i, (a, b)) in bytes.iter().zip(&out.output).enumerate() {
            if a != b {
                prop_assert!(allowed.contains(&(i as u64)));
                prop_assert_eq!(a ^ b, 0x01);
            }
        }
        let changed = bytes.iter().zip(&out.output).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, out.change_log.len());
        prop_assert!(reveal_hidden(&out.output, &opts).unwrap().nothing_to_reveal());

        let before = ParsedFile::parse(&bytes).model;
        let after = ParsedFile::parse(&out.output).model;
        prop_assert!(after.items.iter().all(|i| !i.hidden));
        for item in &before.items {
            prop_assert_eq!(
                hash_item(&before, &bytes, item.item_id).ok(),
                hash_item(&after, &out.output, item.item_id).ok()
            );
        }
        if !out.change_log.is_empty() {
            prop_assert_ne!(hash_file(&bytes), hash_file(&out.output));
        }
    }

    #[test]
    fn carving_recalls_planted_fixtures(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blob = Vec::new();
        let mut planted = Vec::new();
        for k in 0..4 {
            let gap = rng.random_range(0..3000);
            let mut noise = vec![0u8; gap];
            rng.fill(&mut noise[..]);
            blob.extend(noise);
            let bytes = build(&random_spec(seed.wrapping_add(k))).unwrap();
            planted.push((blob.len() as u64, bytes.len() as u64));
            blob.extend(bytes);
        }
        let found = carver::scan(&blob[..]).unwrap();
        for (start, _) in &planted {
            prop_assert!(found.heif.iter().any(|c| c.start == *start), "missing {}", start);
        }
        for c in found.heif.iter().chain(&found.non_heif) {
            prop_assert_eq!(&blob[c.start as usize + 4..c.start as usize + 8], b"ftyp");
        }
        for w in found.heif.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
    }
}

/// Swapping two adjacent infe boxes moves no payload byte, so item digests
/// must not change.
#[test]
fn infe_order_does_not_affect_item_digests() {
    for seed in 0..100 {
        let spec = FixtureSpec::burst(3).with_seed(seed);
        let bytes = build(&spec).unwrap();
        let tree = parse_tree(&bytes);
        let iinf = tree.root(b"meta").unwrap().child(b"iinf").unwrap();
        let a = iinf.children[0].span();
        let b = iinf.children[1].span();
        assert_eq!(a.end, b.start);
        let mut swapped = bytes.clone();
        let region: Vec<u8> = [Span::new(b.start, b.end), Span::new(a.start, a.end)]
            .iter()
            .flat_map(|s| s.slice(&bytes).unwrap().to_vec())
            .collect();
        swapped[a.start as usize..b.end as usize].copy_from_slice(&region);

        let m1 = ParsedFile::parse(&bytes).model;
        let m2 = ParsedFile::parse(&swapped).model;
        assert_eq!(m2.items[0].item_id, m1.items[1].item_id);
        for item in &m1.items {
            assert_eq!(
                hash_item(&m1, &bytes, item.item_id),
                hash_item(&m2, &swapped, item.item_id)
            );
        }
        assert_ne!(hash_file(&bytes), hash_file(&swapped));
    }
}

#[test]
fn truncation_inside_mdat_reports_extent_out_of_file() {
    let bytes = build(&FixtureSpec::burst(3)).unwrap();
    let cut = mutate(&bytes, &Mutation::TruncateAt(bytes.len() as u64 - 10)).unwrap();
    let f = findings(&cut);
    assert!(f.iter().any(|f| f.code == FindingCode::ExtentOutOfFile));
}

#[test]
fn corrupt_size_is_survivable() {
    let bytes = build(&FixtureSpec::burst(3)).unwrap();
    let bad = mutate(&bytes, &Mutation::CorruptSize(1)).unwrap();
    let parsed = ParsedFile::parse(&bad);
    assert!(!parsed.tree.diagnostics.is_empty());
    assert!(findings(&bad).iter().any(|f| f.code == FindingCode::MalformedBox));
}
