//! Regenerates the checked-in fuzz corpus seeds from fixtures.
//!
//! `cargo run -p heif-forensics --example fuzz_seeds -- fuzz/corpus`

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use heif_forensics::analyzer::AnalyzerOptions;
use heif_forensics::boxes::parse_tree;
use heif_forensics::fixtures::{build, random_spec, FixtureSpec, MintFraming, MintSpec};
use heif_forensics::report::build_report;

/// Box payloads that seed the single-box parser targets.
const BOX_TARGETS: &[(&[u8; 4], &str)] = &[
    (b"iloc", "parse_iloc"),
    (b"infe", "parse_infe"),
    (b"iref", "parse_iref"),
    (b"dref", "parse_dref"),
    (b"tkhd", "parse_tkhd"),
    (b"ipma", "parse_ipma"),
];

const PROPERTIES: &[&[u8; 4]] = &[b"ispe", b"irot", b"imir", b"pixi", b"colr", b"auxC", b"clap"];

fn main() -> std::io::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let mut seeds: BTreeMap<&str, Vec<Vec<u8>>> = BTreeMap::new();

    let mut files: Vec<Vec<u8>> = (0..12).map(|s| build(&random_spec(s)).unwrap()).collect();
    let mut grid = FixtureSpec::apple_grid(4);
    grid.mint = MintSpec::Correct {
        target: 2,
        framing: MintFraming::Tagged,
    };
    files.push(build(&grid).unwrap());
    files.push(build(&FixtureSpec::four_masters(b"iovl")).unwrap());

    for bytes in &files {
        for name in ["parse_tree", "file_model", "detect_heif", "reveal"] {
            seeds.entry(name).or_default().push(bytes.clone());
        }
        let mut blob = vec![0u8; 100];
        blob.extend(bytes);
        blob.extend(&bytes[..bytes.len() / 2]);
        seeds.entry("carve_scan").or_default().push(blob);
        let (_, report) = build_report("seed.heic", bytes, &AnalyzerOptions::default());
        seeds
            .entry("report_json")
            .or_default()
            .push(report.to_json().into_bytes());

        let tree = parse_tree(bytes);
        for node in tree.walk() {
            let payload = node.header.payload.slice(bytes).unwrap().to_vec();
            if let Some((_, target)) = BOX_TARGETS.iter().find(|(f, _)| node.fourcc() == **f) {
                seeds.entry(target).or_default().push(payload.clone());
            }
            if PROPERTIES.iter().any(|f| node.fourcc() == **f) {
                let mut p = node.fourcc().0.to_vec();
                p.extend(&payload);
                seeds.entry("parse_property").or_default().push(p);
            }
        }
    }
    let digest = [0x5au8; 16];
    let mut tagged = b"md5 ".to_vec();
    tagged.extend(digest);
    let mut boxed = 24u32.to_be_bytes().to_vec();
    boxed.extend(b"md5i");
    boxed.extend(digest);
    seeds.insert("mint_payload", vec![digest.to_vec(), tagged, boxed]);
    let mut exif = 6u32.to_be_bytes().to_vec();
    exif.extend(b"Exif\0\0MM\0*\0\0\0\x08");
    seeds.insert("exif_payload", vec![exif, b"II*\0\x08\0\0\0".to_vec()]);

    for (target, list) in seeds {
        let dir = root.join(target);
        fs::create_dir_all(&dir)?;
        let mut list = list;
        list.sort();
        list.dedup();
        for (i, s) in list.iter().take(16).enumerate() {
            fs::write(dir.join(format!("seed_{i:02}")), s)?;
        }
        println!("{target}: {}", list.len().min(16));
    }
    Ok(())
}
