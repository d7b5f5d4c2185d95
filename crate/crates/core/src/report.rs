//! Serializable analysis report and the text tree view.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, AnalyzerOptions, Edge, Finding, Role};
use crate::boxes::{BoxNode, BoxTree, Span, TreeDiagnostic};
use crate::fourcc::FourCC;
use crate::integrity::{hash_file, hash_item, DigestSet, MintVerification};
use crate::rewriter::ByteChange;
use crate::semantics::{
    Brands, DataReference, HeifKind, ItemProperty, ItemRecord, ItemReference, ModelDiagnostic, ParsedFile, TrackRecord,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: String,
    pub size: u64,
    pub digests: DigestSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionInfo {
    pub kind: HeifKind,
    pub brands: Option<Brands>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemReport {
    pub item: ItemRecord,
    pub role: Role,
    pub primary: bool,
    pub digests: Option<DigestSet>,
    /// Why no digest could be computed.
    pub digest_error: Option<String>,
    /// Reserved for decoder-equipped builds; always null here.
    pub pixel_digest: Option<String>,
    pub perceptual_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub unreferenced_bytes: u64,
    pub regions: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub tool_version: String,
    pub input: InputInfo,
    pub detection: DetectionInfo,
    pub handler: Option<FourCC>,
    pub primary_item: Option<u32>,
    pub items: Vec<ItemReport>,
    pub tracks: Vec<TrackRecord>,
    pub references: Vec<ItemReference>,
    pub derivation_edges: Vec<Edge>,
    pub data_references: Vec<DataReference>,
    pub properties: Vec<ItemProperty>,
    pub findings: Vec<Finding>,
    pub coverage: CoverageSummary,
    pub mint: Vec<MintVerification>,
    pub change_log: Option<Vec<ByteChange>>,
    pub diagnostics: Vec<ModelDiagnostic>,
    pub structure_diagnostics: Vec<TreeDiagnostic>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report types serialize infallibly")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Report> {
        serde_json::from_str(text)
    }
}

/// Runs the full pipeline over one in-memory file.
pub fn build_report(path: &str, bytes: &[u8], opts: &AnalyzerOptions) -> (ParsedFile, Report) {
    let parsed = ParsedFile::parse(bytes);
    let analysis = analyze(&parsed, bytes, opts);
    let model = &parsed.model;
    let items = model
        .items
        .iter()
        .map(|item| {
            let role = analysis.role_of(item.item_id).expect("every item has a role");
            let (digests, digest_error) = match hash_item(model, bytes, item.item_id) {
                Ok(d) => (Some(d), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ItemReport {
                item: item.clone(),
                role: role.role,
                primary: role.primary,
                digests,
                digest_error,
                pixel_digest: None,
                perceptual_hash: None,
            }
        })
        .collect();
    let regions = analysis.coverage.unreferenced();
    let report = Report {
        report_version: REPORT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input: InputInfo {
            path: path.to_string(),
            size: bytes.len() as u64,
            digests: hash_file(bytes),
        },
        detection: DetectionInfo {
            kind: model.kind,
            brands: model.brands.clone(),
        },
        handler: model.handler,
        primary_item: model.primary_item,
        items,
        tracks: model.tracks.clone(),
        references: model.references.clone(),
        derivation_edges: analysis.graph.edges.clone(),
        data_references: model.data_references.clone(),
        properties: model.property_pool.clone(),
        findings: analysis.findings.clone(),
        coverage: CoverageSummary {
            unreferenced_bytes: regions.iter().map(Span::len).sum(),
            regions,
        },
        mint: crate::integrity::verify_mint(model, bytes),
        change_log: None,
        diagnostics: model.diagnostics.clone(),
        structure_diagnostics: parsed.tree.diagnostics.clone(),
    };
    (parsed, report)
}

/// Indented box listing: offset, size, fourcc and version/flags.
pub fn render_tree(tree: &BoxTree, kind: HeifKind) -> String {
    let mut out = String::new();
    if !kind.is_heif() {
        out.push_str("NOT HEIF: no recognised HEIF brand in 'ftyp'\n");
    }
    let _ = writeln!(out, "{:>12} {:>12}  box", "offset", "size");
    fn node(out: &mut String, n: &BoxNode) {
        let indent = "  ".repeat(n.depth as usize);
        let _ = write!(
            out,
            "{:>12} {:>12}  {indent}{}",
            n.header.offset,
            n.header.declared_size,
            n.fourcc()
        );
        if let Some(f) = n.full {
            let _ = write!(out, " v{} flags=0x{:06x}", f.version, f.flags);
        }
        if n.fourcc() == b"uuid" {
            if let Some(u) = n.header.usertype {
                let _ = write!(out, " {}", hex::encode(u));
            }
        }
        out.push('\n');
        for c in &n.children {
            node(out, c);
        }
    }
    for r in &tree.roots {
        node(&mut out, r);
    }
    for d in &tree.diagnostics {
        let _ = writeln!(out, "! {}: {}", d.offset, d.message);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{build, FixtureSpec, MintFraming, MintSpec};

    #[test]
    fn json_round_trip_is_byte_identical() {
        let mut spec = FixtureSpec::apple_grid(3);
        spec.mint = MintSpec::Correct {
            target: 2,
            framing: MintFraming::Tagged,
        };
        spec.items[0].hidden = true;
        let bytes = build(&spec).unwrap();
        let (_, report) = build_report("x.heic", &bytes, &AnalyzerOptions::default());
        let text = report.to_json();
        let back = Report::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn report_is_deterministic() {
        let bytes = build(&crate::fixtures::random_spec(11)).unwrap();
        let a = build_report("a", &bytes, &AnalyzerOptions::default()).1.to_json();
        let b = build_report("a", &bytes, &AnalyzerOptions::default()).1.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn tree_lists_boxes_in_order() {
        let bytes = build(&FixtureSpec::burst(2)).unwrap();
        let parsed = ParsedFile::parse(&bytes);
        let text = render_tree(&parsed.tree, parsed.model.kind);
        let names: Vec<&str> = text
            .lines()
            .skip(1)
            .filter_map(|l| l.split_whitespace().nth(2))
            .collect();
        assert_eq!(
            names,
            vec!["ftyp", "meta", "hdlr", "pitm", "iloc", "iinf", "infe", "infe", "mdat"]
        );
        assert!(text.contains("v2 flags=0x000000"));
    }

    #[test]
    fn non_heif_banner() {
        let parsed = ParsedFile::parse(b"\0\0\0\x10ftypisom\0\0\0\0");
        assert!(render_tree(&parsed.tree, parsed.model.kind).starts_with("NOT HEIF"));
    }
}
