//! Forensic findings derived from a parsed file.
//!
//! Everything here is a pure function of its inputs; findings come out in a
//! fixed category order and, within a category, in file order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boxes::{compute_coverage, BoxTree, CoverageMap, TreeIssue};
use crate::fourcc::FourCC;
use crate::semantics::{DrefScope, FileModel, HeifKind, ModelIssue, ParsedFile};

pub const DEFAULT_SLACK_THRESHOLD: u64 = 8;
const PREVIEW_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Notice,
    Warning,
    Alert,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Notice => "notice",
            Severity::Warning => "warning",
            Severity::Alert => "alert",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown severity {0:?} (expected info, notice, warning or alert)")]
pub struct ParseSeverityError(String);

impl FromStr for Severity {
    type Err = ParseSeverityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "info" => Ok(Severity::Info),
            "notice" => Ok(Severity::Notice),
            "warning" => Ok(Severity::Warning),
            "alert" => Ok(Severity::Alert),
            _ => Err(ParseSeverityError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    HiddenItem,
    HiddenTiles,
    HiddenCover,
    DisabledTrack,
    ExternalDataRef,
    ExtMismatch,
    SlackRegion,
    NonPictHandler,
    MissingPrimary,
    DanglingRef,
    InfeVersion,
    DepthLimit,
    ExtentOutOfFile,
    OrphanLocation,
    MalformedBox,
    MalformedEntry,
    AmbiguousRole,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::HiddenItem => "HIDDEN_ITEM",
            FindingCode::HiddenTiles => "HIDDEN_TILES",
            FindingCode::HiddenCover => "HIDDEN_COVER",
            FindingCode::DisabledTrack => "DISABLED_TRACK",
            FindingCode::ExternalDataRef => "EXTERNAL_DATA_REF",
            FindingCode::ExtMismatch => "EXT_MISMATCH",
            FindingCode::SlackRegion => "SLACK_REGION",
            FindingCode::NonPictHandler => "NON_PICT_HANDLER",
            FindingCode::MissingPrimary => "MISSING_PRIMARY",
            FindingCode::DanglingRef => "DANGLING_REF",
            FindingCode::InfeVersion => "INFE_VERSION",
            FindingCode::DepthLimit => "DEPTH_LIMIT",
            FindingCode::ExtentOutOfFile => "EXTENT_OUT_OF_FILE",
            FindingCode::OrphanLocation => "ORPHAN_LOCATION",
            FindingCode::MalformedBox => "MALFORMED_BOX",
            FindingCode::MalformedEntry => "MALFORMED_ENTRY",
            FindingCode::AmbiguousRole => "AMBIGUOUS_ROLE",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub offset: Option<u64>,
    pub length: Option<u64>,
    pub item_id: Option<u32>,
    pub track_id: Option<u32>,
}

impl Location {
    pub fn is_empty(&self) -> bool {
        self.offset.is_none() && self.item_id.is_none() && self.track_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    pub location: Location,
    pub message: String,
    pub detail: BTreeMap<String, String>,
}

impl Finding {
    fn new(code: FindingCode, severity: Severity, location: Location, message: String) -> Self {
        let location = if location.is_empty() {
            Location {
                offset: Some(0),
                ..location
            }
        } else {
            location
        };
        Finding {
            code,
            severity,
            location,
            message,
            detail: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.detail.insert(key.to_string(), value.to_string());
        self
    }
}

fn at_item(item_id: u32, offset: u64) -> Location {
    Location {
        offset: Some(offset),
        item_id: Some(item_id),
        ..Default::default()
    }
}

fn at_offset(offset: u64) -> Location {
    Location {
        offset: Some(offset),
        ..Default::default()
    }
}

fn join_ids(ids: impl IntoIterator<Item = u32>) -> String {
    ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// Roles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataKind {
    Exif,
    Xmp,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", content = "kind", rename_all = "snake_case")]
pub enum Role {
    Master,
    DerivedGrid,
    DerivedOverlay,
    DerivedIdentity,
    Thumbnail,
    Auxiliary,
    Metadata(MetadataKind),
    Unknown,
}

impl Role {
    pub fn is_displayable(self) -> bool {
        matches!(
            self,
            Role::Master | Role::DerivedGrid | Role::DerivedOverlay | Role::DerivedIdentity
        )
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Master => f.write_str("master"),
            Role::DerivedGrid => f.write_str("derived-grid"),
            Role::DerivedOverlay => f.write_str("derived-overlay"),
            Role::DerivedIdentity => f.write_str("derived-identity"),
            Role::Thumbnail => f.write_str("thumbnail"),
            Role::Auxiliary => f.write_str("auxiliary"),
            Role::Metadata(MetadataKind::Exif) => f.write_str("metadata-exif"),
            Role::Metadata(MetadataKind::Xmp) => f.write_str("metadata-xmp"),
            Role::Metadata(MetadataKind::Other) => f.write_str("metadata"),
            Role::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRole {
    pub item_id: u32,
    pub role: Role,
    pub primary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub ref_type: FourCC,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationGraph {
    pub nodes: Vec<u32>,
    /// One edge per (reference, target) pair, in file order.
    pub edges: Vec<Edge>,
}

impl DerivationGraph {
    pub fn from_model(model: &FileModel) -> Self {
        DerivationGraph {
            nodes: model.items.iter().map(|i| i.item_id).collect(),
            edges: model
                .references
                .iter()
                .flat_map(|r| {
                    r.to_items.iter().map(|&to| Edge {
                        ref_type: r.ref_type,
                        from: r.from_item,
                        to,
                    })
                })
                .collect(),
        }
    }

    pub fn sources_of(&self, ref_type: &[u8; 4], from: u32) -> BTreeSet<u32> {
        self.edges
            .iter()
            .filter(|e| e.ref_type == ref_type && e.from == from)
            .map(|e| e.to)
            .collect()
    }

    fn has_outgoing(&self, ref_type: &[u8; 4], from: u32) -> bool {
        self.edges.iter().any(|e| e.ref_type == ref_type && e.from == from)
    }
}

const CODED_IMAGE_TYPES: &[&[u8; 4]] = &[b"hvc1", b"hev1", b"av01", b"avc1", b"jpeg", b"j2k1", b"vvc1", b"unci"];

pub fn classify_items(model: &FileModel) -> (Vec<ItemRole>, DerivationGraph, Vec<Finding>) {
    let graph = DerivationGraph::from_model(model);
    let mut findings = Vec::new();
    let roles = model
        .items
        .iter()
        .map(|item| {
            let ty = item.item_type;
            let id = item.item_id;
            let role = if graph.has_outgoing(b"thmb", id) {
                Role::Thumbnail
            } else if graph.has_outgoing(b"auxl", id) || item.has_property(b"auxC") {
                Role::Auxiliary
            } else if ty == b"grid" {
                Role::DerivedGrid
            } else if ty == b"iovl" {
                Role::DerivedOverlay
            } else if ty == b"iden" {
                Role::DerivedIdentity
            } else if ty == b"Exif" {
                Role::Metadata(MetadataKind::Exif)
            } else if ty == b"mime"
                && item
                    .content_type
                    .as_deref()
                    .is_some_and(|c| c.eq_ignore_ascii_case("application/rdf+xml"))
            {
                Role::Metadata(MetadataKind::Xmp)
            } else if ty == b"mime" || ty == b"mint" || ty == b"uri " || graph.has_outgoing(b"cdsc", id) {
                Role::Metadata(MetadataKind::Other)
            } else if CODED_IMAGE_TYPES.iter().any(|t| ty == *t) {
                Role::Master
            } else {
                findings.push(
                    Finding::new(
                        FindingCode::AmbiguousRole,
                        Severity::Info,
                        at_item(id, item.infe_offset),
                        format!("item {id} of type '{ty}' matches no known role"),
                    )
                    .with("item_type", ty),
                );
                Role::Unknown
            };
            ItemRole {
                item_id: id,
                role,
                primary: model.primary_item == Some(id),
            }
        })
        .collect();
    (roles, graph, findings)
}

// ---------------------------------------------------------------------------
// Hidden content

pub fn find_hidden_content(model: &FileModel) -> Vec<Finding> {
    let graph = DerivationGraph::from_model(model);
    let mut out = Vec::new();
    let hidden: Vec<_> = model.items.iter().filter(|i| i.hidden).collect();

    if let Some((grid, tiles)) = tile_pattern(model, &graph) {
        let grid_item = model.item(grid).expect("grid id comes from the model");
        out.push(
            Finding::new(
                FindingCode::HiddenTiles,
                Severity::Info,
                at_item(grid, grid_item.infe_offset),
                format!(
                    "{} hidden 'hvc1' tiles all feed visible grid item {grid}; expected tiling layout",
                    tiles.len()
                ),
            )
            .with("tile_count", tiles.len())
            .with("tile_ids", join_ids(tiles.iter().copied())),
        );
    } else {
        for item in &hidden {
            out.push(
                Finding::new(
                    FindingCode::HiddenItem,
                    Severity::Alert,
                    Location {
                        offset: Some(item.infe_flags_offset),
                        length: Some(3),
                        item_id: Some(item.item_id),
                        track_id: None,
                    },
                    format!(
                        "item {} ('{}') is flagged hidden; flags byte at offset {} holds 0x{:02x}",
                        item.item_id,
                        item.item_type,
                        item.infe_flags_offset + 2,
                        item.infe_flags & 0xff
                    ),
                )
                .with("item_type", item.item_type)
                .with("infe_offset", item.infe_offset)
                .with("flags_byte_offset", item.infe_flags_offset + 2)
                .with("infe_flags", format!("0x{:06x}", item.infe_flags))
                .with("data_length", item.total_length()),
            );
        }
    }

    if let Some(cover) = model.primary_item.and_then(|p| model.item(p)).filter(|i| i.hidden) {
        out.push(
            Finding::new(
                FindingCode::HiddenCover,
                Severity::Notice,
                at_item(cover.item_id, cover.infe_flags_offset),
                format!(
                    "primary item {} is flagged hidden, which the format does not permit",
                    cover.item_id
                ),
            )
            .with("flags_byte_offset", cover.infe_flags_offset + 2),
        );
    }

    for t in model.tracks.iter().filter(|t| !t.enabled) {
        out.push(
            Finding::new(
                FindingCode::DisabledTrack,
                Severity::Warning,
                Location {
                    offset: Some(t.tkhd_flags_offset),
                    length: Some(3),
                    item_id: None,
                    track_id: Some(t.track_id),
                },
                format!(
                    "track {} is disabled (tkhd flags 0x{:06x} at offset {})",
                    t.track_id, t.tkhd_flags, t.tkhd_flags_offset
                ),
            )
            .with("tkhd_flags", format!("0x{:06x}", t.tkhd_flags))
            .with("in_presentation", t.in_presentation)
            .with("in_preview", t.in_preview)
            .with("sample_count", t.sample_count),
        );
    }
    out
}

/// The tiling layout: every hidden item is an 'hvc1' dimg source of one
/// visible 'grid' item, all of whose (two or more) sources are hidden.
fn tile_pattern(model: &FileModel, graph: &DerivationGraph) -> Option<(u32, BTreeSet<u32>)> {
    let hidden: BTreeSet<u32> = model.items.iter().filter(|i| i.hidden).map(|i| i.item_id).collect();
    if hidden.is_empty() {
        return None;
    }
    if !hidden
        .iter()
        .all(|&id| model.item(id).is_some_and(|i| i.item_type == b"hvc1"))
    {
        return None;
    }
    model
        .items
        .iter()
        .filter(|g| g.item_type == b"grid" && !g.hidden)
        .find_map(|g| {
            let sources = graph.sources_of(b"dimg", g.item_id);
            (sources.len() >= 2 && sources == hidden).then_some((g.item_id, sources))
        })
}

// ---------------------------------------------------------------------------
// External references

pub fn find_external_references(model: &FileModel) -> Vec<Finding> {
    let mut out = Vec::new();
    for d in model.data_references.iter().filter(|d| d.is_external()) {
        let users: Vec<u32> = match d.scope {
            DrefScope::Meta => model
                .items
                .iter()
                .filter(|i| {
                    i.location
                        .as_ref()
                        .is_some_and(|l| u32::from(l.data_reference_index) == d.index)
                })
                .map(|i| i.item_id)
                .collect(),
            DrefScope::Track(_) => Vec::new(),
        };
        let (severity, scope_text, track_id) = match d.scope {
            DrefScope::Meta if users.is_empty() => (Severity::Notice, "meta (declared but unused)".to_string(), None),
            DrefScope::Meta => (Severity::Alert, "meta".to_string(), None),
            DrefScope::Track(t) => (Severity::Alert, format!("track {t}"), Some(t)),
        };
        let target = if d.name.is_empty() {
            d.location.clone()
        } else {
            format!("{} {}", d.name, d.location).trim().to_string()
        };
        let mut f = Finding::new(
            FindingCode::ExternalDataRef,
            severity,
            Location {
                offset: Some(d.offset),
                length: None,
                item_id: users.first().copied(),
                track_id,
            },
            format!(
                "data reference {} ('{}') points outside the file: {target}",
                d.index, d.entry_type
            ),
        )
        .with("dref_index", d.index)
        .with("entry_type", d.entry_type)
        .with("location", &d.location)
        .with("scope", scope_text)
        .with("items", join_ids(users.iter().copied()));
        if !d.name.is_empty() {
            f = f.with("name", &d.name);
        }
        out.push(f);
    }
    out
}

// ---------------------------------------------------------------------------
// Extension consistency

/// Kinds each extension family may legitimately carry.
fn extension_kinds(ext: &str) -> Option<&'static [HeifKind]> {
    Some(match ext {
        "heic" => &[HeifKind::StillHevc],
        "heics" => &[HeifKind::SequenceHevc],
        "heif" | "hif" => &[HeifKind::StillAnyCodec, HeifKind::StillHevc],
        "heifs" => &[HeifKind::SequenceAnyCodec, HeifKind::SequenceHevc],
        "avci" => &[HeifKind::StillAnyCodec],
        "avcs" => &[HeifKind::SequenceAnyCodec],
        _ => return None,
    })
}

pub fn check_extension_consistency(filename: Option<&str>, kind: HeifKind) -> Vec<Finding> {
    let Some(name) = filename else {
        return Vec::new();
    };
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let ext = base
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    let mismatch = match extension_kinds(&ext) {
        Some(kinds) => !kinds.contains(&kind),
        None => kind.is_heif(),
    };
    if !mismatch {
        return Vec::new();
    }
    let shown = if ext.is_empty() {
        "(none)".to_string()
    } else {
        format!(".{ext}")
    };
    vec![Finding::new(
        FindingCode::ExtMismatch,
        Severity::Warning,
        at_offset(0),
        format!("extension {shown} does not match content classified as {kind:?}"),
    )
    .with("extension", shown)
    .with("kind", format!("{kind:?}"))]
}

// ---------------------------------------------------------------------------
// Unreferenced regions

pub fn find_unreferenced_regions(bytes: &[u8], tree: &BoxTree, coverage: &CoverageMap, threshold: u64) -> Vec<Finding> {
    let trailing_start = tree.parsed_end();
    coverage
        .unreferenced()
        .into_iter()
        .filter_map(|span| {
            let in_truncated = tree.walk().into_iter().any(|n| n.truncated && n.span().contains(&span));
            let trailing = span.end == coverage.file_len && (span.start >= trailing_start || in_truncated);
            if !trailing && span.len() < threshold {
                return None;
            }
            let preview_end = span.start.saturating_add(PREVIEW_LEN as u64).min(span.end);
            let preview = bytes
                .get(span.start as usize..preview_end as usize)
                .map(hex::encode)
                .unwrap_or_default();
            let enclosing = tree
                .walk()
                .into_iter()
                .rev()
                .find(|n| n.span().contains(&span))
                .map(|n| n.fourcc().to_string());
            let place = match (&enclosing, trailing) {
                (_, true) => "after the last box".to_string(),
                (Some(b), _) => format!("inside '{b}'"),
                (None, _) => "between boxes".to_string(),
            };
            let mut f = Finding::new(
                FindingCode::SlackRegion,
                Severity::Warning,
                Location {
                    offset: Some(span.start),
                    length: Some(span.len()),
                    ..Default::default()
                },
                format!("{} unreferenced bytes at offset {} {place}", span.len(), span.start),
            )
            .with("preview_hex", preview)
            .with("trailing", trailing);
            if let Some(b) = enclosing {
                f = f.with("enclosing_box", b);
            }
            Some(f)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Structure

pub fn verify_structure_expectations(model: &FileModel, tree: &BoxTree, roles: &[ItemRole]) -> Vec<Finding> {
    let mut out = Vec::new();

    for d in &tree.diagnostics {
        let (code, severity) = match d.issue {
            TreeIssue::DepthLimit => (FindingCode::DepthLimit, Severity::Notice),
            TreeIssue::TrailingBytes => continue,
            _ => (FindingCode::MalformedBox, Severity::Notice),
        };
        out.push(
            Finding::new(code, severity, at_offset(d.offset), d.message.clone())
                .with("issue", format!("{:?}", d.issue)),
        );
    }

    if model.kind.is_heif() {
        match model.handler {
            Some(h) if h != b"pict" => out.push(
                Finding::new(
                    FindingCode::NonPictHandler,
                    Severity::Notice,
                    at_offset(0),
                    format!("meta handler is '{h}', not 'pict'"),
                )
                .with("handler", h),
            ),
            None => out.push(Finding::new(
                FindingCode::NonPictHandler,
                Severity::Notice,
                at_offset(0),
                "no meta handler present".into(),
            )),
            _ => {}
        }
    }

    let displayable = roles.iter().filter(|r| r.role.is_displayable()).count();
    if model.primary_item.is_none() && displayable > 1 {
        out.push(
            Finding::new(
                FindingCode::MissingPrimary,
                Severity::Notice,
                at_offset(0),
                format!("no primary item declared among {displayable} displayable items"),
            )
            .with("displayable_items", displayable),
        );
    }

    for d in &model.diagnostics {
        let (code, severity) = match d.issue {
            ModelIssue::DanglingPrimary | ModelIssue::DanglingReference => {
                (FindingCode::DanglingRef, Severity::Warning)
            }
            ModelIssue::UnknownInfeVersion => (FindingCode::InfeVersion, Severity::Notice),
            ModelIssue::ExtentOutOfFile => (FindingCode::ExtentOutOfFile, Severity::Warning),
            ModelIssue::LocationWithoutItem => (FindingCode::OrphanLocation, Severity::Notice),
            ModelIssue::TruncatedEntry
            | ModelIssue::BadFieldWidth
            | ModelIssue::DuplicateItemId
            | ModelIssue::ItemCountMismatch
            | ModelIssue::PropertyIndexOutOfRange
            | ModelIssue::EmptyDref
            | ModelIssue::SelfContainedWithLocation
            | ModelIssue::MissingIdat
            | ModelIssue::UnsupportedConstruction
            | ModelIssue::MultipleMeta
            | ModelIssue::FtypNotFirst => (FindingCode::MalformedEntry, Severity::Notice),
            ModelIssue::MissingFtyp
            | ModelIssue::MissingMeta
            | ModelIssue::MissingHandler
            | ModelIssue::NonPictHandler => continue,
        };
        let location = Location {
            offset: d.offset,
            item_id: d.item_id,
            ..Default::default()
        };
        out.push(Finding::new(code, severity, location, d.message.clone()).with("issue", format!("{:?}", d.issue)));
    }
    out
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerOptions {
    pub slack_threshold: u64,
    pub filename: Option<String>,
}

impl Default for AnalyzerOptions {
    fn default() -> Self {
        AnalyzerOptions {
            slack_threshold: DEFAULT_SLACK_THRESHOLD,
            filename: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    pub roles: Vec<ItemRole>,
    pub graph: DerivationGraph,
    pub coverage: CoverageMap,
    pub findings: Vec<Finding>,
}

impl Analysis {
    pub fn role_of(&self, item_id: u32) -> Option<&ItemRole> {
        self.roles.iter().find(|r| r.item_id == item_id)
    }

    pub fn max_severity(&self) -> Option<Severity> {
        self.findings.iter().map(|f| f.severity).max()
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }
}

pub fn analyze(parsed: &ParsedFile, bytes: &[u8], opts: &AnalyzerOptions) -> Analysis {
    let model = &parsed.model;
    let coverage = compute_coverage(&parsed.tree, model.referenced_spans());
    let (roles, graph, role_findings) = classify_items(model);
    let mut findings = verify_structure_expectations(model, &parsed.tree, &roles);
    findings.extend(find_hidden_content(model));
    findings.extend(find_external_references(model));
    findings.extend(check_extension_consistency(opts.filename.as_deref(), model.kind));
    findings.extend(find_unreferenced_regions(
        bytes,
        &parsed.tree,
        &coverage,
        opts.slack_threshold,
    ));
    findings.extend(role_findings);
    Analysis {
        roles,
        graph,
        coverage,
        findings,
    }
}
