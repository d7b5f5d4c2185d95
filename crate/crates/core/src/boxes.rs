//! Generic ISOBMFF box lexer.
//!
//! Turns a byte slice into a tree of [`BoxNode`]s with exact byte accounting.
//! Nothing here knows what a HEIF item is; semantic interpretation lives in
//! [`crate::semantics`].

use serde::{Deserialize, Serialize};

use crate::fourcc::FourCC;
use crate::reader::{be_u32, be_u64};

/// Nesting depth beyond which containers are not followed.
pub const MAX_DEPTH: u32 = 32;

/// Half-open absolute byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub fn new(start: u64, end: u64) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Slice of `bytes` covered by this span, if fully in range.
    pub fn slice<'a>(&self, bytes: &'a [u8]) -> Option<&'a [u8]> {
        let start = usize::try_from(self.start).ok()?;
        let end = usize::try_from(self.end).ok()?;
        bytes.get(start..end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxHeader {
    pub offset: u64,
    /// Size as written in the file: the 32-bit field, or the 64-bit
    /// largesize when the 32-bit field is 1. Zero means "to end of scope".
    pub declared_size: u64,
    pub fourcc: FourCC,
    pub header_len: u64,
    pub payload: Span,
    /// Extended type for `uuid` boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usertype: Option<[u8; 16]>,
}

impl BoxHeader {
    pub fn end(&self) -> u64 {
        self.payload.end
    }

    pub fn span(&self) -> Span {
        Span::new(self.offset, self.payload.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullBoxHeader {
    pub version: u8,
    /// 24-bit flags.
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoxError {
    #[error("truncated box header at offset {offset}: {available} bytes available")]
    TruncatedBox { offset: u64, available: u64 },
    #[error("box '{}' at offset {} declares end {declared_end} beyond scope end {scope_end}", clamped.fourcc, clamped.offset)]
    SizeOverflow {
        /// The header with its payload clamped to the scope end.
        clamped: BoxHeader,
        declared_end: u128,
        scope_end: u64,
    },
    #[error("box '{fourcc}' at offset {offset} declares size {size}, smaller than its header")]
    BadSize { offset: u64, fourcc: FourCC, size: u64 },
}

/// Reads one box header at `offset`, bounded by `scope_end`.
///
/// All integers are big-endian. A 32-bit size of 1 selects the 64-bit
/// largesize that follows the type; a size of 0 extends the box to
/// `scope_end`.
pub fn parse_box_header(bytes: &[u8], offset: u64, scope_end: u64) -> Result<BoxHeader, BoxError> {
    let scope_end = scope_end.min(bytes.len() as u64);
    let available = scope_end.saturating_sub(offset);
    let truncated = || BoxError::TruncatedBox { offset, available };
    if available < 8 {
        return Err(truncated());
    }
    let at = offset as usize;
    let size32 = be_u32(bytes, at).ok_or_else(truncated)?;
    let fourcc = FourCC::from_slice(&bytes[at + 4..at + 8]).unwrap();

    let mut header_len = 8u64;
    let declared_size = match size32 {
        1 => {
            if available < 16 {
                return Err(truncated());
            }
            header_len = 16;
            be_u64(bytes, at + 8).ok_or_else(truncated)?
        }
        n => u64::from(n),
    };

    let mut usertype = None;
    if fourcc == b"uuid" {
        if available < header_len + 16 {
            return Err(truncated());
        }
        let start = at + header_len as usize;
        usertype = Some(bytes[start..start + 16].try_into().unwrap());
        header_len += 16;
    }

    let payload_start = offset + header_len;
    if size32 == 0 {
        return Ok(BoxHeader {
            offset,
            declared_size,
            fourcc,
            header_len,
            payload: Span::new(payload_start, scope_end),
            usertype,
        });
    }
    if declared_size < header_len {
        return Err(BoxError::BadSize {
            offset,
            fourcc,
            size: declared_size,
        });
    }

    let declared_end = u128::from(offset) + u128::from(declared_size);
    let header = BoxHeader {
        offset,
        declared_size,
        fourcc,
        header_len,
        payload: Span::new(payload_start, (declared_end.min(u128::from(scope_end))) as u64),
        usertype,
    };
    if declared_end > u128::from(scope_end) {
        return Err(BoxError::SizeOverflow {
            clamped: header,
            declared_end,
            scope_end,
        });
    }
    Ok(header)
}

/// Box types whose payload is recursed into as a sequence of child boxes.
pub const CONTAINERS: &[&[u8; 4]] = &[
    b"meta", b"iinf", b"iprp", b"ipco", b"iref", b"dinf", b"moov", b"trak", b"mdia", b"minf", b"stbl", b"edts",
];

/// Box types that begin with a version byte and 24-bit flags.
pub const FULL_BOXES: &[&[u8; 4]] = &[
    b"meta", b"hdlr", b"pitm", b"iloc", b"iinf", b"infe", b"iref", b"ipma", b"ispe", b"pixi", b"auxC", b"dref",
    b"url ", b"urn ", b"tkhd", b"mvhd", b"mdhd", b"elst", b"stsd", b"stts", b"stss", b"stsc", b"stsz", b"stz2",
    b"stco", b"co64", b"vmhd", b"nmhd",
];

pub fn is_container(fourcc: FourCC) -> bool {
    CONTAINERS.iter().any(|c| fourcc == *c)
}

pub fn is_full_box(fourcc: FourCC) -> bool {
    FULL_BOXES.iter().any(|c| fourcc == *c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeIssue {
    Empty,
    TruncatedBox,
    SizeOverflow,
    BadSize,
    TrailingBytes,
    TruncatedPrefix,
    DepthLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDiagnostic {
    pub offset: u64,
    pub issue: TreeIssue,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxNode {
    pub header: BoxHeader,
    pub full: Option<FullBoxHeader>,
    /// Bytes between the box header and the first child (or raw payload):
    /// version/flags and, for `iinf`, the entry count.
    pub prefix_len: u64,
    pub children: Vec<BoxNode>,
    /// Payload bytes not consumed by the prefix or by children.
    pub raw_payload: Span,
    pub depth: u32,
    /// Whether the payload was parsed as child boxes.
    pub descended: bool,
    /// The declared size ran past the enclosing scope and was clamped.
    pub truncated: bool,
}

impl BoxNode {
    pub fn fourcc(&self) -> FourCC {
        self.header.fourcc
    }

    pub fn span(&self) -> Span {
        self.header.span()
    }

    /// Box header plus prefix.
    pub fn header_span(&self) -> Span {
        Span::new(self.header.offset, self.header.payload.start + self.prefix_len)
    }

    /// Payload after the version/flags field, or the whole payload for plain boxes.
    pub fn body(&self) -> Span {
        let skip = if self.full.is_some() { 4 } else { 0 };
        let start = (self.header.payload.start + skip).min(self.header.payload.end);
        Span::new(start, self.header.payload.end)
    }

    pub fn version(&self) -> u8 {
        self.full.map_or(0, |f| f.version)
    }

    pub fn flags(&self) -> u32 {
        self.full.map_or(0, |f| f.flags)
    }

    pub fn child(&self, fourcc: &[u8; 4]) -> Option<&BoxNode> {
        self.children.iter().find(|c| c.fourcc() == fourcc)
    }

    pub fn children_of<'a>(&'a self, fourcc: &'a [u8; 4]) -> impl Iterator<Item = &'a BoxNode> + 'a {
        self.children.iter().filter(move |c| c.fourcc() == fourcc)
    }

    /// Depth-first pre-order walk including `self`.
    pub fn walk(&self) -> Vec<&BoxNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxTree {
    pub file_len: u64,
    pub roots: Vec<BoxNode>,
    pub diagnostics: Vec<TreeDiagnostic>,
    /// Set when not even the first box could be formed.
    pub fatal: bool,
}

impl BoxTree {
    pub fn root(&self, fourcc: &[u8; 4]) -> Option<&BoxNode> {
        self.roots.iter().find(|r| r.fourcc() == fourcc)
    }

    /// End of the last successfully parsed top-level box.
    pub fn parsed_end(&self) -> u64 {
        self.roots.last().map_or(0, |r| r.span().end)
    }

    /// Every node, depth-first in file order.
    pub fn walk(&self) -> Vec<&BoxNode> {
        self.roots.iter().flat_map(|r| r.walk()).collect()
    }

    pub fn hit_depth_limit(&self) -> bool {
        self.diagnostics.iter().any(|d| d.issue == TreeIssue::DepthLimit)
    }
}

/// Parses a whole byte stream into a box tree.
///
/// Damage is recorded in [`BoxTree::diagnostics`] and parsing continues
/// wherever a declared size allows it. Bytes that cannot be attributed to a
/// box are left outside the tree, where coverage reports them.
pub fn parse_tree(bytes: &[u8]) -> BoxTree {
    let file_len = bytes.len() as u64;
    let mut diagnostics = Vec::new();
    if bytes.is_empty() {
        diagnostics.push(TreeDiagnostic {
            offset: 0,
            issue: TreeIssue::Empty,
            message: "empty input".into(),
        });
        return BoxTree {
            file_len,
            roots: Vec::new(),
            diagnostics,
            fatal: true,
        };
    }
    let (roots, _) = parse_scope(bytes, 0, file_len, 0, &mut diagnostics);
    let fatal = roots.is_empty();
    BoxTree {
        file_len,
        roots,
        diagnostics,
        fatal,
    }
}

fn parse_scope(bytes: &[u8], start: u64, end: u64, depth: u32, diags: &mut Vec<TreeDiagnostic>) -> (Vec<BoxNode>, u64) {
    let mut nodes = Vec::new();
    let mut pos = start;
    while pos < end {
        let mut truncated = false;
        let header = match parse_box_header(bytes, pos, end) {
            Ok(h) => h,
            Err(BoxError::SizeOverflow {
                clamped,
                declared_end,
                scope_end,
            }) => {
                diags.push(TreeDiagnostic {
                    offset: pos,
                    issue: TreeIssue::SizeOverflow,
                    message: format!(
                        "box '{}' declares end {declared_end}, scope ends at {scope_end}; clamped",
                        clamped.fourcc
                    ),
                });
                truncated = true;
                clamped
            }
            Err(e @ BoxError::TruncatedBox { .. }) => {
                let issue = if end - pos < 8 {
                    TreeIssue::TrailingBytes
                } else {
                    TreeIssue::TruncatedBox
                };
                diags.push(TreeDiagnostic {
                    offset: pos,
                    issue,
                    message: e.to_string(),
                });
                break;
            }
            Err(e @ BoxError::BadSize { .. }) => {
                diags.push(TreeDiagnostic {
                    offset: pos,
                    issue: TreeIssue::BadSize,
                    message: e.to_string(),
                });
                break;
            }
        };
        if !plausible_fourcc(header.fourcc) {
            diags.push(TreeDiagnostic {
                offset: pos,
                issue: TreeIssue::TrailingBytes,
                message: format!("{} bytes at {pos} do not start with a box header", end - pos),
            });
            break;
        }
        pos = header.end();
        let mut node = build_node(bytes, header, depth, diags);
        node.truncated = truncated;
        nodes.push(node);
    }
    (nodes, pos)
}

/// Printable ASCII, plus the 0xa9 prefix of QuickTime metadata keys.
fn plausible_fourcc(fourcc: FourCC) -> bool {
    fourcc
        .as_bytes()
        .iter()
        .all(|&b| (0x20..=0x7e).contains(&b) || b == 0xa9)
}

fn build_node(bytes: &[u8], header: BoxHeader, depth: u32, diags: &mut Vec<TreeDiagnostic>) -> BoxNode {
    let payload = header.payload;
    let fourcc = header.fourcc;
    let at = payload.start as usize;
    let avail = payload.len();

    // QuickTime-style 'meta' is a plain box whose first child follows directly.
    let quicktime_meta = fourcc == b"meta" && bytes.get(at + 4..at + 8) == Some(b"hdlr");
    let full = if is_full_box(fourcc) && !quicktime_meta && avail >= 4 {
        let word = be_u32(bytes, at).unwrap();
        Some(FullBoxHeader {
            version: (word >> 24) as u8,
            flags: word & 0x00ff_ffff,
        })
    } else {
        None
    };

    let mut wanted_prefix: u64 = if is_full_box(fourcc) && !quicktime_meta { 4 } else { 0 };
    if fourcc == b"iinf" {
        wanted_prefix += if full.map_or(0, |f| f.version) == 0 { 2 } else { 4 };
    }
    let prefix_len = wanted_prefix.min(avail);
    if prefix_len < wanted_prefix {
        diags.push(TreeDiagnostic {
            offset: header.offset,
            issue: TreeIssue::TruncatedPrefix,
            message: format!("box '{fourcc}' too short for its {wanted_prefix}-byte prefix"),
        });
    }

    let body_start = payload.start + prefix_len;
    let mut children = Vec::new();
    let mut raw_start = body_start;
    let mut descended = false;
    if is_container(fourcc) {
        if depth + 1 >= MAX_DEPTH {
            diags.push(TreeDiagnostic {
                offset: header.offset,
                issue: TreeIssue::DepthLimit,
                message: format!("container '{fourcc}' at depth {} not followed", depth + 1),
            });
        } else {
            let (kids, consumed) = parse_scope(bytes, body_start, payload.end, depth + 1, diags);
            children = kids;
            raw_start = consumed;
            descended = true;
        }
    }

    BoxNode {
        header,
        full,
        prefix_len,
        children,
        raw_payload: Span::new(raw_start, payload.end),
        depth,
        descended,
        truncated: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLabel {
    BoxHeader,
    BoxPayload,
    ItemExtent,
    SampleData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveredRange {
    pub span: Span,
    pub label: RegionLabel,
}

/// Which bytes of a file are explained by box structure or item extents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub file_len: u64,
    /// Disjoint, sorted.
    pub accounted: Vec<CoveredRange>,
}

impl CoverageMap {
    /// Complement of `accounted` within `[0, file_len)`.
    pub fn unreferenced(&self) -> Vec<Span> {
        let mut out = Vec::new();
        let mut cursor = 0;
        for r in &self.accounted {
            if r.span.start > cursor {
                out.push(Span::new(cursor, r.span.start));
            }
            cursor = cursor.max(r.span.end);
        }
        if cursor < self.file_len {
            out.push(Span::new(cursor, self.file_len));
        }
        out
    }

    pub fn unreferenced_total(&self) -> u64 {
        self.unreferenced().iter().map(Span::len).sum()
    }
}

/// Payload of these boxes is only "accounted" where an item or sample
/// extent points into it.
fn is_data_box(fourcc: FourCC) -> bool {
    fourcc == b"mdat" || fourcc == b"idat"
}

/// Builds the coverage map for a parsed tree plus resolved data extents.
///
/// Leaf payloads count as accounted, except `mdat`/`idat` payloads which are
/// accounted only where `extents` point. Bytes left over inside a container
/// after its last child, payloads of boxes whose size had to be clamped,
/// and bytes after the last top-level box stay unaccounted.
pub fn compute_coverage<I>(tree: &BoxTree, extents: I) -> CoverageMap
where
    I: IntoIterator<Item = (Span, RegionLabel)>,
{
    let file_len = tree.file_len;
    let mut ranges: Vec<CoveredRange> = Vec::new();
    for node in tree.walk() {
        ranges.push(CoveredRange {
            span: node.header_span(),
            label: RegionLabel::BoxHeader,
        });
        if !node.descended && !node.truncated && !is_data_box(node.fourcc()) {
            ranges.push(CoveredRange {
                span: node.raw_payload,
                label: RegionLabel::BoxPayload,
            });
        }
    }
    for (span, label) in extents {
        let start = span.start.min(file_len);
        let end = span.end.min(file_len);
        ranges.push(CoveredRange {
            span: Span::new(start, end.max(start)),
            label,
        });
    }
    ranges.retain(|r| !r.span.is_empty());
    ranges.sort_by_key(|r| (r.span.start, r.label, r.span.end));

    let mut accounted: Vec<CoveredRange> = Vec::new();
    let mut cursor = 0u64;
    for r in ranges {
        let start = r.span.start.max(cursor);
        if start >= r.span.end {
            continue;
        }
        let span = Span::new(start, r.span.end);
        cursor = span.end;
        match accounted.last_mut() {
            Some(last) if last.label == r.label && last.span.end == span.start => {
                last.span.end = span.end;
            }
            _ => accounted.push(CoveredRange { span, label: r.label }),
        }
    }
    CoverageMap { file_len, accounted }
}
