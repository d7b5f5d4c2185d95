//! HEIF interpretation of a parsed box tree.
//!
//! Everything is best effort: missing or malformed boxes become
//! [`ModelDiagnostic`]s and never abort model construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::boxes::{parse_box_header, parse_tree, BoxNode, BoxTree, RegionLabel, Span};
use crate::fourcc::FourCC;
use crate::reader::{ByteReader, Truncated};

// ---------------------------------------------------------------------------
// Brands and detection

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Brands {
    pub major: FourCC,
    pub minor_version: u32,
    /// File order, duplicates preserved.
    pub compatible: Vec<FourCC>,
}

impl Brands {
    /// Parses an `ftyp` payload. Trailing bytes that do not form a whole
    /// brand are ignored.
    pub fn parse(payload: &[u8]) -> Option<Brands> {
        let mut r = ByteReader::new(payload, 0);
        let major = r.fourcc().ok()?;
        let minor_version = r.u32().ok()?;
        let mut compatible = Vec::new();
        while let Ok(b) = r.fourcc() {
            compatible.push(b);
        }
        Some(Brands {
            major,
            minor_version,
            compatible,
        })
    }

    pub fn contains(&self, brand: &[u8; 4]) -> bool {
        self.major == brand || self.compatible.iter().any(|b| b == brand)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeifKind {
    /// `mif1`
    StillAnyCodec,
    /// `msf1`
    SequenceAnyCodec,
    /// `heic` / `heix`
    StillHevc,
    /// `hevc` / `hevx`
    SequenceHevc,
    NotHeif,
}

impl HeifKind {
    pub fn of_brand(brand: FourCC) -> HeifKind {
        match &brand.0 {
            b"mif1" => HeifKind::StillAnyCodec,
            b"msf1" => HeifKind::SequenceAnyCodec,
            b"heic" | b"heix" => HeifKind::StillHevc,
            b"hevc" | b"hevx" => HeifKind::SequenceHevc,
            _ => HeifKind::NotHeif,
        }
    }

    pub fn is_heif(self) -> bool {
        self != HeifKind::NotHeif
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, HeifKind::SequenceAnyCodec | HeifKind::SequenceHevc)
    }

    /// Major brand first, then compatible brands in file order.
    pub fn classify(brands: &Brands) -> HeifKind {
        std::iter::once(brands.major)
            .chain(brands.compatible.iter().copied())
            .map(HeifKind::of_brand)
            .find(|k| k.is_heif())
            .unwrap_or(HeifKind::NotHeif)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub kind: HeifKind,
    pub brands: Option<Brands>,
}

/// Classifies a byte stream from its first box only. File names are never
/// consulted.
pub fn detect_heif(bytes: &[u8]) -> Detection {
    let not_heif = Detection {
        kind: HeifKind::NotHeif,
        brands: None,
    };
    let Ok(header) = parse_box_header(bytes, 0, bytes.len() as u64) else {
        return not_heif;
    };
    if header.fourcc != b"ftyp" {
        return not_heif;
    }
    let Some(brands) = header.payload.slice(bytes).and_then(Brands::parse) else {
        return not_heif;
    };
    Detection {
        kind: HeifKind::classify(&brands),
        brands: Some(brands),
    }
}

// ---------------------------------------------------------------------------
// Entry-level parse errors

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EntryError {
    #[error("truncated {what} at offset {offset}")]
    TruncatedEntry { what: &'static str, offset: u64 },
    #[error("iloc field {field} has invalid width {value}")]
    BadFieldWidth {
        field: &'static str,
        value: u8,
        offset: u64,
    },
}

impl EntryError {
    fn offset(&self) -> u64 {
        match self {
            EntryError::TruncatedEntry { offset, .. } | EntryError::BadFieldWidth { offset, .. } => *offset,
        }
    }
}

trait Context<T> {
    fn ctx(self, what: &'static str) -> Result<T, EntryError>;
}

impl<T> Context<T> for Result<T, Truncated> {
    fn ctx(self, what: &'static str) -> Result<T, EntryError> {
        self.map_err(|t| EntryError::TruncatedEntry { what, offset: t.offset })
    }
}

/// Reads the version/flags word of a full box payload.
fn full_header(r: &mut ByteReader<'_>, what: &'static str) -> Result<(u8, u32), EntryError> {
    let version = r.u8().ctx(what)?;
    let flags = r.u24().ctx(what)?;
    Ok((version, flags))
}

// ---------------------------------------------------------------------------
// infe

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfeEntry {
    pub version: u8,
    pub flags: u32,
    /// Absolute offset of the 3-byte flags field.
    pub flags_offset: u64,
    pub item_id: u32,
    pub protection_index: u16,
    pub item_type: FourCC,
    pub name: String,
    pub content_type: Option<String>,
    pub content_encoding: Option<String>,
    pub uri_type: Option<String>,
}

impl InfeEntry {
    pub fn hidden(&self) -> bool {
        self.flags & 0x1 != 0
    }
}

/// Parses an `infe` full-box payload (starting at the version byte).
///
/// Versions 0 and 1 carry no item type and are reported as `mime` items.
/// Versions above 3 are read with the version 3 layout.
pub fn parse_infe(payload: &[u8], payload_offset: u64) -> Result<InfeEntry, EntryError> {
    const WHAT: &str = "infe";
    let mut r = ByteReader::new(payload, payload_offset);
    let (version, flags) = full_header(&mut r, WHAT)?;
    let mut entry = InfeEntry {
        version,
        flags,
        flags_offset: payload_offset + 1,
        item_id: 0,
        protection_index: 0,
        item_type: FourCC::new(b"mime"),
        name: String::new(),
        content_type: None,
        content_encoding: None,
        uri_type: None,
    };
    if version < 2 {
        entry.item_id = r.u16().ctx(WHAT)?.into();
        entry.protection_index = r.u16().ctx(WHAT)?;
        entry.name = r.c_string();
        entry.content_type = Some(r.c_string());
        if !r.is_empty() {
            entry.content_encoding = Some(r.c_string());
        }
        return Ok(entry);
    }
    entry.item_id = if version == 2 {
        r.u16().ctx(WHAT)?.into()
    } else {
        r.u32().ctx(WHAT)?
    };
    entry.protection_index = r.u16().ctx(WHAT)?;
    entry.item_type = r.fourcc().ctx(WHAT)?;
    entry.name = r.c_string();
    if entry.item_type == b"mime" {
        entry.content_type = Some(r.c_string());
        if !r.is_empty() {
            entry.content_encoding = Some(r.c_string());
        }
    } else if entry.item_type == b"uri " {
        entry.uri_type = Some(r.c_string());
    }
    Ok(entry)
}

// ---------------------------------------------------------------------------
// iloc

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExtent {
    pub index: Option<u64>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemLocation {
    pub item_id: u32,
    /// 0 = file offset, 1 = idat-relative, 2 = item-relative.
    pub construction_method: u8,
    pub data_reference_index: u16,
    pub base_offset: u64,
    pub extents: Vec<RawExtent>,
}

/// Parses an `iloc` full-box payload into per-item locations in file order.
pub fn parse_iloc(payload: &[u8], payload_offset: u64) -> Result<Vec<ItemLocation>, EntryError> {
    const WHAT: &str = "iloc";
    let mut r = ByteReader::new(payload, payload_offset);
    let (version, _) = full_header(&mut r, WHAT)?;
    let widths_at = r.position();
    let a = r.u8().ctx(WHAT)?;
    let b = r.u8().ctx(WHAT)?;
    let offset_size = a >> 4;
    let length_size = a & 0x0f;
    let base_offset_size = b >> 4;
    let index_size = if version == 1 || version == 2 { b & 0x0f } else { 0 };
    for (field, value) in [
        ("offset_size", offset_size),
        ("length_size", length_size),
        ("base_offset_size", base_offset_size),
        ("index_size", index_size),
    ] {
        if !matches!(value, 0 | 4 | 8) {
            return Err(EntryError::BadFieldWidth {
                field,
                value,
                offset: widths_at,
            });
        }
    }
    let item_count = if version < 2 {
        r.u16().ctx(WHAT)?.into()
    } else {
        r.u32().ctx(WHAT)?
    };
    let mut out = Vec::new();
    for _ in 0..item_count {
        let item_id = if version < 2 {
            r.u16().ctx(WHAT)?.into()
        } else {
            r.u32().ctx(WHAT)?
        };
        let construction_method = if version == 1 || version == 2 {
            (r.u16().ctx(WHAT)? & 0x0f) as u8
        } else {
            0
        };
        let data_reference_index = r.u16().ctx(WHAT)?;
        let base_offset = r.uint(base_offset_size).ctx(WHAT)?;
        let extent_count = r.u16().ctx(WHAT)?;
        let mut extents = Vec::with_capacity(usize::from(extent_count).min(r.remaining()));
        for _ in 0..extent_count {
            let index = if index_size > 0 {
                Some(r.uint(index_size).ctx(WHAT)?)
            } else {
                None
            };
            let offset = r.uint(offset_size).ctx(WHAT)?;
            let length = r.uint(length_size).ctx(WHAT)?;
            extents.push(RawExtent { index, offset, length });
        }
        out.push(ItemLocation {
            item_id,
            construction_method,
            data_reference_index,
            base_offset,
            extents,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// iref

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemReference {
    pub ref_type: FourCC,
    pub from_item: u32,
    pub to_items: Vec<u32>,
    /// Absolute offset of the reference box.
    pub offset: u64,
}

/// Parses an `iref` full-box payload. Version 0 uses 16-bit item ids,
/// version 1 uses 32-bit ids.
pub fn parse_iref(payload: &[u8], payload_offset: u64) -> Result<Vec<ItemReference>, EntryError> {
    const WHAT: &str = "iref";
    let mut r = ByteReader::new(payload, payload_offset);
    let (version, _) = full_header(&mut r, WHAT)?;
    let mut pos = 4u64;
    let end = payload.len() as u64;
    let mut out = Vec::new();
    while pos < end {
        let header = parse_box_header(payload, pos, end).map_err(|_| EntryError::TruncatedEntry {
            what: WHAT,
            offset: payload_offset + pos,
        })?;
        let body = header.payload.slice(payload).unwrap_or_default();
        let mut br = ByteReader::new(body, payload_offset + header.payload.start);
        let id = |br: &mut ByteReader<'_>| -> Result<u32, EntryError> {
            if version == 0 {
                br.u16().map(u32::from).ctx(WHAT)
            } else {
                br.u32().ctx(WHAT)
            }
        };
        let from_item = id(&mut br)?;
        let count = br.u16().ctx(WHAT)?;
        let mut to_items = Vec::with_capacity(usize::from(count).min(body.len()));
        for _ in 0..count {
            to_items.push(id(&mut br)?);
        }
        out.push(ItemReference {
            ref_type: header.fourcc,
            from_item,
            to_items,
            offset: payload_offset + header.offset,
        });
        pos = header.end();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dref

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrefScheme {
    Url,
    Urn,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrefScope {
    Meta,
    Track(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataReference {
    /// 1-based position within its `dref`.
    pub index: u32,
    pub scope: DrefScope,
    pub entry_type: FourCC,
    pub scheme: DrefScheme,
    pub flags: u32,
    pub self_contained: bool,
    /// URN name (empty for URL entries).
    pub name: String,
    /// Empty when self-contained.
    pub location: String,
    pub offset: u64,
}

impl DataReference {
    pub fn is_external(&self) -> bool {
        !self.self_contained
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrefParse {
    pub entries: Vec<DataReference>,
    /// Text found inside entries flagged self-contained, which the format
    /// says must be empty.
    pub stray_text: Vec<(u32, String)>,
    pub declared_count: u32,
}

/// Parses a `dref` full-box payload. Entries are tagged with `scope`.
pub fn parse_dref(payload: &[u8], payload_offset: u64, scope: DrefScope) -> Result<DrefParse, EntryError> {
    const WHAT: &str = "dref";
    let mut r = ByteReader::new(payload, payload_offset);
    full_header(&mut r, WHAT)?;
    let declared_count = r.u32().ctx(WHAT)?;
    let mut pos = 8u64;
    let end = payload.len() as u64;
    let mut out = DrefParse {
        entries: Vec::new(),
        stray_text: Vec::new(),
        declared_count,
    };
    let mut index = 0u32;
    while pos < end && index < declared_count {
        index += 1;
        let header = parse_box_header(payload, pos, end).map_err(|_| EntryError::TruncatedEntry {
            what: WHAT,
            offset: payload_offset + pos,
        })?;
        let body = header.payload.slice(payload).unwrap_or_default();
        let mut br = ByteReader::new(body, payload_offset + header.payload.start);
        let (_, flags) = full_header(&mut br, WHAT)?;
        let self_contained = flags & 0x1 != 0;
        let scheme = match &header.fourcc.0 {
            b"url " => DrefScheme::Url,
            b"urn " => DrefScheme::Urn,
            _ => DrefScheme::Other,
        };
        let (name, mut location) = match scheme {
            DrefScheme::Url => (String::new(), br.c_string()),
            DrefScheme::Urn => {
                let name = br.c_string();
                (name, br.c_string())
            }
            DrefScheme::Other => (String::new(), String::new()),
        };
        if self_contained && !location.is_empty() {
            out.stray_text.push((index, std::mem::take(&mut location)));
        }
        out.entries.push(DataReference {
            index,
            scope,
            entry_type: header.fourcc,
            scheme,
            flags,
            self_contained,
            name,
            location,
            offset: payload_offset + header.offset,
        });
        pos = header.end();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// tkhd

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TkhdFields {
    pub version: u8,
    pub flags: u32,
    pub flags_offset: u64,
    pub track_id: u32,
}

/// Parses a `tkhd` full-box payload; only the track id and flags are kept.
pub fn parse_tkhd(payload: &[u8], payload_offset: u64) -> Result<TkhdFields, EntryError> {
    const WHAT: &str = "tkhd";
    let mut r = ByteReader::new(payload, payload_offset);
    let (version, flags) = full_header(&mut r, WHAT)?;
    r.skip(if version == 1 { 16 } else { 8 }).ctx(WHAT)?;
    let track_id = r.u32().ctx(WHAT)?;
    Ok(TkhdFields {
        version,
        flags,
        flags_offset: payload_offset + 1,
        track_id,
    })
}

// ---------------------------------------------------------------------------
// Properties

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropertyKind {
    Ispe {
        width: u32,
        height: u32,
    },
    /// Counter-clockwise rotation in degrees.
    Irot {
        angle: u16,
    },
    Imir {
        axis: u8,
    },
    Clap {
        width_n: u32,
        width_d: u32,
        height_n: u32,
        height_d: u32,
        horiz_off_n: i32,
        horiz_off_d: u32,
        vert_off_n: i32,
        vert_off_d: u32,
    },
    Pixi {
        bits_per_channel: Vec<u8>,
    },
    Colr {
        colour_type: FourCC,
        #[serde(with = "crate::hexser")]
        data: Vec<u8>,
    },
    AuxC {
        aux_type: String,
        #[serde(with = "crate::hexser")]
        subtype: Vec<u8>,
    },
    Unknown {
        fourcc: FourCC,
        #[serde(with = "crate::hexser")]
        raw: Vec<u8>,
    },
    /// Association pointing at no property (index 0 or past the pool).
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemProperty {
    /// 1-based position in `ipco`.
    pub index: u16,
    pub offset: u64,
    pub property: PropertyKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociatedProperty {
    pub index: u16,
    pub essential: bool,
    pub property: PropertyKind,
}

/// Decodes one property box payload. Malformed known properties fall back
/// to [`PropertyKind::Unknown`] with the payload kept verbatim.
pub fn parse_property(fourcc: FourCC, payload: &[u8]) -> PropertyKind {
    let unknown = || PropertyKind::Unknown {
        fourcc,
        raw: payload.to_vec(),
    };
    let mut r = ByteReader::new(payload, 0);
    let parsed: Result<PropertyKind, Truncated> = (|| {
        Ok(match &fourcc.0 {
            b"ispe" => {
                r.skip(4)?;
                PropertyKind::Ispe {
                    width: r.u32()?,
                    height: r.u32()?,
                }
            }
            b"irot" => PropertyKind::Irot {
                angle: u16::from(r.u8()? & 0x03) * 90,
            },
            b"imir" => PropertyKind::Imir { axis: r.u8()? & 0x01 },
            b"clap" => PropertyKind::Clap {
                width_n: r.u32()?,
                width_d: r.u32()?,
                height_n: r.u32()?,
                height_d: r.u32()?,
                horiz_off_n: r.u32()? as i32,
                horiz_off_d: r.u32()?,
                vert_off_n: r.u32()? as i32,
                vert_off_d: r.u32()?,
            },
            b"pixi" => {
                r.skip(4)?;
                let n = r.u8()?;
                PropertyKind::Pixi {
                    bits_per_channel: r.bytes(n.into())?.to_vec(),
                }
            }
            b"colr" => PropertyKind::Colr {
                colour_type: r.fourcc()?,
                data: r.rest().to_vec(),
            },
            b"auxC" => {
                r.skip(4)?;
                PropertyKind::AuxC {
                    aux_type: r.c_string(),
                    subtype: r.rest().to_vec(),
                }
            }
            _ => return Ok(unknown()),
        })
    })();
    parsed.unwrap_or_else(|_| unknown())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpmaEntry {
    pub item_id: u32,
    /// (1-based property index, essential)
    pub associations: Vec<(u16, bool)>,
}

/// Parses an `ipma` full-box payload. Flag bit 0x1 selects 15-bit property
/// indices; otherwise indices are 7 bits.
pub fn parse_ipma(payload: &[u8], payload_offset: u64) -> Result<Vec<IpmaEntry>, EntryError> {
    const WHAT: &str = "ipma";
    let mut r = ByteReader::new(payload, payload_offset);
    let (version, flags) = full_header(&mut r, WHAT)?;
    let count = r.u32().ctx(WHAT)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let item_id = if version < 1 {
            r.u16().ctx(WHAT)?.into()
        } else {
            r.u32().ctx(WHAT)?
        };
        let n = r.u8().ctx(WHAT)?;
        let mut associations = Vec::with_capacity(n.into());
        for _ in 0..n {
            if flags & 0x1 != 0 {
                let v = r.u16().ctx(WHAT)?;
                associations.push((v & 0x7fff, v & 0x8000 != 0));
            } else {
                let v = r.u8().ctx(WHAT)?;
                associations.push((u16::from(v & 0x7f), v & 0x80 != 0));
            }
        }
        out.push(IpmaEntry { item_id, associations });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropertyTable {
    pub pool: Vec<ItemProperty>,
    pub by_item: BTreeMap<u32, Vec<AssociatedProperty>>,
}

/// Resolves the `ipco` pool and `ipma` associations under an `iprp` node.
pub fn parse_properties(iprp: &BoxNode, bytes: &[u8], diags: &mut Vec<ModelDiagnostic>) -> PropertyTable {
    let mut table = PropertyTable::default();
    if let Some(ipco) = iprp.child(b"ipco") {
        for (i, child) in ipco.children.iter().enumerate() {
            let payload = child.header.payload.slice(bytes).unwrap_or_default();
            table.pool.push(ItemProperty {
                index: u16::try_from(i + 1).unwrap_or(u16::MAX),
                offset: child.header.offset,
                property: parse_property(child.fourcc(), payload),
            });
        }
    }
    for ipma in iprp.children_of(b"ipma") {
        let payload = ipma.header.payload.slice(bytes).unwrap_or_default();
        let entries = match parse_ipma(payload, ipma.header.payload.start) {
            Ok(e) => e,
            Err(e) => {
                diags.push(ModelDiagnostic::from_entry(&e));
                continue;
            }
        };
        for entry in entries {
            let list = table.by_item.entry(entry.item_id).or_default();
            for (index, essential) in entry.associations {
                let property = match usize::from(index).checked_sub(1).and_then(|i| table.pool.get(i)) {
                    Some(p) => p.property.clone(),
                    None => {
                        diags.push(ModelDiagnostic {
                            issue: ModelIssue::PropertyIndexOutOfRange,
                            offset: Some(ipma.header.offset),
                            item_id: Some(entry.item_id),
                            message: format!(
                                "item {} associates property index {index}, pool has {}",
                                entry.item_id,
                                table.pool.len()
                            ),
                        });
                        PropertyKind::Unresolved
                    }
                };
                list.push(AssociatedProperty {
                    index,
                    essential,
                    property,
                });
            }
        }
    }
    table
}

// ---------------------------------------------------------------------------
// Model

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelIssue {
    MissingFtyp,
    FtypNotFirst,
    MissingMeta,
    MultipleMeta,
    MissingHandler,
    NonPictHandler,
    DuplicateItemId,
    DanglingPrimary,
    DanglingReference,
    ExtentOutOfFile,
    BadFieldWidth,
    TruncatedEntry,
    UnknownInfeVersion,
    ItemCountMismatch,
    PropertyIndexOutOfRange,
    EmptyDref,
    SelfContainedWithLocation,
    LocationWithoutItem,
    MissingIdat,
    UnsupportedConstruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDiagnostic {
    pub issue: ModelIssue,
    pub offset: Option<u64>,
    pub item_id: Option<u32>,
    pub message: String,
}

impl ModelDiagnostic {
    fn from_entry(e: &EntryError) -> Self {
        let issue = match e {
            EntryError::TruncatedEntry { .. } => ModelIssue::TruncatedEntry,
            EntryError::BadFieldWidth { .. } => ModelIssue::BadFieldWidth,
        };
        ModelDiagnostic {
            issue,
            offset: Some(e.offset()),
            item_id: None,
            message: e.to_string(),
        }
    }

    fn at(issue: ModelIssue, offset: u64, message: String) -> Self {
        ModelDiagnostic {
            issue,
            offset: Some(offset),
            item_id: None,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedExtent {
    pub construction_method: u8,
    /// Base offset plus extent offset, in the construction method's frame.
    pub offset: u64,
    pub length: u64,
    /// Absolute in-file range, when the data lives in this file and the
    /// construction method is 0 or 1.
    pub absolute: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: u32,
    pub item_type: FourCC,
    pub name: String,
    pub hidden: bool,
    pub infe_version: u8,
    pub infe_flags: u32,
    pub infe_offset: u64,
    pub infe_flags_offset: u64,
    pub protection_index: u16,
    pub content_type: Option<String>,
    pub content_encoding: Option<String>,
    pub uri_type: Option<String>,
    pub location: Option<ItemLocation>,
    pub extents: Vec<ResolvedExtent>,
    pub properties: Vec<AssociatedProperty>,
}

impl ItemRecord {
    /// Whether the item's data lives in another file per its `dref` entry.
    pub fn external_data_reference(&self, model: &FileModel) -> Option<u16> {
        let idx = self.location.as_ref()?.data_reference_index;
        (idx != 0 && model.meta_data_reference(idx).is_some_and(DataReference::is_external)).then_some(idx)
    }

    pub fn has_property(&self, fourcc: &[u8; 4]) -> bool {
        self.properties.iter().any(|p| match &p.property {
            PropertyKind::Ispe { .. } => fourcc == b"ispe",
            PropertyKind::Irot { .. } => fourcc == b"irot",
            PropertyKind::Imir { .. } => fourcc == b"imir",
            PropertyKind::Clap { .. } => fourcc == b"clap",
            PropertyKind::Pixi { .. } => fourcc == b"pixi",
            PropertyKind::Colr { .. } => fourcc == b"colr",
            PropertyKind::AuxC { .. } => fourcc == b"auxC",
            PropertyKind::Unknown { fourcc: f, .. } => f == fourcc,
            PropertyKind::Unresolved => false,
        })
    }

    pub fn total_length(&self) -> u64 {
        self.extents.iter().map(|e| e.length).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u32,
    pub tkhd_version: u8,
    pub tkhd_flags: u32,
    pub enabled: bool,
    pub in_presentation: bool,
    pub in_preview: bool,
    pub handler: Option<FourCC>,
    pub tkhd_offset: u64,
    pub tkhd_flags_offset: u64,
    pub sample_count: u32,
    /// Absolute chunk ranges resolved from the sample table.
    pub chunks: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileModel {
    pub file_len: u64,
    pub brands: Option<Brands>,
    pub kind: HeifKind,
    pub handler: Option<FourCC>,
    pub primary_item: Option<u32>,
    pub items: Vec<ItemRecord>,
    pub references: Vec<ItemReference>,
    pub data_references: Vec<DataReference>,
    pub tracks: Vec<TrackRecord>,
    pub property_pool: Vec<ItemProperty>,
    pub idat_span: Option<Span>,
    /// `iloc` entries whose item id has no `infe`.
    pub orphan_locations: Vec<ItemLocation>,
    pub diagnostics: Vec<ModelDiagnostic>,
}

impl FileModel {
    pub fn item(&self, item_id: u32) -> Option<&ItemRecord> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn meta_data_reference(&self, index: u16) -> Option<&DataReference> {
        self.data_references
            .iter()
            .find(|d| d.scope == DrefScope::Meta && d.index == u32::from(index))
    }

    /// In-file ranges referenced by item extents and track chunks, labelled
    /// for coverage.
    pub fn referenced_spans(&self) -> Vec<(Span, RegionLabel)> {
        let items = self
            .items
            .iter()
            .flat_map(|i| i.extents.iter())
            .filter_map(|e| e.absolute)
            .map(|s| (s, RegionLabel::ItemExtent));
        let orphans = self
            .orphan_locations
            .iter()
            .flat_map(|loc| resolve_extents(loc, self.idat_span, self.file_len, None).0)
            .filter_map(|e| e.absolute)
            .map(|s| (s, RegionLabel::ItemExtent));
        let samples = self
            .tracks
            .iter()
            .flat_map(|t| t.chunks.iter().copied())
            .map(|s| (s, RegionLabel::SampleData));
        items.chain(orphans).chain(samples).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("no 'ftyp' box at the start of the file")]
    MissingFtyp,
}

/// Resolves raw `iloc` extents to absolute ranges. Returns the extents and
/// any diagnostics.
fn resolve_extents(
    loc: &ItemLocation,
    idat: Option<Span>,
    file_len: u64,
    external: Option<bool>,
) -> (Vec<ResolvedExtent>, Vec<ModelDiagnostic>) {
    let mut diags = Vec::new();
    let mut out = Vec::new();
    let diag = |issue, message: String| ModelDiagnostic {
        issue,
        offset: None,
        item_id: Some(loc.item_id),
        message,
    };
    for ext in &loc.extents {
        let offset = loc.base_offset.saturating_add(ext.offset);
        let mut length = ext.length;
        let absolute = match (loc.construction_method, external) {
            (_, Some(true)) => None,
            (0, _) => {
                if length == 0 {
                    length = file_len.saturating_sub(offset);
                }
                let end = offset.saturating_add(length);
                if end > file_len {
                    diags.push(diag(
                        ModelIssue::ExtentOutOfFile,
                        format!(
                            "item {} extent [{offset}, {end}) exceeds file length {file_len}",
                            loc.item_id
                        ),
                    ));
                }
                Some(Span::new(offset, end))
            }
            (1, _) => match idat {
                Some(idat) => {
                    if length == 0 {
                        length = idat.len().saturating_sub(offset);
                    }
                    let start = idat.start.saturating_add(offset);
                    let end = start.saturating_add(length);
                    if end > idat.end {
                        diags.push(diag(
                            ModelIssue::ExtentOutOfFile,
                            format!(
                                "item {} idat extent [{start}, {end}) exceeds idat end {}",
                                loc.item_id, idat.end
                            ),
                        ));
                    }
                    Some(Span::new(start, end))
                }
                None => {
                    diags.push(diag(
                        ModelIssue::MissingIdat,
                        format!("item {} uses idat construction but no idat box exists", loc.item_id),
                    ));
                    None
                }
            },
            (m, _) => {
                diags.push(diag(
                    ModelIssue::UnsupportedConstruction,
                    format!("item {} uses construction method {m}; not resolved", loc.item_id),
                ));
                None
            }
        };
        out.push(ResolvedExtent {
            construction_method: loc.construction_method,
            offset,
            length,
            absolute,
        });
    }
    (out, diags)
}

/// Parses bytes and builds the model in one step.
#[derive(Debug, Clone)]
pub struct ParsedFile {
    pub tree: BoxTree,
    pub model: FileModel,
}

impl ParsedFile {
    pub fn parse(bytes: &[u8]) -> ParsedFile {
        let tree = parse_tree(bytes);
        let model = build_file_model(&tree, bytes);
        ParsedFile { tree, model }
    }
}

/// Like [`build_file_model`] but fails when the file does not start with
/// an `ftyp` box.
pub fn build_file_model_strict(tree: &BoxTree, bytes: &[u8]) -> Result<FileModel, ModelError> {
    if tree.roots.first().is_none_or(|r| r.fourcc() != b"ftyp") {
        return Err(ModelError::MissingFtyp);
    }
    Ok(build_file_model(tree, bytes))
}

pub fn build_file_model(tree: &BoxTree, bytes: &[u8]) -> FileModel {
    let file_len = bytes.len() as u64;
    let mut diags = Vec::new();

    let brands = match tree.roots.iter().position(|r| r.fourcc() == b"ftyp") {
        Some(i) => {
            if i != 0 {
                diags.push(ModelDiagnostic::at(
                    ModelIssue::FtypNotFirst,
                    tree.roots[i].header.offset,
                    "'ftyp' is not the first box".into(),
                ));
            }
            tree.roots[i].header.payload.slice(bytes).and_then(Brands::parse)
        }
        None => {
            diags.push(ModelDiagnostic::at(ModelIssue::MissingFtyp, 0, "no 'ftyp' box".into()));
            None
        }
    };
    let kind = brands.as_ref().map_or(HeifKind::NotHeif, HeifKind::classify);

    let mut model = FileModel {
        file_len,
        brands,
        kind,
        handler: None,
        primary_item: None,
        items: Vec::new(),
        references: Vec::new(),
        data_references: Vec::new(),
        tracks: Vec::new(),
        property_pool: Vec::new(),
        idat_span: None,
        orphan_locations: Vec::new(),
        diagnostics: Vec::new(),
    };

    let metas: Vec<&BoxNode> = tree.roots.iter().filter(|r| r.fourcc() == b"meta").collect();
    if metas.len() > 1 {
        diags.push(ModelDiagnostic::at(
            ModelIssue::MultipleMeta,
            metas[1].header.offset,
            format!("{} top-level 'meta' boxes; only the first is interpreted", metas.len()),
        ));
    }
    match metas.first() {
        Some(meta) => build_meta(&mut model, meta, bytes, &mut diags),
        None if kind.is_heif() && !kind.is_sequence() => {
            diags.push(ModelDiagnostic::at(
                ModelIssue::MissingMeta,
                0,
                "no top-level 'meta' box".into(),
            ));
        }
        None => {}
    }

    for moov in tree.roots.iter().filter(|r| r.fourcc() == b"moov") {
        for trak in moov.children_of(b"trak") {
            if let Some(track) = build_track(&mut model, trak, bytes, &mut diags) {
                model.tracks.push(track);
            }
        }
    }

    model.diagnostics = diags;
    model
}

fn payload<'a>(node: &BoxNode, bytes: &'a [u8]) -> &'a [u8] {
    node.header.payload.slice(bytes).unwrap_or_default()
}

fn build_meta(model: &mut FileModel, meta: &BoxNode, bytes: &[u8], diags: &mut Vec<ModelDiagnostic>) {
    match meta.child(b"hdlr") {
        Some(hdlr) => {
            let mut r = ByteReader::new(payload(hdlr, bytes), hdlr.header.payload.start);
            match r.skip(8).and_then(|_| r.fourcc()) {
                Ok(handler) => {
                    if handler != b"pict" {
                        diags.push(ModelDiagnostic::at(
                            ModelIssue::NonPictHandler,
                            hdlr.header.offset,
                            format!("meta handler is '{handler}', expected 'pict'"),
                        ));
                    }
                    model.handler = Some(handler);
                }
                Err(t) => diags.push(ModelDiagnostic::at(
                    ModelIssue::TruncatedEntry,
                    t.offset,
                    "truncated hdlr".into(),
                )),
            }
        }
        None => diags.push(ModelDiagnostic::at(
            ModelIssue::MissingHandler,
            meta.header.offset,
            "'meta' has no 'hdlr'".into(),
        )),
    }

    if let Some(pitm) = meta.child(b"pitm") {
        let mut r = ByteReader::new(payload(pitm, bytes), pitm.header.payload.start);
        let id = full_header(&mut r, "pitm").and_then(|(v, _)| {
            if v == 0 {
                r.u16().map(u32::from).ctx("pitm")
            } else {
                r.u32().ctx("pitm")
            }
        });
        match id {
            Ok(id) => model.primary_item = Some(id),
            Err(e) => diags.push(ModelDiagnostic::from_entry(&e)),
        }
    }

    model.idat_span = meta.child(b"idat").map(|n| n.header.payload);

    if let Some(dref) = meta.child(b"dinf").and_then(|d| d.child(b"dref")) {
        collect_dref(model, dref, bytes, DrefScope::Meta, diags);
    }

    let mut infes: Vec<(InfeEntry, u64)> = Vec::new();
    if let Some(iinf) = meta.child(b"iinf") {
        let mut r = ByteReader::new(payload(iinf, bytes), iinf.header.payload.start);
        let declared = full_header(&mut r, "iinf").and_then(|(v, _)| {
            if v == 0 {
                r.u16().map(u32::from).ctx("iinf")
            } else {
                r.u32().ctx("iinf")
            }
        });
        let found = iinf.children_of(b"infe").count();
        if let Ok(declared) = declared {
            if declared as usize != found {
                diags.push(ModelDiagnostic::at(
                    ModelIssue::ItemCountMismatch,
                    iinf.header.offset,
                    format!("iinf declares {declared} entries, {found} 'infe' boxes present"),
                ));
            }
        }
        for infe in iinf.children_of(b"infe") {
            match parse_infe(payload(infe, bytes), infe.header.payload.start) {
                Ok(entry) => {
                    if entry.version > 3 {
                        diags.push(ModelDiagnostic {
                            issue: ModelIssue::UnknownInfeVersion,
                            offset: Some(infe.header.offset),
                            item_id: Some(entry.item_id),
                            message: format!("infe version {} read with the version 3 layout", entry.version),
                        });
                    }
                    infes.push((entry, infe.header.offset));
                }
                Err(e) => diags.push(ModelDiagnostic::from_entry(&e)),
            }
        }
    }

    let mut locations: Vec<ItemLocation> = Vec::new();
    if let Some(iloc) = meta.child(b"iloc") {
        match parse_iloc(payload(iloc, bytes), iloc.header.payload.start) {
            Ok(l) => locations = l,
            Err(e) => diags.push(ModelDiagnostic::from_entry(&e)),
        }
    }

    let properties = meta
        .child(b"iprp")
        .map(|iprp| parse_properties(iprp, bytes, diags))
        .unwrap_or_default();
    model.property_pool = properties.pool.clone();

    let mut seen = BTreeSet::new();
    for (entry, infe_offset) in infes {
        if !seen.insert(entry.item_id) {
            diags.push(ModelDiagnostic {
                issue: ModelIssue::DuplicateItemId,
                offset: Some(infe_offset),
                item_id: Some(entry.item_id),
                message: format!("item id {} declared more than once; later entry ignored", entry.item_id),
            });
            continue;
        }
        let location = locations.iter().find(|l| l.item_id == entry.item_id).cloned();
        let extents = match &location {
            Some(loc) => {
                let external = (loc.data_reference_index != 0).then(|| {
                    model
                        .meta_data_reference(loc.data_reference_index)
                        .is_some_and(DataReference::is_external)
                });
                let (ext, d) = resolve_extents(loc, model.idat_span, model.file_len, external);
                diags.extend(d);
                ext
            }
            None => Vec::new(),
        };
        model.items.push(ItemRecord {
            item_id: entry.item_id,
            item_type: entry.item_type,
            name: entry.name.clone(),
            hidden: entry.hidden(),
            infe_version: entry.version,
            infe_flags: entry.flags,
            infe_offset,
            infe_flags_offset: entry.flags_offset,
            protection_index: entry.protection_index,
            content_type: entry.content_type,
            content_encoding: entry.content_encoding,
            uri_type: entry.uri_type,
            location,
            extents,
            properties: properties.by_item.get(&entry.item_id).cloned().unwrap_or_default(),
        });
    }

    for loc in locations {
        if !seen.contains(&loc.item_id) {
            diags.push(ModelDiagnostic {
                issue: ModelIssue::LocationWithoutItem,
                offset: None,
                item_id: Some(loc.item_id),
                message: format!("iloc locates item {} which has no 'infe'", loc.item_id),
            });
            model.orphan_locations.push(loc);
        }
    }
    for item_id in properties.by_item.keys().filter(|id| !seen.contains(id)) {
        diags.push(ModelDiagnostic {
            issue: ModelIssue::DanglingReference,
            offset: None,
            item_id: Some(*item_id),
            message: format!("ipma associates properties with unknown item {item_id}"),
        });
    }

    if let Some(iref) = meta.child(b"iref") {
        match parse_iref(payload(iref, bytes), iref.header.payload.start) {
            Ok(refs) => model.references = refs,
            Err(e) => diags.push(ModelDiagnostic::from_entry(&e)),
        }
    }

    if let Some(primary) = model.primary_item {
        if !seen.contains(&primary) {
            diags.push(ModelDiagnostic {
                issue: ModelIssue::DanglingPrimary,
                offset: meta.child(b"pitm").map(|p| p.header.offset),
                item_id: Some(primary),
                message: format!("pitm names item {primary}, which does not exist"),
            });
        }
    }
    let mut dangling = BTreeSet::new();
    for r in &model.references {
        for id in std::iter::once(r.from_item).chain(r.to_items.iter().copied()) {
            if !seen.contains(&id) && dangling.insert(id) {
                diags.push(ModelDiagnostic {
                    issue: ModelIssue::DanglingReference,
                    offset: Some(r.offset),
                    item_id: Some(id),
                    message: format!("'{}' reference involves unknown item {id}", r.ref_type),
                });
            }
        }
    }
}

fn collect_dref(
    model: &mut FileModel,
    dref: &BoxNode,
    bytes: &[u8],
    scope: DrefScope,
    diags: &mut Vec<ModelDiagnostic>,
) {
    match parse_dref(payload(dref, bytes), dref.header.payload.start, scope) {
        Ok(parsed) => {
            if parsed.entries.is_empty() {
                diags.push(ModelDiagnostic::at(
                    ModelIssue::EmptyDref,
                    dref.header.offset,
                    "'dref' has no entries; at least one is required".into(),
                ));
            }
            for (index, text) in parsed.stray_text {
                diags.push(ModelDiagnostic::at(
                    ModelIssue::SelfContainedWithLocation,
                    dref.header.offset,
                    format!("self-contained dref entry {index} carries text {text:?}"),
                ));
            }
            model.data_references.extend(parsed.entries);
        }
        Err(e) => diags.push(ModelDiagnostic::from_entry(&e)),
    }
}

fn build_track(
    model: &mut FileModel,
    trak: &BoxNode,
    bytes: &[u8],
    diags: &mut Vec<ModelDiagnostic>,
) -> Option<TrackRecord> {
    let tkhd = trak.child(b"tkhd")?;
    let fields = match parse_tkhd(payload(tkhd, bytes), tkhd.header.payload.start) {
        Ok(f) => f,
        Err(e) => {
            diags.push(ModelDiagnostic::from_entry(&e));
            return None;
        }
    };
    let mdia = trak.child(b"mdia");
    let handler = mdia.and_then(|m| m.child(b"hdlr")).and_then(|h| {
        let mut r = ByteReader::new(payload(h, bytes), 0);
        r.skip(8).ok()?;
        r.fourcc().ok()
    });
    let minf = mdia.and_then(|m| m.child(b"minf"));
    if let Some(dref) = minf.and_then(|m| m.child(b"dinf")).and_then(|d| d.child(b"dref")) {
        collect_dref(model, dref, bytes, DrefScope::Track(fields.track_id), diags);
    }
    let (sample_count, chunks) = minf
        .and_then(|m| m.child(b"stbl"))
        .map(|stbl| sample_chunks(stbl, bytes))
        .unwrap_or_default();
    Some(TrackRecord {
        track_id: fields.track_id,
        tkhd_version: fields.version,
        tkhd_flags: fields.flags,
        enabled: fields.flags & 0x1 != 0,
        in_presentation: fields.flags & 0x2 != 0,
        in_preview: fields.flags & 0x4 != 0,
        handler,
        tkhd_offset: tkhd.header.offset,
        tkhd_flags_offset: fields.flags_offset,
        sample_count,
        chunks,
    })
}

/// Resolves chunk byte ranges from `stsz`, `stsc` and `stco`/`co64`.
/// Malformed tables yield whatever prefix could be resolved.
fn sample_chunks(stbl: &BoxNode, bytes: &[u8]) -> (u32, Vec<Span>) {
    let body = |fourcc: &[u8; 4]| stbl.child(fourcc).map(|n| ByteReader::new(payload(n, bytes), 0));

    let mut sizes: Vec<u64> = Vec::new();
    let mut sample_count = 0u32;
    if let Some(mut r) = body(b"stsz") {
        let _ = (|| -> Result<(), Truncated> {
            r.skip(4)?;
            let fixed = r.u32()?;
            sample_count = r.u32()?;
            if fixed != 0 {
                sizes = vec![u64::from(fixed); (sample_count as usize).min(bytes.len())];
            } else {
                for _ in 0..sample_count {
                    sizes.push(r.u32()?.into());
                }
            }
            Ok(())
        })();
    }

    let mut offsets: Vec<u64> = Vec::new();
    let (chunk_box, wide) = match body(b"stco") {
        Some(r) => (Some(r), false),
        None => (body(b"co64"), true),
    };
    if let Some(mut r) = chunk_box {
        let _ = (|| -> Result<(), Truncated> {
            r.skip(4)?;
            let n = r.u32()?;
            for _ in 0..n {
                offsets.push(if wide { r.u64()? } else { r.u32()?.into() });
            }
            Ok(())
        })();
    }

    // (first_chunk, samples_per_chunk)
    let mut runs: Vec<(u32, u32)> = Vec::new();
    if let Some(mut r) = body(b"stsc") {
        let _ = (|| -> Result<(), Truncated> {
            r.skip(4)?;
            let n = r.u32()?;
            for _ in 0..n {
                let first = r.u32()?;
                let per = r.u32()?;
                r.skip(4)?;
                runs.push((first, per));
            }
            Ok(())
        })();
    }

    let mut chunks = Vec::new();
    let mut sample = 0usize;
    for (i, &offset) in offsets.iter().enumerate() {
        let chunk_no = (i + 1) as u32;
        let per = runs
            .iter()
            .take_while(|(first, _)| *first <= chunk_no)
            .last()
            .map_or(0, |(_, per)| *per) as usize;
        let take = per.min(sizes.len().saturating_sub(sample));
        let len: u64 = sizes[sample..sample + take].iter().sum();
        sample += take;
        if len > 0 {
            chunks.push(Span::new(offset, offset.saturating_add(len)));
        }
    }
    (sample_count, chunks)
}

/// Splits an `Exif` item payload into its TIFF-aligned part: the first four
/// bytes give the big-endian offset of the TIFF header within the rest.
pub fn exif_tiff_payload(raw: &[u8]) -> Option<&[u8]> {
    let offset = usize::try_from(crate::reader::be_u32(raw, 0)?).ok()?;
    raw.get(4usize.checked_add(offset)?..)
}
