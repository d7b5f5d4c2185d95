//! Deterministic synthetic HEIF builder.
//!
//! Produces structurally valid (or deliberately damaged) containers with
//! seeded dummy payloads. No codec is involved: every payload is random
//! bytes tagged with its item id.

use std::io;
use std::path::Path;

use md5::{Digest, Md5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxes::{parse_tree, Span};
use crate::fourcc::FourCC;
use crate::semantics::ParsedFile;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("inconsistent fixture spec: {0}")]
    InconsistentSpec(String),
    #[error("mutation target not found: {0}")]
    TargetNotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Mdat,
    Idat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// Seeded pseudo-random bytes of this length, tagged with the item id.
    Generated(usize),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertySpec {
    Ispe(u32, u32),
    /// Rotation in quarter turns (0..=3).
    Irot(u8),
    Imir(u8),
    Pixi(Vec<u8>),
    Colr(FourCC, Vec<u8>),
    AuxC(String),
    Raw(FourCC, Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureItem {
    pub id: u32,
    pub item_type: FourCC,
    pub name: String,
    pub hidden: bool,
    pub infe_version: u8,
    pub payload: Payload,
    pub placement: Placement,
    /// Number of extents the payload is split into.
    pub extent_count: u16,
    /// Lay extents out in the data box back to front.
    pub reverse_extents: bool,
    /// Unreferenced filler bytes written before this item's data.
    pub gap_before: usize,
    pub data_reference_index: u16,
    pub content_type: Option<String>,
    /// (property, essential)
    pub properties: Vec<(PropertySpec, bool)>,
}

impl FixtureItem {
    pub fn new(id: u32, item_type: &[u8; 4]) -> Self {
        let name = match item_type {
            b"hvc1" => "HEVC Image",
            b"grid" | b"iovl" | b"iden" => "Derived Image",
            _ => "",
        };
        FixtureItem {
            id,
            item_type: FourCC::new(item_type),
            name: name.to_string(),
            hidden: false,
            infe_version: 2,
            payload: Payload::Generated(64),
            placement: Placement::Mdat,
            extent_count: 1,
            reverse_extents: false,
            gap_before: 0,
            data_reference_index: 0,
            content_type: (item_type == b"mime").then(|| "application/rdf+xml".to_string()),
            properties: Vec::new(),
        }
    }

    pub fn hidden(mut self, hidden: bool) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn payload_len(mut self, len: usize) -> Self {
        self.payload = Payload::Generated(len);
        self
    }

    pub fn extents(mut self, n: u16) -> Self {
        self.extent_count = n;
        self
    }

    pub fn in_idat(mut self) -> Self {
        self.placement = Placement::Idat;
        self
    }

    pub fn property(mut self, p: PropertySpec, essential: bool) -> Self {
        self.properties.push((p, essential));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureRef {
    pub ref_type: FourCC,
    pub from: u32,
    pub to: Vec<u32>,
}

impl FixtureRef {
    pub fn new(ref_type: &[u8; 4], from: u32, to: &[u32]) -> Self {
        FixtureRef {
            ref_type: FourCC::new(ref_type),
            from,
            to: to.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureTrack {
    pub track_id: u32,
    pub flags: u32,
    pub handler: FourCC,
    pub sample_sizes: Vec<u32>,
    pub samples_per_chunk: u32,
}

impl FixtureTrack {
    pub fn new(track_id: u32, flags: u32) -> Self {
        FixtureTrack {
            track_id,
            flags,
            handler: FourCC::new(b"pict"),
            sample_sizes: vec![40, 24, 32],
            samples_per_chunk: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureDref {
    SelfContained,
    Url(String),
    Urn { name: String, location: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MintFraming {
    /// Bare 16-byte digest.
    Raw,
    /// `md5 ` tag followed by the digest.
    Tagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MintSpec {
    Absent,
    Correct {
        target: u32,
        framing: MintFraming,
    },
    /// Digest computed, then one byte of the target payload flipped.
    Corrupted {
        target: u32,
        framing: MintFraming,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSpec {
    pub major_brand: FourCC,
    pub minor_version: u32,
    pub compatible: Vec<FourCC>,
    pub handler: FourCC,
    pub items: Vec<FixtureItem>,
    pub references: Vec<FixtureRef>,
    pub primary: Option<u32>,
    pub tracks: Vec<FixtureTrack>,
    pub drefs: Vec<FixtureDref>,
    pub mint: MintSpec,
    pub trailing_garbage: Vec<u8>,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            major_brand: FourCC::new(b"heic"),
            minor_version: 0,
            compatible: vec![FourCC::new(b"mif1"), FourCC::new(b"heic")],
            handler: FourCC::new(b"pict"),
            items: Vec::new(),
            references: Vec::new(),
            primary: None,
            tracks: Vec::new(),
            drefs: Vec::new(),
            mint: MintSpec::Absent,
            trailing_garbage: Vec::new(),
            seed: 0,
        }
    }
}

impl FixtureSpec {
    /// One visible `hvc1` item, marked primary.
    pub fn single_image() -> Self {
        FixtureSpec {
            items: vec![FixtureItem::new(1, b"hvc1").property(PropertySpec::Ispe(640, 480), false)],
            primary: Some(1),
            ..Default::default()
        }
    }

    /// A visible primary `grid` item fed by `tiles` hidden 512x512 `hvc1`
    /// tiles, plus an `Exif` item describing the grid.
    pub fn apple_grid(tiles: u32) -> Self {
        let grid_id = 1;
        let mut items = vec![FixtureItem::new(grid_id, b"grid")
            .payload_len(8)
            .property(PropertySpec::Ispe(512 * tiles.min(8), 512 * tiles.div_ceil(8)), false)];
        let tile_ids: Vec<u32> = (0..tiles).map(|i| i + 2).collect();
        for &id in &tile_ids {
            items.push(
                FixtureItem::new(id, b"hvc1")
                    .hidden(true)
                    .payload_len(48)
                    .property(PropertySpec::Ispe(512, 512), false),
            );
        }
        let exif_id = tiles + 2;
        items.push(FixtureItem::new(exif_id, b"Exif").payload_len(40));
        FixtureSpec {
            items,
            references: vec![
                FixtureRef::new(b"dimg", grid_id, &tile_ids),
                FixtureRef::new(b"cdsc", exif_id, &[grid_id]),
            ],
            primary: Some(grid_id),
            ..Default::default()
        }
    }

    /// Four masters combined by one derived item of `derived_type`
    /// (`grid` or `iovl`), the derived item being primary.
    pub fn four_masters(derived_type: &[u8; 4]) -> Self {
        let mut items: Vec<FixtureItem> = (1..=4)
            .map(|id| FixtureItem::new(id, b"hvc1").property(PropertySpec::Ispe(480, 320), false))
            .collect();
        items.push(FixtureItem::new(5, derived_type).payload_len(12));
        FixtureSpec {
            major_brand: FourCC::new(b"mif1"),
            items,
            references: vec![FixtureRef::new(b"dimg", 5, &[1, 2, 3, 4])],
            primary: Some(5),
            ..Default::default()
        }
    }

    /// `n` visible `hvc1` images, the first primary.
    pub fn burst(n: u32) -> Self {
        FixtureSpec {
            items: (1..=n).map(|id| FixtureItem::new(id, b"hvc1")).collect(),
            primary: Some(1),
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Where a built item's bytes ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltItem {
    pub id: u32,
    pub payload: Vec<u8>,
    /// Absolute extent ranges in logical order; empty for external data.
    pub extents: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltFixture {
    pub bytes: Vec<u8>,
    pub items: Vec<BuiltItem>,
    /// Id of the generated `mint` item, if any.
    pub mint_item: Option<u32>,
}

// ---------------------------------------------------------------------------
// Box writing helpers

fn plain(fourcc: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&((payload.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(fourcc);
    out.extend_from_slice(payload);
    out
}

fn full(fourcc: &[u8; 4], version: u8, flags: u32, payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(payload.len() + 4);
    body.push(version);
    body.extend_from_slice(&flags.to_be_bytes()[1..]);
    body.extend_from_slice(payload);
    plain(fourcc, &body)
}

fn cat(parts: &[Vec<u8>]) -> Vec<u8> {
    parts.concat()
}

fn hdlr(handler: FourCC) -> Vec<u8> {
    let mut p = vec![0; 4];
    p.extend_from_slice(handler.as_bytes());
    p.extend_from_slice(&[0; 12]);
    p.push(0);
    full(b"hdlr", 0, 0, &p)
}

fn property_box(p: &PropertySpec) -> Vec<u8> {
    match p {
        PropertySpec::Ispe(w, h) => {
            let mut b = w.to_be_bytes().to_vec();
            b.extend_from_slice(&h.to_be_bytes());
            full(b"ispe", 0, 0, &b)
        }
        PropertySpec::Irot(q) => plain(b"irot", &[q & 0x3]),
        PropertySpec::Imir(a) => plain(b"imir", &[a & 0x1]),
        PropertySpec::Pixi(bits) => {
            let mut b = vec![bits.len() as u8];
            b.extend_from_slice(bits);
            full(b"pixi", 0, 0, &b)
        }
        PropertySpec::Colr(ty, data) => {
            let mut b = ty.as_bytes().to_vec();
            b.extend_from_slice(data);
            plain(b"colr", &b)
        }
        PropertySpec::AuxC(urn) => {
            let mut b = urn.as_bytes().to_vec();
            b.push(0);
            full(b"auxC", 0, 0, &b)
        }
        PropertySpec::Raw(fourcc, raw) => plain(fourcc.as_bytes(), raw),
    }
}

fn generated_payload(seed: u64, id: u32, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(id).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = vec![0u8; len];
    rng.fill(&mut out[..]);
    for (dst, src) in out.iter_mut().zip(id.to_be_bytes()) {
        *dst = src;
    }
    out
}

fn split_lengths(len: usize, n: u16) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let n = usize::from(n.max(1)).min(len);
    (0..n).map(|i| len / n + usize::from(i < len % n)).collect()
}

/// One item's data pieces and where they go.
struct Placed {
    /// (logical index, relative offset in its data box, length)
    pieces: Vec<(usize, u64, u64)>,
    placement: Placement,
    external: bool,
}

fn lay_out(
    out: &mut Vec<u8>,
    payload: &[u8],
    extent_count: u16,
    reverse: bool,
    gap: Vec<u8>,
    placement: Placement,
) -> Placed {
    out.extend_from_slice(&gap);
    let lengths = split_lengths(payload.len(), extent_count);
    let mut starts = Vec::with_capacity(lengths.len());
    let mut acc = 0;
    for l in &lengths {
        starts.push(acc);
        acc += l;
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    if reverse {
        order.reverse();
    }
    let mut pieces = Vec::new();
    for i in order {
        let rel = out.len() as u64;
        out.extend_from_slice(&payload[starts[i]..starts[i] + lengths[i]]);
        pieces.push((i, rel, lengths[i] as u64));
    }
    pieces.sort_by_key(|p| p.0);
    Placed {
        pieces,
        placement,
        external: false,
    }
}

/// Builds the container bytes for `spec`.
pub fn build(spec: &FixtureSpec) -> Result<Vec<u8>, FixtureError> {
    build_detailed(spec).map(|b| b.bytes)
}

pub fn build_detailed(spec: &FixtureSpec) -> Result<BuiltFixture, FixtureError> {
    validate(spec)?;
    let bad = |m: String| FixtureError::InconsistentSpec(m);

    let mut items = spec.items.clone();
    let mut references = spec.references.clone();
    let mut payloads: Vec<Vec<u8>> = items
        .iter()
        .map(|it| match &it.payload {
            Payload::Generated(n) => generated_payload(spec.seed, it.id, *n),
            Payload::Bytes(b) => b.clone(),
        })
        .collect();

    let mut mint_item = None;
    if let MintSpec::Correct { target, framing } | MintSpec::Corrupted { target, framing } = spec.mint {
        let idx = items
            .iter()
            .position(|i| i.id == target)
            .ok_or_else(|| bad(format!("mint target {target} does not exist")))?;
        let digest: [u8; 16] = Md5::digest(&payloads[idx]).into();
        if matches!(spec.mint, MintSpec::Corrupted { .. }) {
            let p = &mut payloads[idx];
            if p.is_empty() {
                return Err(bad("cannot corrupt an empty mint target".into()));
            }
            let at = p.len() / 2;
            p[at] ^= 0x01;
        }
        let mut body = Vec::new();
        if framing == MintFraming::Tagged {
            body.extend_from_slice(b"md5 ");
        }
        body.extend_from_slice(&digest);
        let id = items.iter().map(|i| i.id).max().unwrap_or(0) + 1;
        let mut it = FixtureItem::new(id, b"mint");
        it.payload = Payload::Bytes(body.clone());
        if id > 0xffff {
            it.infe_version = 3;
        }
        items.push(it);
        payloads.push(body);
        references.push(FixtureRef::new(b"cdsc", id, &[target]));
        mint_item = Some(id);
    }

    let wide_ids = items.iter().any(|i| i.id > 0xffff)
        || references
            .iter()
            .any(|r| r.to.iter().chain([&r.from]).any(|&i| i > 0xffff))
        || spec.primary.is_some_and(|p| p > 0xffff);

    let mut filler = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f111);
    let mut gap = |n: usize| {
        let mut v = vec![0u8; n];
        filler.fill(&mut v[..]);
        v
    };

    // Data layout, relative to the start of each data box payload.
    let mut mdat_payload = Vec::new();
    let mut idat_payload = Vec::new();
    let mut placed = Vec::new();
    for (it, payload) in items.iter().zip(&payloads) {
        let external = it.data_reference_index != 0
            && matches!(spec.drefs.get(usize::from(it.data_reference_index) - 1), Some(d) if *d != FixtureDref::SelfContained);
        if external {
            placed.push(Placed {
                pieces: vec![(0, 0, payload.len() as u64)],
                placement: Placement::Mdat,
                external: true,
            });
            continue;
        }
        let target = match it.placement {
            Placement::Mdat => &mut mdat_payload,
            Placement::Idat => &mut idat_payload,
        };
        placed.push(lay_out(
            target,
            payload,
            it.extent_count,
            it.reverse_extents,
            gap(it.gap_before),
            it.placement,
        ));
    }
    let mut chunk_rel: Vec<Vec<u64>> = Vec::new();
    for t in &spec.tracks {
        let mut offsets = Vec::new();
        for (i, &size) in t.sample_sizes.iter().enumerate() {
            if i % t.samples_per_chunk.max(1) as usize == 0 {
                offsets.push(mdat_payload.len() as u64);
            }
            mdat_payload.extend(generated_payload(spec.seed ^ 0x7ac0, t.track_id, size as usize));
        }
        chunk_rel.push(offsets);
    }

    let ftyp = {
        let mut p = spec.major_brand.as_bytes().to_vec();
        p.extend_from_slice(&spec.minor_version.to_be_bytes());
        for c in &spec.compatible {
            p.extend_from_slice(c.as_bytes());
        }
        plain(b"ftyp", &p)
    };

    // Box sizes do not depend on offset values, so build once to measure
    // and once with the real mdat position.
    let meta_for = |mdat_data_start: u64, idat_data_start: u64| -> Vec<u8> {
        let mut children = vec![hdlr(spec.handler)];
        if let Some(p) = spec.primary {
            children.push(if wide_ids {
                full(b"pitm", 1, 0, &p.to_be_bytes())
            } else {
                full(b"pitm", 0, 0, &(p as u16).to_be_bytes())
            });
        }

        let iloc_version = if wide_ids { 2 } else { 1 };
        let mut iloc = vec![0x44, 0x40];
        if wide_ids {
            iloc.extend_from_slice(&(items.len() as u32).to_be_bytes());
        } else {
            iloc.extend_from_slice(&(items.len() as u16).to_be_bytes());
        }
        for (it, pl) in items.iter().zip(&placed) {
            if wide_ids {
                iloc.extend_from_slice(&it.id.to_be_bytes());
            } else {
                iloc.extend_from_slice(&(it.id as u16).to_be_bytes());
            }
            let method = if pl.placement == Placement::Idat && !pl.external {
                1u16
            } else {
                0
            };
            iloc.extend_from_slice(&method.to_be_bytes());
            iloc.extend_from_slice(&it.data_reference_index.to_be_bytes());
            iloc.extend_from_slice(&0u32.to_be_bytes());
            iloc.extend_from_slice(&(pl.pieces.len() as u16).to_be_bytes());
            for &(_, rel, len) in &pl.pieces {
                let abs = match (pl.external, pl.placement) {
                    (true, _) => rel,
                    (false, Placement::Mdat) => mdat_data_start + rel,
                    (false, Placement::Idat) => rel,
                };
                let _ = idat_data_start;
                iloc.extend_from_slice(&(abs as u32).to_be_bytes());
                iloc.extend_from_slice(&(len as u32).to_be_bytes());
            }
        }
        children.push(full(b"iloc", iloc_version, 0, &iloc));

        let mut iinf = Vec::new();
        iinf.extend_from_slice(&(items.len() as u16).to_be_bytes());
        for it in &items {
            let mut p = Vec::new();
            let flags = u32::from(it.hidden);
            if it.infe_version < 2 {
                p.extend_from_slice(&(it.id as u16).to_be_bytes());
                p.extend_from_slice(&[0, 0]);
                p.extend_from_slice(it.name.as_bytes());
                p.push(0);
                p.extend_from_slice(it.content_type.as_deref().unwrap_or("").as_bytes());
                p.push(0);
            } else {
                if it.infe_version == 2 {
                    p.extend_from_slice(&(it.id as u16).to_be_bytes());
                } else {
                    p.extend_from_slice(&it.id.to_be_bytes());
                }
                p.extend_from_slice(&[0, 0]);
                p.extend_from_slice(it.item_type.as_bytes());
                p.extend_from_slice(it.name.as_bytes());
                p.push(0);
                if it.item_type == b"mime" {
                    p.extend_from_slice(it.content_type.as_deref().unwrap_or("").as_bytes());
                    p.push(0);
                }
            }
            iinf.extend(full(b"infe", it.infe_version, flags, &p));
        }
        children.push(full(b"iinf", 0, 0, &iinf));

        if !references.is_empty() {
            let mut iref = Vec::new();
            for r in &references {
                let mut p = Vec::new();
                let id = |p: &mut Vec<u8>, v: u32| {
                    if wide_ids {
                        p.extend_from_slice(&v.to_be_bytes())
                    } else {
                        p.extend_from_slice(&(v as u16).to_be_bytes())
                    }
                };
                id(&mut p, r.from);
                p.extend_from_slice(&(r.to.len() as u16).to_be_bytes());
                for &t in &r.to {
                    id(&mut p, t);
                }
                iref.extend(plain(r.ref_type.as_bytes(), &p));
            }
            children.push(full(b"iref", u8::from(wide_ids), 0, &iref));
        }

        let mut pool = Vec::new();
        let mut ipma_entries = Vec::new();
        for it in items.iter().filter(|i| !i.properties.is_empty()) {
            let mut assoc = Vec::new();
            for (p, essential) in &it.properties {
                pool.push(property_box(p));
                assoc.push((pool.len() as u16, *essential));
            }
            ipma_entries.push((it.id, assoc));
        }
        if !pool.is_empty() {
            let large = pool.len() > 127;
            let mut ipma = (ipma_entries.len() as u32).to_be_bytes().to_vec();
            for (id, assoc) in &ipma_entries {
                if wide_ids {
                    ipma.extend_from_slice(&id.to_be_bytes());
                } else {
                    ipma.extend_from_slice(&(*id as u16).to_be_bytes());
                }
                ipma.push(assoc.len() as u8);
                for &(index, essential) in assoc {
                    if large {
                        ipma.extend_from_slice(&(index | (u16::from(essential) << 15)).to_be_bytes());
                    } else {
                        ipma.push(index as u8 | (u8::from(essential) << 7));
                    }
                }
            }
            let ipco = plain(b"ipco", &pool.concat());
            let ipma = full(b"ipma", u8::from(wide_ids), u32::from(large), &ipma);
            children.push(plain(b"iprp", &cat(&[ipco, ipma])));
        }

        if !spec.drefs.is_empty() {
            children.push(plain(b"dinf", &dref_box(&spec.drefs)));
        }
        if !idat_payload.is_empty() {
            children.push(plain(b"idat", &idat_payload));
        }
        full(b"meta", 0, 0, &children.concat())
    };

    let moov_for = |mdat_data_start: u64| -> Vec<u8> {
        if spec.tracks.is_empty() {
            return Vec::new();
        }
        let mut mvhd = vec![0; 96];
        mvhd[8..12].copy_from_slice(&1000u32.to_be_bytes());
        let mut parts = vec![full(b"mvhd", 0, 0, &mvhd)];
        for (t, offsets) in spec.tracks.iter().zip(&chunk_rel) {
            let mut tkhd = vec![0; 8];
            tkhd.extend_from_slice(&t.track_id.to_be_bytes());
            tkhd.extend(vec![0; 68]);
            let tkhd = full(b"tkhd", 0, t.flags, &tkhd);

            let mut stsz = 0u32.to_be_bytes().to_vec();
            stsz.extend_from_slice(&(t.sample_sizes.len() as u32).to_be_bytes());
            for s in &t.sample_sizes {
                stsz.extend_from_slice(&s.to_be_bytes());
            }
            let mut stsc = 1u32.to_be_bytes().to_vec();
            stsc.extend_from_slice(&1u32.to_be_bytes());
            stsc.extend_from_slice(&t.samples_per_chunk.max(1).to_be_bytes());
            stsc.extend_from_slice(&1u32.to_be_bytes());
            let mut stco = (offsets.len() as u32).to_be_bytes().to_vec();
            for o in offsets {
                stco.extend_from_slice(&((mdat_data_start + o) as u32).to_be_bytes());
            }
            let stbl = plain(
                b"stbl",
                &cat(&[
                    full(b"stsz", 0, 0, &stsz),
                    full(b"stsc", 0, 0, &stsc),
                    full(b"stco", 0, 0, &stco),
                ]),
            );
            let minf = plain(b"minf", &stbl);
            let mdia = plain(b"mdia", &cat(&[hdlr(t.handler), minf]));
            parts.push(plain(b"trak", &cat(&[tkhd, mdia])));
        }
        plain(b"moov", &parts.concat())
    };

    let meta_len = meta_for(0, 0).len() as u64;
    let moov_len = moov_for(0).len() as u64;
    let mdat_data_start = ftyp.len() as u64 + meta_len + moov_len + 8;
    if mdat_data_start + mdat_payload.len() as u64 > u64::from(u32::MAX) {
        return Err(bad("fixture too large for 32-bit offsets".into()));
    }
    let meta = meta_for(mdat_data_start, 0);
    debug_assert_eq!(meta.len() as u64, meta_len);
    let moov = moov_for(mdat_data_start);

    let mut bytes = cat(&[ftyp, meta, moov]);
    bytes.extend(plain(b"mdat", &mdat_payload));
    bytes.extend_from_slice(&spec.trailing_garbage);

    // idat position is only known after assembly.
    let idat_data_start = ParsedFile::parse(&bytes).model.idat_span.map(|s| s.start);
    let built_items = items
        .iter()
        .zip(placed)
        .zip(payloads)
        .map(|((it, pl), payload)| BuiltItem {
            id: it.id,
            extents: if pl.external {
                Vec::new()
            } else {
                pl.pieces
                    .iter()
                    .map(|&(_, rel, len)| {
                        let base = match pl.placement {
                            Placement::Mdat => mdat_data_start,
                            Placement::Idat => idat_data_start.unwrap_or(0),
                        };
                        Span::new(base + rel, base + rel + len)
                    })
                    .collect()
            },
            payload,
        })
        .collect();

    Ok(BuiltFixture {
        bytes,
        items: built_items,
        mint_item,
    })
}

fn dref_box(drefs: &[FixtureDref]) -> Vec<u8> {
    let mut p = (drefs.len() as u32).to_be_bytes().to_vec();
    for d in drefs {
        p.extend(match d {
            FixtureDref::SelfContained => full(b"url ", 0, 1, &[]),
            FixtureDref::Url(loc) => {
                let mut b = loc.as_bytes().to_vec();
                b.push(0);
                full(b"url ", 0, 0, &b)
            }
            FixtureDref::Urn { name, location } => {
                let mut b = name.as_bytes().to_vec();
                b.push(0);
                b.extend_from_slice(location.as_bytes());
                b.push(0);
                full(b"urn ", 0, 0, &b)
            }
        });
    }
    full(b"dref", 0, 0, &p)
}

fn validate(spec: &FixtureSpec) -> Result<(), FixtureError> {
    let bad = |m: String| Err(FixtureError::InconsistentSpec(m));
    let mut ids: Vec<u32> = spec.items.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return bad("duplicate item id".into());
    }
    for it in &spec.items {
        if it.id > 0xffff && it.infe_version < 3 {
            return bad(format!("item {} needs infe version 3", it.id));
        }
        if it.infe_version > 3 {
            return bad(format!(
                "item {} has unsupported infe version {}",
                it.id, it.infe_version
            ));
        }
        if it.infe_version < 2 && it.item_type != b"mime" {
            return bad(format!("infe version {} items must be 'mime'", it.infe_version));
        }
        if usize::from(it.data_reference_index) > spec.drefs.len() {
            return bad(format!(
                "item {} names missing dref entry {}",
                it.id, it.data_reference_index
            ));
        }
        if it.properties.len() > 255 {
            return bad("too many properties on one item".into());
        }
    }
    let mut tracks: Vec<u32> = spec.tracks.iter().map(|t| t.track_id).collect();
    tracks.sort_unstable();
    if tracks.windows(2).any(|w| w[0] == w[1]) {
        return bad("duplicate track id".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mutations

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    /// Toggle the hidden bit of an item's `infe` flags.
    FlipHidden(u32),
    /// Clear the enabled bit of a track's `tkhd` flags.
    DisableTrack(u32),
    TruncateAt(u64),
    Append(Vec<u8>),
    /// Overwrite the 32-bit size of the n-th top-level box with `0xffffffff`.
    CorruptSize(usize),
}

/// Applies a minimal edit located by a fresh parse of `bytes`.
pub fn mutate(bytes: &[u8], mutation: &Mutation) -> Result<Vec<u8>, FixtureError> {
    let mut out = bytes.to_vec();
    match mutation {
        Mutation::FlipHidden(id) => {
            let parsed = ParsedFile::parse(bytes);
            let item = parsed
                .model
                .item(*id)
                .ok_or_else(|| FixtureError::TargetNotFound(format!("item {id}")))?;
            out[(item.infe_flags_offset + 2) as usize] ^= 0x01;
        }
        Mutation::DisableTrack(id) => {
            let parsed = ParsedFile::parse(bytes);
            let track = parsed
                .model
                .tracks
                .iter()
                .find(|t| t.track_id == *id)
                .ok_or_else(|| FixtureError::TargetNotFound(format!("track {id}")))?;
            out[(track.tkhd_flags_offset + 2) as usize] &= !0x01;
        }
        Mutation::TruncateAt(offset) => out.truncate(*offset as usize),
        Mutation::Append(extra) => out.extend_from_slice(extra),
        Mutation::CorruptSize(index) => {
            let tree = parse_tree(bytes);
            let node = tree
                .roots
                .get(*index)
                .ok_or_else(|| FixtureError::TargetNotFound(format!("top-level box {index}")))?;
            let at = node.header.offset as usize;
            out[at..at + 4].copy_from_slice(&u32::MAX.to_be_bytes());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Random specs

const RANDOM_TYPES: &[&[u8; 4]] = &[
    b"hvc1", b"hvc1", b"hvc1", b"av01", b"grid", b"iovl", b"Exif", b"mime", b"jpeg",
];

/// A random but internally consistent spec. Never sets `gap_before` or
/// trailing garbage, so a correct parser accounts for every byte.
pub fn random_spec(seed: u64) -> FixtureSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_items = rng.random_range(1..=8u32);
    let wide = rng.random_ratio(1, 10);
    let base_id = if wide { 70_000 } else { 1 };
    let mut items = Vec::new();
    for k in 0..n_items {
        let id = base_id + k * rng.random_range(1..=3u32);
        if items.iter().any(|i: &FixtureItem| i.id == id) {
            continue;
        }
        let ty = RANDOM_TYPES[rng.random_range(0..RANDOM_TYPES.len())];
        let mut it = FixtureItem::new(id, ty);
        it.hidden = rng.random_ratio(1, 4);
        it.infe_version = if wide {
            3
        } else if ty == b"mime" && rng.random_ratio(1, 3) {
            rng.random_range(0..=1)
        } else if rng.random_ratio(1, 5) {
            3
        } else {
            2
        };
        it.payload = Payload::Generated(rng.random_range(0..300));
        it.placement = if rng.random_ratio(1, 4) {
            Placement::Idat
        } else {
            Placement::Mdat
        };
        it.extent_count = rng.random_range(1..=4);
        it.reverse_extents = rng.random_bool(0.5);
        if rng.random_ratio(1, 3) {
            it.properties.push((
                PropertySpec::Ispe(rng.random_range(1..5000), rng.random_range(1..5000)),
                false,
            ));
        }
        if rng.random_ratio(1, 5) {
            it.properties.push((PropertySpec::Irot(rng.random_range(0..4)), true));
        }
        if rng.random_ratio(1, 8) {
            it.properties
                .push((PropertySpec::AuxC("urn:mpeg:hevc:2015:auxid:2".into()), false));
        }
        if rng.random_ratio(1, 8) {
            it.properties
                .push((PropertySpec::Raw(FourCC::new(b"zzzz"), vec![rng.random(); 5]), false));
        }
        items.push(it);
    }
    let ids: Vec<u32> = items.iter().map(|i| i.id).collect();

    let mut references = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        let ty: &[u8; 4] = [b"dimg", b"thmb", b"cdsc", b"auxl"][rng.random_range(0..4)];
        let from = ids[rng.random_range(0..ids.len())];
        let to: Vec<u32> = (0..rng.random_range(1..=3))
            .map(|_| ids[rng.random_range(0..ids.len())])
            .collect();
        references.push(FixtureRef::new(ty, from, &to));
    }

    let mut drefs = Vec::new();
    if rng.random_ratio(1, 3) {
        drefs.push(FixtureDref::SelfContained);
        if rng.random_bool(0.5) {
            drefs.push(FixtureDref::Url(format!("http://example.test/{}", rng.random::<u32>())));
            if rng.random_bool(0.5) {
                let i = rng.random_range(0..items.len());
                items[i].data_reference_index = 2;
            }
        }
    }

    let tracks = (0..rng.random_range(0..=2u32))
        .map(|k| {
            let mut t = FixtureTrack::new(k + 1, rng.random_range(0..8));
            t.sample_sizes = (0..rng.random_range(1..6)).map(|_| rng.random_range(1..100)).collect();
            t.samples_per_chunk = rng.random_range(1..4);
            t
        })
        .collect();

    let mint = match rng.random_range(0..4) {
        0 => {
            let candidates: Vec<u32> = items
                .iter()
                .filter(|i| i.data_reference_index == 0 && !matches!(i.payload, Payload::Generated(0)))
                .map(|i| i.id)
                .collect();
            match candidates.first() {
                Some(&target) => MintSpec::Correct {
                    target,
                    framing: if rng.random_bool(0.5) {
                        MintFraming::Raw
                    } else {
                        MintFraming::Tagged
                    },
                },
                None => MintSpec::Absent,
            }
        }
        _ => MintSpec::Absent,
    };

    FixtureSpec {
        major_brand: FourCC::new([b"heic", b"mif1", b"heix", b"msf1"][rng.random_range(0..4)]),
        items,
        references,
        primary: (rng.random_ratio(3, 4)).then(|| ids[rng.random_range(0..ids.len())]),
        tracks,
        drefs,
        mint,
        seed,
        ..Default::default()
    }
}

/// Compares a freshly parsed model against what the builder emitted.
/// Returns a description of the first disagreement.
pub fn verify_round_trip(spec: &FixtureSpec, built: &BuiltFixture) -> Result<(), String> {
    let parsed = ParsedFile::parse(&built.bytes);
    let model = &parsed.model;
    let fail = |m: String| Err(m);

    if parsed.tree.fatal {
        return fail("tree parse failed".into());
    }
    let garbage_start = (built.bytes.len() - spec.trailing_garbage.len()) as u64;
    if parsed.tree.diagnostics.iter().any(|d| d.offset < garbage_start) {
        return fail(format!("tree diagnostics: {:?}", parsed.tree.diagnostics));
    }
    if model.primary_item != spec.primary {
        return fail(format!("primary {:?} != {:?}", model.primary_item, spec.primary));
    }
    if model.handler != Some(spec.handler) {
        return fail(format!("handler {:?} != {:?}", model.handler, spec.handler));
    }
    let expected_items = spec.items.len() + usize::from(built.mint_item.is_some());
    if model.items.len() != expected_items {
        return fail(format!("{} items parsed, {expected_items} built", model.items.len()));
    }
    for (it, rec) in spec.items.iter().zip(&model.items) {
        let ty = if it.infe_version < 2 {
            FourCC::new(b"mime")
        } else {
            it.item_type
        };
        if rec.item_id != it.id || rec.item_type != ty || rec.name != it.name {
            return fail(format!("item {} identity mismatch: {rec:?}", it.id));
        }
        if rec.hidden != it.hidden || rec.infe_version != it.infe_version {
            return fail(format!("item {} flags/version mismatch", it.id));
        }
        if ty == b"mime" && rec.content_type != Some(it.content_type.clone().unwrap_or_default()) {
            return fail(format!("item {} content type {:?}", it.id, rec.content_type));
        }
        let kinds: Vec<bool> = rec.properties.iter().map(|p| p.essential).collect();
        let expected: Vec<bool> = it.properties.iter().map(|p| p.1).collect();
        if kinds != expected {
            return fail(format!("item {} property associations differ", it.id));
        }
    }
    if let Some(mint) = built.mint_item {
        if model.items.last().map(|i| (i.item_id, i.item_type)) != Some((mint, FourCC::new(b"mint"))) {
            return fail("mint item missing".into());
        }
    }
    for b in &built.items {
        let rec = model.item(b.id).ok_or(format!("item {} missing", b.id))?;
        let spans: Vec<Span> = rec.extents.iter().filter_map(|e| e.absolute).collect();
        if spans != b.extents {
            return fail(format!("item {} extents {spans:?} != {:?}", b.id, b.extents));
        }
    }

    let mut refs: Vec<(FourCC, u32, Vec<u32>)> = spec
        .references
        .iter()
        .map(|r| (r.ref_type, r.from, r.to.clone()))
        .collect();
    if let (Some(mint), MintSpec::Correct { target, .. } | MintSpec::Corrupted { target, .. }) =
        (built.mint_item, spec.mint)
    {
        refs.push((FourCC::new(b"cdsc"), mint, vec![target]));
    }
    let parsed_refs: Vec<(FourCC, u32, Vec<u32>)> = model
        .references
        .iter()
        .map(|r| (r.ref_type, r.from_item, r.to_items.clone()))
        .collect();
    if parsed_refs != refs {
        return fail(format!("references {parsed_refs:?} != {refs:?}"));
    }

    if model.tracks.len() != spec.tracks.len() {
        return fail(format!(
            "{} tracks parsed, {} built",
            model.tracks.len(),
            spec.tracks.len()
        ));
    }
    for (t, rec) in spec.tracks.iter().zip(&model.tracks) {
        if rec.track_id != t.track_id || rec.tkhd_flags != t.flags || rec.enabled != (t.flags & 1 != 0) {
            return fail(format!("track {} header mismatch", t.track_id));
        }
        if rec.sample_count as usize != t.sample_sizes.len() {
            return fail(format!("track {} sample count mismatch", t.track_id));
        }
        let total: u64 = rec.chunks.iter().map(Span::len).sum();
        if total != t.sample_sizes.iter().map(|&s| u64::from(s)).sum::<u64>() {
            return fail(format!("track {} chunk bytes mismatch", t.track_id));
        }
    }

    let externals: Vec<bool> = model.data_references.iter().map(|d| d.is_external()).collect();
    let expected: Vec<bool> = spec.drefs.iter().map(|d| *d != FixtureDref::SelfContained).collect();
    if externals != expected {
        return fail(format!("dref entries {externals:?} != {expected:?}"));
    }

    let coverage = crate::boxes::compute_coverage(&parsed.tree, model.referenced_spans());
    let unreferenced = coverage.unreferenced_total();
    let gaps: u64 = spec.items.iter().map(|i| i.gap_before as u64).sum();
    let garbage = spec.trailing_garbage.len() as u64;
    // Garbage that reads as a box header keeps its 8 or 16 header bytes.
    let lowest = gaps + garbage.saturating_sub(16);
    if unreferenced > gaps + garbage || unreferenced < lowest {
        return fail(format!(
            "{unreferenced} unreferenced bytes: {:?}",
            coverage.unreferenced()
        ));
    }
    Ok(())
}

/// Writes a small regression corpus of fixtures into `dir`.
pub fn write_corpus(dir: &Path, count: u64) -> io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut named: Vec<(String, FixtureSpec)> = vec![
        ("single".into(), FixtureSpec::single_image()),
        ("apple_grid".into(), FixtureSpec::apple_grid(6)),
        ("grid".into(), FixtureSpec::four_masters(b"grid")),
        ("overlay".into(), FixtureSpec::four_masters(b"iovl")),
    ];
    for seed in 0..count {
        named.push((format!("random_{seed:03}"), random_spec(seed)));
    }
    let mut out = Vec::new();
    for (name, spec) in named {
        let bytes = build(&spec).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let path = dir.join(format!("{name}.heic"));
        std::fs::write(&path, bytes)?;
        out.push(path);
    }
    Ok(out)
}
