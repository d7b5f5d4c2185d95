//! Signature-and-structure carving of HEIF files out of raw blobs.
//!
//! A hit is the literal `ftyp` at offset +4 of a plausible box header. From
//! there the top-level box chain is walked until it stops making sense.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use memchr::memmem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fourcc::FourCC;
use crate::semantics::{Brands, HeifKind};

/// Bytes shared by neighbouring scan chunks.
pub const CHUNK_OVERLAP: u64 = 8;
const CHUNK_SIZE: u64 = 4 << 20;
/// Largest `ftyp` accepted; real ones list a handful of brands.
const MAX_FTYP_SIZE: u64 = 4096;
/// Largest `meta` read back to look for its handler.
const MAX_META_READ: u64 = 1 << 20;

const W_BRAND: f64 = 0.4;
const W_PICT: f64 = 0.3;
const W_CHAIN: f64 = 0.2;
const W_CLEAN: f64 = 0.1;
const OPEN_ENDED_CAP: f64 = 0.8;

/// Top-level boxes that may legitimately run past the end of a damaged blob.
const KNOWN_TOP_LEVEL: &[&[u8; 4]] = &[
    b"meta", b"moov", b"mdat", b"free", b"skip", b"uuid", b"wide", b"pdin", b"moof", b"mfra", b"styp", b"sidx", b"idat",
];

/// Random-access byte source.
pub trait BlobSource: Sync {
    fn len(&self) -> u64;

    /// Reads up to `buf.len()` bytes at `offset`; short only at the end.
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlobSource for [u8] {
    fn len(&self) -> u64 {
        <[u8]>::len(self) as u64
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        let start = (offset.min(<[u8]>::len(self) as u64)) as usize;
        let n = buf.len().min(<[u8]>::len(self) - start);
        buf[..n].copy_from_slice(&self[start..start + n]);
        Ok(n)
    }
}

/// A file read with positional I/O, never loaded whole.
pub struct FileBlob {
    file: File,
    len: u64,
}

impl FileBlob {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Ok(FileBlob { file, len })
    }
}

impl BlobSource for FileBlob {
    fn len(&self) -> u64 {
        self.len
    }

    #[cfg(unix)]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        use std::os::unix::fs::FileExt;
        let mut done = 0;
        while done < buf.len() {
            match self.file.read_at(&mut buf[done..], offset + done as u64)? {
                0 => break,
                n => done += n,
            }
        }
        Ok(done)
    }

    #[cfg(windows)]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        use std::os::windows::fs::FileExt;
        let mut done = 0;
        while done < buf.len() {
            match self.file.seek_read(&mut buf[done..], offset + done as u64)? {
                0 => break,
                n => done += n,
            }
        }
        Ok(done)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The chain ended at the blob end or right before another `ftyp`.
    CleanEnd,
    /// The next header did not look like a box.
    InvalidBox,
    /// A box ran past the end of the blob.
    ScopeExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveCandidate {
    /// Offset of the size field preceding `ftyp`.
    pub start: u64,
    pub end: u64,
    pub brands: Brands,
    pub kind: HeifKind,
    pub score: f64,
    /// Top-level boxes accepted, `ftyp` included.
    pub boxes_walked: u32,
    pub stop_reason: StopReason,
    pub has_pict_meta: bool,
    /// A size-0 box was taken to extend to the blob end.
    pub open_ended: bool,
}

impl CarveCandidate {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// The candidate is known to be cut short.
    pub fn is_partial(&self) -> bool {
        self.stop_reason == StopReason::ScopeExhausted && !self.open_ended
    }

    fn overlaps(&self, other: &CarveCandidate) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// HEIF candidates after overlap suppression, by start offset.
    pub heif: Vec<CarveCandidate>,
    /// Structurally valid `ftyp` chains whose brands are not HEIF.
    pub non_heif: Vec<CarveCandidate>,
}

fn read_exact_at<B: BlobSource + ?Sized>(blob: &B, offset: u64, len: usize) -> io::Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    let n = blob.read_at(offset, &mut buf)?;
    buf.truncate(n);
    Ok(buf)
}

/// Offsets of every literal `ftyp` in the blob.
pub fn find_signatures<B: BlobSource + ?Sized>(blob: &B) -> io::Result<Vec<u64>> {
    let len = blob.len();
    let chunks = len.div_ceil(CHUNK_SIZE);
    let per_chunk: Vec<io::Result<Vec<u64>>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let start = i * CHUNK_SIZE;
            let primary_end = (start + CHUNK_SIZE).min(len);
            let read_end = (primary_end + CHUNK_OVERLAP).min(len);
            let buf = read_exact_at(blob, start, (read_end - start) as usize)?;
            Ok(memmem::find_iter(&buf, b"ftyp")
                .map(|p| start + p as u64)
                .filter(|&p| p < primary_end)
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for hits in per_chunk {
        out.extend(hits?);
    }
    Ok(out)
}

fn plausible_fourcc(f: &[u8]) -> bool {
    f.iter().all(|&b| (0x20..=0x7e).contains(&b) || b == 0xa9)
}

struct Header {
    fourcc: FourCC,
    /// `None` for size 0 (runs to the end of the blob).
    size: Option<u64>,
}

fn read_header<B: BlobSource + ?Sized>(blob: &B, at: u64) -> io::Result<Option<Header>> {
    let h = read_exact_at(blob, at, 16)?;
    if h.len() < 8 {
        return Ok(None);
    }
    let size32 = u32::from_be_bytes(h[..4].try_into().unwrap());
    let fourcc = FourCC::from_slice(&h[4..8]).unwrap();
    let size = match size32 {
        0 => None,
        1 => {
            if h.len() < 16 {
                return Ok(None);
            }
            let large = u64::from_be_bytes(h[8..16].try_into().unwrap());
            if large < 16 {
                return Ok(None);
            }
            Some(large)
        }
        s if s < 8 => return Ok(None),
        s => Some(u64::from(s)),
    };
    Ok(Some(Header { fourcc, size }))
}

fn meta_has_pict<B: BlobSource + ?Sized>(blob: &B, start: u64, size: u64) -> io::Result<bool> {
    let body = read_exact_at(blob, start, size.min(MAX_META_READ) as usize)?;
    // full box header, then children; QuickTime-style meta omits version/flags
    let first_child = if body.get(4..8) == Some(b"hdlr") { 0 } else { 4 };
    let mut pos = first_child;
    while pos + 8 <= body.len() {
        let sz = u32::from_be_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
        if &body[pos + 4..pos + 8] == b"hdlr" {
            return Ok(body.get(pos + 16..pos + 20) == Some(b"pict"));
        }
        if sz < 8 {
            break;
        }
        pos += sz;
    }
    Ok(false)
}

/// Validates a hit and walks its box chain. `ftyp_at` is the offset of the
/// literal `ftyp`; `hits` is the sorted list of all hits in the blob.
fn examine<B: BlobSource + ?Sized>(blob: &B, ftyp_at: u64, hits: &[u64]) -> io::Result<Option<CarveCandidate>> {
    let Some(start) = ftyp_at.checked_sub(4) else {
        return Ok(None);
    };
    let len = blob.len();
    let Some(Header { size: Some(size), .. }) = read_header(blob, start)? else {
        return Ok(None);
    };
    if !(16..=MAX_FTYP_SIZE).contains(&size) || start + size > len {
        return Ok(None);
    }
    let ftyp = read_exact_at(blob, start + 8, (size - 8) as usize)?;
    let Some(brands) = Brands::parse(&ftyp) else {
        return Ok(None);
    };
    let kind = HeifKind::classify(&brands);

    let next_hit = |after: u64| hits.iter().copied().find(|&h| h >= after + 4).map(|h| h - 4);
    let mut pos = start + size;
    let mut boxes = 1u32;
    let mut has_pict = false;
    let mut open_ended = false;
    let stop = loop {
        if pos == len {
            break StopReason::CleanEnd;
        }
        let Some(h) = read_header(blob, pos)? else {
            break StopReason::InvalidBox;
        };
        if h.fourcc == b"ftyp" {
            break StopReason::CleanEnd;
        }
        if !plausible_fourcc(h.fourcc.as_bytes()) {
            break StopReason::InvalidBox;
        }
        let known = KNOWN_TOP_LEVEL.iter().any(|k| h.fourcc == *k);
        let end = match h.size {
            None => {
                if !known {
                    break StopReason::InvalidBox;
                }
                open_ended = true;
                len
            }
            Some(s) => pos.saturating_add(s),
        };
        if end > len {
            if known {
                pos = len;
                boxes += 1;
                break StopReason::ScopeExhausted;
            }
            break StopReason::InvalidBox;
        }
        if !known && next_hit(pos).is_some_and(|n| n < end) {
            break StopReason::InvalidBox;
        }
        if h.fourcc == b"meta" {
            has_pict |= meta_has_pict(blob, pos + 8, end - pos - 8)?;
        }
        boxes += 1;
        pos = end;
        if open_ended {
            break StopReason::ScopeExhausted;
        }
    };

    let mut score = 0.0;
    if kind.is_heif() {
        score += W_BRAND;
    }
    if has_pict {
        score += W_PICT;
    }
    if boxes >= 3 {
        score += W_CHAIN;
    }
    if stop == StopReason::CleanEnd {
        score += W_CLEAN;
    }
    if open_ended {
        score = score.min(OPEN_ENDED_CAP);
    }
    Ok(Some(CarveCandidate {
        start,
        end: pos,
        brands,
        kind,
        score: (score * 100.0f64).round() / 100.0,
        boxes_walked: boxes,
        stop_reason: stop,
        has_pict_meta: has_pict,
        open_ended,
    }))
}

/// Greedy suppression: highest score first, ties by lower start.
fn suppress_overlaps(mut candidates: Vec<CarveCandidate>) -> Vec<CarveCandidate> {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)));
    let mut kept: Vec<CarveCandidate> = Vec::new();
    for c in candidates {
        if !kept.iter().any(|k| k.overlaps(&c)) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.start);
    kept
}

pub fn scan<B: BlobSource + ?Sized>(blob: &B) -> io::Result<ScanResult> {
    let hits = find_signatures(blob)?;
    let examined: Vec<io::Result<Option<CarveCandidate>>> = hits.par_iter().map(|&h| examine(blob, h, &hits)).collect();
    let mut heif = Vec::new();
    let mut non_heif = Vec::new();
    for c in examined {
        match c? {
            Some(c) if c.kind.is_heif() => heif.push(c),
            Some(c) => non_heif.push(c),
            None => {}
        }
    }
    Ok(ScanResult {
        heif: suppress_overlaps(heif),
        non_heif,
    })
}

/// Writes `blob[start..end)` to a new file; refuses to overwrite.
pub fn extract<B: BlobSource + ?Sized>(blob: &B, candidate: &CarveCandidate, destination: &Path) -> io::Result<u64> {
    let mut out = OpenOptions::new().write(true).create_new(true).open(destination)?;
    let mut pos = candidate.start;
    let mut buf = vec![0u8; 1 << 16];
    while pos < candidate.end {
        let want = ((candidate.end - pos) as usize).min(buf.len());
        let n = blob.read_at(pos, &mut buf[..want])?;
        if n == 0 {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "blob shorter than candidate",
            ));
        }
        out.write_all(&buf[..n])?;
        pos += n as u64;
    }
    out.flush()?;
    Ok(candidate.end - candidate.start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{build, FixtureSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<u8> {
        let mut v = vec![0u8; n];
        ChaCha8Rng::seed_from_u64(seed).fill(&mut v[..]);
        v
    }

    #[test]
    fn finds_planted_fixture() {
        let fixture = build(&FixtureSpec::single_image()).unwrap();
        let mut blob = noise(1, 1024);
        blob.extend_from_slice(&fixture);
        blob.extend(noise(2, 1024));
        let r = scan(&blob[..]).unwrap();
        assert_eq!(r.heif.len(), 1);
        let c = &r.heif[0];
        assert_eq!(c.start, 1024);
        assert_eq!(c.end, 1024 + fixture.len() as u64);
        assert!(c.score >= 0.9, "{c:?}");
    }

    #[test]
    fn standalone_fixture_scores_full() {
        let fixture = build(&FixtureSpec::single_image()).unwrap();
        let r = scan(&fixture[..]).unwrap();
        assert_eq!(r.heif[0].score, 1.0);
        assert_eq!(r.heif[0].stop_reason, StopReason::CleanEnd);
    }

    #[test]
    fn zeros_yield_nothing() {
        let r = scan(&vec![0u8; 100_000][..]).unwrap();
        assert!(r.heif.is_empty() && r.non_heif.is_empty());
    }

    #[test]
    fn non_heif_brand_goes_to_side_list() {
        let mut spec = FixtureSpec::single_image();
        spec.major_brand = FourCC::new(b"isom");
        spec.compatible = vec![FourCC::new(b"isom"), FourCC::new(b"mp41")];
        let mut blob = noise(3, 500);
        blob.extend(build(&spec).unwrap());
        let r = scan(&blob[..]).unwrap();
        assert!(r.heif.is_empty());
        assert_eq!(r.non_heif.len(), 1);
        assert_eq!(r.non_heif[0].start, 500);
    }

    #[test]
    fn truncated_fixture_is_partial() {
        let fixture = build(&FixtureSpec::burst(3)).unwrap();
        let cut = &fixture[..fixture.len() - 50];
        let mut blob = noise(4, 256);
        blob.extend_from_slice(cut);
        let r = scan(&blob[..]).unwrap();
        let c = &r.heif[0];
        assert_eq!(c.stop_reason, StopReason::ScopeExhausted);
        assert!(c.is_partial());
        assert_eq!(c.end, blob.len() as u64);
    }

    #[test]
    fn signature_straddling_chunk_boundary() {
        let fixture = build(&FixtureSpec::single_image()).unwrap();
        let mut blob = vec![0u8; CHUNK_SIZE as usize - 6];
        blob.extend_from_slice(&fixture);
        blob.extend(vec![0u8; 100]);
        let hits = find_signatures(&blob[..]).unwrap();
        assert_eq!(hits, vec![CHUNK_SIZE - 2]);
        assert_eq!(scan(&blob[..]).unwrap().heif[0].start, CHUNK_SIZE - 6);
    }

    #[test]
    fn back_to_back_fixtures() {
        let a = build(&FixtureSpec::single_image()).unwrap();
        let b = build(&FixtureSpec::burst(2)).unwrap();
        let blob = [a.clone(), b].concat();
        let r = scan(&blob[..]).unwrap();
        assert_eq!(r.heif.len(), 2);
        assert_eq!(r.heif[0].end, a.len() as u64);
        assert_eq!(r.heif[1].start, a.len() as u64);
    }

    #[test]
    fn suppression_prefers_score_then_start() {
        let base = |start, end, score| CarveCandidate {
            start,
            end,
            brands: Brands {
                major: FourCC::new(b"heic"),
                minor_version: 0,
                compatible: vec![],
            },
            kind: HeifKind::StillHevc,
            score,
            boxes_walked: 3,
            stop_reason: StopReason::InvalidBox,
            has_pict_meta: true,
            open_ended: false,
        };
        let kept = suppress_overlaps(vec![base(0, 100, 0.6), base(50, 150, 0.9), base(120, 200, 0.9)]);
        assert_eq!(kept.iter().map(|c| c.start).collect::<Vec<_>>(), vec![50]);
    }

    #[test]
    fn extract_writes_and_refuses_overwrite() {
        let fixture = build(&FixtureSpec::single_image()).unwrap();
        let mut blob = noise(5, 300);
        blob.extend_from_slice(&fixture);
        let r = scan(&blob[..]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("c.heic");
        assert_eq!(extract(&blob[..], &r.heif[0], &dest).unwrap(), fixture.len() as u64);
        assert_eq!(std::fs::read(&dest).unwrap(), fixture);
        assert!(extract(&blob[..], &r.heif[0], &dest).is_err());
    }

    #[test]
    fn file_blob_matches_slice() {
        let fixture = build(&FixtureSpec::single_image()).unwrap();
        let mut blob = noise(6, 4000);
        blob.extend_from_slice(&fixture);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob.bin");
        std::fs::write(&path, &blob).unwrap();
        let fb = FileBlob::open(&path).unwrap();
        assert_eq!(scan(&fb).unwrap(), scan(&blob[..]).unwrap());
    }
}
