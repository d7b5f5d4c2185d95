//! Evidence hashing and `mint` verification.

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::semantics::FileModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "item_id", rename_all = "snake_case")]
pub enum DigestSubject {
    File,
    Item(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestSet {
    pub subject: DigestSubject,
    #[serde(with = "crate::hexser")]
    pub md5: [u8; 16],
    #[serde(with = "crate::hexser")]
    pub sha1: [u8; 20],
    #[serde(with = "crate::hexser")]
    pub sha256: [u8; 32],
    pub byte_count: u64,
}

impl DigestSet {
    pub fn md5_hex(&self) -> String {
        hex::encode(self.md5)
    }

    pub fn sha1_hex(&self) -> String {
        hex::encode(self.sha1)
    }

    pub fn sha256_hex(&self) -> String {
        hex::encode(self.sha256)
    }
}

struct Hashers {
    md5: Md5,
    sha1: Sha1,
    sha256: Sha256,
    count: u64,
}

impl Hashers {
    fn new() -> Self {
        Hashers {
            md5: Md5::new(),
            sha1: Sha1::new(),
            sha256: Sha256::new(),
            count: 0,
        }
    }

    fn update(&mut self, data: &[u8]) {
        self.md5.update(data);
        self.sha1.update(data);
        self.sha256.update(data);
        self.count += data.len() as u64;
    }

    fn finish(self, subject: DigestSubject) -> DigestSet {
        DigestSet {
            subject,
            md5: self.md5.finalize().into(),
            sha1: self.sha1.finalize().into(),
            sha256: self.sha256.finalize().into(),
            byte_count: self.count,
        }
    }
}

pub fn hash_file(bytes: &[u8]) -> DigestSet {
    let mut h = Hashers::new();
    h.update(bytes);
    h.finish(DigestSubject::File)
}

/// Streaming variant of [`hash_file`] for readers too large to buffer.
pub fn hash_reader<R: std::io::Read>(mut reader: R) -> std::io::Result<DigestSet> {
    let mut h = Hashers::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finish(DigestSubject::File))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashError {
    #[error("item {0} does not exist")]
    ItemNotFound(u32),
    #[error("item {item_id} stores its data outside this file (data reference {data_reference_index})")]
    ExternalData { item_id: u32, data_reference_index: u16 },
    #[error("item {item_id} extent [{start}, {end}) lies outside the file")]
    ExtentOutOfFile { item_id: u32, start: u64, end: u64 },
    #[error("item {item_id} has an extent that cannot be resolved to file bytes")]
    UnresolvedExtent { item_id: u32 },
}

/// Concatenated extent bytes of an item in declared order.
pub fn item_bytes(model: &FileModel, bytes: &[u8], item_id: u32) -> Result<Vec<u8>, HashError> {
    let item = model.item(item_id).ok_or(HashError::ItemNotFound(item_id))?;
    if let Some(idx) = item.external_data_reference(model) {
        return Err(HashError::ExternalData {
            item_id,
            data_reference_index: idx,
        });
    }
    let mut out = Vec::with_capacity(item.total_length() as usize);
    for ext in &item.extents {
        let span = ext.absolute.ok_or(HashError::UnresolvedExtent { item_id })?;
        let slice = span.slice(bytes).ok_or(HashError::ExtentOutOfFile {
            item_id,
            start: span.start,
            end: span.end,
        })?;
        out.extend_from_slice(slice);
    }
    Ok(out)
}

pub fn hash_item(model: &FileModel, bytes: &[u8], item_id: u32) -> Result<DigestSet, HashError> {
    let data = item_bytes(model, bytes, item_id)?;
    let mut h = Hashers::new();
    h.update(&data);
    Ok(h.finish(DigestSubject::Item(item_id)))
}

// ---------------------------------------------------------------------------
// mint

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MintFraming {
    /// Payload is exactly the 16 digest bytes.
    Raw,
    /// A four-character scheme tag precedes the digest.
    Tagged,
    /// Payload is a complete `md5i` box.
    Boxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MintStatus {
    Match,
    Mismatch,
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintVerification {
    pub item_id: u32,
    pub framing: Option<MintFraming>,
    #[serde(with = "opt_hex16")]
    pub declared_md5: Option<[u8; 16]>,
    #[serde(with = "opt_hex16")]
    pub computed_md5: Option<[u8; 16]>,
    /// Item ids whose concatenated extent bytes the digest was checked against.
    pub target: Vec<u32>,
    pub status: MintStatus,
    pub note: String,
}

mod opt_hex16 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<[u8; 16]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; 16]>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        let raw = hex::decode(&text).map_err(serde::de::Error::custom)?;
        raw.try_into()
            .map(Some)
            .map_err(|_| serde::de::Error::custom("expected 16 bytes"))
    }
}

/// Extracts the declared digest and the framing it was found in.
pub fn parse_mint_payload(payload: &[u8]) -> Option<([u8; 16], MintFraming)> {
    match payload.len() {
        16 => Some((payload.try_into().ok()?, MintFraming::Raw)),
        20 if payload[..4].iter().all(|b| b.is_ascii_graphic() || *b == b' ') => {
            Some((payload[4..].try_into().ok()?, MintFraming::Tagged))
        }
        24 if &payload[4..8] == b"md5i" && payload[..4] == 24u32.to_be_bytes() => {
            Some((payload[8..].try_into().ok()?, MintFraming::Boxed))
        }
        _ => None,
    }
}

pub fn verify_mint(model: &FileModel, bytes: &[u8]) -> Vec<MintVerification> {
    model
        .items
        .iter()
        .filter(|i| i.item_type == b"mint")
        .map(|mint| {
            let mut v = MintVerification {
                item_id: mint.item_id,
                framing: None,
                declared_md5: None,
                computed_md5: None,
                target: Vec::new(),
                status: MintStatus::Unresolvable,
                note: String::new(),
            };
            let payload = match item_bytes(model, bytes, mint.item_id) {
                Ok(p) => p,
                Err(e) => {
                    v.note = format!("mint payload unreadable: {e}");
                    return v;
                }
            };
            let Some((declared, framing)) = parse_mint_payload(&payload) else {
                v.note = format!("unrecognised md5i layout ({} bytes)", payload.len());
                return v;
            };
            v.declared_md5 = Some(declared);
            v.framing = Some(framing);
            v.target = model
                .references
                .iter()
                .filter(|r| r.ref_type == b"cdsc" && r.from_item == mint.item_id)
                .flat_map(|r| r.to_items.iter().copied())
                .collect();
            if v.target.is_empty() {
                v.note = "no cdsc reference names the covered item".into();
                return v;
            }
            let mut data = Vec::new();
            for &t in &v.target {
                match item_bytes(model, bytes, t) {
                    Ok(b) => data.extend(b),
                    Err(e) => {
                        v.note = format!("target unreadable: {e}");
                        return v;
                    }
                }
            }
            let computed: [u8; 16] = Md5::digest(&data).into();
            v.computed_md5 = Some(computed);
            v.status = if computed == declared {
                MintStatus::Match
            } else {
                MintStatus::Mismatch
            };
            v.note = format!(
                "digest read with {} framing; compared against raw extent bytes",
                match framing {
                    MintFraming::Raw => "raw",
                    MintFraming::Tagged => "tagged",
                    MintFraming::Boxed => "md5i box",
                }
            );
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{build, build_detailed, FixtureDref, FixtureSpec, MintFraming as FxFraming, MintSpec};
    use crate::semantics::ParsedFile;

    #[test]
    fn empty_input_md5() {
        assert_eq!(hash_file(&[]).md5_hex(), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(
            hash_file(&[]).sha256_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn streaming_matches_buffered() {
        let data: Vec<u8> = (0..200_000u32).map(|i| (i * 7) as u8).collect();
        assert_eq!(hash_reader(&data[..]).unwrap(), hash_file(&data));
    }

    #[test]
    fn multi_extent_item_hashes_concatenation() {
        let mut spec = FixtureSpec::single_image();
        spec.items[0].extent_count = 2;
        spec.items[0].reverse_extents = true;
        let built = build_detailed(&spec).unwrap();
        let model = ParsedFile::parse(&built.bytes).model;
        let d = hash_item(&model, &built.bytes, 1).unwrap();
        assert_eq!(d.byte_count, built.items[0].payload.len() as u64);
        let expected: [u8; 16] = Md5::digest(&built.items[0].payload).into();
        assert_eq!(d.md5, expected);
    }

    #[test]
    fn external_item_refuses() {
        let mut spec = FixtureSpec::single_image();
        spec.drefs = vec![
            FixtureDref::SelfContained,
            FixtureDref::Url("http://example.test/x".into()),
        ];
        spec.items[0].data_reference_index = 2;
        let bytes = build(&spec).unwrap();
        let model = ParsedFile::parse(&bytes).model;
        assert!(matches!(
            hash_item(&model, &bytes, 1),
            Err(HashError::ExternalData { .. })
        ));
        assert_eq!(hash_item(&model, &bytes, 9), Err(HashError::ItemNotFound(9)));
    }

    #[test]
    fn mint_match_and_mismatch() {
        for (mint, expected) in [
            (
                MintSpec::Correct {
                    target: 1,
                    framing: FxFraming::Raw,
                },
                MintStatus::Match,
            ),
            (
                MintSpec::Correct {
                    target: 1,
                    framing: FxFraming::Tagged,
                },
                MintStatus::Match,
            ),
            (
                MintSpec::Corrupted {
                    target: 1,
                    framing: FxFraming::Raw,
                },
                MintStatus::Mismatch,
            ),
        ] {
            let spec = FixtureSpec {
                mint,
                ..FixtureSpec::single_image()
            };
            let bytes = build(&spec).unwrap();
            let model = ParsedFile::parse(&bytes).model;
            let v = verify_mint(&model, &bytes);
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].status, expected);
            assert_eq!(v[0].target, vec![1]);
        }
    }

    #[test]
    fn no_mint_no_verifications() {
        let bytes = build(&FixtureSpec::burst(3)).unwrap();
        assert!(verify_mint(&ParsedFile::parse(&bytes).model, &bytes).is_empty());
    }

    #[test]
    fn mint_framings() {
        let d = [7u8; 16];
        assert_eq!(parse_mint_payload(&d), Some((d, MintFraming::Raw)));
        let mut tagged = b"md5 ".to_vec();
        tagged.extend_from_slice(&d);
        assert_eq!(parse_mint_payload(&tagged), Some((d, MintFraming::Tagged)));
        let mut boxed = 24u32.to_be_bytes().to_vec();
        boxed.extend_from_slice(b"md5i");
        boxed.extend_from_slice(&d);
        assert_eq!(parse_mint_payload(&boxed), Some((d, MintFraming::Boxed)));
        assert_eq!(parse_mint_payload(&d[..5]), None);
    }
}
