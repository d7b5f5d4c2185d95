//! Working copies with hidden/disabled flags cleared.
//!
//! Only the lowest flag bit is touched; every other byte is copied verbatim.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::semantics::{ModelIssue, ParsedFile};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ItemSelection {
    #[default]
    All,
    Ids(Vec<u32>),
}

impl ItemSelection {
    fn includes(&self, id: u32) -> bool {
        match self {
            ItemSelection::All => true,
            ItemSelection::Ids(ids) => ids.contains(&id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RevealOptions {
    pub items: ItemSelection,
    pub also_enable_tracks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum ChangeSubject {
    Item(u32),
    Track(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteChange {
    pub offset: u64,
    pub old: u8,
    pub new: u8,
    pub subject: ChangeSubject,
}

impl fmt::Display for ByteChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:02x}→{:02x}", self.offset, self.old, self.new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealOutcome {
    pub output: Vec<u8>,
    pub change_log: Vec<ByteChange>,
    /// The primary item was among those revealed.
    pub hidden_cover: bool,
}

impl RevealOutcome {
    pub fn nothing_to_reveal(&self) -> bool {
        self.change_log.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RevealError {
    #[error("input could not be parsed: {0}")]
    ParseFailed(String),
}

pub fn reveal_hidden(input: &[u8], options: &RevealOptions) -> Result<RevealOutcome, RevealError> {
    let parsed = ParsedFile::parse(input);
    if parsed.tree.fatal {
        return Err(RevealError::ParseFailed("no box structure found".into()));
    }
    if parsed
        .model
        .diagnostics
        .iter()
        .any(|d| d.issue == ModelIssue::MissingFtyp)
    {
        return Err(RevealError::ParseFailed("no 'ftyp' box".into()));
    }
    let mut output = input.to_vec();
    let mut change_log = Vec::new();
    let mut hidden_cover = false;

    for item in parsed
        .model
        .items
        .iter()
        .filter(|i| i.hidden && options.items.includes(i.item_id))
    {
        let at = (item.infe_flags_offset + 2) as usize;
        let old = output[at];
        let new = old & !0x01;
        output[at] = new;
        change_log.push(ByteChange {
            offset: at as u64,
            old,
            new,
            subject: ChangeSubject::Item(item.item_id),
        });
        hidden_cover |= parsed.model.primary_item == Some(item.item_id);
    }

    if options.also_enable_tracks {
        for track in parsed.model.tracks.iter().filter(|t| !t.enabled) {
            let at = (track.tkhd_flags_offset + 2) as usize;
            let old = output[at];
            let new = old | 0x01;
            output[at] = new;
            change_log.push(ByteChange {
                offset: at as u64,
                old,
                new,
                subject: ChangeSubject::Track(track.track_id),
            });
        }
    }
    change_log.sort_by_key(|c| c.offset);

    Ok(RevealOutcome {
        output,
        change_log,
        hidden_cover,
    })
}
