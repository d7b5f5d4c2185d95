//! Four-character codes naming boxes, brands, item types and properties.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A four-byte code such as `ftyp`, `infe` or `hvc1`.
///
/// Rendered as text with non-printable bytes written as `\xNN` and a literal
/// backslash written as `\\`, so every code survives a round trip through its
/// text form.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FourCC(pub [u8; 4]);

impl FourCC {
    pub const fn new(code: &[u8; 4]) -> Self {
        FourCC(*code)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let code: [u8; 4] = bytes.get(..4)?.try_into().ok()?;
        Some(FourCC(code))
    }

    pub fn as_bytes(&self) -> &[u8; 4] {
        &self.0
    }

    /// True when all four bytes are printable ASCII (space included).
    pub fn is_printable(&self) -> bool {
        self.0.iter().all(|b| (0x20..=0x7e).contains(b))
    }

    /// Text form with characters unsafe for file names replaced by `_`.
    pub fn file_safe(&self) -> String {
        self.0
            .iter()
            .map(|&b| {
                if b.is_ascii_alphanumeric() || b == b'-' {
                    b as char
                } else {
                    '_'
                }
            })
            .collect()
    }
}

impl PartialEq<&[u8; 4]> for FourCC {
    fn eq(&self, other: &&[u8; 4]) -> bool {
        &self.0 == *other
    }
}

impl PartialEq<[u8; 4]> for FourCC {
    fn eq(&self, other: &[u8; 4]) -> bool {
        &self.0 == other
    }
}

impl From<[u8; 4]> for FourCC {
    fn from(code: [u8; 4]) -> Self {
        FourCC(code)
    }
}

impl fmt::Display for FourCC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            match b {
                b'\\' => f.write_str("\\\\")?,
                0x20..=0x7e => write!(f, "{}", b as char)?,
                _ => write!(f, "\\x{b:02x}")?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for FourCC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{self}'")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid four-character code text: {0:?}")]
pub struct ParseFourCCError(pub String);

impl FromStr for FourCC {
    type Err = ParseFourCCError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseFourCCError(s.to_string());
        let mut out = Vec::with_capacity(4);
        let mut chars = s.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('\\') => out.push(b'\\'),
                    Some('x') => {
                        let hi = chars.next().ok_or_else(err)?;
                        let lo = chars.next().ok_or_else(err)?;
                        let hex: String = [hi, lo].iter().collect();
                        out.push(u8::from_str_radix(&hex, 16).map_err(|_| err())?);
                    }
                    _ => return Err(err()),
                }
            } else if c.is_ascii() && !c.is_ascii_control() {
                out.push(c as u8);
            } else {
                return Err(err());
            }
        }
        let code: [u8; 4] = out.try_into().map_err(|_| err())?;
        Ok(FourCC(code))
    }
}

impl Serialize for FourCC {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FourCC {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn printable_codes_render_verbatim() {
        assert_eq!(FourCC::new(b"ftyp").to_string(), "ftyp");
        assert_eq!(FourCC::new(b"url ").to_string(), "url ");
    }

    #[test]
    fn non_printable_bytes_are_escaped_not_dropped() {
        let code = FourCC([0xa9, b'n', b'a', 0x00]);
        assert_eq!(code.to_string(), "\\xa9na\\x00");
        assert!(!code.is_printable());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!("abc".parse::<FourCC>().is_err());
        assert!("abcde".parse::<FourCC>().is_err());
        assert!("\\x0".parse::<FourCC>().is_err());
    }

    #[test]
    fn file_safe_form() {
        assert_eq!(FourCC::new(b"uri ").file_safe(), "uri_");
        assert_eq!(FourCC::new(b"Exif").file_safe(), "Exif");
    }

    proptest! {
        #[test]
        fn text_form_round_trips(bytes in any::<[u8; 4]>()) {
            let code = FourCC(bytes);
            prop_assert_eq!(code.to_string().parse::<FourCC>().unwrap(), code);
        }
    }
}
