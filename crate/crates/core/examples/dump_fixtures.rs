//! Writes the fixture regression corpus to a directory.
//!
//! `cargo run -p heif-forensics --example dump_fixtures -- <dir> [count]`

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(16);
    for path in heif_forensics::fixtures::write_corpus(&dir, count)? {
        println!("{}", path.display());
    }
    Ok(())
}
