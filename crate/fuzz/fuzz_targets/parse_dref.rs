#![no_main]

use heif_forensics::semantics::{parse_dref, DrefScope};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_dref(data, 0, DrefScope::Meta);
});
