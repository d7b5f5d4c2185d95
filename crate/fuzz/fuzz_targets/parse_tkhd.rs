#![no_main]

use heif_forensics::semantics::parse_tkhd;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_tkhd(data, 0);
});
