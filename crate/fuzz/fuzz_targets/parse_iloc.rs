#![no_main]

use heif_forensics::semantics::parse_iloc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_iloc(data, 0);
});
