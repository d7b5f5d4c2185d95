#![no_main]

use heif_forensics::semantics::parse_ipma;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_ipma(data, 0);
});
