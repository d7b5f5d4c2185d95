#![no_main]

use heif_forensics::integrity::parse_mint_payload;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_mint_payload(data);
});
