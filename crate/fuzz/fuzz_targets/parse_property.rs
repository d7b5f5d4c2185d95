#![no_main]

use heif_forensics::fourcc::FourCC;
use heif_forensics::semantics::parse_property;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() >= 4 {
        let fourcc = FourCC([data[0], data[1], data[2], data[3]]);
        let _ = parse_property(fourcc, &data[4..]);
    }
});
