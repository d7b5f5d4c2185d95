#![no_main]

use heif_forensics::semantics::detect_heif;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let d = detect_heif(data);
    if d.kind.is_heif() {
        assert!(d.brands.is_some());
    }
});
