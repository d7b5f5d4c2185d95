#![no_main]

use heif_forensics::semantics::exif_tiff_payload;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Some(tiff) = exif_tiff_payload(data) {
        assert!(tiff.len() <= data.len());
    }
});
