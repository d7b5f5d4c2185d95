#![no_main]

use heif_forensics::carver;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let found = carver::scan(data).unwrap();
    for c in found.heif.iter().chain(&found.non_heif) {
        assert_eq!(&data[c.start as usize + 4..c.start as usize + 8], b"ftyp");
        assert!(c.start < c.end);
    }
    for w in found.heif.windows(2) {
        assert!(w[0].end <= w[1].start);
    }
});
