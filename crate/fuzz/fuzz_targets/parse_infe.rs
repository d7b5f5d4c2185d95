#![no_main]

use heif_forensics::semantics::parse_infe;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(e) = parse_infe(data, 0) {
        assert!(e.flags_offset + 3 <= data.len() as u64);
        assert_eq!(e.hidden(), data[e.flags_offset as usize + 2] & 1 == 1);
    }
});
