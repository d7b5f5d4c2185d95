#![no_main]

use heif_forensics::rewriter::{reveal_hidden, RevealOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let opts = RevealOptions {
        also_enable_tracks: true,
        ..Default::default()
    };
    if let Ok(out) = reveal_hidden(data, &opts) {
        assert_eq!(out.output.len(), data.len());
        let changed = data.iter().zip(&out.output).filter(|(a, b)| a != b).count();
        assert_eq!(changed, out.change_log.len());
    }
});
