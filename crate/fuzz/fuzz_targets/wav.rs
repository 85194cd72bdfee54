#![no_main]

use libfuzzer_sys::fuzz_target;
use stylemotion::wav::decode_wav;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_wav(data) {
        assert!(w.samples.iter().all(|s| s.is_finite()));
    }
});
