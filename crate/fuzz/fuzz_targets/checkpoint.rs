#![no_main]

use libfuzzer_sys::fuzz_target;
use stylemotion::checkpoint::{decode_container, encode_container};

fuzz_target!(|data: &[u8]| {
    let Ok(entries) = decode_container(data) else { return };
    if entries.iter().all(|(_, a)| a.iter().all(|v| v.is_finite())) {
        assert_eq!(encode_container(&entries).expect("re-encode"), data);
    }
});
