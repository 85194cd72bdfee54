#![no_main]

use libfuzzer_sys::fuzz_target;
use stylemotion::tensor_io::{decode_tensor, encode_tensor};

fuzz_target!(|data: &[u8]| {
    let Ok(array) = decode_tensor(data) else { return };
    // The writer refuses non-finite payloads, so only finite tensors round-trip.
    if array.iter().all(|v| v.is_finite()) {
        let again = encode_tensor(&array).expect("decoded tensors re-encode");
        assert_eq!(again, data);
    }
});
