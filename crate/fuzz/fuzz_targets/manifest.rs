#![no_main]

use libfuzzer_sys::fuzz_target;
use stylemotion::manifest::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::from_json(text, "corpus") {
        // Anything accepted must be accepted again after serialization.
        let back = DatasetManifest::from_json(&m.to_json(), "corpus").expect("re-parse");
        assert_eq!(back.samples.len(), m.samples.len());
        assert_eq!(back.identities, m.identities);
    }
});
