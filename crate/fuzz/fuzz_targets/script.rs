#![no_main]

use libfuzzer_sys::fuzz_target;
use stylemotion::data::ContentScript;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(script) = ContentScript::from_json(text) else { return };
    let frames = script.frames();
    if frames < 1 << 16 && script.validate(frames, Some(64)).is_ok() {
        assert_eq!(script.frame_tokens().len(), frames);
        let half = script.crop(frames / 2, frames - frames / 2);
        assert_eq!(half.frames(), frames - frames / 2);
    }
});
