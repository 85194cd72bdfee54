//! Replays the fuzz targets' checks over the checked-in seeds and simple
//! mutations of them (truncations and single-byte flips).

use std::path::PathBuf;

use stylemotion::checkpoint::{decode_container, encode_container};
use stylemotion::data::ContentScript;
use stylemotion::manifest::DatasetManifest;
use stylemotion::tensor_io::{decode_tensor, encode_tensor};
use stylemotion::wav::decode_wav;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds for {target}");
    out.sort();
    out
}

fn mutations(seed: &[u8]) -> impl Iterator<Item = Vec<u8>> + '_ {
    let cuts = (0..seed.len()).map(|n| seed[..n].to_vec());
    let flips = (0..seed.len()).flat_map(move |i| {
        [0x01u8, 0x80, 0xff].into_iter().map(move |x| {
            let mut m = seed.to_vec();
            m[i] ^= x;
            m
        })
    });
    cuts.chain(flips)
}

fn check_tensor(data: &[u8]) {
    let Ok(array) = decode_tensor(data) else { return };
    if array.iter().all(|v| v.is_finite()) {
        assert_eq!(encode_tensor(&array).unwrap(), data);
    }
}

fn check_container(data: &[u8]) {
    let Ok(entries) = decode_container(data) else { return };
    if entries.iter().all(|(_, a)| a.iter().all(|v| v.is_finite())) {
        assert_eq!(encode_container(&entries).unwrap(), data);
    }
}

fn check_manifest(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::from_json(text, "corpus") {
        let back = DatasetManifest::from_json(&m.to_json(), "corpus").unwrap();
        assert_eq!(back.samples.len(), m.samples.len());
        assert_eq!(back.identities, m.identities);
    }
}

fn check_script(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(script) = ContentScript::from_json(text) else { return };
    let frames = script.frames();
    if frames < 1 << 16 && script.validate(frames, Some(64)).is_ok() {
        assert_eq!(script.frame_tokens().len(), frames);
        assert_eq!(script.crop(frames / 2, frames - frames / 2).frames(), frames - frames / 2);
    }
}

fn check_wav(data: &[u8]) {
    if let Ok(w) = decode_wav(data) {
        assert!(w.samples.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn tensor_seeds_decode_and_round_trip() {
    for seed in seeds("tensor") {
        assert!(decode_tensor(&seed).is_ok());
        mutations(&seed).for_each(|m| check_tensor(&m));
        check_tensor(&seed);
    }
}

#[test]
fn container_seeds_decode_and_round_trip() {
    for seed in seeds("checkpoint") {
        assert!(decode_container(&seed).is_ok());
        mutations(&seed).for_each(|m| check_container(&m));
    }
}

#[test]
fn manifest_seeds_parse() {
    for seed in seeds("manifest") {
        assert!(DatasetManifest::from_json(std::str::from_utf8(&seed).unwrap(), "corpus").is_ok());
        mutations(&seed).for_each(|m| check_manifest(&m));
    }
}

#[test]
fn script_seeds_parse() {
    for seed in seeds("script") {
        assert!(ContentScript::from_json(std::str::from_utf8(&seed).unwrap()).is_ok());
        mutations(&seed).for_each(|m| check_script(&m));
    }
}

#[test]
fn wav_seeds_decode() {
    for seed in seeds("wav") {
        assert!(decode_wav(&seed).is_ok());
        mutations(&seed).for_each(|m| check_wav(&m));
    }
}
