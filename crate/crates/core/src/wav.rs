//! 16-bit PCM mono WAV import/export for [`Waveform`].

use std::io::{Cursor, Read, Seek};
use std::path::Path;

use crate::data::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f32 = 32767.0;

fn spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

fn quantize(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16
}

pub fn encode_wav(waveform: &Waveform) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec(waveform.sample_rate))
            .map_err(|e| Error::Wav(e.to_string()))?;
        for &s in &waveform.samples {
            writer
                .write_sample(quantize(s))
                .map_err(|e| Error::Wav(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

fn decode_from<R: Read + Seek>(reader: R) -> Result<Waveform> {
    let reader = hound::WavReader::new(reader).map_err(|e| Error::Wav(e.to_string()))?;
    let s = reader.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav(format!(
            "expected 16-bit PCM mono, got {} channel(s), {} bits, {:?}",
            s.channels, s.bits_per_sample, s.sample_format
        )));
    }
    if s.sample_rate == 0 {
        return Err(Error::Wav("sample rate is zero".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|r| r.map(|v| v as f32 / FULL_SCALE).map_err(|e| Error::Wav(e.to_string())))
        .collect::<Result<Vec<f32>>>()?;
    Ok(Waveform {
        samples: samples.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        sample_rate: s.sample_rate,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    decode_from(Cursor::new(bytes))
}

pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(waveform)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))
}
