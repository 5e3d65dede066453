//! PCM16 mono WAV reading and writing.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::io::write_atomic;

fn spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Encodes a clip as PCM16 mono WAV bytes. Samples outside [−1, 1] are
/// clipped.
pub fn encode(clip: &AudioClip) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write_to(clip, &mut buf)?;
    Ok(buf.into_inner())
}

fn write_to<W: Write + Seek>(clip: &AudioClip, w: W) -> Result<()> {
    let hw = |e: hound::Error| Error::format("wav writer", e.to_string());
    let mut writer = hound::WavWriter::new(w, spec(clip.sample_rate())).map_err(hw)?;
    for &s in clip.samples() {
        writer.write_sample(quantize(s)).map_err(hw)?;
    }
    writer.finalize().map_err(hw)
}

pub fn decode<R: Read>(name: &str, r: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(r).map_err(|e| Error::format(name, e.to_string()))?;
    let s = reader.spec();
    if s.channels != 1 {
        return Err(Error::format(name, format!("{} channels, expected mono", s.channels)));
    }
    if s.sample_format != SampleFormat::Int || s.bits_per_sample != 16 {
        return Err(Error::format(
            name,
            format!("{:?} {}-bit samples, expected PCM16", s.sample_format, s.bits_per_sample),
        ));
    }
    let declared = reader.len() as usize;
    let mut samples = Vec::with_capacity(declared);
    for v in reader.into_samples::<i16>() {
        let v = v.map_err(|e| Error::format(name, format!("truncated payload: {e}")))?;
        samples.push((f64::from(v) / 32767.0).clamp(-1.0, 1.0));
    }
    if samples.len() != declared {
        return Err(Error::format(
            name,
            format!("truncated payload: {} of {declared} samples", samples.len()),
        ));
    }
    if samples.is_empty() {
        return Err(Error::format(name, "zero-length payload"));
    }
    AudioClip::new(samples, s.sample_rate)
}

pub fn read(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&path.display().to_string(), Cursor::new(bytes))
}

pub fn write(path: &Path, clip: &AudioClip) -> Result<()> {
    write_atomic(path, &encode(clip)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_rate_passes_through() {
        let c = AudioClip::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        let back = decode("mem", Cursor::new(encode(&c).unwrap())).unwrap();
        assert_eq!(back.sample_rate(), 8000);
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn stereo_is_rejected() {
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(
            &mut buf,
            WavSpec {
                channels: 2,
                ..spec(16000)
            },
        )
        .unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let e = decode("stereo.wav", Cursor::new(buf.into_inner())).unwrap_err();
        assert!(e.to_string().contains("2 channels"));
    }
}
