//! Canonical 16-bit PCM RIFF/WAVE files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PcmBuffer, RenderError, CHANNELS};

const HEADER_LEN: u32 = 44;
const BITS: u16 = 16;
const FORMAT_PCM: u16 = 1;

pub(crate) fn quantize(s: f32) -> i16 {
    (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub(crate) fn dequantize(q: i16) -> f32 {
    f32::from(q) / 32768.0
}

pub fn write_wav<W: Write>(pcm: &PcmBuffer, mut out: W) -> Result<(), RenderError> {
    if pcm.samples().iter().any(|s| !s.is_finite()) {
        return Err(RenderError::InvalidBuffer("non-finite sample".into()));
    }
    let block_align = (CHANNELS as u16) * BITS / 8;
    let data_len = u32::try_from(pcm.samples().len() * 2)
        .map_err(|_| RenderError::InvalidBuffer("too long for a WAV file".into()))?;
    let rate = pcm.sample_rate_hz();
    out.write_all(b"RIFF")?;
    out.write_all(&(HEADER_LEN - 8 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&FORMAT_PCM.to_le_bytes())?;
    out.write_all(&(CHANNELS as u16).to_le_bytes())?;
    out.write_all(&rate.to_le_bytes())?;
    out.write_all(&(rate * u32::from(block_align)).to_le_bytes())?;
    out.write_all(&block_align.to_le_bytes())?;
    out.write_all(&BITS.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(data_len as usize);
    for &s in pcm.samples() {
        bytes.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn wav_bytes(pcm: &PcmBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + pcm.samples().len() * 2);
    write_wav(pcm, &mut out).expect("writing to memory");
    out
}

pub fn write_wav_file(pcm: &PcmBuffer, path: impl AsRef<Path>) -> Result<(), RenderError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_wav(pcm, &mut w)?;
    w.flush()?;
    Ok(())
}

fn malformed(msg: impl Into<String>) -> RenderError {
    RenderError::MalformedFile(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a 16-bit stereo PCM WAV. Unknown chunks are skipped.
pub fn read_wav<R: Read>(mut input: R) -> Result<PcmBuffer, RenderError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(&bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed(format!("chunk {:?} overruns the file", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                format = Some((
                    u16_at(&bytes, body),
                    u16_at(&bytes, body + 2),
                    u32_at(&bytes, body + 4),
                    u16_at(&bytes, body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                if tag != FORMAT_PCM || bits != BITS {
                    return Err(malformed(format!("unsupported format tag {tag} / {bits} bits")));
                }
                if usize::from(channels) != CHANNELS {
                    return Err(malformed(format!("expected 2 channels, found {channels}")));
                }
                if !len.is_multiple_of(CHANNELS * 2) {
                    return Err(malformed("data chunk is not a whole number of frames"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| dequantize(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return PcmBuffer::from_interleaved(samples, rate);
            }
            _ => {}
        }
        pos = end + (len & 1);
    }
    Err(malformed("no data chunk"))
}

pub fn read_wav_file(path: impl AsRef<Path>) -> Result<PcmBuffer, RenderError> {
    read_wav(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(frames: usize) -> PcmBuffer {
        let mono: Vec<f32> = (0..frames).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        PcmBuffer::from_mono(&mono, 44_100)
    }

    #[test]
    fn one_second_header() {
        let bytes = wav_bytes(&PcmBuffer::silent(44_100, 44_100));
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(&bytes[12..16], b"fmt ");
        assert_eq!(u16_at(&bytes, 20), 1);
        assert_eq!(u16_at(&bytes, 22), 2);
        assert_eq!(u32_at(&bytes, 24), 44_100);
        assert_eq!(u32_at(&bytes, 28), 176_400);
        assert_eq!(u16_at(&bytes, 32), 4);
        assert_eq!(u16_at(&bytes, 34), 16);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 176_400);
        assert_eq!(u32_at(&bytes, 4), 36 + 176_400);
        assert_eq!(bytes.len(), 44 + 176_400);
    }

    #[test]
    fn round_trip_quantizes_once() {
        let pcm = tone(1000);
        let back = read_wav(&wav_bytes(&pcm)[..]).unwrap();
        assert_eq!(back, pcm.quantized());
        let again = read_wav(&wav_bytes(&back)[..]).unwrap();
        assert_eq!(again, back);
        for (a, b) in pcm.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-9);
        }
    }

    #[test]
    fn extremes_clamp() {
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(2.5), 32767);
        assert_eq!(quantize(0.0), 0);
    }

    #[test]
    fn skips_unknown_chunks() {
        let bytes = wav_bytes(&tone(10));
        let mut with_list = bytes[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(b"abc\0");
        with_list.extend_from_slice(&bytes[36..]);
        assert_eq!(read_wav(&with_list[..]).unwrap(), read_wav(&bytes[..]).unwrap());
    }

    #[test]
    fn malformed_inputs() {
        let good = wav_bytes(&tone(10));
        let cases: Vec<Vec<u8>> = vec![
            b"not a wav".to_vec(),
            good[..20].to_vec(),
            good[..44 + 6].to_vec(),
            {
                let mut b = good.clone();
                b[20] = 3; // float format
                b
            },
            {
                let mut b = good.clone();
                b[22] = 1; // mono
                b
            },
        ];
        for bytes in cases {
            assert!(matches!(read_wav(&bytes[..]), Err(RenderError::MalformedFile(_))));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantized_content_is_bit_identical(raw in proptest::collection::vec(any::<i16>(), 0..400)) {
                let mut raw = raw;
                raw.truncate(raw.len() / 2 * 2);
                let pcm = PcmBuffer::from_interleaved(raw.iter().map(|&q| dequantize(q)).collect(), 48_000).unwrap();
                let bytes = wav_bytes(&pcm);
                let back = read_wav(&bytes[..]).unwrap();
                prop_assert_eq!(&back, &pcm);
                prop_assert_eq!(wav_bytes(&back), bytes);
            }
        }
    }
}
