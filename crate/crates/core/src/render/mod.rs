//! Synthesis, mixdown and WAV I/O.

mod mix;
mod synth;
mod wav;

use thiserror::Error;

pub use mix::{
    collage_pan, equal_power_pan, mix_session, plan_session, Envelope, MixOutput, MixPlan,
    Placement, SourceBank, SourceKey, TRACK_GAIN,
};
pub use synth::{partials, render_announcement, render_bell, render_loop, render_tolls, synth_note, Partial};
pub use wav::{read_wav, read_wav_file, write_wav, write_wav_file, wav_bytes};

pub const CHANNELS: usize = 2;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("PitchRequired: timbre {0} is pitched")]
    PitchRequired(String),
    #[error("PitchForbidden: timbre {0} is unpitched percussion")]
    PitchForbidden(String),
    #[error("UnknownLoopId: {0}")]
    UnknownLoopId(String),
    #[error("event at sample {at_sample} is not on a measure boundary")]
    NotMeasureAligned { at_sample: u64 },
    #[error("event at sample {at_sample} lies beyond the {total_samples}-sample session")]
    EventOutOfRange { at_sample: u64, total_samples: u64 },
    #[error("event {0} is missing its payload")]
    MissingPayload(String),
    #[error("MalformedFile: {0}")]
    MalformedFile(String),
    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interleaved stereo PCM, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmBuffer {
    sample_rate_hz: u32,
    samples: Vec<f32>,
}

impl PcmBuffer {
    pub fn silent(frames: usize, sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            samples: vec![0.0; frames * CHANNELS],
        }
    }

    pub fn from_interleaved(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, RenderError> {
        if !samples.len().is_multiple_of(CHANNELS) {
            return Err(RenderError::InvalidBuffer(format!(
                "{} samples is not a whole number of stereo frames",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(RenderError::InvalidBuffer(format!("sample {i} is not finite")));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    /// Duplicates a mono signal to both channels.
    pub fn from_mono(mono: &[f32], sample_rate_hz: u32) -> Self {
        let samples = mono.iter().flat_map(|&s| [s, s]).collect();
        Self {
            sample_rate_hz,
            samples,
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / CHANNELS
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    /// Left channel.
    pub fn left(&self) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().step_by(CHANNELS).copied()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Rounds every sample to the 16-bit grid used by the WAV writer.
    pub fn quantized(&self) -> PcmBuffer {
        PcmBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: self
                .samples
                .iter()
                .map(|&s| wav::dequantize(wav::quantize(s)))
                .collect(),
        }
    }

    /// Frames `start..end` as a new buffer.
    pub fn slice_frames(&self, start: usize, end: usize) -> PcmBuffer {
        PcmBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples[start * CHANNELS..end * CHANNELS].to_vec(),
        }
    }
}
