//! Signal conditioning: reference subtraction, bandpass filtering, sentence
//! segmentation, per-channel z-normalization and sliding-window framing.

mod filter;

pub use filter::{butterworth_bandpass, Biquad, SosFilter};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EmgRecording, Tensor2};
use crate::linalg::Matrix;

/// Channel-major multichannel signal in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgSegment {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: u32,
    pub data: Vec<f64>,
}

impl EmgSegment {
    pub fn new(channels: usize, samples: usize, sample_rate: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * samples {
            return Err(Error::Truncation {
                expected: channels * samples,
                found: data.len(),
            });
        }
        Ok(EmgSegment {
            channels,
            samples,
            sample_rate,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.samples..(c + 1) * self.samples]
    }

    /// Float32 container form (channel-major), as written by the `preprocess` stage.
    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2 {
            rows: self.channels,
            cols: self.samples,
            rate: self.sample_rate,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(t: &Tensor2) -> Self {
        EmgSegment {
            channels: t.rows,
            samples: t.cols,
            sample_rate: t.rate,
            data: t.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn from_recording(rec: &EmgRecording) -> Self {
        EmgSegment {
            channels: rec.channels,
            samples: rec.samples,
            sample_rate: rec.sample_rate,
            data: rec.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Removes the reference electrode from every other channel.
///
/// Output channels keep their input order with the reference dropped.
pub fn subtract_reference(rec: &EmgRecording) -> Result<EmgSegment> {
    rec.validate()?;
    let reference = rec.channel(rec.reference_index);
    let mut data = Vec::with_capacity((rec.channels - 1) * rec.samples);
    for c in (0..rec.channels).filter(|&c| c != rec.reference_index) {
        data.extend(
            rec.channel(c)
                .iter()
                .zip(reference)
                .map(|(&x, &r)| f64::from(x) - f64::from(r)),
        );
    }
    EmgSegment::new(rec.channels - 1, rec.samples, rec.sample_rate, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub zero_phase: bool,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        BandpassSpec {
            low_hz: 80.0,
            high_hz: 1000.0,
            order: 3,
            zero_phase: false,
        }
    }
}

/// Filters every channel independently.
pub fn bandpass(seg: &EmgSegment, spec: &BandpassSpec) -> Result<EmgSegment> {
    let filter = butterworth_bandpass(spec.order, spec.low_hz, spec.high_hz, f64::from(seg.sample_rate))?;
    let mut out = Vec::with_capacity(seg.data.len());
    for c in 0..seg.channels {
        let x = seg.channel(c);
        let y = if spec.zero_phase {
            filter.apply_zero_phase(x)
        } else {
            filter.apply(x)
        };
        out.extend(y);
    }
    EmgSegment::new(seg.channels, seg.samples, seg.sample_rate, out)
}

/// Copies samples `[start, end)` of every channel.
pub fn segment(seg: &EmgSegment, start: usize, end: usize) -> Result<EmgSegment> {
    if start >= end || end > seg.samples {
        return Err(Error::Bounds(format!(
            "segment [{start}, {end}) outside 0..{}",
            seg.samples
        )));
    }
    let len = end - start;
    let mut data = Vec::with_capacity(seg.channels * len);
    for c in 0..seg.channels {
        data.extend_from_slice(&seg.channel(c)[start..end]);
    }
    EmgSegment::new(seg.channels, len, seg.sample_rate, data)
}

/// Channels with population std below this are zeroed.
pub const VARIANCE_FLOOR_STD: f64 = 1e-8;

/// Per-channel zero mean and unit population standard deviation.
pub fn znormalize(seg: &EmgSegment) -> EmgSegment {
    let mut out = seg.clone();
    let n = seg.samples as f64;
    for c in 0..seg.channels {
        let x = out.channel_mut(c);
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std >= VARIANCE_FLOOR_STD) {
            x.iter_mut().for_each(|v| *v = 0.0);
        } else {
            x.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    out
}

/// Sliding-window geometry in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_ms: 50.0,
            hop_ms: 20.0,
        }
    }
}

impl WindowSpec {
    /// `(window_samples, hop_samples)` at `sample_rate`.
    pub fn samples(&self, sample_rate: u32) -> Result<(usize, usize)> {
        let rate = f64::from(sample_rate);
        let window = (self.window_ms * rate / 1000.0).round();
        let hop = (self.hop_ms * rate / 1000.0).round();
        if !(hop >= 1.0 && window >= hop) {
            return Err(Error::Parameter(format!(
                "window {} ms / hop {} ms give {window}/{hop} samples at {sample_rate} Hz",
                self.window_ms, self.hop_ms
            )));
        }
        Ok((window as usize, hop as usize))
    }

    /// Number of complete windows over `samples`; zero when shorter than one window.
    pub fn frame_count(&self, samples: usize, sample_rate: u32) -> Result<usize> {
        let (w, h) = self.samples(sample_rate)?;
        Ok(if samples < w { 0 } else { (samples - w) / h + 1 })
    }
}

/// Splits a segment into `channels × window_samples` blocks; frame `k` starts at `k·hop`.
pub fn windows(seg: &EmgSegment, spec: &WindowSpec) -> Result<Vec<Matrix>> {
    let (w, h) = spec.samples(seg.sample_rate)?;
    if seg.samples < w {
        return Err(Error::TooShort {
            samples: seg.samples,
            window: w,
        });
    }
    let count = (seg.samples - w) / h + 1;
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * h;
        let mut block = Vec::with_capacity(seg.channels * w);
        for c in 0..seg.channels {
            block.extend_from_slice(&seg.channel(c)[start..start + w]);
        }
        frames.push(Matrix::from_vec(seg.channels, w, block)?);
    }
    Ok(frames)
}

/// Full chain for one sentence: reference subtraction, bandpass over the
/// whole recording, cut to the sentence, then z-normalize.
pub fn preprocess_sentence(
    rec: &EmgRecording,
    start: usize,
    end: usize,
    spec: &BandpassSpec,
) -> Result<EmgSegment> {
    let referenced = subtract_reference(rec)?;
    let filtered = bandpass(&referenced, spec)?;
    let cut = segment(&filtered, start, end)?;
    Ok(znormalize(&cut))
}
