//! Piecewise-analytic input signals.
//!
//! Every channel is a sequence of segments that partition `[0, T]`. Each
//! segment is evaluated in its local time `tau = t - start`, so phases of a
//! plan can be concatenated without rewriting their phases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JOIN_TOL: f64 = 1e-12;

/// Shape of one segment, in local time `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Shape {
    Constant {
        value: f64,
    },
    /// `amplitude * cos(omega * tau + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    /// `sum_k coeffs[k] * tau^k`
    Polynomial {
        coeffs: Vec<f64>,
    },
}

impl Shape {
    pub fn zero() -> Self {
        Shape::Constant { value: 0.0 }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Shape::Constant { value } => *value,
            Shape::Sinusoid { amplitude, omega, phase } => amplitude * (omega * tau + phase).cos(),
            Shape::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c),
        }
    }

    /// `int_0^tau` of the shape.
    pub fn integral(&self, tau: f64) -> f64 {
        match self {
            Shape::Constant { value } => value * tau,
            Shape::Sinusoid { amplitude, omega, phase } => {
                if *omega == 0.0 {
                    amplitude * phase.cos() * tau
                } else {
                    amplitude / omega * ((omega * tau + phase).sin() - phase.sin())
                }
            }
            Shape::Polynomial { coeffs } => {
                coeffs.iter().enumerate().rev().fold(0.0, |acc, (k, c)| acc * tau + c / (k + 1) as f64) * tau
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Shape::Constant { value } => value.is_finite(),
            Shape::Sinusoid { amplitude, omega, phase } => {
                amplitude.is_finite() && omega.is_finite() && phase.is_finite()
            }
            Shape::Polynomial { coeffs } => coeffs.iter().all(|c| c.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub shape: Shape,
}

/// One input channel: contiguous segments covering `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    segments: Vec<Segment>,
}

impl Channel {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first =
            segments.first().ok_or_else(|| Error::InvalidArgument("channel needs at least one segment".into()))?;
        if first.start.abs() > JOIN_TOL {
            return Err(Error::InvalidArgument(format!("channel starts at {} instead of 0", first.start)));
        }
        for s in &segments {
            if !(s.end > s.start) || !s.end.is_finite() {
                return Err(Error::InvalidArgument(format!("empty or reversed segment [{}, {}]", s.start, s.end)));
            }
            if !s.shape.is_finite() {
                return Err(Error::NonFinite("segment parameter".into()));
            }
        }
        for w in segments.windows(2) {
            if (w[0].end - w[1].start).abs() > JOIN_TOL * w[0].end.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "segments are not contiguous at t={} / t={}",
                    w[0].end, w[1].start
                )));
            }
        }
        Ok(Channel { segments })
    }

    pub fn single(duration: f64, shape: Shape) -> Result<Self> {
        Channel::new(vec![Segment { start: 0.0, end: duration, shape }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    fn locate(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.end <= t);
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.locate(t);
        s.shape.eval(t - s.start)
    }

    /// `int_0^t` of the channel.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.segments {
            if t >= s.end {
                acc += s.shape.integral(s.end - s.start);
            } else {
                if t > s.start {
                    acc += s.shape.integral(t - s.start);
                }
                break;
            }
        }
        if t > self.duration() {
            // Past the end the last segment is extrapolated, matching `eval`.
            let last = self.segments.last().expect("non-empty");
            acc += last.shape.integral(t - last.start) - last.shape.integral(last.end - last.start);
        }
        acc
    }

    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().map(|s| s.start).chain(std::iter::once(self.duration()))
    }
}

/// Per-channel piecewise inputs on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    channels: Vec<Channel>,
}

impl InputSignal {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        let first =
            channels.first().ok_or_else(|| Error::InvalidArgument("input needs at least one channel".into()))?;
        let t = first.duration();
        for c in &channels {
            if (c.duration() - t).abs() > JOIN_TOL * t.max(1.0) {
                return Err(Error::InvalidArgument(format!("channel durations differ: {} vs {}", c.duration(), t)));
            }
        }
        Ok(InputSignal { channels })
    }

    /// One segment per channel over `[0, duration]`.
    pub fn uniform(duration: f64, shapes: Vec<Shape>) -> Result<Self> {
        let channels = shapes.into_iter().map(|s| Channel::single(duration, s)).collect::<Result<Vec<_>>>()?;
        InputSignal::new(channels)
    }

    pub fn zero(channels: usize, duration: f64) -> Result<Self> {
        InputSignal::uniform(duration, vec![Shape::zero(); channels])
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.channels[0].duration()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.eval(t);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|c| c.eval(t)).collect()
    }

    /// Base displacement `int_0^t u`, per channel.
    pub fn integral_into(&self, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.integral(t);
        }
    }

    /// Sorted, deduplicated segment boundaries of all channels.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.channels.iter().flat_map(Channel::breakpoints).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= JOIN_TOL * b.abs().max(1.0));
        pts
    }

    /// Concatenates `next` after `self` in time.
    pub fn then(&self, next: &InputSignal) -> Result<InputSignal> {
        if next.n_channels() != self.n_channels() {
            return Err(Error::DimensionMismatch { expected: self.n_channels(), got: next.n_channels() });
        }
        let offset = self.duration();
        let channels = self
            .channels
            .iter()
            .zip(&next.channels)
            .map(|(a, b)| {
                let shifted = b.segments.iter().map(|s| Segment {
                    start: s.start + offset,
                    end: s.end + offset,
                    shape: s.shape.clone(),
                });
                Channel::new(a.segments.iter().cloned().chain(shifted).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        InputSignal::new(channels)
    }
}
