//! Band-limited rational-ratio resampling with a Kaiser-windowed sinc
//! kernel, evaluated through a per-phase coefficient table.

use super::AudioBuffer;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.6;
const ZERO_CROSSINGS: f64 = 32.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Precomputed polyphase filter for one (input rate, output rate) pair.
#[derive(Debug, Clone)]
pub struct Resampler {
    from_rate: u32,
    to_rate: u32,
    up: u64,
    down: u64,
    /// Leftmost input tap relative to the base sample.
    first_tap: i64,
    taps: usize,
    /// `up` phases, each `taps` long.
    table: Vec<f64>,
}

impl Resampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Result<Self> {
        if from_rate == 0 || to_rate == 0 {
            return Err(Error::Config("sample rates must be positive".into()));
        }
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = to_rate as u64 / g;
        let down = from_rate as u64 / g;
        // cutoff relative to the input Nyquist frequency
        let cutoff = (to_rate as f64 / from_rate as f64).min(1.0);
        let half_width = ZERO_CROSSINGS / cutoff;
        let reach = half_width.ceil() as i64;
        let first_tap = -reach;
        let taps = (2 * reach + 1) as usize;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut table = vec![0.0; up as usize * taps];
        for phase in 0..up as usize {
            let frac = phase as f64 / up as f64;
            let row = &mut table[phase * taps..(phase + 1) * taps];
            for (k, w) in row.iter_mut().enumerate() {
                let t = (first_tap + k as i64) as f64 - frac;
                let r = t / half_width;
                if r.abs() < 1.0 {
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    *w = cutoff * sinc(cutoff * t) * window;
                }
            }
            // unit DC gain per phase
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self {
            from_rate,
            to_rate,
            up,
            down,
            first_tap,
            taps,
            table,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        output_len(input_len, self.from_rate, self.to_rate)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.from_rate == self.to_rate {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let len = input.len() as i64;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = (pos % self.up) as usize;
            let coeffs = &self.table[phase * self.taps..(phase + 1) * self.taps];
            let start = base + self.first_tap;
            let lo = (-start).max(0) as usize;
            let hi = ((len - start).min(self.taps as i64)).max(0) as usize;
            let mut acc = 0.0f64;
            for k in lo..hi {
                acc += coeffs[k] * input[(start + k as i64) as usize] as f64;
            }
            out.push(acc as f32);
        }
        out
    }
}

/// `round(len * to / from)`, computed in integers.
pub(crate) fn output_len(input_len: usize, from_rate: u32, to_rate: u32) -> usize {
    let num = input_len as u128 * to_rate as u128;
    let den = from_rate as u128;
    ((2 * num + den) / (2 * den)) as usize
}

/// Resample to `target_rate`. Same-rate input is returned unchanged.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if buf.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if buf.sample_rate() == target_rate {
        return Ok(buf.clone());
    }
    let r = Resampler::new(buf.sample_rate(), target_rate)?;
    AudioBuffer::new(r.process(buf.samples()), target_rate)
}
