use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Below this many multiply-adds the convolution is done directly, which
/// keeps short impulse responses (and the unit impulse) exact.
const DIRECT_CONV_LIMIT: usize = 1 << 20;

/// Half-width of the resampling kernel, in input samples at unit cutoff.
const SINC_HALF_WIDTH: f64 = 32.0;

pub(crate) fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn clip(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(-1.0, 1.0);
    }
}

fn check_rates(what: &str, a: &AudioBuffer, b: &AudioBuffer) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::Audio(format!(
            "sample rate mismatch: signal {} Hz, {what} {} Hz",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    Ok(())
}

/// Linear convolution of `x` with `h`, truncated to `len(x)`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let taps = h.len().min(n);
    if n.saturating_mul(taps) <= DIRECT_CONV_LIMIT {
        let mut y = vec![0.0; n];
        for (k, &hk) in h[..taps].iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (yi, &xi) in y[k..].iter_mut().zip(x) {
                *yi += hk * xi;
            }
        }
        return y;
    }
    let size = (n + taps - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut out: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        out.resize(size, Complex::new(0.0, 0.0));
        out
    };
    let mut a = pad(x);
    let mut b = pad(&h[..taps]);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    inv.process(&mut a);
    a[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Reverberated signal rescaled to the input RMS, before clipping.
pub fn reverberate(x: &AudioBuffer, rir: &AudioBuffer) -> Result<Vec<f64>> {
    check_rates("impulse response", x, rir)?;
    let mut y = convolve_truncated(x.samples(), rir.samples());
    let (rx, ry) = (rms(x.samples()), rms(&y));
    if rx == 0.0 {
        return Ok(vec![0.0; y.len()]);
    }
    if ry == 0.0 {
        return Err(Error::Audio("impulse response produced a silent signal".into()));
    }
    let gain = rx / ry;
    if gain != 1.0 {
        for v in &mut y {
            *v *= gain;
        }
    }
    Ok(y)
}

pub fn apply_reverb(x: &AudioBuffer, rir: &AudioBuffer) -> Result<AudioBuffer> {
    let mut y = reverberate(x, rir)?;
    clip(&mut y);
    AudioBuffer::new(y, x.sample_rate())
}

/// The noise segment added to `x`: `noise` looped from `offset` to the length
/// of `x`, scaled so the signal-to-noise ratio is `snr_db`.
pub fn scaled_noise(x: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, offset: usize) -> Result<Vec<f64>> {
    check_rates("noise", x, noise)?;
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let src = noise.samples();
    let mut seg: Vec<f64> = (0..x.len()).map(|i| src[(offset + i) % src.len()]).collect();
    let rn = rms(&seg);
    if rn == 0.0 {
        return Err(Error::Audio("noise buffer is silent over the mixed segment".into()));
    }
    let gain = rms(x.samples()) / (rn * 10f64.powf(snr_db / 20.0));
    for v in &mut seg {
        *v *= gain;
    }
    Ok(seg)
}

pub fn apply_noise(x: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, offset: usize) -> Result<AudioBuffer> {
    let n = scaled_noise(x, noise, snr_db, offset)?;
    let mut y: Vec<f64> = x.samples().iter().zip(&n).map(|(a, b)| a + b).collect();
    clip(&mut y);
    AudioBuffer::new(y, x.sample_rate())
}

/// Blackman-windowed sinc resampling: output sample `n` reads the input at
/// position `n * step`. Frequencies above the new Nyquist are removed when
/// `step > 1`.
pub fn resample_by(x: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    let cutoff = (1.0 / step).min(1.0);
    let half = SINC_HALF_WIDTH / cutoff;
    let kernel = |t: f64| {
        if t.abs() >= half {
            return 0.0;
        }
        let u = cutoff * t;
        let sinc = if u == 0.0 { 1.0 } else { (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u) };
        let phase = std::f64::consts::PI * (t / half + 1.0);
        let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
        cutoff * sinc * window
    };
    (0..out_len)
        .map(|n| {
            let pos = n as f64 * step;
            let lo = (pos - half).ceil().max(0.0) as usize;
            let hi = ((pos + half).floor() as usize).min(x.len() - 1);
            (lo..=hi).map(|k| x[k] * kernel(pos - k as f64)).sum()
        })
        .collect()
}

/// Plays `x` `factor` times faster: `round(len / factor)` samples at the same
/// rate, shifting pitch and tempo together.
pub fn apply_speed(x: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("speed factor must be > 0, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(x.clone());
    }
    let out_len = (x.len() as f64 / factor).round() as usize;
    if out_len == 0 {
        return Err(Error::Audio(format!("speed factor {factor} leaves no samples from {}", x.len())));
    }
    let mut y = resample_by(x.samples(), factor, out_len);
    clip(&mut y);
    AudioBuffer::new(y, x.sample_rate())
}

/// Converts to `rate` Hz, keeping duration.
pub fn resample(x: &AudioBuffer, rate: u32) -> Result<AudioBuffer> {
    if rate == 0 {
        return Err(Error::invalid("target sample rate must be > 0"));
    }
    if rate == x.sample_rate() {
        return Ok(x.clone());
    }
    let step = x.sample_rate() as f64 / rate as f64;
    let out_len = ((x.len() as f64 / step).round() as usize).max(1);
    let mut y = resample_by(x.samples(), step, out_len);
    clip(&mut y);
    AudioBuffer::new(y, rate)
}
