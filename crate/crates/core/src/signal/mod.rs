//! Synthetic labelled I/Q frames: digital modulators, root-raised-cosine
//! pulse shaping and an AWGN channel.
//!
//! SNR is measured per sample: the mean power of the clean samples over the
//! total complex noise variance.

mod dataset;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dataset::{
    generate_dataset, load_dataset, save_dataset, Dataset, DatasetSpec, FrameRecord, Split,
};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModulationFormat {
    BPSK,
    QPSK,
    PSK8,
    QAM16,
    QAM64,
    PAM4,
}

impl ModulationFormat {
    pub const ALL: [ModulationFormat; 6] = [
        ModulationFormat::BPSK,
        ModulationFormat::QPSK,
        ModulationFormat::PSK8,
        ModulationFormat::QAM16,
        ModulationFormat::QAM64,
        ModulationFormat::PAM4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationFormat::BPSK => "BPSK",
            ModulationFormat::QPSK => "QPSK",
            ModulationFormat::PSK8 => "PSK8",
            ModulationFormat::QAM16 => "QAM16",
            ModulationFormat::QAM64 => "QAM64",
            ModulationFormat::PAM4 => "PAM4",
        }
    }

    pub fn order(self) -> usize {
        match self {
            ModulationFormat::BPSK => 2,
            ModulationFormat::QPSK | ModulationFormat::PAM4 => 4,
            ModulationFormat::PSK8 => 8,
            ModulationFormat::QAM16 => 16,
            ModulationFormat::QAM64 => 64,
        }
    }

    /// Constellation points scaled to unit average energy.
    pub fn constellation(self) -> Vec<Complex64> {
        let psk = |m: usize| {
            (0..m)
                .map(|k| {
                    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64)
                })
                .collect::<Vec<_>>()
        };
        let levels = |m: usize| (0..m).map(move |i| (2 * i) as f64 - (m - 1) as f64);
        let qam = |side: usize| {
            levels(side)
                .flat_map(|re| levels(side).map(move |im| Complex64::new(re, im)))
                .collect::<Vec<_>>()
        };
        let raw = match self {
            ModulationFormat::BPSK => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ModulationFormat::QPSK => qam(2),
            ModulationFormat::PSK8 => psk(8),
            ModulationFormat::QAM16 => qam(4),
            ModulationFormat::QAM64 => qam(8),
            ModulationFormat::PAM4 => levels(4).map(|v| Complex64::new(v, 0.0)).collect(),
        };
        let energy = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / raw.len() as f64;
        let scale = energy.sqrt().recip();
        raw.into_iter().map(|p| p * scale).collect()
    }
}

impl fmt::Display for ModulationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModulationFormat::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modulation format {s:?}")))
    }
}

/// Unit-energy root-raised-cosine taps spanning `span` symbols at `sps`
/// samples per symbol. A zero span gives the single tap `[1]`.
pub fn rrc_taps(rolloff: f64, span: usize, sps: usize) -> Result<Vec<f64>> {
    if sps == 0 {
        return Err(Error::InvalidArgument(
            "samples per symbol must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::InvalidArgument(format!(
            "rolloff must be in [0, 1], got {rolloff}"
        )));
    }
    if span == 0 {
        return Ok(vec![1.0]);
    }
    let half = (span * sps / 2) as isize;
    let b = rolloff;
    let pi = std::f64::consts::PI;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / sps as f64;
            if i == 0 {
                1.0 - b + 4.0 * b / pi
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / pi) * (pi / (4.0 * b)).sin()
                        + (1.0 - 2.0 / pi) * (pi / (4.0 * b)).cos())
            } else {
                let num = (pi * t * (1.0 - b)).sin() + 4.0 * b * t * (pi * t * (1.0 + b)).cos();
                let den = pi * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(taps.into_iter().map(|v| v / norm).collect())
}

/// Pulse-shaping and framing parameters shared by [`modulate`] and the
/// dataset generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaping {
    pub n: usize,
    pub sps: usize,
    pub rolloff: f64,
    pub span: usize,
    pub random_phase: bool,
}

/// Random symbols through the pulse shaper: upsample, RRC filter (aligned to
/// the filter's group delay), rotate by a uniform carrier phase, keep `n`
/// samples and rescale to unit average power.
pub fn modulate(
    fmt: ModulationFormat,
    n_symbols: usize,
    rng: &mut Rng,
    shaping: &Shaping,
) -> Result<Vec<Complex64>> {
    let Shaping {
        n,
        sps,
        rolloff,
        span,
        random_phase,
    } = *shaping;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "frame length must be positive".into(),
        ));
    }
    if n_symbols * sps < n {
        return Err(Error::InvalidArgument(format!(
            "{n_symbols} symbols at {sps} samples/symbol cannot fill {n} samples"
        )));
    }
    let taps = rrc_taps(rolloff, span, sps)?;
    let points = fmt.constellation();
    let symbols: Vec<Complex64> = (0..n_symbols)
        .map(|_| points[rng.below(points.len())])
        .collect();
    let delay = taps.len() / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, &sym) in symbols.iter().enumerate() {
        // upsampled symbol k sits at k*sps; output m = full-conv index m + delay
        for (j, &h) in taps.iter().enumerate() {
            let full = k * sps + j;
            if full < delay {
                continue;
            }
            let m = full - delay;
            if m < n {
                out[m] += sym * h;
            }
        }
    }
    if random_phase {
        let rot = Complex64::from_polar(1.0, rng.uniform_scalar(0.0, 2.0 * std::f64::consts::PI));
        out.iter_mut().for_each(|v| *v *= rot);
    }
    let power = mean_power(&out);
    if !(power > 0.0) {
        return Err(Error::NonFinite("modulate: zero-power frame".into()));
    }
    if power != 1.0 {
        let scale = power.sqrt().recip();
        out.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

pub fn mean_power(s: &[Complex64]) -> f64 {
    s.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.len() as f64
}

/// The noise sequence `awgn` would add to `s` at `snr_db`.
pub fn awgn_noise(s: &[Complex64], snr_db: f64, rng: &mut Rng) -> Result<Vec<Complex64>> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("awgn: empty signal".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("awgn: SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(vec![Complex64::new(0.0, 0.0); s.len()]);
    }
    let power = mean_power(s);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "awgn: signal power {power}"
        )));
    }
    let variance = power / 10f64.powf(snr_db / 10.0);
    let std = (variance / 2.0).sqrt();
    Ok((0..s.len())
        .map(|_| {
            let re = rng.standard_normal() * std;
            let im = rng.standard_normal() * std;
            Complex64::new(re, im)
        })
        .collect())
}

/// `x = s + w` with complex Gaussian `w` of total variance
/// `P_s / 10^(snr_db/10)`. `f64::INFINITY` returns `s` unchanged.
pub fn awgn(s: &[Complex64], snr_db: f64, rng: &mut Rng) -> Result<Vec<Complex64>> {
    if snr_db == f64::INFINITY && !s.is_empty() {
        return Ok(s.to_vec());
    }
    let noise = awgn_noise(s, snr_db, rng)?;
    Ok(s.iter().zip(&noise).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    /// `2 x N`: row 0 in-phase, row 1 quadrature.
    pub iq: Tensor<f32>,
    pub label: usize,
    pub snr_db: f64,
}

impl SignalFrame {
    pub fn len(&self) -> usize {
        self.iq.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split the first `n` complex samples into real and imaginary rows.
pub fn frame(x: &[Complex64], n: usize, label: usize, snr_db: f64) -> Result<SignalFrame> {
    if n == 0 || x.len() < n {
        return Err(Error::InvalidArgument(format!(
            "frame: need {n} samples, got {}",
            x.len()
        )));
    }
    let mut data = Vec::with_capacity(2 * n);
    data.extend(x[..n].iter().map(|v| v.re as f32));
    data.extend(x[..n].iter().map(|v| v.im as f32));
    let iq = Tensor::from_vec(&[2, n], data)?;
    iq.ensure_finite("frame")?;
    Ok(SignalFrame { iq, label, snr_db })
}
