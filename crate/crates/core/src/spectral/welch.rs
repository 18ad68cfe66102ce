use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{TimeSeries, Unit};

/// One-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    /// Bin spacing fs/segment_length (Hz).
    pub resolution_bandwidth: f64,
    pub averages: usize,
    pub unit: Unit,
}

impl PsdResult {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bin spacing of the grid.
    pub fn df(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            self.resolution_bandwidth
        }
    }

    /// Integral of the PSD over bins with centre in `[f_lo, f_hi]` (rectangle rule).
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        let df = self.df();
        self.frequencies.iter().zip(&self.values).filter(|(f, _)| **f >= f_lo && **f <= f_hi).map(|(_, v)| v * df).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.df()
    }

    /// Index of the largest value with frequency in `[f_lo, f_hi]`.
    pub fn peak_index(&self, f_lo: f64, f_hi: f64) -> Option<usize> {
        self.frequencies
            .iter()
            .enumerate()
            .filter(|(_, f)| **f >= f_lo && **f <= f_hi)
            .max_by(|a, b| self.values[a.0].total_cmp(&self.values[b.0]))
            .map(|(i, _)| i)
    }

    /// Pointwise mean of PSDs computed on the same grid.
    pub fn average(psds: &[PsdResult]) -> Result<PsdResult> {
        let first = psds.first().ok_or_else(|| Error::InsufficientData("no spectra to average".into()))?;
        for p in psds {
            if p.frequencies != first.frequencies || p.unit != first.unit {
                return Err(Error::invalid("spectra to average must share grid and unit"));
            }
        }
        let n = psds.len() as f64;
        let values = (0..first.len()).map(|i| psds.iter().map(|p| p.values[i]).sum::<f64>() / n).collect();
        Ok(PsdResult {
            frequencies: first.frequencies.clone(),
            values,
            resolution_bandwidth: first.resolution_bandwidth,
            averages: psds.iter().map(|p| p.averages).sum(),
            unit: first.unit,
        })
    }

    /// CSV with a `# unit=..` comment and `frequency_hz,psd_value` columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# unit={}^2/Hz resolution_bandwidth_hz={:?} averages={}",
            self.unit, self.resolution_bandwidth, self.averages
        )?;
        writeln!(w, "frequency_hz,psd_value")?;
        for (f, v) in self.frequencies.iter().zip(&self.values) {
            writeln!(w, "{f:?},{v:?}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut unit = None;
        let mut rbw = None;
        let mut averages = 1;
        let mut frequencies = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("unit", u)) => unit = Some(u.trim_end_matches("^2/Hz").parse::<Unit>()?),
                        Some(("resolution_bandwidth_hz", v)) => rbw = v.parse::<f64>().ok(),
                        Some(("averages", v)) => averages = v.parse().unwrap_or(1),
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("frequency_hz") {
                continue;
            }
            let (f, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: expected two columns", lineno + 1)))?;
            let parse =
                |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)));
            frequencies.push(parse(f)?);
            values.push(parse(v)?);
        }
        if frequencies.len() < 2 {
            return Err(Error::InsufficientData("PSD file has fewer than two bins".into()));
        }
        let rbw = rbw.unwrap_or(frequencies[1] - frequencies[0]);
        Ok(PsdResult { frequencies, values, resolution_bandwidth: rbw, averages, unit: unit.unwrap_or(Unit::Meter) })
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate of a raw sample sequence: Hann window, per-segment mean
/// removal, one-sided scaling `2|X|²/(fs·Σw²)` (DC and Nyquist not doubled).
pub fn welch(
    data: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap_fraction: f64,
    unit: Unit,
) -> Result<PsdResult> {
    if !(sample_rate > 0.0) {
        return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
    }
    if segment_length < 8 {
        return Err(Error::invalid(format!("segment length {segment_length} is too short")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::invalid(format!("overlap fraction {overlap_fraction} must lie in [0, 1)")));
    }
    if data.len() < segment_length {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than one segment ({segment_length})",
            data.len()
        )));
    }
    let step = ((segment_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let window = hann(segment_length);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_length);
    let n_bins = segment_length / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_length];
    let mut averages = 0;
    let mut start = 0;
    while start + segment_length <= data.len() {
        let seg = &data[start..start + segment_length];
        let mean = seg.iter().sum::<f64>() / segment_length as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        averages += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * window_power * averages as f64);
    let values = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (segment_length.is_multiple_of(2) && k == n_bins - 1) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let df = sample_rate / segment_length as f64;
    Ok(PsdResult {
        frequencies: (0..n_bins).map(|k| k as f64 * df).collect(),
        values,
        resolution_bandwidth: df,
        averages,
        unit,
    })
}

/// Welch PSD of one channel of a time series (see [`welch`]).
pub fn welch_psd(
    series: &TimeSeries,
    channel: &str,
    segment_length: usize,
    overlap_fraction: f64,
) -> Result<PsdResult> {
    let data = series.channel(channel).ok_or_else(|| Error::invalid(format!("series has no channel '{channel}'")))?;
    welch(data, series.sample_rate(), segment_length, overlap_fraction, series.unit())
}

/// Power-of-two segment length giving a bin spacing of at most
/// `gamma_total/5` (expressed in Hz), capped at the series length.
pub fn segment_length_for_linewidth(sample_rate: f64, gamma_total: f64, series_len: usize) -> usize {
    let max_df = gamma_total / (2.0 * PI) / 5.0;
    let needed = (sample_rate / max_df).ceil().max(8.0) as usize;
    let mut n = needed.next_power_of_two();
    while n > series_len && n > 8 {
        n /= 2;
    }
    n
}
