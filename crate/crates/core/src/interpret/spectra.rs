use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::models::ModelInstance;
use crate::{Error, Result, Tensor};

/// Zero-padded transform length; bin `i` sits at `i * fs / FFT_LEN` Hz.
pub const FFT_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraImage {
    pub fs: f64,
    /// Bin centres, 0 to fs/2 inclusive.
    pub frequencies: Vec<f64>,
    /// Magnitude rows in sorted order.
    pub rows: Vec<Vec<f64>>,
    /// Label of each sorted row: the kernel index, or `kernel.component`.
    pub row_labels: Vec<String>,
    /// Peak frequency of each sorted row (non-decreasing).
    pub sort_keys: Vec<f64>,
}

fn magnitude(profile: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = profile.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(FFT_LEN, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(FFT_LEN).process(&mut buf);
    buf[..=FFT_LEN / 2].iter().map(|c| c.norm()).collect()
}

/// Spectra of temporal kernels shaped `[out, components, 1, L]`.
///
/// Each output kernel's profiles are averaged over components, unless
/// `per_component` is set, in which case every (kernel, component) profile
/// gets its own row.
pub fn kernel_spectra(kernels: &Tensor, fs: f64, per_component: bool) -> Result<SpectraImage> {
    let [out, comps, h, len] = kernels.dims4("temporal kernels")?;
    if h != 1 {
        return Err(Error::dim("height", format!("temporal kernels have height {h}, expected 1")));
    }
    if len > FFT_LEN {
        return Err(Error::dim("width", format!("kernel length {len} exceeds {FFT_LEN}")));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Parameter(format!("sampling rate {fs} is not positive")));
    }
    let values = kernels.values();
    let mut profiles: Vec<(String, Vec<f64>)> = Vec::new();
    for k in 0..out {
        let block = &values[k * comps * len..(k + 1) * comps * len];
        if per_component {
            for (c, p) in block.chunks(len).enumerate() {
                profiles.push((format!("{k}.{c}"), p.to_vec()));
            }
        } else {
            let mut mean = vec![0.0; len];
            for p in block.chunks(len) {
                mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / comps as f64);
            }
            profiles.push((k.to_string(), mean));
        }
    }

    let frequencies: Vec<f64> = (0..=FFT_LEN / 2).map(|i| i as f64 * fs / FFT_LEN as f64).collect();
    let mut planner = FftPlanner::new();
    let mut rows: Vec<(f64, String, Vec<f64>)> = profiles
        .into_iter()
        .map(|(label, p)| {
            let mag = magnitude(&p, &mut planner);
            let peak = mag
                .iter()
                .enumerate()
                .fold(0, |best, (i, &m)| if m > mag[best] { i } else { best });
            (frequencies[peak], label, mag)
        })
        .collect();
    // stable: ties keep kernel order
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SpectraImage {
        fs,
        frequencies,
        sort_keys: rows.iter().map(|r| r.0).collect(),
        row_labels: rows.iter().map(|r| r.1.clone()).collect(),
        rows: rows.into_iter().map(|r| r.2).collect(),
    })
}

/// Sorted spectra of the SCCNet spatio-temporal kernels.
pub fn temporal_spectra(model: &ModelInstance, fs: f64, per_component: bool) -> Result<SpectraImage> {
    kernel_spectra(model.temporal_kernels()?, fs, per_component)
}
