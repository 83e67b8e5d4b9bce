//! Per-user band separation in the Doppler domain.

use std::ops::Range;

use rustfft::FftPlanner;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::Cplx;

/// Doppler band of user `q`: `[q⌊N/Q⌋, (q+1)⌊N/Q⌋)`, with the last band running to `N`.
pub fn user_band(cfg: &SystemConfig, user: usize) -> Range<usize> {
    let w = cfg.band_width();
    let end = if user + 1 == cfg.users { cfg.doppler_bins } else { (user + 1) * w };
    user * w..end
}

/// Keeps the Doppler bins in `band` across the `N` slots of every delay row.
///
/// `y` is the serialised post-CP stream of length `MN`; the output has the same layout.
pub fn separate_user(y: &[Cplx], m: usize, n: usize, band: Range<usize>) -> Result<Vec<Cplx>> {
    if y.len() != m * n {
        return Err(Error::Dimension(format!(
            "stream has {} samples, expected M*N = {}",
            y.len(),
            m * n
        )));
    }
    if band.end > n || band.start >= band.end {
        return Err(Error::Config(format!("band {band:?} invalid for N = {n}")));
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    // Row-major copy: row l holds y[l + nM] for n = 0..N.
    let mut rows = vec![Cplx::new(0.0, 0.0); m * n];
    for (i, v) in y.iter().enumerate() {
        rows[(i % m) * n + i / m] = *v;
    }
    fwd.process(&mut rows);
    let scale = 1.0 / n as f64;
    for row in rows.chunks_mut(n) {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if band.contains(&k) { *v * scale } else { Cplx::new(0.0, 0.0) };
        }
    }
    inv.process(&mut rows);

    let mut out = vec![Cplx::new(0.0, 0.0); m * n];
    for (j, v) in rows.into_iter().enumerate() {
        out[j / n + (j % n) * m] = v;
    }
    Ok(out)
}
