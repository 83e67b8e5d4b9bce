//! OTFS transmit and receive transforms.
//!
//! Grids are `M x N` column-major matrices (delay index fastest), so
//! `grid.as_slice()` is the serialised `vec{X}` used throughout.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::Cplx;

/// Delay-Doppler symbol grid, rows are delay bins and columns Doppler bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDopplerFrame {
    pub grid: DMatrix<Cplx>,
}

/// Delay-time grid, rows are delay bins and columns time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTimeFrame {
    pub grid: DMatrix<Cplx>,
}

/// Serial samples, with or without a CP depending on the pipeline stage.
pub type SampleStream = Vec<Cplx>;

impl DelayDopplerFrame {
    pub fn zeros(m: usize, n: usize) -> Self {
        DelayDopplerFrame {
            grid: DMatrix::zeros(m, n),
        }
    }
}

impl DelayTimeFrame {
    /// `vec{X}`.
    pub fn serialize(&self) -> SampleStream {
        self.grid.as_slice().to_vec()
    }
}

/// Unit-power 4-QAM symbol for two bits.
pub fn qam4(b0: bool, b1: bool) -> Cplx {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Cplx::new(if b0 { -s } else { s }, if b1 { -s } else { s })
}

pub fn random_qam4<R: Rng + ?Sized>(rng: &mut R) -> Cplx {
    qam4(rng.random(), rng.random())
}

/// Normalised N-point DFT along the Doppler/time axis with cached plans.
#[derive(Clone)]
pub struct OtfsModem {
    m: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OtfsModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OtfsModem")
            .field("m", &self.m)
            .field("n", &self.n)
            .finish()
    }
}

impl OtfsModem {
    pub fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        OtfsModem {
            m,
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    /// Applies `fft` with `1/sqrt(N)` scaling to every row of `grid`.
    fn along_rows(&self, grid: &DMatrix<Cplx>, fft: &Arc<dyn Fft<f64>>) -> DMatrix<Cplx> {
        let mut rows = grid.transpose();
        fft.process(rows.as_mut_slice());
        let scale = 1.0 / (self.n as f64).sqrt();
        rows.iter_mut().for_each(|v| *v *= scale);
        rows.transpose()
    }

    fn check(&self, grid: &DMatrix<Cplx>) -> Result<()> {
        if grid.shape() != (self.m, self.n) {
            return Err(Error::Dimension(format!(
                "grid is {}x{}, expected {}x{}",
                grid.nrows(),
                grid.ncols(),
                self.m,
                self.n
            )));
        }
        Ok(())
    }

    /// `X = D F_N^H`.
    pub fn modulate(&self, dd: &DelayDopplerFrame) -> Result<DelayTimeFrame> {
        self.check(&dd.grid)?;
        Ok(DelayTimeFrame {
            grid: self.along_rows(&dd.grid, &self.inverse),
        })
    }

    /// `D = X F_N`, the inverse of [`OtfsModem::modulate`].
    pub fn to_delay_doppler(&self, dt: &DelayTimeFrame) -> Result<DelayDopplerFrame> {
        self.check(&dt.grid)?;
        Ok(DelayDopplerFrame {
            grid: self.along_rows(&dt.grid, &self.forward),
        })
    }

    /// Reshapes `M*N` post-CP samples into a delay-time grid.
    pub fn reshape(&self, stream: &[Cplx]) -> Result<DelayTimeFrame> {
        if stream.len() != self.m * self.n {
            return Err(Error::Dimension(format!(
                "stream has {} samples, expected M*N = {}",
                stream.len(),
                self.m * self.n
            )));
        }
        Ok(DelayTimeFrame {
            grid: DMatrix::from_column_slice(self.m, self.n, stream),
        })
    }

    /// `(F_N ⊗ I_M) y`, returned as a grid.
    pub fn demodulate(&self, stream: &[Cplx]) -> Result<DelayDopplerFrame> {
        self.to_delay_doppler(&self.reshape(stream)?)
    }
}

pub fn modulate(dd: &DelayDopplerFrame) -> Result<DelayTimeFrame> {
    let (m, n) = dd.grid.shape();
    OtfsModem::new(m, n).modulate(dd)
}

pub fn demodulate(stream: &[Cplx], m: usize, n: usize) -> Result<DelayDopplerFrame> {
    OtfsModem::new(m, n).demodulate(stream)
}

/// Prepends the last `cp_len` samples of `vec{X}`.
pub fn add_cp(dt: &DelayTimeFrame, cp_len: usize) -> Result<SampleStream> {
    let x = dt.grid.as_slice();
    if cp_len >= x.len() {
        return Err(Error::Config(format!(
            "CP length {cp_len} must be below M*N = {}",
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(x.len() + cp_len);
    out.extend_from_slice(&x[x.len() - cp_len..]);
    out.extend_from_slice(x);
    Ok(out)
}

/// Drops the first `guard` samples of a stream of length `mn + guard`.
pub fn remove_cp(stream: &[Cplx], guard: usize, mn: usize) -> Result<SampleStream> {
    if stream.len() != mn + guard {
        return Err(Error::Dimension(format!(
            "stream has {} samples, expected M*N + guard = {}",
            stream.len(),
            mn + guard
        )));
    }
    Ok(stream[guard..].to_vec())
}
