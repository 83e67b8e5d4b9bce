//! Pilot-region extraction and the Chebyshev basis-expansion regressor.

use nalgebra::DMatrix;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::Cplx;

/// Received pilot samples of one user with their absolute sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRegion {
    /// `r̄`, slot-major: entry `n L_p + i`.
    pub samples: Vec<Cplx>,
    /// Frame sample index `κ` of each entry, counted from the start of the CP.
    pub kappa: Vec<usize>,
    /// `s̄_n`: the `L_p` transmitted delay-time pilot samples of each slot.
    pub symbols: Vec<Vec<Cplx>>,
}

/// Takes `L_p` samples per slot starting `θ̂` after the pilot delay `l_p`.
///
/// `received` is the post-CP stream and `template` the user's delay-time pilot,
/// both of length `MN`. With `pilot_wrap` the window runs on along the serial
/// stream into the next slot; otherwise it wraps inside its own slot.
pub fn extract_pilot_region(received: &[Cplx], template: &[Cplx], theta_hat: usize, cfg: &SystemConfig) -> Result<PilotRegion> {
    let (m, n, lp) = (cfg.delay_bins, cfg.doppler_bins, cfg.zc_len);
    let mn = m * n;
    if received.len() != mn || template.len() != mn {
        return Err(Error::Dimension(format!(
            "pilot inputs have {} and {} samples, expected {mn}",
            received.len(),
            template.len()
        )));
    }
    let l_p = cfg.pilot_delay();
    if l_p + lp > m {
        return Err(Error::Placement(format!("pilot window {l_p}+{lp} exceeds M = {m}")));
    }
    let mut samples = Vec::with_capacity(n * lp);
    let mut kappa = Vec::with_capacity(n * lp);
    let mut symbols = Vec::with_capacity(n);
    for slot in 0..n {
        for i in 0..lp {
            let idx = if cfg.pilot_wrap {
                (slot * m + l_p + theta_hat + i) % mn
            } else {
                slot * m + (l_p + theta_hat + i) % m
            };
            samples.push(received[idx]);
            kappa.push(cfg.cp_len + idx);
        }
        symbols.push(template[slot * m + l_p..slot * m + l_p + lp].to_vec());
    }
    Ok(PilotRegion { samples, kappa, symbols })
}

/// Chebyshev polynomials of the first kind on `κ' = (2κ − N_s + 1)/(N_s − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BemBasis {
    pub n_s: usize,
    pub order: usize,
}

impl BemBasis {
    pub fn new(n_s: usize, order: usize) -> Self {
        BemBasis { n_s, order }
    }

    pub fn normalized_time(&self, kappa: usize) -> f64 {
        (2.0 * kappa as f64 - self.n_s as f64 + 1.0) / (self.n_s as f64 - 1.0)
    }

    /// `[B_0(κ), …, B_{β−1}(κ)]` by the three-term recursion.
    pub fn values(&self, kappa: usize) -> Vec<f64> {
        let x = self.normalized_time(kappa);
        let mut out = Vec::with_capacity(self.order);
        for g in 0..self.order {
            let v = match g {
                0 => 1.0,
                1 => x,
                _ => 2.0 * x * out[g - 1] - out[g - 2],
            };
            out.push(v);
        }
        out
    }
}

/// Regressor `G` with row `(n, i)` and column `ℓβ + γ` equal to
/// `s̄_n[(i − ℓ) mod L_p] B_γ(κ_{n,i})`.
pub fn build_bem_regressor(region: &PilotRegion, l_ch: usize, basis: &BemBasis) -> Result<DMatrix<Cplx>> {
    let lp = region.symbols.first().map_or(0, Vec::len);
    let rows = region.samples.len();
    let beta = basis.order;
    let cols = l_ch * beta;
    if lp == 0 || rows != lp * region.symbols.len() {
        return Err(Error::Dimension("pilot region is empty or ragged".into()));
    }
    if l_ch > lp {
        return Err(Error::Config(format!("L_ch = {l_ch} exceeds L_p = {lp}")));
    }
    if cols > rows {
        return Err(Error::Estimation(format!(
            "regressor is {rows}x{cols}: more unknowns than pilot observations"
        )));
    }
    let mut g = DMatrix::from_element(rows, cols, Cplx::new(0.0, 0.0));
    for (row, &kappa) in region.kappa.iter().enumerate() {
        let (slot, i) = (row / lp, row % lp);
        let b = basis.values(kappa);
        for ell in 0..l_ch {
            let s = region.symbols[slot][(i + lp - ell) % lp];
            for (gamma, bv) in b.iter().enumerate() {
                g[(row, ell * beta + gamma)] = s * *bv;
            }
        }
    }
    check_rank(&g)?;
    Ok(g)
}

fn check_rank(g: &DMatrix<Cplx>) -> Result<()> {
    let qr = g.clone().col_piv_qr();
    let d = qr.r().diagonal();
    let max = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let rank = d.iter().filter(|v| v.norm() > 1e-10 * max).count();
    if max == 0.0 || rank < g.ncols() {
        return Err(Error::Estimation(format!(
            "BEM regressor has rank {rank} < {} columns",
            g.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recursion_matches_closed_form() {
        let basis = BemBasis::new(4114, 12);
        for kappa in [0, 1, 17, 2057, 3000, 4113] {
            let x = basis.normalized_time(kappa);
            for (g, v) in basis.values(kappa).iter().enumerate() {
                let closed = (g as f64 * x.clamp(-1.0, 1.0).acos()).cos();
                assert!((v - closed).abs() < 1e-9, "κ={kappa} γ={g}");
            }
        }
        assert_eq!(basis.normalized_time(0), -1.0);
        assert_eq!(basis.normalized_time(4113), 1.0);
    }

    proptest! {
        #[test]
        fn chebyshev_bounded_on_frame(kappa in 0usize..4114, order in 1usize..=12) {
            let basis = BemBasis::new(4114, order);
            for v in basis.values(kappa) {
                prop_assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }

    fn region_from(symbols: Vec<Vec<Cplx>>, kappa_start: usize) -> PilotRegion {
        let lp = symbols[0].len();
        let rows = lp * symbols.len();
        PilotRegion {
            samples: vec![Cplx::new(0.0, 0.0); rows],
            kappa: (kappa_start..kappa_start + rows).collect(),
            symbols,
        }
    }

    #[test]
    fn regressor_entries() {
        let sym: Vec<Cplx> = (0..4).map(|i| Cplx::new(i as f64 + 1.0, 0.5)).collect();
        let region = region_from(vec![sym.clone(), sym.clone()], 10);
        let basis = BemBasis::new(100, 2);
        let g = build_bem_regressor(&region, 3, &basis).unwrap();
        assert_eq!(g.shape(), (8, 6));
        for row in 0..8 {
            let i = row % 4;
            let b = basis.values(10 + row);
            for ell in 0..3 {
                for gamma in 0..2 {
                    assert_eq!(g[(row, ell * 2 + gamma)], sym[(i + 4 - ell) % 4] * b[gamma]);
                }
            }
        }
    }

    #[test]
    fn rank_deficiency_reported() {
        // Constant pilot: every delay column is identical.
        let sym = vec![Cplx::new(1.0, 0.0); 4];
        let region = region_from(vec![sym.clone(), sym], 0);
        let err = build_bem_regressor(&region, 2, &BemBasis::new(100, 1)).unwrap_err();
        assert!(matches!(err, Error::Estimation(_)));
    }
}
