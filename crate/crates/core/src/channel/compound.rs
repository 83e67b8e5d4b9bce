//! Explicit delay-Doppler input-output matrices.
//!
//! For each user `Λ = R_cp Π(θ) H A_cp` maps `vec{X}` to the post-CP samples and
//! `Φ̌ = diag(e^{j2πε(L_cp + m)/N_s})` carries the CFO. Both are moved to the
//! delay-Doppler domain with `F = F_N ⊗ I_M`, and
//! `Ψ = Σ_q Φ̌_DD Λ_DD P_q` where `P_q` projects onto the bins user `q` occupies.
//! The matrices are dense `MN x MN`, so this is meant for small grids.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{ChannelRealization, UserChannel};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::Cplx;

#[derive(Debug, Clone)]
pub struct CompoundChannel {
    /// `Φ̌_DD Λ_DD` for each user, before projection.
    pub per_user: Vec<DMatrix<Cplx>>,
    /// `Ψ_DD`.
    pub psi: DMatrix<Cplx>,
}

fn czero() -> Cplx {
    Cplx::new(0.0, 0.0)
}

/// `F_N ⊗ I_M` acting on column-major `vec` order.
pub(crate) fn dd_transform(m: usize, n: usize) -> DMatrix<Cplx> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(m * n, m * n, |r, c| {
        let (l, k) = (r % m, r / m);
        let (l2, t) = (c % m, c / m);
        if l != l2 {
            return czero();
        }
        Cplx::from_polar(scale, -2.0 * PI * (k * t) as f64 / n as f64)
    })
}

/// `Λ = R_cp Π(θ) H A_cp` built from its four factors.
fn time_domain_channel(user: &UserChannel, cfg: &SystemConfig) -> Result<DMatrix<Cplx>> {
    let mn = cfg.mn();
    let n_s = cfg.n_s();
    let (l_cp, theta_max, theta) = (cfg.cp_len, cfg.theta_max, user.to);
    if theta > theta_max {
        return Err(Error::Realization(format!("TO {theta} > θ_max = {theta_max}")));
    }
    let guard = cfg.post_cp_len();

    let a_cp = DMatrix::from_fn(n_s, mn, |t, i| {
        if (t + mn - l_cp) % mn == i {
            Cplx::new(1.0, 0.0)
        } else {
            czero()
        }
    });
    let mut h = DMatrix::from_element(n_s, n_s, czero());
    for kp in 0..n_s {
        for ell in 0..user.paths.len().min(kp + 1) {
            h[(kp, kp - ell)] = user.paths.tap(ell, kp + theta);
        }
    }
    let pi = DMatrix::from_fn(mn + guard, n_s, |j, c| {
        if c == theta_max - theta + j {
            Cplx::new(1.0, 0.0)
        } else {
            czero()
        }
    });
    let r_cp = DMatrix::from_fn(mn, mn + guard, |r, c| {
        if c == r + guard {
            Cplx::new(1.0, 0.0)
        } else {
            czero()
        }
    });
    Ok(r_cp * pi * h * a_cp)
}

/// Builds every user's delay-Doppler matrix and `Ψ_DD`. `footprints[q]` marks,
/// in `vec` order, the bins user `q` transmits on.
pub fn build_compound_channel(
    real: &ChannelRealization,
    cfg: &SystemConfig,
    footprints: &[Vec<bool>],
) -> Result<CompoundChannel> {
    let (m, n) = (cfg.delay_bins, cfg.doppler_bins);
    let mn = m * n;
    if footprints.len() != real.users.len() {
        return Err(Error::Dimension(format!(
            "{} footprints for {} users",
            footprints.len(),
            real.users.len()
        )));
    }
    if cfg.theta_max > cfg.cp_len {
        return Err(Error::Config(format!(
            "θ_max = {} exceeds L_cp = {}",
            cfg.theta_max, cfg.cp_len
        )));
    }
    let f = dd_transform(m, n);
    let f_h = f.adjoint();
    let n_s = cfg.n_s() as f64;

    let mut per_user = Vec::with_capacity(real.users.len());
    let mut psi = DMatrix::from_element(mn, mn, czero());
    for (user, fp) in real.users.iter().zip(footprints) {
        if fp.len() != mn {
            return Err(Error::Dimension(format!("footprint has {} bins, expected {mn}", fp.len())));
        }
        let lambda = time_domain_channel(user, cfg)?;
        let phi = DMatrix::from_diagonal(&DVector::from_fn(mn, |j, _| {
            Cplx::from_polar(1.0, 2.0 * PI * user.cfo * (cfg.cp_len + j) as f64 / n_s)
        }));
        let g = &f * phi * lambda * &f_h;
        for (c, &owned) in fp.iter().enumerate() {
            if owned {
                let mut col = psi.column_mut(c);
                col += g.column(c);
            }
        }
        per_user.push(g);
    }
    Ok(CompoundChannel { per_user, psi })
}

/// Regularised least-squares inversion `(Ψ^H Ψ + λI)^{-1} Ψ^H d̃`. The MMSE
/// choice is `λ = σ_η²`. With `λ = 0` a singular `Ψ` is reported instead of
/// producing non-finite output.
pub fn joint_compensate(psi: &DMatrix<Cplx>, received: &DVector<Cplx>, loading: f64) -> Result<DVector<Cplx>> {
    if psi.nrows() != received.len() {
        return Err(Error::Dimension(format!(
            "Ψ has {} rows, received vector has {}",
            psi.nrows(),
            received.len()
        )));
    }
    if loading < 0.0 {
        return Err(Error::Config(format!("loading must be non-negative, got {loading}")));
    }
    let rhs = psi.adjoint() * received;
    let mut gram = psi.adjoint() * psi;
    if loading == 0.0 {
        let singular = || {
            Error::Numeric("Ψ is singular; use a positive loading factor for an LS/MMSE-style solve".into())
        };
        let qr = psi.clone().col_piv_qr();
        let r = qr.r();
        let d = r.diagonal();
        let max = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if max == 0.0 || d.iter().any(|v| v.norm() <= 1e-10 * max) {
            return Err(singular());
        }
        return qr.solve(received).ok_or_else(singular);
    }
    for i in 0..gram.nrows() {
        gram[(i, i)] += Cplx::new(loading, 0.0);
    }
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numeric("regularised Gram matrix is not positive definite".into()))
}
