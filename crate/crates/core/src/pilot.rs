//! Zadoff-Chu pilots with a cyclic prefix, placed along the delay axis.
//!
//! Each user's PCP occupies delay rows `l_p − L_p + 1 ..= l_p + L_p − 1` of one
//! Doppler column. Those rows are a guard band: no user places data there.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{gcd, PilotLayout, SystemConfig};
use crate::error::{Error, Result};
use crate::grid::UserAllocation;
use crate::modem::{random_qam4, DelayDopplerFrame, OtfsModem};
use crate::Cplx;

/// Zadoff-Chu sequence of length `len` with root `root`.
pub fn zadoff_chu(len: usize, root: usize) -> Result<Vec<Cplx>> {
    if len == 0 {
        return Err(Error::Config("ZC length must be positive".into()));
    }
    if gcd(root, len) != 1 {
        return Err(Error::Config(format!(
            "ZC root {root} must be coprime with L_p = {len}"
        )));
    }
    let l = len as f64;
    let r = root as f64;
    Ok((0..len)
        .map(|n| {
            let n = n as f64;
            let arg = if len.is_multiple_of(2) { n * n } else { n * (n + 1.0) };
            Cplx::from_polar(1.0, -PI * r * arg / l)
        })
        .collect())
}

/// `[z[1..], z]` scaled by `amplitude`, length `2 L_p − 1`.
pub fn make_pcp(len: usize, root: usize, amplitude: f64) -> Result<Vec<Cplx>> {
    let z = zadoff_chu(len, root)?;
    Ok(z[1..].iter().chain(&z).map(|v| v * amplitude).collect())
}

/// Pilot position of one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotPlacement {
    pub user_id: usize,
    /// Doppler column holding the PCP.
    pub doppler: usize,
    /// Delay index of the first ZC sample after the prefix.
    pub delay: usize,
    pub zc_len: usize,
}

impl PilotPlacement {
    pub fn rows(&self) -> RangeInclusive<usize> {
        (self.delay + 1 - self.zc_len)..=(self.delay + self.zc_len - 1)
    }
}

/// Doppler column of every user's pilot.
pub fn pilot_columns(cfg: &SystemConfig) -> Vec<usize> {
    let (n, q) = (cfg.doppler_bins, cfg.users);
    match cfg.pilot_layout {
        PilotLayout::Banded => {
            let k_p = cfg.k_p.unwrap_or(n / (2 * q));
            (0..q).map(|u| k_p + u * (n / q)).collect()
        }
        PilotLayout::HalfSpaced => (0..q).map(|u| cfg.k_p.unwrap_or(0) + u * (n / (2 * q))).collect(),
    }
}

pub fn pilot_placements(cfg: &SystemConfig) -> Result<Vec<PilotPlacement>> {
    let (m, n, lp) = (cfg.delay_bins, cfg.doppler_bins, cfg.zc_len);
    let delay = cfg.pilot_delay();
    if lp == 0 || delay + 1 < lp || delay + lp > m {
        return Err(Error::Placement(format!(
            "pilot rows {}..={} do not fit in M = {m}",
            delay as isize + 1 - lp as isize,
            delay + lp - 1
        )));
    }
    let cols = pilot_columns(cfg);
    for (u, &k) in cols.iter().enumerate() {
        if k >= n {
            return Err(Error::Placement(format!("pilot column {k} of user {u} outside 0..{n}")));
        }
        if let Some(v) = cols[..u].iter().position(|&o| o == k) {
            return Err(Error::Placement(format!(
                "users {v} and {u} both place their pilot in Doppler column {k}"
            )));
        }
    }
    Ok(cols
        .into_iter()
        .enumerate()
        .map(|(user_id, doppler)| PilotPlacement {
            user_id,
            doppler,
            delay,
            zc_len: lp,
        })
        .collect())
}

/// Writes the PCP into its column. Fails if the guard rows already hold anything.
pub fn embed_pilots(frame: &mut DelayDopplerFrame, pcp: &[Cplx], placement: &PilotPlacement) -> Result<()> {
    let rows = placement.rows();
    if pcp.len() != rows.clone().count() {
        return Err(Error::Dimension(format!(
            "PCP has {} samples, placement spans {} rows",
            pcp.len(),
            rows.count()
        )));
    }
    let (m, n) = frame.grid.shape();
    if *rows.end() >= m || placement.doppler >= n {
        return Err(Error::Placement("pilot outside the frame".into()));
    }
    for k in 0..n {
        for l in rows.clone() {
            if frame.grid[(l, k)] != Cplx::new(0.0, 0.0) {
                return Err(Error::Placement(format!(
                    "bin ({l}, {k}) in the pilot guard band is already occupied"
                )));
            }
        }
    }
    for (l, v) in rows.zip(pcp) {
        frame.grid[(l, placement.doppler)] = *v;
    }
    Ok(())
}

/// Bins a user may fill with data: its allocation minus the guard rows, in `vec` order.
pub fn data_mask(alloc: &UserAllocation, cfg: &SystemConfig) -> Vec<bool> {
    let m = cfg.delay_bins;
    let guard = cfg.pilot_rows();
    (0..cfg.mn())
        .map(|i| !guard.contains(&(i % m)) && alloc.owns(i % m, i / m))
        .collect()
}

/// Every bin a user transmits on: data bins plus its pilot.
pub fn footprint(alloc: &UserAllocation, placement: &PilotPlacement, cfg: &SystemConfig) -> Vec<bool> {
    let m = cfg.delay_bins;
    let mut mask = data_mask(alloc, cfg);
    for l in placement.rows() {
        mask[l + placement.doppler * m] = true;
    }
    mask
}

/// Pilot-only delay-Doppler frame of one user.
pub fn pilot_frame(cfg: &SystemConfig, pcp: &[Cplx], placement: &PilotPlacement) -> Result<DelayDopplerFrame> {
    let mut frame = DelayDopplerFrame::zeros(cfg.delay_bins, cfg.doppler_bins);
    embed_pilots(&mut frame, pcp, placement)?;
    Ok(frame)
}

/// Serialised delay-time samples of the pilot alone, length `MN`.
pub fn pilot_template(modem: &OtfsModem, cfg: &SystemConfig, pcp: &[Cplx], placement: &PilotPlacement) -> Result<Vec<Cplx>> {
    Ok(modem.modulate(&pilot_frame(cfg, pcp, placement)?)?.serialize())
}

/// Random 4-QAM data on the user's data bins plus its pilot.
pub fn build_user_frame<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    alloc: &UserAllocation,
    pcp: &[Cplx],
    placement: &PilotPlacement,
    rng: &mut R,
) -> Result<DelayDopplerFrame> {
    let mask = data_mask(alloc, cfg);
    let v: Vec<Cplx> = mask
        .iter()
        .map(|&on| if on { random_qam4(rng) } else { Cplx::new(0.0, 0.0) })
        .collect();
    let mut frame = DelayDopplerFrame {
        grid: DMatrix::from_column_slice(cfg.delay_bins, cfg.doppler_bins, &v),
    };
    embed_pilots(&mut frame, pcp, placement)?;
    Ok(frame)
}
