//! Delay-Doppler resource allocation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{AllocationScheme, SystemConfig};
use crate::error::{Error, Result};
use crate::Cplx;

/// Delay and Doppler bins owned by one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAllocation {
    pub user_id: usize,
    pub delay_set: Vec<usize>,
    pub doppler_set: Vec<usize>,
}

impl UserAllocation {
    pub fn owns(&self, delay: usize, doppler: usize) -> bool {
        self.delay_set.binary_search(&delay).is_ok()
            && self.doppler_set.binary_search(&doppler).is_ok()
    }
}

/// Splits `0..len` into `parts` contiguous blocks; the remainder goes to the last block.
fn contiguous(len: usize, parts: usize, part: usize) -> Vec<usize> {
    let base = len / parts;
    let start = part * base;
    let end = if part + 1 == parts { len } else { start + base };
    (start..end).collect()
}

pub fn build_allocation(config: &SystemConfig, scheme: AllocationScheme) -> Result<Vec<UserAllocation>> {
    let (m, n, q) = (config.delay_bins, config.doppler_bins, config.users);
    if q == 0 || q > m || q > n {
        return Err(Error::Allocation(format!(
            "cannot split M = {m}, N = {n} between Q = {q} users"
        )));
    }
    let allocs = (0..q)
        .map(|user| {
            let (delay_set, doppler_set) = match scheme {
                AllocationScheme::ContiguousDelay => (contiguous(m, q, user), (0..n).collect()),
                AllocationScheme::ContiguousDoppler => ((0..m).collect(), contiguous(n, q, user)),
                AllocationScheme::Interleaved => {
                    let dealt = (n / q) * q;
                    let mut bins: Vec<usize> = (user..dealt).step_by(q).collect();
                    if user + 1 == q {
                        bins.extend(dealt..n);
                    }
                    ((0..m).collect(), bins)
                }
            };
            UserAllocation {
                user_id: user,
                delay_set,
                doppler_set,
            }
        })
        .collect();
    Ok(allocs)
}

/// Checks that allocations are within bounds and that every bin has exactly one owner.
pub fn check_partition(allocs: &[UserAllocation], m: usize, n: usize) -> Result<()> {
    let mut owner = vec![None::<usize>; m * n];
    for a in allocs {
        check_bounds(a, m, n)?;
        for &k in &a.doppler_set {
            for &l in &a.delay_set {
                let slot = &mut owner[l + k * m];
                if let Some(prev) = slot {
                    return Err(Error::Allocation(format!(
                        "bin ({l}, {k}) owned by users {prev} and {}",
                        a.user_id
                    )));
                }
                *slot = Some(a.user_id);
            }
        }
    }
    if let Some(idx) = owner.iter().position(Option::is_none) {
        return Err(Error::Allocation(format!(
            "bin ({}, {}) has no owner",
            idx % m,
            idx / m
        )));
    }
    Ok(())
}

fn check_bounds(alloc: &UserAllocation, m: usize, n: usize) -> Result<()> {
    if let Some(&l) = alloc.delay_set.iter().find(|&&l| l >= m) {
        return Err(Error::Allocation(format!("delay index {l} outside 0..{m}")));
    }
    if let Some(&k) = alloc.doppler_set.iter().find(|&&k| k >= n) {
        return Err(Error::Allocation(format!("Doppler index {k} outside 0..{n}")));
    }
    Ok(())
}

/// Returns the `M x M_q` delay selector and the `N_q x N` Doppler selector.
pub fn selection_matrices(alloc: &UserAllocation, m: usize, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_bounds(alloc, m, n)?;
    let mut delay = DMatrix::zeros(m, alloc.delay_set.len());
    for (col, &l) in alloc.delay_set.iter().enumerate() {
        delay[(l, col)] = 1.0;
    }
    let mut doppler = DMatrix::zeros(alloc.doppler_set.len(), n);
    for (row, &k) in alloc.doppler_set.iter().enumerate() {
        doppler[(row, k)] = 1.0;
    }
    Ok((delay, doppler))
}

/// Places an `M_q x N_q` symbol block onto the full grid, `Γ_τ · D · Γ_ν`.
pub fn place(alloc: &UserAllocation, block: &DMatrix<Cplx>, m: usize, n: usize) -> Result<DMatrix<Cplx>> {
    if block.nrows() != alloc.delay_set.len() || block.ncols() != alloc.doppler_set.len() {
        return Err(Error::Dimension(format!(
            "block is {}x{}, allocation is {}x{}",
            block.nrows(),
            block.ncols(),
            alloc.delay_set.len(),
            alloc.doppler_set.len()
        )));
    }
    check_bounds(alloc, m, n)?;
    let mut grid = DMatrix::zeros(m, n);
    for (c, &k) in alloc.doppler_set.iter().enumerate() {
        for (r, &l) in alloc.delay_set.iter().enumerate() {
            grid[(l, k)] = block[(r, c)];
        }
    }
    Ok(grid)
}
