//! Carrier-offset search over the BEM projection and channel reconstruction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::bem::{BemBasis, PilotRegion};
use crate::config::CfoSearch;
use crate::error::{Error, Result};
use crate::Cplx;

/// Least-squares fit of the pilot region onto the column space of `G`.
#[derive(Debug, Clone)]
pub struct CfoProblem {
    q: DMatrix<Cplx>,
    r: DMatrix<Cplx>,
    gram: DMatrix<Cplx>,
    g_adj: DMatrix<Cplx>,
    samples: DVector<Cplx>,
    kappa: Vec<usize>,
    n_s: usize,
}

/// BEM channel estimate: `ĥ[ℓ, κ] = Σ_γ c[ℓβ + γ] B_γ(κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub coeffs: DVector<Cplx>,
    pub basis: BemBasis,
    pub l_ch: usize,
}

impl ChannelEstimate {
    pub fn tap(&self, delay: usize, kappa: usize) -> Cplx {
        let b = self.basis.values(kappa);
        let beta = self.basis.order;
        b.iter()
            .enumerate()
            .map(|(g, v)| self.coeffs[delay * beta + g] * *v)
            .sum()
    }
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    let x = (a + b) / 2.0;
    (x, f(x))
}

impl CfoProblem {
    pub fn new(g: DMatrix<Cplx>, region: &PilotRegion, n_s: usize) -> Result<Self> {
        if g.nrows() != region.samples.len() {
            return Err(Error::Dimension(format!(
                "regressor has {} rows, pilot region {} samples",
                g.nrows(),
                region.samples.len()
            )));
        }
        let g_adj = g.adjoint();
        let gram = &g_adj * &g;
        let qr = g.qr();
        Ok(CfoProblem {
            q: qr.q(),
            r: qr.r(),
            gram,
            g_adj,
            samples: DVector::from_column_slice(&region.samples),
            kappa: region.kappa.clone(),
            n_s,
        })
    }

    /// `e^{−j2πεκ/N_s} ⊙ r̄`.
    pub fn derotate(&self, cfo: f64) -> DVector<Cplx> {
        let n_s = self.n_s as f64;
        DVector::from_iterator(
            self.samples.len(),
            self.samples
                .iter()
                .zip(&self.kappa)
                .map(|(v, &k)| v * Cplx::from_polar(1.0, -2.0 * PI * cfo * k as f64 / n_s)),
        )
    }

    /// `g(ε) = ‖Q^H (e^{−j2πεκ/N_s} ⊙ r̄)‖²`.
    pub fn cost(&self, cfo: f64) -> f64 {
        self.q.ad_mul(&self.derotate(cfo)).norm_squared()
    }

    /// Grid search over `[−range, range]` followed by golden-section refinement
    /// around the best grid point. Returns the estimate and its cost.
    pub fn estimate(&self, search: &CfoSearch) -> Result<(f64, f64)> {
        if !(search.step > 0.0 && search.range >= 0.0 && search.tol > 0.0) {
            return Err(Error::Config(format!("invalid CFO search settings {search:?}")));
        }
        let steps = (search.range / search.step).round() as i64;
        let (mut best, mut best_cost) = (0.0, f64::NEG_INFINITY);
        for s in -steps..=steps {
            let e = s as f64 * search.step;
            let c = self.cost(e);
            if c > best_cost {
                best = e;
                best_cost = c;
            }
        }
        if !best_cost.is_finite() {
            return Err(Error::Numeric("CFO cost is not finite".into()));
        }
        let (refined, refined_cost) = golden_max(|e| self.cost(e), best - search.step, best + search.step, search.tol);
        Ok(if refined_cost >= best_cost { (refined, refined_cost) } else { (best, best_cost) })
    }

    /// `ĉ = R^{-1} Q^H ṽ`, or `(G^H G + λI)^{-1} G^H ṽ` when `loading > 0`.
    pub fn coefficients(&self, cfo: f64, loading: f64) -> Result<DVector<Cplx>> {
        let v = self.derotate(cfo);
        if loading > 0.0 {
            let mut a = self.gram.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += Cplx::new(loading, 0.0);
            }
            return a
                .cholesky()
                .map(|c| c.solve(&(&self.g_adj * v)))
                .ok_or_else(|| Error::Numeric("loaded Gram matrix is not positive definite".into()));
        }
        let rhs = self.q.ad_mul(&v);
        self.r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::Numeric("BEM triangular factor is singular".into()))
    }
}
