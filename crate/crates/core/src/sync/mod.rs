//! Receiver-side synchronisation: band separation, timing, CFO and channel estimation.

pub mod bem;
pub mod cfo;
pub mod filterbank;
pub mod timing;

pub use bem::{build_bem_regressor, extract_pilot_region, BemBasis, PilotRegion};
pub use cfo::{golden_max, CfoProblem, ChannelEstimate};
pub use filterbank::{separate_user, user_band};
pub use timing::{estimate_to, max_peak, timing_correlate, TimingMetric};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::Cplx;

/// Which estimates [`synchronize_user`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub cfo: bool,
    pub channel: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { cfo: true, channel: true }
    }
}

/// Estimates for one user.
#[derive(Debug, Clone)]
pub struct UserSync {
    pub metric: TimingMetric,
    pub to: usize,
    pub to_max_peak: usize,
    pub region: Option<PilotRegion>,
    pub cfo: Option<f64>,
    pub channel: Option<ChannelEstimate>,
}

/// Runs timing, CFO and BEM channel estimation on one user's separated stream.
///
/// `genie_to` replaces the detected offset with the given value.
pub fn synchronize_user(
    separated: &[Cplx],
    template: &[Cplx],
    cfg: &SystemConfig,
    genie_to: Option<usize>,
    stages: Stages,
) -> Result<UserSync> {
    let metric = timing_correlate(separated, template, cfg)?;
    let detected = estimate_to(&metric, cfg.threshold, cfg.zc_len, cfg.replica_rejection);
    let to_max_peak = max_peak(&metric);
    let to = genie_to.unwrap_or(detected);
    let mut out = UserSync {
        metric,
        to: detected,
        to_max_peak,
        region: None,
        cfo: None,
        channel: None,
    };
    if !(stages.cfo || stages.channel) {
        return Ok(out);
    }
    let region = extract_pilot_region(separated, template, to, cfg)?;
    let basis = BemBasis::new(cfg.n_s(), cfg.beta());
    let g = build_bem_regressor(&region, cfg.l_ch_cap, &basis)?;
    let problem = CfoProblem::new(g, &region, cfg.n_s())?;
    let cfo = if stages.cfo { problem.estimate(&cfg.cfo_search)?.0 } else { 0.0 };
    if stages.cfo {
        out.cfo = Some(cfo);
    }
    if stages.channel {
        out.channel = Some(ChannelEstimate {
            coeffs: problem.coefficients(cfo, cfg.bem_loading)?,
            basis,
            l_ch: cfg.l_ch_cap,
        });
    }
    out.region = Some(region);
    Ok(out)
}
