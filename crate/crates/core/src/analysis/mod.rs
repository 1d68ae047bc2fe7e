//! Oracles for the integral quantities behind the estimator, constant
//! calibration, net-density checks and error reports.

mod calibrate;
mod net_check;
mod oracle;
mod refined;
mod report;

pub use calibrate::{calibrate_constant, Calibration, CalibrationStep};
pub use net_check::{is_delta_net, CellIndex, NetCheck, NetCheckConfig};
pub use oracle::{
    c4_hat_for, estimate_c5, kphi, kphi_oracle, kuratowski_ratios, point_at_distance, w_minus_oracle, C5Estimate,
    KPhi, MeasureRule, OracleConfig, RuleKind, C5_SAFETY,
};
pub use refined::{barycentric_position, check_refinement, refined_point_position, RefinementCheck};
pub use report::{
    dapp_report, error_report, pair_errors, write_pair_errors, ErrorReport, NearRule, PairError, Quantiles,
    ReportRule,
};
