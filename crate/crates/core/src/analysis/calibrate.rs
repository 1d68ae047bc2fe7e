use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation of the calibration loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub constant: f64,
    pub success_rate: f64,
    pub met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// The first value from which the target held twice in a row.
    pub value: f64,
    pub target: f64,
    pub history: Vec<CalibrationStep>,
}

/// Grow a constant by ×2 from `initial` until `evaluate` reaches `target` on
/// two consecutive values. `evaluate` maps a constant to a success rate, which
/// is typically the share of seeds on which a criterion held.
pub fn calibrate_constant(
    initial: f64,
    target: f64,
    max_doublings: usize,
    mut evaluate: impl FnMut(f64) -> Result<f64>,
) -> Result<Calibration> {
    if !(initial > 0.0 && initial.is_finite()) {
        return Err(Error::Calibration(format!("initial constant {initial} must be positive")));
    }
    let mut history: Vec<CalibrationStep> = Vec::new();
    let mut c = initial;
    for _ in 0..=max_doublings {
        let rate = evaluate(c)?;
        let met = rate >= target;
        history.push(CalibrationStep {
            constant: c,
            success_rate: rate,
            met,
        });
        if let [.., prev, last] = history.as_slice() {
            if prev.met && last.met {
                return Ok(Calibration {
                    value: prev.constant,
                    target,
                    history,
                });
            }
        }
        c *= 2.0;
    }
    Err(Error::Calibration(format!(
        "target {target} not met twice in a row after {max_doublings} doublings from {initial}"
    )))
}
