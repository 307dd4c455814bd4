use crate::ctc::{ctc_forward_logprob, Posteriorgram, TriggerAlignment};
use crate::decoder::{ta_prefix_score, DecoderParams};
use crate::encoder::EncoderStates;
use crate::error::{Error, Result};
use crate::numcore::LOG_ZERO;

use super::weighted;

/// Weight of the CTC objective in the multi-objective loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub gamma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { gamma: 0.3 }
    }
}

/// `-gamma * log p_ctc(Y|X) - (1 - gamma) * log p_ta(Y|X)` with decoder
/// triggers taken from `align`. An unreachable `y` gives `+inf`.
pub fn joint_loss(
    post: &Posteriorgram,
    enc: &EncoderStates,
    y: &[u32],
    align: &TriggerAlignment,
    dec: &DecoderParams,
    lp: &LossParams,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lp.gamma) {
        return Err(Error::InvalidParameter(format!("gamma {} outside [0, 1]", lp.gamma)));
    }
    if align.nu.len() != y.len() {
        return Err(Error::dims("alignment does not match the label sequence"));
    }
    let ctc = ctc_forward_logprob(post, y)?;
    if ctc == LOG_ZERO && lp.gamma > 0.0 {
        return Ok(f64::INFINITY);
    }
    let ta = if lp.gamma < 1.0 {
        ta_prefix_score(enc, y, &align.nu, dec)?
    } else {
        0.0
    };
    Ok(-(weighted(lp.gamma, ctc) + weighted(1.0 - lp.gamma, ta)))
}
