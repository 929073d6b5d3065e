//! A-priori diagnostics of the surrogate: model similarity `R_s`, error
//! component ratio `R_e`, and the resulting relative error bound.

use nalgebra::DVector;

use super::model::predict_from_lf;
use super::BfModel;
use crate::error::{Error, Result};

/// Residuals below this fraction of the reference norm count as zero.
const ROUNDOFF: f64 = 1e-12;

fn snap(x: f64, scale: f64) -> f64 {
    if x <= ROUNDOFF * scale {
        0.0
    } else {
        x
    }
}

/// `‖v − proj‖ / ‖v‖`, zero for a zero vector.
pub(crate) fn relative_distance(v: &DVector<f64>, proj: &DVector<f64>) -> f64 {
    let n = v.norm();
    if n == 0.0 {
        0.0
    } else {
        snap((v - proj).norm(), n) / n
    }
}

/// `num / den` with `x/0 = ∞` for `x > 0` and `0/0 = zero_zero`.
pub(crate) fn ratio(num: f64, den: f64, zero_zero: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            zero_zero
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn first_k(model: &BfModel, k: usize) -> Result<BfModel> {
    if k == model.basis_size() {
        Ok(model.clone())
    } else {
        model.truncated(k)
    }
}

/// Ratio of the HF relative distance to the LF relative distance, both
/// measured against the first `k` basis members. `∞` when only the LF
/// solution lies in its span; 1 when both do.
pub fn model_similarity_rs(
    v_hf: &DVector<f64>,
    v_lf: &DVector<f64>,
    model: &BfModel,
    k: usize,
) -> Result<f64> {
    let m = first_k(model, k)?;
    let hf_rel = relative_distance(v_hf, &m.hf_projection(v_hf)?);
    let lf_rel = relative_distance(v_lf, &m.lf_projection(v_lf)?);
    Ok(ratio(hf_rel, lf_rel, 1.0))
}

/// In-plane error over out-of-plane distance,
/// `‖P_{U^H} v^H − v^B‖ / d(v^H, U^H)`. `∞` when `v^H` lies in the span but
/// `v^B` misses its projection; `0/0 = 0`.
pub fn error_ratio_re(
    v_hf: &DVector<f64>,
    v_bf: &DVector<f64>,
    model: &BfModel,
    k: usize,
) -> Result<f64> {
    let m = first_k(model, k)?;
    let proj = m.hf_projection(v_hf)?;
    if v_bf.len() != proj.len() {
        return Err(Error::DimensionMismatch {
            context: "BF prediction",
            expected: proj.len(),
            actual: v_bf.len(),
        });
    }
    let scale = v_hf.norm();
    Ok(ratio(
        snap((&proj - v_bf).norm(), scale),
        snap((v_hf - &proj).norm(), scale),
        0.0,
    ))
}

pub(crate) fn re_from_parts(
    model: &BfModel,
    v_hf: &DVector<f64>,
    v_lf: &DVector<f64>,
) -> Result<f64> {
    let v_bf = predict_from_lf(model, v_lf)?.values;
    error_ratio_re(v_hf, &v_bf, model, model.basis_size())
}

/// `max_z (LF relative distance) · (1 + R_e(z_{k+1}))` recorded while
/// training with a `k`-member basis.
pub fn error_bound(model: &BfModel, k: usize) -> Result<f64> {
    model
        .training_report()
        .iter()
        .find(|s| s.k == k)
        .map(|s| s.error_bound)
        .ok_or_else(|| Error::invalid(format!("no training diagnostics for k = {k}")))
}
