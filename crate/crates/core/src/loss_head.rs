//! Self-attention loss predictor over the shared encoder output.
//!
//! The readout (mean-pool over positions, affine map, softplus) is a choice of
//! this crate; it keeps predictions non-negative like the losses they regress.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossHeadParams {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub d_k: usize,
}

impl LossHeadParams {
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, d_in: usize, d_k: usize, rng: &mut R) -> Self {
        assert!(d_k >= 1, "contract violation: d_k must be positive");
        LossHeadParams {
            q: params.add("loss_head.q", Tensor::xavier(d_in, d_k, rng)),
            k: params.add("loss_head.k", Tensor::xavier(d_in, d_k, rng)),
            v: params.add("loss_head.v", Tensor::xavier(d_in, d_k, rng)),
            out_w: params.add("loss_head.out.w", Tensor::xavier(d_k, 1, rng)),
            out_b: params.add("loss_head.out.b", Tensor::zeros(&[1, 1])),
            d_k,
        }
    }

    pub fn find(params: &ParamSet) -> Option<Self> {
        let q = params.id("loss_head.q")?;
        Some(LossHeadParams {
            q,
            k: params.id("loss_head.k")?,
            v: params.id("loss_head.v")?,
            out_w: params.id("loss_head.out.w")?,
            out_b: params.id("loss_head.out.b")?,
            d_k: params.get(q).cols(),
        })
    }

    pub fn ids(&self) -> [ParamId; 5] {
        [self.q, self.k, self.v, self.out_w, self.out_b]
    }
}

/// Scaled dot-product attention of `q` over `k`/`v` (all `len x d_k`).
///
/// With `valid_len`, keys at positions `>= valid_len` get zero weight.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, valid_len: Option<usize>) -> Var {
    let d_k = tape.value(k).cols();
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let mut scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let len = tape.value(k).rows();
    if let Some(valid) = valid_len.filter(|&n| n < len) {
        assert!(valid >= 1, "contract violation: no valid positions");
        let rows = tape.value(q).rows();
        let mut mask = vec![0.0; rows * len];
        for r in 0..rows {
            mask[r * len + valid..(r + 1) * len].fill(f64::NEG_INFINITY);
        }
        let mask = tape.input(Tensor::matrix(rows, len, mask));
        scores = tape.add(scores, mask);
    }
    let weights = tape.softmax_rows(scores);
    tape.matmul(weights, v)
}

/// Head parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossHeadVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl LossHeadParams {
    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> LossHeadVars {
        LossHeadVars {
            q: tape.param(params, self.q),
            k: tape.param(params, self.k),
            v: tape.param(params, self.v),
            out_w: tape.param(params, self.out_w),
            out_b: tape.param(params, self.out_b),
        }
    }
}

/// `len x d_k` self-attention output over encoder states `h`.
pub fn self_attention(tape: &mut Tape, p: &LossHeadVars, h: Var, valid_len: Option<usize>) -> Var {
    let q = tape.matmul(h, p.q);
    let k = tape.matmul(h, p.k);
    let v = tape.matmul(h, p.v);
    attend(tape, q, k, v, valid_len)
}

/// Scalar predicted loss: softplus of an affine map of the mean attention output.
pub fn predict_loss(tape: &mut Tape, p: &LossHeadVars, h: Var, valid_len: Option<usize>) -> Var {
    let att = self_attention(tape, p, h, valid_len);
    let rows = tape.value(att).rows();
    let att = match valid_len {
        Some(n) if n < rows => tape.slice_rows(att, 0, n),
        _ => att,
    };
    let pooled = tape.mean_rows(att);
    let lin = tape.matmul(pooled, p.out_w);
    let lin = tape.add(lin, p.out_b);
    tape.softplus(lin)
}

/// Mean squared error between predictions and constant targets.
pub fn loss_head_loss(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predicted.len() as f64)
}

/// Records the head loss for stacked `n x 1` predictions; no gradient reaches `targets`.
pub fn loss_head_loss_var(tape: &mut Tape, predicted: Var, targets: &[f64]) -> Result<Var> {
    if targets.is_empty() || tape.value(predicted).len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            tape.value(predicted).len(),
            targets.len()
        )));
    }
    Ok(tape.mse(predicted, targets))
}

pub fn joint_loss(seg_nll: &[f64], head_loss: f64, lambda: f64) -> f64 {
    seg_nll.iter().sum::<f64>() / seg_nll.len() as f64 + lambda * head_loss
}

/// `mean(seg_nll) + lambda * head_loss` on the tape.
pub fn joint_loss_var(tape: &mut Tape, seg_nll: &[Var], head_loss: Option<Var>, lambda: f64) -> Var {
    assert!(lambda >= 0.0, "contract violation: negative lambda");
    let stacked = tape.concat_rows(seg_nll);
    let seg = tape.mean(stacked);
    match head_loss {
        Some(h) => {
            let weighted = tape.scale(h, lambda);
            tape.add(seg, weighted)
        }
        None => seg,
    }
}
