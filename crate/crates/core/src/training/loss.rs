use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{huber_value, Tape, Tensor, Var};

/// Penalty applied to the feature discrepancy during distillation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Huber,
    /// `0.5 x^2` everywhere; coincides with Huber inside the knot.
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Huber => "huber",
            LossKind::L2 => "l2",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huber" => Ok(LossKind::Huber),
            "l2" => Ok(LossKind::L2),
            _ => Err(Error::config(&["train.loss"], format!("unknown loss '{s}' (huber, l2)"))),
        }
    }
}

/// Elementwise Huber on plain tensors.
pub fn huber(xi: &Tensor, delta: f64) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("huber delta must be > 0, got {delta}")));
    }
    Ok(xi.map(|v| huber_value(v, delta)))
}

fn penalty(tape: &mut Tape, x: Var, kind: LossKind, delta: f64) -> Result<Var> {
    match kind {
        LossKind::Huber => tape.huber(x, delta),
        LossKind::L2 => {
            let sq = tape.square(x);
            Ok(tape.scale(sq, 0.5))
        }
    }
}

fn rows(tape: &Tape, x: Var) -> f64 {
    tape.shape(x).first().copied().unwrap_or(1).max(1) as f64
}

/// Per-sample summed penalty on `a_h - a_v`, averaged over the batch. The
/// target is detached so no gradient reaches whatever produced it.
pub fn hallucination_loss(tape: &mut Tape, a_h: Var, a_v: Var, delta: f64, kind: LossKind) -> Result<Var> {
    if tape.shape(a_h) != tape.shape(a_v) {
        return Err(Error::Contract(format!(
            "hallucination loss needs equal shapes, got {:?} and {:?}",
            tape.shape(a_h),
            tape.shape(a_v)
        )));
    }
    let target = tape.detach(a_v);
    let xi = tape.sub(a_h, target)?;
    let p = penalty(tape, xi, kind, delta)?;
    let n = rows(tape, a_h);
    let s = tape.sum(p);
    Ok(tape.scale(s, 1.0 / n))
}

/// Batch mean of translation Huber plus `alpha`-weighted Huber on wrapped
/// Euler residuals.
pub fn regression_loss(tape: &mut Tape, t_hat: Var, r_hat: Var, t: Var, r: Var, alpha: f64, delta: f64) -> Result<Var> {
    let et = tape.sub(t_hat, t)?;
    let er = tape.sub(r_hat, r)?;
    let er = tape.wrap_angle(er);
    let ht = tape.huber(et, delta)?;
    let hr = tape.huber(er, delta)?;
    let st = tape.sum(ht);
    let sr = tape.sum(hr);
    let sr = tape.scale(sr, alpha);
    let total = tape.add(st, sr)?;
    let n = rows(tape, t_hat);
    Ok(tape.scale(total, 1.0 / n))
}

/// Splits `[n, 6]` pose targets into constant translation and rotation vars.
pub fn split_targets(tape: &mut Tape, targets: &Tensor) -> Result<(Var, Var)> {
    let all = tape.constant(targets.clone());
    let t = tape.slice(all, 1, 0, 3)?;
    let r = tape.slice(all, 1, 3, 3)?;
    Ok((t, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn huber_examples() {
        let h = huber(&Tensor::vector(&[0.0, 2.0, 1.0, -1.0]), 1.0).unwrap();
        assert_eq!(h.data(), &[0.0, 1.5, 0.5, 0.5]);
        assert!(huber(&Tensor::vector(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn hallucination_loss_outlier_is_linear() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(&[&[10.0, 0.0], &[0.0, 0.0]]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        let h = hallucination_loss(&mut tape, a, b, 1.0, LossKind::Huber).unwrap();
        let l = hallucination_loss(&mut tape, a, b, 1.0, LossKind::L2).unwrap();
        assert!((scalar(&tape, h) - 9.5 / 2.0).abs() < 1e-15);
        assert!((scalar(&tape, l) - 50.0 / 2.0).abs() < 1e-15);
        let swapped = hallucination_loss(&mut tape, b, a, 1.0, LossKind::Huber).unwrap();
        assert_eq!(scalar(&tape, swapped), scalar(&tape, h));
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            hallucination_loss(&mut tape, a, c, 1.0, LossKind::Huber),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn target_receives_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(&[0.3, -2.0]).reshape(&[1, 2]).unwrap());
        let b = tape.param(Tensor::vector(&[0.1, 0.4]).reshape(&[1, 2]).unwrap());
        let loss = hallucination_loss(&mut tape, a, b, 1.0, LossKind::Huber).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(b).data().iter().all(|&v| v == 0.0));
        let ga = g.get(a);
        assert!((ga.data()[0] - (0.3 - 0.1)).abs() < 1e-15);
        assert_eq!(ga.data()[1], -1.0);
    }

    #[test]
    fn regression_examples() {
        let mut tape = Tape::new();
        let targets = Tensor::new(vec![1, 6], vec![0.0; 6]).unwrap();
        let (t, r) = split_targets(&mut tape, &targets).unwrap();
        let th = tape.constant(Tensor::new(vec![1, 3], vec![0.1, 0.0, 0.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1, 3]));
        let lt = regression_loss(&mut tape, th, zero, t, r, 0.001, 1.0).unwrap();
        assert!((scalar(&tape, lt) - 0.005).abs() < 1e-15);
        let lr = regression_loss(&mut tape, zero, th, t, r, 0.001, 1.0).unwrap();
        assert!((scalar(&tape, lr) - 0.001 * scalar(&tape, lt)).abs() < 1e-15);
        let perfect = regression_loss(&mut tape, zero, zero, t, r, 0.001, 1.0).unwrap();
        assert_eq!(scalar(&tape, perfect), 0.0);
    }

    #[test]
    fn rotation_residual_is_wrapped() {
        let mut tape = Tape::new();
        let targets = Tensor::new(vec![1, 6], vec![0.0, 0.0, 0.0, 0.1, 3.0, -0.2]).unwrap();
        let (t, r) = split_targets(&mut tape, &targets).unwrap();
        let zero = tape.constant(Tensor::zeros(&[1, 3]));
        let base = tape.constant(Tensor::new(vec![1, 3], vec![0.2, -3.0, 0.1]).unwrap());
        let shifted = tape.constant(Tensor::new(vec![1, 3], vec![0.2 + 2.0 * std::f64::consts::PI, -3.0, 0.1]).unwrap());
        let a = regression_loss(&mut tape, zero, base, t, r, 0.5, 1.0).unwrap();
        let b = regression_loss(&mut tape, zero, shifted, t, r, 0.5, 1.0).unwrap();
        assert!((scalar(&tape, a) - scalar(&tape, b)).abs() < 1e-12);
    }
}
