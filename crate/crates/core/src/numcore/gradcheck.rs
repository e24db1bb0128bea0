use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of |g_ad - g_fd| / max(1, |g_fd|)
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn eval<F>(params: &[Tensor], f: &F, want_grad: bool) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss);
    if !value.is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar objective".into()));
    }
    let value = value.item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {value}")));
    }
    let grads = if want_grad {
        let g = tape.backward(loss)?;
        vars.iter().map(|&v| g.get(v)).collect()
    } else {
        Vec::new()
    };
    Ok((value, grads))
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps`, coordinate by coordinate. `f` rebuilds its graph from the
/// supplied parameter vars on every call and must be deterministic.
pub fn finite_diff_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let (_, ad) = eval(params, &f, true)?;
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let (plus, _) = eval(&work, &f, false)?;
            work[pi].data_mut()[ei] = orig - eps;
            let (minus, _) = eval(&work, &f, false)?;
            work[pi].data_mut()[ei] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let err = (ad[pi].data()[ei] - fd).abs() / fd.abs().max(1.0);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ei);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[5, 5], &mut rng);
        let x = random(&[5, 1], &mut rng);
        let r = finite_diff_check(&[x], 1e-5, |t, p| {
            let av = t.constant(a.clone());
            let ax = t.matmul(av, p[0])?;
            let xax = t.mul(ax, p[0])?;
            Ok(t.sum(xax))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
        assert_eq!(r.coordinates, 5);
    }

    #[test]
    fn constant_objective() {
        let r = finite_diff_check(&[Tensor::vector(&[1.0, 2.0])], 1e-5, |t, _| {
            Ok(t.constant(Tensor::scalar(3.0)))
        })
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let r = finite_diff_check(&[Tensor::vector(&[1.0])], 1e-5, |t, p| {
            Ok(t.scale(p[0], f64::INFINITY))
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    /// Every differentiable op checked against central differences.
    #[test]
    fn each_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let bias = random(&[4], &mut rng);
        let s = random(&[1], &mut rng);
        let r = finite_diff_check(&[a, b, c, bias, s], 1e-5, |t, p| {
            let ab = t.matmul(p[0], p[1])?;
            let sg = t.sigmoid(ab);
            let th = t.tanh(p[2]);
            let m = t.mul(th, p[0])?;
            let added = t.add_bias(m, p[3])?;
            let sub = t.sub(added, p[2])?;
            let sm = t.scalar_mul(p[4], sub)?;
            let lr = t.leaky_relu(sm, 0.1);
            let cat = t.concat(&[lr, p[0]], 1)?;
            let sl = t.slice(cat, 1, 2, 4)?;
            let pooled = t.avg_pool(sl, 2)?;
            let hub = t.huber(pooled, 0.3)?;
            let sq = t.square(sg);
            let w = t.wrap_angle(sq);
            let rs = t.reshape(w, &[6])?;
            let s1 = t.sum(hub);
            let s2 = t.mean(rs);
            let dropped = t.dropout(p[2], 0.25, true, 99)?;
            let s3 = t.sum(dropped);
            let tot = t.add(s1, s2)?;
            t.add(tot, s3)
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn conv_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 3, 5, 5], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let r = finite_diff_check(&[x, w, b], 1e-5, |t, p| {
            let y = t.conv2d(p[0], p[1], p[2], 2, 1)?;
            let y2 = t.tanh(y);
            Ok(t.sum(y2))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }
}
