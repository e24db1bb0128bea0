use std::collections::BTreeMap;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ParamStore};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { rho: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> OptimizerKind {
        OptimizerKind::RmsProp { rho: 0.9, eps: 1e-8 }
    }
}

pub fn adam_step(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

pub fn rmsprop_step(p: &mut [f64], g: &[f64], s: &mut [f64], lr: f64, rho: f64, eps: f64) {
    for i in 0..p.len() {
        s[i] = rho * s[i] + (1.0 - rho) * g[i] * g[i];
        p[i] -= lr * g[i] / (s[i].sqrt() + eps);
    }
}

/// Accumulators keyed by parameter name. Only parameters that receive
/// gradients get state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Optimizer {
        Optimizer {
            kind,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Applies one update. Every gradient is checked before any parameter is
    /// touched, so a non-finite gradient leaves the model intact.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let bad = g.data().iter().filter(|v| !v.is_finite()).count();
            if bad > 0 {
                return Err(Error::Numeric(format!(
                    "{bad} non-finite gradient entries in '{name}' at step {}",
                    self.step + 1
                )));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient for '{name}' has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let s2 = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let s1 = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    adam_step(
                        p.data_mut(),
                        g.data(),
                        s1.data_mut(),
                        s2.data_mut(),
                        self.step,
                        lr,
                        beta1,
                        beta2,
                        eps,
                    );
                }
                OptimizerKind::RmsProp { rho, eps } => rmsprop_step(p.data_mut(), g.data(), s2.data_mut(), lr, rho, eps),
            }
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        let ini = &mut ck.config;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                ini.set("optimizer", "kind", "adam");
                ini.set_f64("optimizer", "beta1", beta1);
                ini.set_f64("optimizer", "beta2", beta2);
                ini.set_f64("optimizer", "eps", eps);
            }
            OptimizerKind::RmsProp { rho, eps } => {
                ini.set("optimizer", "kind", "rmsprop");
                ini.set_f64("optimizer", "rho", rho);
                ini.set_f64("optimizer", "eps", eps);
            }
        }
        ini.set("optimizer", "step", self.step);
        for (n, t) in &self.first {
            ck.tensors.insert(format!("opt.first/{n}"), t.clone());
        }
        for (n, t) in &self.second {
            ck.tensors.insert(format!("opt.second/{n}"), t.clone());
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Optimizer> {
        let ini: &Ini = &ck.config;
        let kind = match ini.require::<String>("optimizer", "kind")?.as_str() {
            "adam" => OptimizerKind::Adam {
                beta1: ini.require("optimizer", "beta1")?,
                beta2: ini.require("optimizer", "beta2")?,
                eps: ini.require("optimizer", "eps")?,
            },
            "rmsprop" => OptimizerKind::RmsProp {
                rho: ini.require("optimizer", "rho")?,
                eps: ini.require("optimizer", "eps")?,
            },
            other => return Err(Error::Compatibility(format!("unknown optimizer '{other}' in checkpoint"))),
        };
        let take = |prefix: &str| -> BTreeMap<String, Tensor> {
            ck.section(prefix).iter().map(|(n, t)| (n.clone(), t.clone())).collect()
        };
        Ok(Optimizer {
            kind,
            step: ini.require("optimizer", "step")?,
            first: take("opt.first"),
            second: take("opt.second"),
        })
    }
}

/// Step decay: `lr0 * factor^floor((epoch - 1) / every)` for 1-based epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl Schedule {
    pub fn constant(lr: f64) -> Schedule {
        Schedule {
            initial: lr,
            factor: 1.0,
            every: usize::MAX,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let drops = epoch.saturating_sub(1) / self.every.max(1);
        self.initial * self.factor.powi(drops as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w.x", Tensor::vector(&[v]));
        s
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w.x".to_string(), Tensor::vector(&[g]))])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::adam(), OptimizerKind::rmsprop()] {
            let mut p = store(0.7);
            let mut o = Optimizer::new(kind);
            o.update(&mut p, &grads(0.0), 0.1).unwrap();
            assert_eq!(p.get("w.x").unwrap().data(), &[0.7]);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = store(1.0);
        let mut o = Optimizer::new(OptimizerKind::adam());
        o.update(&mut p, &grads(1.0), 0.1).unwrap();
        assert!((p.get("w.x").unwrap().data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_converges_on_bowl() {
        let mut p = store(1.0);
        let mut o = Optimizer::new(OptimizerKind::rmsprop());
        for _ in 0..200 {
            let w = p.get("w.x").unwrap().data()[0];
            o.update(&mut p, &grads(2.0 * w), 1e-2).unwrap();
        }
        assert!(p.get("w.x").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = store(1.0);
        let mut o = Optimizer::new(OptimizerKind::adam());
        let err = o.update(&mut p, &grads(f64::NAN), 0.1).unwrap_err();
        assert!(err.to_string().contains("w.x"));
        assert_eq!(p.get("w.x").unwrap().data(), &[1.0]);
        assert_eq!(o.step, 0);
    }

    #[test]
    fn schedule_drops_every_25_epochs() {
        let s = Schedule {
            initial: 1e-3,
            factor: 0.75,
            every: 25,
        };
        assert_eq!(s.lr(1), 1e-3);
        assert_eq!(s.lr(25), 1e-3);
        assert!((s.lr(26) - 0.75e-3).abs() < 1e-18);
        assert!((s.lr(51) - 0.5625e-3).abs() < 1e-18);
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let mut p = store(1.0);
        let mut o = Optimizer::new(OptimizerKind::adam());
        o.update(&mut p, &grads(0.3), 0.1).unwrap();
        let mut ck = Checkpoint::default();
        o.write_checkpoint(&mut ck);
        let back = Optimizer::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, o);
    }
}
