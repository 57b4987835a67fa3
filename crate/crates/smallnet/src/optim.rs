use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Step-wise exponential learning-rate decay: `base · γ^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub decay_period: usize,
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = epoch / self.decay_period.max(1);
        self.base_lr * self.gamma.powi(steps as i32)
    }
}

/// SGD with classical momentum: `v ← μv − lr·g; p ← p + v`.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub schedule: LrSchedule,
    pub momentum: f64,
    velocities: BTreeMap<String, Array>,
}

impl OptimState {
    pub fn new(schedule: LrSchedule, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("OptimState", format!("momentum {momentum} not in [0, 1)")));
        }
        if !(schedule.gamma > 0.0 && schedule.gamma <= 1.0) {
            return Err(Error::invalid(
                "OptimState",
                format!("decay factor {} not in (0, 1]", schedule.gamma),
            ));
        }
        if schedule.decay_period == 0 {
            return Err(Error::invalid("OptimState", "decay period must be positive"));
        }
        Ok(Self {
            schedule,
            momentum,
            velocities: BTreeMap::new(),
        })
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.schedule.lr_at_epoch(epoch)
    }

    pub fn velocity(&self, name: &str) -> Option<&Array> {
        self.velocities.get(name)
    }

    /// Updates every parameter that has an entry in `grads`.
    ///
    /// Parameters without a gradient are left untouched, which is how frozen
    /// layers are expressed.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shapes("sgd_step", p.shape(), g.shape()));
            }
            let v = self
                .velocities
                .entry(name.to_string())
                .or_insert_with(|| Array::zeros(g.shape()));
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Array::new(vec![1], vec![v]).unwrap());
        s
    }

    fn sched(base: f64) -> LrSchedule {
        LrSchedule {
            base_lr: base,
            gamma: 0.5,
            decay_period: 20,
        }
    }

    #[test]
    fn plain_gradient_step() {
        let mut st = OptimState::new(sched(1.0), 0.0).unwrap();
        let mut p = scalar_store(0.0);
        st.step(&mut p, &scalar_store(3.0), 1.0).unwrap();
        assert_eq!(p.get("p").unwrap().data(), &[-3.0]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut st = OptimState::new(sched(0.1), 0.9).unwrap();
        let mut p = scalar_store(1.25);
        for _ in 0..10 {
            st.step(&mut p, &scalar_store(0.0), 0.1).unwrap();
        }
        assert_eq!(p.get("p").unwrap().data(), &[1.25]);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let (mu, lr) = (0.9, 0.1);
        let grads = [1.0, -2.0, 0.5];
        let mut st = OptimState::new(sched(lr), mu).unwrap();
        let mut p = scalar_store(2.0);
        for g in grads {
            st.step(&mut p, &scalar_store(g), lr).unwrap();
        }
        // v1 = -0.1, p1 = 1.9
        // v2 = 0.9·(-0.1) + 0.2 = 0.11, p2 = 2.01
        // v3 = 0.9·0.11 - 0.05 = 0.049, p3 = 2.059
        let got = p.get("p").unwrap().data()[0];
        assert!((got - 2.059).abs() < 1e-12, "{got}");
    }

    #[test]
    fn schedule_floor_rule() {
        let s = LrSchedule {
            base_lr: 0.01,
            gamma: 0.5,
            decay_period: 20,
        };
        assert_eq!(s.lr_at_epoch(0), 0.01);
        assert_eq!(s.lr_at_epoch(19), 0.01);
        assert_eq!(s.lr_at_epoch(20), 0.005);
        assert_eq!(s.lr_at_epoch(59), 0.0025);
    }

    #[test]
    fn rejects_bad_state_and_shapes() {
        assert!(OptimState::new(sched(0.1), 1.0).is_err());
        let bad = LrSchedule { gamma: 0.0, ..sched(0.1) };
        assert!(OptimState::new(bad, 0.5).is_err());
        let mut st = OptimState::new(sched(0.1), 0.5).unwrap();
        let mut p = scalar_store(0.0);
        let mut g = ParamStore::new();
        g.insert("p", Array::zeros(&[2]));
        assert!(st.step(&mut p, &g, 0.1).is_err());
    }
}
