use crate::model::{Grads, ParamGroup, Params};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Which tensors the optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every trainable tensor.
    Full,
    /// Only the three head MLPs; both streams stay frozen.
    HeadsOnly,
}

impl Scope {
    pub fn updates(self, g: ParamGroup) -> bool {
        match self {
            Scope::Full => g.is_trainable(),
            Scope::HeadsOnly => g.is_head(),
        }
    }
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub scope: Scope,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Params, scope: Scope) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            step: 0,
            scope,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every tensor in the state's scope.
pub fn adam_step(params: &mut Params, grads: &Grads, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        if !state.scope.updates(tensor.group) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, g), m), v) in tensor.data.iter_mut().zip(grads.get(i)).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let (mh, vh) = (*m / c1, *v / c2);
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Params {
        let mut p = Params::default();
        p.push("w".into(), vec![1], ParamGroup::Waveform, vec![v]);
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar(0.25);
        let g = p.zero_grads();
        let mut s = AdamState::new(&p, Scope::Full);
        adam_step(&mut p, &g, &mut s, 1e-3);
        assert_eq!(p.get(crate::model::ParamId(0))[0], 0.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut g = p.zero_grads();
        g.slot(crate::model::ParamId(0))[0] = 1.0;
        let mut s = AdamState::new(&p, Scope::Full);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut s, lr);
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let moved = 1.0 - p.tensors()[0].data[0];
        assert!((moved - lr / (1.0 + ADAM_EPS)).abs() < 1e-15);
    }

    #[test]
    fn scope_freezes_other_groups() {
        let mut p = Params::default();
        p.push("a".into(), vec![1], ParamGroup::Feature, vec![1.0]);
        p.push("b".into(), vec![1], ParamGroup::AngleHead, vec![1.0]);
        p.push("c".into(), vec![1], ParamGroup::Buffer, vec![1.0]);
        let mut g = p.zero_grads();
        g.data.iter_mut().for_each(|v| v[0] = 0.5);
        let mut s = AdamState::new(&p, Scope::HeadsOnly);
        adam_step(&mut p, &g, &mut s, 0.1);
        let vals: Vec<f64> = p.tensors().iter().map(|t| t.data[0]).collect();
        assert_eq!(vals[0], 1.0);
        assert!(vals[1] < 1.0);
        assert_eq!(vals[2], 1.0);
        let mut s = AdamState::new(&p, Scope::Full);
        adam_step(&mut p, &g, &mut s, 0.1);
        assert_eq!(p.tensors()[2].data[0], 1.0);
    }
}
