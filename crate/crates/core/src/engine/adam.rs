use crate::{Error, Result, Tensor};

/// Adam moments and hyperparameters. Moments are allocated lazily on the
/// first step.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step and
/// leave both parameters and state untouched.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("params", format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("grads", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
        return Err(Error::dim("params", "parameter set changed between Adam steps"));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].values_mut();
        let v = state.v[i].values_mut();
        for (((pv, &gv), mv), vv) in p.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut state = AdamState::new(5e-4);
        let mut p = Tensor::zeros(&[1]);
        let g = Tensor::full(&[1], 1.0);
        adam_step(&mut state, &mut [&mut p], &[&g]).unwrap();
        assert_eq!(state.t, 1);
        let expected = -5e-4 * (1.0 / (1.0 + 1e-8));
        assert!((p.values()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(5e-4);
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        adam_step(&mut state, &mut [&mut p], &[&Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn parameters_update_independently() {
        let g1 = Tensor::new(vec![2], vec![0.3, -1.2]).unwrap();
        let g2 = Tensor::new(vec![1], vec![4.0]).unwrap();
        let mut joint = AdamState::new(1e-2);
        let (mut a, mut b) = (Tensor::zeros(&[2]), Tensor::zeros(&[1]));
        let mut sa = AdamState::new(1e-2);
        let mut sb = AdamState::new(1e-2);
        let (mut a1, mut b1) = (Tensor::zeros(&[2]), Tensor::zeros(&[1]));
        for _ in 0..3 {
            adam_step(&mut joint, &mut [&mut a, &mut b], &[&g1, &g2]).unwrap();
            adam_step(&mut sa, &mut [&mut a1], &[&g1]).unwrap();
            adam_step(&mut sb, &mut [&mut b1], &[&g2]).unwrap();
        }
        assert_eq!(a, a1);
        assert_eq!(b, b1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut state = AdamState::new(1e-3);
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(adam_step(&mut state, &mut [&mut p], &[&g]), Err(Error::Numeric(_))));
        assert_eq!(state.t, 0);
        assert_eq!(p, Tensor::zeros(&[2]));
    }
}
