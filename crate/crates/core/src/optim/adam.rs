use super::{Group, Hyperparams};
use crate::real::Real;

/// Scalars of one Adam step, shared by the dense and deferred paths so the
/// two round identically.
#[derive(Debug, Clone, Copy)]
pub struct StepConsts<T> {
    pub beta1: T,
    pub beta2: T,
    pub one_minus_b1: T,
    pub one_minus_b2: T,
    pub eps: T,
    /// `√(1 − β2^t)`.
    pub bias_correction: T,
    /// `lr / (1 − β1^t)` per group.
    pub step_size: [T; 5],
}

impl<T: Real> StepConsts<T> {
    pub fn new(step: u64, hp: &Hyperparams) -> Self {
        let t = step as i32;
        Self {
            beta1: T::c(hp.beta1),
            beta2: T::c(hp.beta2),
            one_minus_b1: T::c(1.0 - hp.beta1),
            one_minus_b2: T::c(1.0 - hp.beta2),
            eps: T::c(hp.eps),
            bias_correction: T::c((1.0 - hp.beta2.powi(t)).sqrt()),
            step_size: Group::ALL.map(|g| T::c(hp.lr_at(g, step) / (1.0 - hp.beta1.powi(t)))),
        }
    }
}

/// One scalar Adam update after the state has been decayed by `m_scale`,
/// `v_scale`, with an optional replay displacement `w_scale` applied first.
///
/// `w_scale` is `None` for a zero delay: the replay term is then exactly zero
/// and skipping it keeps the dense path bitwise identical.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel<T: Real>(
    w: &mut T,
    m: &mut T,
    v: &mut T,
    g: T,
    m_scale: T,
    v_scale: T,
    w_scale: Option<T>,
    step_size: T,
    c: &StepConsts<T>,
) {
    let m_new = m_scale * *m + c.one_minus_b1 * g;
    let v_new = v_scale * *v + c.one_minus_b2 * g * g;
    let mut x = *w;
    if let Some(ws) = w_scale {
        x -= ws * *m / (v.sqrt() + c.eps);
    }
    let denom = v_new.sqrt() / c.bias_correction + c.eps;
    *w = x - step_size * m_new / denom;
    *m = m_new;
    *v = v_new;
}

/// Textbook Adam over every row of a dense `n × dim` block, including rows
/// with zero gradient.
pub fn adam_step_dense<T: Real>(
    params: &mut [T],
    m: &mut [T],
    v: &mut [T],
    grads: &[T],
    columns: &[Group],
    step: u64,
    hp: &Hyperparams,
) {
    let dim = columns.len();
    assert!(params.len() == m.len() && m.len() == v.len() && v.len() == grads.len());
    assert_eq!(params.len() % dim.max(1), 0);
    let c = StepConsts::<T>::new(step, hp);
    for k in 0..params.len() {
        let col = columns[k % dim];
        kernel(&mut params[k], &mut m[k], &mut v[k], grads[k], c.beta1, c.beta2, None, c.step_size[col.index()], &c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_everything_is_a_fixed_point() {
        let cols = vec![Group::Sh; 4];
        let mut w = vec![1.0f32, -2.0, 3.0, 0.5];
        let orig = w.clone();
        let mut m = vec![0.0; 4];
        let mut v = vec![0.0; 4];
        adam_step_dense(&mut w, &mut m, &mut v, &[0.0; 4], &cols, 1, &Hyperparams::default());
        assert_eq!(w, orig);
        assert!(m.iter().chain(&v).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gradient_still_decays_and_moves() {
        let hp = Hyperparams::default();
        let cols = vec![Group::Opacity];
        let (m0, v0) = (0.2f64, 0.01f64);
        let mut w = vec![1.0];
        let mut m = vec![m0];
        let mut v = vec![v0];
        adam_step_dense(&mut w, &mut m, &mut v, &[0.0], &cols, 3, &hp);
        assert_eq!(m[0], 0.9 * m0);
        assert_eq!(v[0], 0.999 * v0);
        let mhat = 0.9 * m0 / (1.0 - 0.9f64.powi(3));
        let vhat = 0.999 * v0 / (1.0 - 0.999f64.powi(3));
        let want = 1.0 - 5e-2 * mhat / (vhat.sqrt() + 1e-8);
        assert!((w[0] - want).abs() < 1e-12);
    }

    #[test]
    fn matches_a_scalar_adam_loop_exactly() {
        let hp = Hyperparams::default();
        let cols = Group::full_columns();
        let mut w: Vec<f32> = (0..59).map(|i| ((i * 37 % 19) as f32 - 9.0) / 7.0).collect();
        let mut m = vec![0.0f32; 59];
        let mut v = vec![0.0f32; 59];
        let mut ow = w.clone();
        let mut om = m.clone();
        let mut ov = v.clone();
        for t in 1..=5u64 {
            let g: Vec<f32> = (0..59).map(|i| (((i + 3 * t as usize) * 13 % 23) as f32 - 11.0) / 10.0).collect();
            adam_step_dense(&mut w, &mut m, &mut v, &g, &cols, t, &hp);
            // Scalar reference loop.
            for k in 0..59 {
                let lr = hp.lr_at(cols[k], t);
                let b1 = hp.beta1 as f32;
                let b2 = hp.beta2 as f32;
                om[k] = b1 * om[k] + (1.0 - hp.beta1) as f32 * g[k];
                ov[k] = b2 * ov[k] + (1.0 - hp.beta2) as f32 * g[k] * g[k];
                let bc = ((1.0 - hp.beta2.powi(t as i32)).sqrt()) as f32;
                let ss = (lr / (1.0 - hp.beta1.powi(t as i32))) as f32;
                let denom = ov[k].sqrt() / bc + hp.eps as f32;
                ow[k] -= ss * om[k] / denom;
            }
        }
        assert_eq!(w, ow);
        assert_eq!(m, om);
        assert_eq!(v, ov);
    }
}
