use super::NetError;
use crate::autograd::{Tape, Var};
use crate::tensor::{log_softmax_in_place, softmax_in_place, Mat};
use rand::Rng;
use rand_distr::{Distribution, Gumbel};

/// Relaxed one-hot sample: `softmax((log p + g) / tau)` with
/// `p = softmax(logits)`.
pub fn gumbel_softmax(logits: &[f64], tau: f64, noise: &[f64]) -> Result<Vec<f64>, NetError> {
    if !(tau > 0.0) {
        return Err(NetError::BadTemperature(tau));
    }
    assert_eq!(logits.len(), noise.len());
    let mut y = logits.to_vec();
    log_softmax_in_place(&mut y);
    for (v, g) in y.iter_mut().zip(noise) {
        *v = (*v + g) / tau;
    }
    softmax_in_place(&mut y);
    Ok(y)
}

/// Differentiable row-wise version of [`gumbel_softmax`]; `noise` has the
/// shape of `logits`.
pub fn gumbel_softmax_var(t: &mut Tape<'_>, logits: Var, tau: f64, noise: &Mat) -> Result<Var, NetError> {
    if !(tau > 0.0) {
        return Err(NetError::BadTemperature(tau));
    }
    let logp = t.log_softmax(logits);
    let g = t.constant(noise.clone());
    let y = t.add(logp, g);
    let y = t.scale(y, 1.0 / tau);
    Ok(t.softmax(y))
}

/// `rows x vocab` independent Gumbel(0, 1) draws.
pub fn sample_gumbel<R: Rng + ?Sized>(rows: usize, vocab: usize, rng: &mut R) -> Mat {
    let dist = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let data = (0..rows * vocab).map(|_| dist.sample(rng)).collect();
    Mat::from_vec(rows, vocab, data)
}
