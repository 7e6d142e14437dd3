use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar computation against central
/// finite differences over every element of every input, returning the
/// largest [`relative_error`].
///
/// `build` records the computation on a fresh tape, receiving one
/// trainable leaf per entry of `inputs`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    check_positions(&build, inputs, eps, &all)
}

/// Like [`grad_check`] but only checks `samples` element positions drawn
/// uniformly without replacement (seeded) from all inputs.
pub fn grad_check_sampled<F>(build: F, inputs: &[Tensor], eps: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> = index::sample(&mut rng, all.len(), samples.min(all.len()))
        .into_iter()
        .map(|k| all[k])
        .collect();
    check_positions(&build, inputs, eps, &picked)
}

fn evaluate<F>(build: &F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok((tape, vars, out))
}

fn check_positions<F>(build: &F, inputs: &[Tensor], eps: f64, positions: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("grad_check eps must lie in (0, 1e-2], got {eps}")));
    }
    let (tape, vars, out) = evaluate(build, inputs)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for &(i, j) in positions {
        let original = inputs[i].data()[j];
        perturbed[i].data_mut()[j] = original + eps;
        let plus = scalar_value(build, &perturbed)?;
        perturbed[i].data_mut()[j] = original - eps;
        let minus = scalar_value(build, &perturbed)?;
        perturbed[i].data_mut()[j] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

fn scalar_value<F>(build: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = evaluate(build, inputs)?;
    Ok(tape.value(out).data()[0])
}
