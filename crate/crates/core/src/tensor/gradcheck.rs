//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::Tensor;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Default finite-difference step in 64-bit precision.
pub const DEFAULT_EPS: f64 = 1e-5;

/// How many times a step that crosses a kink is quartered before giving up.
const MAX_SHRINK: usize = 6;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − n| / max(1, |a|, |n|)` over the checked elements.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Elements where even the smallest step crossed a leaky-ReLU or |·| kink.
    pub straddled: usize,
}

fn eval<Fun>(f: &Fun, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if !v.is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value {v} is not finite")));
    }
    Ok((v, g.kink_signature()))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Compares tape gradients with central differences over every element of `x`.
pub fn grad_check<Fun>(f: Fun, x: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    Fun: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|g, v| f(g, v[0]), std::slice::from_ref(x), eps, None)
}

/// Like [`grad_check`] over several inputs.
///
/// A difference step whose endpoints lie on another smooth piece than the
/// unperturbed point (see [`Graph::kink_signature`]) is quartered until both
/// endpoints agree; elements that never do are counted in `straddled`.
/// With `sample = Some((n, seed))` only `n` randomly chosen elements of each
/// input are perturbed, which keeps whole-network checks affordable.
pub fn grad_check_inputs<Fun>(
    f: Fun,
    inputs: &[Tensor<f64>],
    eps: f64,
    sample_per_input: Option<(usize, u64)>,
) -> Result<GradCheck>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).item().is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    let piece = g.kink_signature();
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(g);

    let mut rng = sample_per_input.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let indices: Vec<usize> = match (&mut rng, sample_per_input) {
            (Some(rng), Some((n, _))) if n < input.len() => sample(rng, input.len(), n).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for i in indices {
            let a = analytic[k].data()[i];
            if !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "analytic gradient {a} at input {k}[{i}]"
                )));
            }
            let orig = input.data()[i];
            let mut h = eps;
            let mut numeric = None;
            for _ in 0..=MAX_SHRINK {
                work[k].data_mut()[i] = orig + h;
                let up = eval(&f, &work);
                work[k].data_mut()[i] = orig - h;
                let down = eval(&f, &work);
                work[k].data_mut()[i] = orig;
                let ((up, su), (down, sd)) = (up?, down?);
                if su == piece && sd == piece {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
                h /= 4.0;
            }
            match numeric {
                Some(n) => {
                    report.checked += 1;
                    report.max_rel_err = report.max_rel_err.max(rel_err(a, n));
                }
                None => report.straddled += 1,
            }
        }
    }
    Ok(report)
}
