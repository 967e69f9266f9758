//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of the backward rules it verifies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Below this magnitude, times `max(1, |loss|)`, the relative error is
/// measured against the floor instead of the gradient itself. Central
/// differences carry roundoff near `ε·|loss| / step`, so a gradient that is
/// exactly zero still shows noise proportional to the loss.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// Errors above this trigger the smoothness probe.
const SCREEN: f64 = 1e-5;

/// Disagreement between the two probe estimates that marks a kink. Roundoff
/// at the refined step stays an order of magnitude below it.
const KINK: f64 = 1e-4;

/// Refinement factor of the smoothness probe's second step.
const REFINE: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub elements_checked: usize,
    /// Elements whose stencil straddles a kink (a ReLU switching sides):
    /// central differences at `step` and `step / 10` disagree, so the
    /// function is not smooth there and the element is not scored.
    pub nonsmooth: usize,
    /// Loss at the unperturbed point.
    pub loss: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_at(analytic, numeric, 0.0)
}

/// [`relative_error`] with the floor scaled by the loss magnitude.
pub fn relative_error_at(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = RELATIVE_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    fn new(loss: f64) -> Self {
        Self {
            max_relative_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            elements_checked: 0,
            nonsmooth: 0,
            loss,
        }
    }

    /// Scores one element. `loss_at(d)` evaluates the loss with the element
    /// displaced by `d`.
    fn element(
        &mut self,
        slot: (usize, usize),
        analytic: f64,
        step: f64,
        mut loss_at: impl FnMut(f64) -> Result<f64>,
    ) -> Result<()> {
        let mut central = |h: f64| -> Result<f64> { Ok((loss_at(h)? - loss_at(-h)?) / (2.0 * h)) };
        let numeric = central(step)?;
        let err = relative_error_at(analytic, numeric, self.loss);
        if !err.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite gradient at input {}, element {}",
                slot.0, slot.1
            )));
        }
        if err > SCREEN {
            let fine = central(step / REFINE)?;
            if relative_error_at(numeric, fine, self.loss) > KINK.max(err / 2.0) {
                self.nonsmooth += 1;
                return Ok(());
            }
        }
        self.elements_checked += 1;
        if err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst = slot;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        Ok(())
    }
}

/// Compares the backward pass of `build` against central differences for
/// every element of every input. `build` receives one tracked leaf per input
/// and must return a scalar.
pub fn check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.input(t.clone())).collect();
    let loss = build(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&graph, v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vs)?;
        g.value(l).item()
    };

    let mut report = GradCheck::new(graph.value(loss).item()?);
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            report.element((i, e), analytic[i].data()[e], step, |d| {
                probe[i].data_mut()[e] = orig + d;
                let l = eval(&probe);
                probe[i].data_mut()[e] = orig;
                l
            })?;
        }
    }
    Ok(report)
}

/// Checks the gradient of `build` with respect to the input `x` and every
/// trainable tensor of the store inside `subject`. In the report, input
/// index 0 is `x` and index `i + 1` is the `i`-th trainable tensor.
pub fn check_params<S, P, F>(
    subject: &S,
    params: P,
    x: &Tensor,
    step: f64,
    build: F,
) -> Result<GradCheck>
where
    S: Clone,
    P: Fn(&mut S) -> &mut ParamStore,
    F: Fn(&mut Graph, &S, Var) -> Result<Var>,
{
    let mut probe = subject.clone();
    let ids: Vec<ParamId> = params(&mut probe).trainable_ids().collect();

    let mut graph = Graph::new();
    let xv = graph.input(x.clone());
    let loss = build(&mut graph, subject, xv)?;
    let grads = graph.backward(loss)?;
    let dx = grads.wrt(&graph, xv);

    let eval = |s: &S, x: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let l = build(&mut g, s, xv)?;
        g.value(l).item()
    };

    let mut report = GradCheck::new(graph.value(loss).item()?);
    let mut xp = x.clone();
    for e in 0..x.numel() {
        let orig = x.data()[e];
        report.element((0, e), dx.data()[e], step, |d| {
            xp.data_mut()[e] = orig + d;
            let l = eval(subject, &xp);
            xp.data_mut()[e] = orig;
            l
        })?;
    }
    for (i, &id) in ids.iter().enumerate() {
        let n = params(&mut probe).get(id).numel();
        for e in 0..n {
            let orig = params(&mut probe).get(id).data()[e];
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[e]);
            report.element((i + 1, e), analytic, step, |d| {
                params(&mut probe).get_mut(id).data_mut()[e] = orig + d;
                let l = eval(&probe, x);
                params(&mut probe).get_mut(id).data_mut()[e] = orig;
                l
            })?;
        }
    }
    Ok(report)
}

/// Reduces a tensor-valued output to a scalar through a fixed random
/// weighting, so every output element contributes a distinct gradient.
pub fn random_projection(graph: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = graph.value(out).shape().to_vec();
    let weights = random_tensor(&shape, seed, 1.0);
    let w = graph.constant(weights);
    let prod = graph.mul(out, w)?;
    Ok(graph.sum(prod))
}

/// Uniform values in `[-scale, scale)`, seeded.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = random_tensor(&[4], 1, 1.0);
        let ok = check(std::slice::from_ref(&x), DEFAULT_STEP, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(ok.max_relative_error < 1e-8);
        assert_eq!((ok.elements_checked, ok.nonsmooth), (4, 0));
        assert!(relative_error(2.0, 1.0) > 0.4);
    }

    #[test]
    fn kink_inside_stencil_is_not_scored() {
        // |x| at x = 3e-6: the stencil at 1e-5 crosses zero, the refined one
        // does not, so the estimates disagree.
        let x = Tensor::vector(vec![3e-6, 0.5]);
        let r = check(&[x], DEFAULT_STEP, |g, v| {
            let pos = g.relu(v[0]);
            let neg = g.scale(v[0], -1.0);
            let neg = g.relu(neg);
            let abs = g.add(pos, neg)?;
            Ok(g.sum(abs))
        })
        .unwrap();
        assert_eq!((r.elements_checked, r.nonsmooth), (1, 1));
        assert!(r.max_relative_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // a smooth function whose backward is wrong cannot hide as a kink
        let x = random_tensor(&[3], 2, 1.0);
        let r = check(&[x], DEFAULT_STEP, |g, v| {
            let doubled = g.scale(v[0], 2.0);
            let y = g.mul(doubled, v[0])?;
            let c = g.constant(g.value(v[0]).clone());
            let wrong = g.mul(y, c)?;
            Ok(g.sum(wrong))
        })
        .unwrap();
        assert!(r.max_relative_error > 0.1);
        assert_eq!(r.nonsmooth, 0);
    }
}
