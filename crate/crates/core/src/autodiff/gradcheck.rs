//! Finite-difference verification of backward passes.
//!
//! The output is contracted with a fixed random tensor `r`, giving the scalar
//! `L = <r, f(x, θ)>`. For every input and every trainable parameter, a few
//! random directions `u` are drawn and the directional derivative from the
//! tape, `<∇L, u>`, is compared with the central difference
//! `(L(x + εu) - L(x - εu)) / 2ε`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{param_err, Error, Result};

/// Absolute floor for the relative-error denominator, so exactly-zero
/// gradients do not turn rounding noise into large relative errors.
const REL_FLOOR: f64 = 1e-7;

/// The floor also grows with the rounding noise of the loss itself, about
/// `EPSILON * sum |out * probe| / epsilon` per central difference; this
/// keeps that noise four orders of magnitude below the denominator.
const NOISE_MARGIN: f64 = 1e4;

/// Directions worse than this are re-measured with steps 10x and 100x
/// shorter, keeping the best agreement.
const RETRY_ABOVE: f64 = 1e-6;
const KINK_RETRIES: usize = 2;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Input index or parameter name with the largest error.
    pub worst: String,
    pub checks: usize,
}

pub struct GradCheck {
    pub epsilon: f64,
    pub directions: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            directions: 2,
            seed: 0x5eed,
        }
    }
}

enum Target {
    Input(usize),
    Param(ParamId),
}

fn random_like(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

/// Replaces every parameter with uniform noise in `±scale`, so zero-initialised
/// branches still carry gradient during a check.
pub fn perturb_all(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let v = store.value_mut(id);
        for x in v.data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

impl GradCheck {
    pub fn run<F>(&self, store: &ParamStore, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&Tape, &ParamStore, &[Var]) -> Result<Var>,
    {
        if !(1e-6..=1e-3).contains(&self.epsilon) {
            return param_err(format!(
                "epsilon must lie in [1e-6, 1e-3], got {}",
                self.epsilon
            ));
        }
        if let Some(i) = inputs.iter().position(|t| !t.is_finite()) {
            return param_err(format!("grad-check input {i} is not finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        // analytic pass
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&tape, store, &vars)?;
        if let Some((node, op)) = tape.first_non_finite() {
            return Err(Error::NonFinite {
                op: op.to_string(),
                detail: format!("node {node} during grad check forward"),
            });
        }
        let probe = random_like(&tape.shape(out), &mut rng);
        let loss_scale: f64 = tape
            .value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| (a * b).abs())
            .sum();
        let grads = tape.backward(out, Some(probe.clone()))?;
        let mut analytic = store.clone();
        analytic.zero_grads();
        grads.accumulate_into(&mut analytic);

        let loss = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
            let t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
            let o = f(&t, store, &vars)?;
            t.check_finite()?;
            Ok(t.value(o).dot(&probe))
        };

        let mut targets: Vec<Target> = (0..inputs.len()).map(Target::Input).collect();
        targets.extend(
            store
                .ids()
                .filter(|&id| !store.is_frozen(id))
                .map(Target::Param),
        );

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            checks: 0,
        };
        for target in targets {
            let (shape, grad, label) = match target {
                Target::Input(i) => (
                    inputs[i].shape().to_vec(),
                    grads
                        .wrt(vars[i])
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(inputs[i].shape())),
                    format!("input {i}"),
                ),
                Target::Param(id) => (
                    store.value(id).shape().to_vec(),
                    analytic.grad(id).clone(),
                    store.name(id).to_string(),
                ),
            };
            for _ in 0..self.directions {
                let u = random_like(&shape, &mut rng);
                let exact = grad.dot(&u);
                let central = |eps: f64| -> Result<f64> {
                    let shifted = |sign: f64| -> Result<f64> {
                        let step = |t: &Tensor| {
                            let mut t = t.clone();
                            for (v, d) in t.data_mut().iter_mut().zip(u.data()) {
                                *v += sign * eps * d;
                            }
                            t
                        };
                        match target {
                            Target::Input(i) => {
                                let mut xs = inputs.to_vec();
                                xs[i] = step(&inputs[i]);
                                loss(store, &xs)
                            }
                            Target::Param(id) => {
                                let mut s = store.clone();
                                let moved = step(store.value(id));
                                s.set_value(id, moved)?;
                                loss(&s, inputs)
                            }
                        }
                    };
                    let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
                    let floor = REL_FLOOR.max(NOISE_MARGIN * f64::EPSILON * loss_scale / eps);
                    Ok((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(floor))
                };
                // A step that straddles a ReLU kink gives a wrong difference
                // quotient however correct the gradient is. Shorter steps
                // shrink that window; a wrong gradient stays wrong at all of
                // them.
                let mut rel = central(self.epsilon)?;
                let mut eps = self.epsilon;
                for _ in 0..KINK_RETRIES {
                    if rel < RETRY_ABOVE {
                        break;
                    }
                    eps /= 10.0;
                    rel = rel.min(central(eps)?);
                }
                report.checks += 1;
                if rel >= report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = label.clone();
                }
            }
        }
        Ok(report)
    }
}
