use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Module;
use crate::{Result, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Which value produced `max_rel_err` (`input[i]` or `state[s].name[i]`).
    pub worst: String,
    pub checked: usize,
    pub pass: bool,
}

/// Denominator floor of the relative error. Gradients that are exactly zero
/// by construction (a bias feeding a train-mode batch norm) differ from
/// their difference quotients only by roundoff around 1e-10, so below this
/// magnitude the comparison is effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients of `module` with central finite differences.
///
/// The scalar objective is `sum(output * r)` for a fixed random projection
/// `r`, so every output element contributes. Dropout masks are frozen for the
/// duration of the check; the module should otherwise be deterministic.
pub fn gradient_check(module: &mut dyn Module, input: &Tensor, tol: f64, seed: u64) -> Result<GradCheckReport> {
    module.freeze_dropout(true);
    let result = run(module, input, tol, seed);
    module.freeze_dropout(false);
    result
}

fn run(module: &mut dyn Module, input: &Tensor, tol: f64, seed: u64) -> Result<GradCheckReport> {
    let out = module.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor::random_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let input_grad = module.backward(&projection)?;
    let param_grads: Vec<Vec<(String, Tensor)>> = module
        .states()
        .iter()
        .map(|s| s.grads.iter().map(|(k, g)| (k.clone(), g.clone())).collect())
        .collect();

    let objective = |m: &mut dyn Module, x: &Tensor| -> Result<f64> { Ok(m.forward(x)?.dot(&projection)) };

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut record = |err: f64, label: &dyn Fn() -> String| {
        checked += 1;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, label());
        }
    };

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.values()[i];
        x.values_mut()[i] = orig + FD_STEP;
        let plus = objective(module, &x)?;
        x.values_mut()[i] = orig - FD_STEP;
        let minus = objective(module, &x)?;
        x.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        record(rel_err(input_grad.values()[i], numeric), &|| format!("input[{i}]"));
    }

    for (s, grads) in param_grads.iter().enumerate() {
        for (name, grad) in grads {
            for i in 0..grad.len() {
                let nudge = |m: &mut dyn Module, v: f64| {
                    m.states_mut()[s].params.get_mut(name).expect("param").values_mut()[i] = v;
                };
                let orig = module.states()[s].params[name].values()[i];
                nudge(module, orig + FD_STEP);
                let plus = objective(module, input)?;
                nudge(module, orig - FD_STEP);
                let minus = objective(module, input)?;
                nudge(module, orig);
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                record(rel_err(grad.values()[i], numeric), &|| format!("state[{s}].{name}[{i}]"));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err: worst.0,
        worst: worst.1,
        checked,
        pass: worst.0 < tol,
    })
}
