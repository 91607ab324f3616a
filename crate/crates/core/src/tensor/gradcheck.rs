//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only ever runs forward passes on fresh no-grad tapes,
//! so it shares nothing with the backward rules it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorResult, Var};

/// Absolute floor in the relative-error denominator, so entries whose true
/// gradient is ~0 are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords_per_input: Option<usize>,
    /// Which inputs to check; all when `None`.
    pub only_inputs: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coords_per_input: None,
            only_inputs: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InputReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation moved some ReLU across
    /// its kink, where a central difference is meaningless.
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|r| r.checked).sum()
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> TensorResult<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> TensorResult<Var>,
{
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| super::TensorError::NonScalarLoss(tape.shape(out).to_vec()))?;
    Ok((value, tape.relu_signature()))
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences, input by input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, config: &GradCheckConfig) -> TensorResult<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> TensorResult<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let (_, base_signature) = evaluate(&f, inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let mut input_report = InputReport::default();
        let wanted = config.only_inputs.as_ref().map_or(true, |only| only.contains(&i));
        if !wanted {
            report.inputs.push(input_report);
            continue;
        }
        let analytic = tape.grad(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let n = inputs[i].len();
        let coords: Vec<usize> = match config.max_coords_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let original = work[i].data()[c];
            work[i].data_mut()[c] = original + config.epsilon;
            let (plus, sig_plus) = evaluate(&f, &work)?;
            work[i].data_mut()[c] = original - config.epsilon;
            let (minus, sig_minus) = evaluate(&f, &work)?;
            work[i].data_mut()[c] = original;
            if sig_plus != base_signature || sig_minus != base_signature {
                input_report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let err = relative_error(analytic.data()[c], numeric);
            input_report.max_rel_err = input_report.max_rel_err.max(err);
            input_report.checked += 1;
        }
        report.inputs.push(input_report);
    }
    Ok(report)
}
