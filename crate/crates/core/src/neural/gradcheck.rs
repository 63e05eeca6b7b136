//! Finite-difference verification of every backward pass.
//!
//! Each checked op exposes a scalar projection `eval` (a fixed random
//! weighting of its output) and the analytic gradient of that projection.
//! The checker compares the analytic gradient computed at `f32` against
//! central differences of the `f64` shadow instantiation of the same op, so
//! the numeric side is far more precise than the side under test.
//!
//! Activation checks keep inputs away from the relu/l1 kinks, where the
//! derivative is not defined and differencing is meaningless.

use super::ops;
use super::tensor::Tensor;
use super::{NeuralError, Scalar};
use crate::rng::SeedRng;

type Result<T> = std::result::Result<T, NeuralError>;

/// An operation under gradient test: a scalar projection of its output and
/// the analytic gradients of that projection with respect to every input.
pub trait CheckedOp {
    fn name(&self) -> String;
    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64>;
    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>>;
}

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(GradCheckCase::passed)
    }

    /// Worst relative error per distinct op name.
    pub fn worst_by_name(&self) -> Vec<(String, f64)> {
        let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
        for case in &self.cases {
            let base = case.name.split('[').next().unwrap_or(&case.name).to_string();
            let w = worst.entry(base).or_insert(0.0);
            *w = w.max(case.max_rel_err);
        }
        worst.into_iter().collect()
    }
}

/// Relative error with a small floor so near-zero gradients compare sanely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

/// Compare the op's analytic `f32` gradients against central differences of
/// its `f64` shadow at the given point.
pub fn grad_check<Op: CheckedOp>(
    op: &Op,
    inputs: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckCase> {
    // Analytic side at f32, the precision under test.
    let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast::<f32>()).collect();
    let analytic: Vec<Tensor<f64>> = op
        .grads::<f32>(&inputs32)?
        .into_iter()
        .map(|g| g.cast::<f64>())
        .collect();

    // Numeric side on the f64 shadow.
    let mut max_err = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for i in 0..inputs[ti].len() {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + step;
            let plus = op.eval::<f64>(&work)?;
            work[ti].data_mut()[i] = orig - step;
            let minus = op.eval::<f64>(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic[ti].data()[i], numeric);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(GradCheckCase {
        name: op.name(),
        max_rel_err: max_err,
        tolerance,
    })
}

// ---------------------------------------------------------------------------
// Checked ops. Each carries a fixed projection of the op output so the
// checked quantity is a scalar.
// ---------------------------------------------------------------------------

fn projection(shape: &[usize], rng: &mut SeedRng) -> Tensor<f64> {
    // Magnitudes in [0.25, 1] with random sign: O(1) gradients everywhere.
    let mut t = Tensor::<f64>::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.range(0.25, 1.0);
        *v = if rng.below(2) == 0 { mag } else { -mag };
    }
    t
}

fn project<F: Scalar>(y: &Tensor<F>, proj: &Tensor<f64>) -> f64 {
    y.data()
        .iter()
        .zip(proj.data().iter())
        .map(|(v, u)| v.wide() * u)
        .sum()
}

pub struct Conv2dCheck {
    pub stride: usize,
    pub pad: usize,
    pub proj: Tensor<f64>,
    pub label: String,
}

impl CheckedOp for Conv2dCheck {
    fn name(&self) -> String {
        format!("conv2d[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        let y = ops::conv2d(&inputs[0], &inputs[1], Some(&inputs[2]), self.stride, self.pad)?;
        Ok(project(&y, &self.proj))
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let gy = self.proj.cast::<F>();
        let g = ops::conv2d_backward(&inputs[0], &inputs[1], &gy, self.stride, self.pad)?;
        Ok(vec![g.input, g.weight, g.bias])
    }
}

pub struct ConvTranspose2dCheck {
    pub stride: usize,
    pub pad: usize,
    pub proj: Tensor<f64>,
    pub label: String,
}

impl CheckedOp for ConvTranspose2dCheck {
    fn name(&self) -> String {
        format!("conv2d_transpose[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        let y = ops::conv2d_transpose(&inputs[0], &inputs[1], Some(&inputs[2]), self.stride, self.pad)?;
        Ok(project(&y, &self.proj))
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let gy = self.proj.cast::<F>();
        let g = ops::conv2d_transpose_backward(&inputs[0], &inputs[1], &gy, self.stride, self.pad)?;
        Ok(vec![g.input, g.weight, g.bias])
    }
}

pub struct InstanceNormCheck {
    pub eps: f64,
    pub proj: Tensor<f64>,
    pub label: String,
}

impl CheckedOp for InstanceNormCheck {
    fn name(&self) -> String {
        format!("instance_norm[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        let (y, _) = ops::instance_norm(&inputs[0], &inputs[1], &inputs[2], self.eps)?;
        Ok(project(&y, &self.proj))
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let gy = self.proj.cast::<F>();
        let (_, cache) = ops::instance_norm(&inputs[0], &inputs[1], &inputs[2], self.eps)?;
        let (gx, gscale, gshift) =
            ops::instance_norm_backward(&inputs[0], &inputs[1], &cache, &gy)?;
        Ok(vec![gx, gscale, gshift])
    }
}

/// Which elementwise nonlinearity an [`ActivationCheck`] exercises.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

pub struct ActivationCheck {
    pub kind: ActivationKind,
    pub proj: Tensor<f64>,
    pub label: String,
}

impl CheckedOp for ActivationCheck {
    fn name(&self) -> String {
        let base = match self.kind {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky_relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        };
        format!("{base}[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        let x = &inputs[0];
        let y = match self.kind {
            ActivationKind::Relu => ops::relu(x),
            ActivationKind::LeakyRelu(a) => ops::leaky_relu(x, F::of(a)),
            ActivationKind::Sigmoid => ops::sigmoid(x),
            ActivationKind::Tanh => ops::tanh(x),
        };
        Ok(project(&y, &self.proj))
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let x = &inputs[0];
        let gy = self.proj.cast::<F>();
        let gx = match self.kind {
            ActivationKind::Relu => ops::relu_backward(x, &gy)?,
            ActivationKind::LeakyRelu(a) => ops::leaky_relu_backward(x, F::of(a), &gy)?,
            ActivationKind::Sigmoid => ops::sigmoid_backward(&ops::sigmoid(x), &gy)?,
            ActivationKind::Tanh => ops::tanh_backward(&ops::tanh(x), &gy)?,
        };
        Ok(vec![gx])
    }
}

pub struct MseConstCheck {
    pub constant: f64,
    pub label: String,
}

impl CheckedOp for MseConstCheck {
    fn name(&self) -> String {
        format!("mse_to_constant[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        Ok(ops::mse_to_constant(&inputs[0], F::of(self.constant)).0)
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        Ok(vec![ops::mse_to_constant(&inputs[0], F::of(self.constant)).1])
    }
}

pub struct L1DiffCheck {
    pub label: String,
}

impl CheckedOp for L1DiffCheck {
    fn name(&self) -> String {
        format!("l1_diff[{}]", self.label)
    }

    fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
        Ok(ops::l1_diff(&inputs[0], &inputs[1])?.0)
    }

    fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let (_, ga, gb) = ops::l1_diff(&inputs[0], &inputs[1])?;
        Ok(vec![ga, gb])
    }
}

// ---------------------------------------------------------------------------
// The standard randomized suite.
// ---------------------------------------------------------------------------

/// Default tolerance for the whole suite.
pub const TOLERANCE: f64 = 1e-3;
/// Step for ops that are linear or quadratic per coordinate.
const STEP_LINEAR: f64 = 1e-2;
/// Step for curved ops (activations, normalization).
const STEP_CURVED: f64 = 5e-3;

/// Uniform tensor whose entries stay at least `margin` away from zero.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut SeedRng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.range(margin, 1.5);
        *v = if rng.below(2) == 0 { mag } else { -mag };
    }
    t
}

fn rand_conv_geometry(rng: &mut SeedRng) -> (usize, usize, usize, usize, usize, usize, usize, usize) {
    let n = 1 + rng.below(2);
    let c_in = 1 + rng.below(3);
    let c_out = 1 + rng.below(3);
    let k = 1 + rng.below(4);
    let stride = 1 + rng.below(2);
    let pad = rng.below(k); // pad < k keeps conv and transpose well-formed
    let h = k + rng.below(6);
    let w = k + rng.below(6);
    (n, c_in, c_out, k, stride, pad, h, w)
}

/// Run every layer's gradient check on `cases_per_op` random shapes each.
pub fn standard_suite(seed: u64, cases_per_op: usize) -> Result<GradCheckReport> {
    let mut rng = SeedRng::new(seed);
    let mut report = GradCheckReport::default();

    for case in 0..cases_per_op {
        // conv2d
        let (n, c_in, c_out, k, stride, pad, h, w) = rand_conv_geometry(&mut rng);
        let x = Tensor::<f64>::rand_uniform(&[n, c_in, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::rand_uniform(&[c_out, c_in, k, k], -0.8, 0.8, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[c_out], -0.5, 0.5, &mut rng);
        let y = ops::conv2d(&x, &wt, Some(&b), stride, pad)?;
        let op = Conv2dCheck {
            stride,
            pad,
            proj: projection(y.shape(), &mut rng),
            label: format!("case {case}: x{:?} k{k} s{stride} p{pad}", x.shape()),
        };
        report
            .cases
            .push(grad_check(&op, &[x, wt, b], STEP_LINEAR, TOLERANCE)?);

        // conv2d_transpose
        let (n, c_in, c_out, k, stride, pad, h, w) = rand_conv_geometry(&mut rng);
        let x = Tensor::<f64>::rand_uniform(&[n, c_in, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::rand_uniform(&[c_in, c_out, k, k], -0.8, 0.8, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[c_out], -0.5, 0.5, &mut rng);
        let y = ops::conv2d_transpose(&x, &wt, Some(&b), stride, pad)?;
        let op = ConvTranspose2dCheck {
            stride,
            pad,
            proj: projection(y.shape(), &mut rng),
            label: format!("case {case}: x{:?} k{k} s{stride} p{pad}", x.shape()),
        };
        report
            .cases
            .push(grad_check(&op, &[x, wt, b], STEP_LINEAR, TOLERANCE)?);

        // instance_norm
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(3);
        let h = 2 + rng.below(5);
        let w = 2 + rng.below(5);
        let x = Tensor::<f64>::rand_uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let scale = Tensor::<f64>::rand_uniform(&[c], 0.5, 1.5, &mut rng);
        let shift = Tensor::<f64>::rand_uniform(&[c], -0.5, 0.5, &mut rng);
        let op = InstanceNormCheck {
            eps: 1e-5,
            proj: projection(x.shape(), &mut rng),
            label: format!("case {case}: x{:?}", x.shape()),
        };
        report
            .cases
            .push(grad_check(&op, &[x, scale, shift], STEP_CURVED, TOLERANCE)?);

        // activations; relu-family inputs stay away from the kink at 0.
        let len = 4 + rng.below(30);
        for kind in [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu(0.2),
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
        ] {
            let x = match kind {
                ActivationKind::Relu | ActivationKind::LeakyRelu(_) => {
                    away_from_zero(&[len], 0.1, &mut rng)
                }
                _ => Tensor::<f64>::rand_uniform(&[len], -2.0, 2.0, &mut rng),
            };
            let op = ActivationCheck {
                kind,
                proj: projection(x.shape(), &mut rng),
                label: format!("case {case}: n={len}"),
            };
            report
                .cases
                .push(grad_check(&op, &[x], STEP_CURVED, TOLERANCE)?);
        }

        // losses; l1 operand pairs stay away from the |.| kink.
        let len = 4 + rng.below(30);
        let t = Tensor::<f64>::rand_uniform(&[len], -1.0, 1.0, &mut rng);
        let op = MseConstCheck {
            constant: rng.range(-1.0, 1.0),
            label: format!("case {case}: n={len}"),
        };
        report
            .cases
            .push(grad_check(&op, &[t], STEP_LINEAR, TOLERANCE)?);

        let a = Tensor::<f64>::rand_uniform(&[len], -1.0, 1.0, &mut rng);
        let mut bdata = Vec::with_capacity(len);
        for &av in a.data() {
            let delta = rng.range(0.05, 0.5);
            bdata.push(if rng.below(2) == 0 { av + delta } else { av - delta });
        }
        let b = Tensor::<f64>::new(vec![len], bdata)?;
        let op = L1DiffCheck {
            label: format!("case {case}: n={len}"),
        };
        report
            .cases
            .push(grad_check(&op, &[a, b], STEP_LINEAR, TOLERANCE)?);
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_projection_has_near_zero_error() {
        // The identity "activation" via leaky_relu with alpha 1 is linear.
        let mut rng = SeedRng::new(8);
        let x = Tensor::<f64>::rand_uniform(&[10], -1.0, 1.0, &mut rng);
        let op = ActivationCheck {
            kind: ActivationKind::LeakyRelu(1.0),
            proj: projection(&[10], &mut rng),
            label: "linear".into(),
        };
        let case = grad_check(&op, &[x], 1e-2, 1e-3).unwrap();
        assert!(case.max_rel_err < 1e-5, "{}", case.max_rel_err);
    }

    #[test]
    fn standard_suite_passes_on_small_run() {
        let report = standard_suite(1234, 3).unwrap();
        assert!(
            report.all_passed(),
            "{:?}",
            report
                .cases
                .iter()
                .filter(|c| !c.passed())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn corrupted_backward_fails_the_check() {
        struct Doubled(ActivationCheck);
        impl CheckedOp for Doubled {
            fn name(&self) -> String {
                "corrupted".into()
            }
            fn eval<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<f64> {
                self.0.eval(inputs)
            }
            fn grads<F: Scalar>(&self, inputs: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
                let mut gs = self.0.grads(inputs)?;
                for g in &mut gs {
                    g.scale(F::of(2.0));
                }
                Ok(gs)
            }
        }
        let mut rng = SeedRng::new(9);
        let x = Tensor::<f64>::rand_uniform(&[8], -2.0, 2.0, &mut rng);
        let op = Doubled(ActivationCheck {
            kind: ActivationKind::Tanh,
            proj: projection(&[8], &mut rng),
            label: "neg".into(),
        });
        let case = grad_check(&op, &[x], 5e-3, 1e-3).unwrap();
        assert!(!case.passed(), "corrupted gradient passed: {}", case.max_rel_err);
    }
}
