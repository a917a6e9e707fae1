//! Central finite-difference gradient checking in 64-bit.
//!
//! The scalar objective is `sum(output * R)` for a fixed pseudo-random `R`, so
//! every output element contributes a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of a gradient check, one entry per input tensor.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `max|autodiff - fd| / (max|fd| + 1e-8)` per input.
    pub rel_errors: Vec<f64>,
    /// `max|autodiff - fd|` per input.
    pub abs_errors: Vec<f64>,
    /// `max|fd|` per input.
    pub scales: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    /// True when every input is within `rel` relative or `abs` absolute error.
    pub fn passes(&self, rel: f64, abs: f64) -> bool {
        self.rel_errors.iter().zip(&self.abs_errors).all(|(&r, &a)| r < rel || a < abs)
    }
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn objective<B>(build: &B, inputs: &[Tensor<f64>], proj_seed: u64) -> Result<(f64, Tape<f64>, Vec<Var>, Var)>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
    let proj = random_tensor(tape.shape(out), &mut rng);
    let r = tape.leaf(proj);
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    Ok((value, tape, vars, loss))
}

/// Compare reverse-mode gradients of `build` against central differences with step `eps`.
pub fn check<B>(inputs: &[Tensor<f64>], build: B, eps: f64) -> Result<GradReport>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let proj_seed = 0x9e37_79b9;
    let (_, mut tape, vars, loss) = objective(&build, inputs, proj_seed)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut abs_errors = Vec::with_capacity(inputs.len());
    let mut scales = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, ad) in analytic.iter().enumerate() {
        let mut max_diff: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for e in 0..inputs[idx].numel() {
            let orig = inputs[idx].data()[e];
            work[idx].data_mut()[e] = orig + eps;
            let plus = objective(&build, &work, proj_seed)?.0;
            work[idx].data_mut()[e] = orig - eps;
            let minus = objective(&build, &work, proj_seed)?.0;
            work[idx].data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            max_diff = max_diff.max((ad[e] - fd).abs());
            max_fd = max_fd.max(fd.abs());
        }
        rel_errors.push(max_diff / (max_fd + 1e-8));
        abs_errors.push(max_diff);
        scales.push(max_fd);
    }
    Ok(GradReport {
        rel_errors,
        abs_errors,
        scales,
    })
}
