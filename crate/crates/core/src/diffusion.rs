//! Discrete few-step Gaussian diffusion: schedule, forward sampling, the
//! forward posterior and the ancestral sampling loop built on it.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::LabRng;
use crate::tensor::Tensor;

pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
pub const DEFAULT_BETA_CLIP: f64 = 0.999;

/// Per-step variances and cumulative signal fractions for `T` steps.
///
/// `alpha_bar[0] = 1` and `alpha_bar[t] = alpha_bar[t-1] * (1 - beta[t])`,
/// computed by that recurrence so the product identity holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: `ᾱ(u) ∝ cos²(((u + s) / (1 + s)) · π/2)`, with each
    /// step's β clipped at `beta_clip`.
    pub fn cosine(steps: usize, offset: f64, beta_clip: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(offset > 0.0) {
            return Err(Error::InvalidArgument(format!("cosine offset must be > 0, got {offset}")));
        }
        if !(beta_clip > 0.0 && beta_clip < 1.0) {
            return Err(Error::InvalidArgument(format!("beta clip must be in (0, 1), got {beta_clip}")));
        }
        let f = |u: f64| {
            let c = ((u + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos();
            c * c
        };
        let f0 = f(0.0);
        let raw_bar = |t: usize| f(t as f64 / steps as f64) / f0;
        let betas = (1..=steps)
            .map(|t| (1.0 - raw_bar(t) / raw_bar(t - 1)).min(beta_clip))
            .collect();
        Self::from_betas(betas)
    }

    pub fn cosine_default(steps: usize) -> Result<Self> {
        Self::cosine(steps, DEFAULT_COSINE_OFFSET, DEFAULT_BETA_CLIP)
    }

    /// Schedule from explicit per-step variances, each in (0, 0.999].
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b <= DEFAULT_BETA_CLIP)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 0.999]")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().expect("non-empty");
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(Self {
            steps: betas.len(),
            betas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::TimestepOutOfRange { t, steps: self.steps });
        }
        Ok(())
    }

    /// β_t for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// ᾱ_t for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_coefs(&self, t: usize) -> Result<PosteriorCoefs> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        // At t = 1 the coefficients collapse exactly: ᾱ_0 = 1, 1 - ᾱ_1 = β_1.
        if t == 1 {
            return Ok(PosteriorCoefs {
                x0: 1.0,
                xt: 0.0,
                var: 0.0,
            });
        }
        Ok(PosteriorCoefs {
            x0: ab_prev.sqrt() * beta / (1.0 - ab),
            xt: self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            var: (1.0 - ab_prev) / (1.0 - ab) * beta,
        })
    }
}

/// `mean = x0 · x0_hat + xt · x_t`, variance `var` (β̃_t).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCoefs {
    pub x0: f64,
    pub xt: f64,
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams {
    pub mean: Tensor,
    pub var: f64,
}

/// Expands one value per row into a full `[rows, cols]` constant.
pub fn per_row(values: &[f64], cols: usize) -> Tensor {
    let data = values.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
    Tensor::from_parts(vec![values.len(), cols], data)
}

fn check_rows(x: &Tensor, steps: &[usize], op: &'static str) -> Result<()> {
    if x.shape().len() != 2 || x.rows() != steps.len() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![steps.len()],
        });
    }
    Ok(())
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · eps`. `t = 0` returns `x0`.
pub fn q_sample_marginal(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    q_sample_marginal_rows(x0, &vec![t; x0.rows()], eps, sched)
}

/// Row-wise [`q_sample_marginal`], row `i` at step `steps[i]`.
pub fn q_sample_marginal_rows(x0: &Tensor, steps: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    x0.expect_same_shape(eps, "q_sample_marginal")?;
    check_rows(x0, steps, "q_sample_marginal")?;
    let cols = x0.cols();
    let mut out = x0.clone();
    for (i, &t) in steps.iter().enumerate() {
        if t > sched.steps() {
            return Err(Error::TimestepOutOfRange { t, steps: sched.steps() });
        }
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in 0..cols {
            let k = i * cols + j;
            out.data_mut()[k] = a * x0.data()[k] + b * eps.data()[k];
        }
    }
    Ok(out)
}

/// `x_t = √(1 − β_t) · x_prev + √β_t · eps`.
pub fn q_sample_step(x_prev: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    q_sample_step_rows(x_prev, &vec![t; x_prev.rows()], eps, sched)
}

pub fn q_sample_step_rows(x_prev: &Tensor, steps: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    x_prev.expect_same_shape(eps, "q_sample_step")?;
    check_rows(x_prev, steps, "q_sample_step")?;
    let cols = x_prev.cols();
    let mut out = x_prev.clone();
    for (i, &t) in steps.iter().enumerate() {
        sched.check_step(t)?;
        let beta = sched.beta(t);
        let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
        for j in 0..cols {
            let k = i * cols + j;
            out.data_mut()[k] = a * x_prev.data()[k] + b * eps.data()[k];
        }
    }
    Ok(out)
}

/// Mean and variance of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_params(x_t: &Tensor, x0: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<PosteriorParams> {
    x_t.expect_same_shape(x0, "posterior_params")?;
    let c = sched.posterior_coefs(t)?;
    let mean = x0.zip_map(x_t, "posterior_params", |a, b| c.x0 * a + c.xt * b)?;
    Ok(PosteriorParams { mean, var: c.var })
}

/// Per-row posterior coefficient constants `(x0 coef, x_t coef, std)`.
pub fn posterior_row_constants(steps: &[usize], cols: usize, sched: &NoiseSchedule) -> Result<[Tensor; 3]> {
    let mut c0 = Vec::with_capacity(steps.len());
    let mut ct = Vec::with_capacity(steps.len());
    let mut sd = Vec::with_capacity(steps.len());
    for &t in steps {
        let c = sched.posterior_coefs(t)?;
        c0.push(c.x0);
        ct.push(c.xt);
        sd.push(c.var.sqrt());
    }
    Ok([per_row(&c0, cols), per_row(&ct, cols), per_row(&sd, cols)])
}

/// Reparameterized draw from `q(x_{t-1} | x_t, x0 = x0_hat)`, differentiable in
/// `x0_hat` (and `x_t` when it tracks gradients).
pub fn posterior_sample(
    g: &mut Graph,
    x_t: Var,
    x0_hat: Var,
    steps: &[usize],
    z: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let shape = g.value(x0_hat).shape().to_vec();
    check_rows(g.value(x0_hat), steps, "posterior_sample")?;
    if z.shape() != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "posterior_sample",
            left: shape,
            right: z.shape().to_vec(),
        });
    }
    let [c0, ct, sd] = posterior_row_constants(steps, shape[1], sched)?;
    let noise = sd.zip_map(z, "posterior_sample", |s, n| s * n)?;
    let c0 = g.constant(c0);
    let ct = g.constant(ct);
    let noise = g.constant(noise);
    let a = g.mul(c0, x0_hat)?;
    let b = g.mul(ct, x_t)?;
    let mean = g.add(a, b)?;
    g.add(mean, noise)
}

/// Tensor-only [`posterior_sample`] for inference.
pub fn posterior_sample_tensor(
    x_t: &Tensor,
    x0_hat: &Tensor,
    steps: &[usize],
    z: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    x_t.expect_same_shape(x0_hat, "posterior_sample")?;
    x_t.expect_same_shape(z, "posterior_sample")?;
    check_rows(x_t, steps, "posterior_sample")?;
    let cols = x_t.cols();
    let mut out = x_t.clone();
    for (i, &t) in steps.iter().enumerate() {
        let c = sched.posterior_coefs(t)?;
        let sd = c.var.sqrt();
        for j in 0..cols {
            let k = i * cols + j;
            out.data_mut()[k] = c.x0 * x0_hat.data()[k] + c.xt * x_t.data()[k] + sd * z.data()[k];
        }
    }
    Ok(out)
}

/// Few-step ancestral sampling. `denoise(x_t, z, steps)` predicts `x0`.
///
/// Draw order per call: `x_T`, then for each `t = T..1` the latent `z_t`
/// (skipped when `latent_dim == 0`) followed by the posterior noise.
pub fn ancestral_sample<F>(
    mut denoise: F,
    sched: &NoiseSchedule,
    n: usize,
    data_dim: usize,
    latent_dim: usize,
    rng: &mut LabRng,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, &Tensor, &[usize]) -> Result<Tensor>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut x = rng.normal_tensor(&[n, data_dim]);
    for t in (1..=sched.steps()).rev() {
        let steps = vec![t; n];
        let z = rng.normal_tensor(&[n, latent_dim]);
        let x0_hat = denoise(&x, &z, &steps)?;
        let noise = rng.normal_tensor(&[n, data_dim]);
        x = posterior_sample_tensor(&x, &x0_hat, &steps, &noise, sched)?;
    }
    Ok(x)
}
