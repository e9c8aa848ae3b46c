//! Training losses for the semi-implicit objective, the joint-critic
//! diffusion GAN and the plain denoising baseline.
//!
//! Every loss is built on a caller-supplied [`Graph`]. Cross-model detachment
//! is enforced inside the loss: critic losses see the generator only through
//! stop-gradient nodes and the generator loss sees frozen critic parameters,
//! so the caller may bind both parameter sets with gradients enabled.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Graph, Var};
use crate::diffusion::{per_row, posterior_sample, q_sample_marginal_rows, q_sample_step_rows, NoiseSchedule};
use crate::error::{Error, Result};
use crate::networks::{Critic, CriticMode, Denoiser};
use crate::params::{Bound, ParamStore};
use crate::rng::LabRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Siddm,
    Ddgan,
    Ddpm,
    /// The marginal-critic path with a single step and no forward-diffusion
    /// matching or regularizer.
    VanillaGan,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Siddm => "siddm",
            Objective::Ddgan => "ddgan",
            Objective::Ddpm => "ddpm",
            Objective::VanillaGan => "vanilla_gan",
        }
    }

    pub fn critic_mode(self) -> Option<CriticMode> {
        match self {
            Objective::Siddm | Objective::VanillaGan => Some(CriticMode::Marginal),
            Objective::Ddgan => Some(CriticMode::Joint),
            Objective::Ddpm => None,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siddm" => Ok(Objective::Siddm),
            "ddgan" => Ok(Objective::Ddgan),
            "ddpm" => Ok(Objective::Ddpm),
            "vanilla_gan" => Ok(Objective::VanillaGan),
            other => Err(Error::Parse(format!(
                "unknown objective `{other}` (expected siddm, ddgan, ddpm or vanilla_gan)"
            ))),
        }
    }
}

/// Generator adversarial loss form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvMode {
    /// `-log σ(D(fake))`.
    #[default]
    NonSaturating,
    /// `log(1 - σ(D(fake)))`.
    Saturating,
}

/// Weight of the forward-diffusion matching term. `Infinite` switches the
/// adversarial generator term off and keeps the matching term at weight one.
///
/// Serialized as a number, or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AfdWeight {
    Finite(f64),
    Infinite,
}

impl Default for AfdWeight {
    fn default() -> Self {
        AfdWeight::Finite(1.0)
    }
}

impl AfdWeight {
    pub fn new(value: f64) -> Result<Self> {
        if value == f64::INFINITY {
            Ok(AfdWeight::Infinite)
        } else if value.is_finite() && value >= 0.0 {
            Ok(AfdWeight::Finite(value))
        } else {
            Err(Error::InvalidArgument(format!("AFD weight must be >= 0, got {value}")))
        }
    }

    /// `(adversarial weight, matching weight)`.
    pub fn weights(self) -> (f64, f64) {
        match self {
            AfdWeight::Finite(w) => (1.0, w),
            AfdWeight::Infinite => (0.0, 1.0),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            AfdWeight::Finite(w) => Self::new(w).map(|_| ()),
            AfdWeight::Infinite => Ok(()),
        }
    }
}

impl fmt::Display for AfdWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AfdWeight::Finite(w) => write!(f, "{w}"),
            AfdWeight::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for AfdWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(AfdWeight::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid AFD weight `{s}`")))?;
                AfdWeight::new(v)
            }
        }
    }
}

impl Serialize for AfdWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AfdWeight::Finite(w) => s.serialize_f64(*w),
            AfdWeight::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for AfdWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => AfdWeight::new(v).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Sample form of the AFD cross-entropy in the generator loss.
///
/// Both forms have the same expectation over the forward noise when `x'_{t-1}`
/// is independent of it, but the generator sees `x_t`, so their minimizers
/// differ: `Paired` is minimized by the posterior mean `E[x_{t-1} | x_t]`,
/// `PerSample` by `x_t / √(1-β_t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfdTarget {
    /// `(1-β_t) ‖x'_{t-1} - x_{t-1}‖² / β_t` against the real paired sample.
    #[default]
    Paired,
    /// `‖x_t - √(1-β_t) x'_{t-1}‖² / β_t`, the Gaussian negative log-likelihood
    /// of the observed `x_t`.
    PerSample,
}

impl AfdTarget {
    pub fn name(self) -> &'static str {
        match self {
            AfdTarget::Paired => "paired",
            AfdTarget::PerSample => "per_sample",
        }
    }
}

impl fmt::Display for AfdTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AfdTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(AfdTarget::Paired),
            "per_sample" | "per-sample" => Ok(AfdTarget::PerSample),
            other => Err(Error::Parse(format!("unknown AFD target `{other}` (expected paired or per_sample)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_afd: AfdWeight,
    pub lambda_reg: f64,
    pub adv_mode: AdvMode,
    pub afd_target: AfdTarget,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_afd: AfdWeight::default(),
            lambda_reg: 1.0,
            adv_mode: AdvMode::NonSaturating,
            afd_target: AfdTarget::Paired,
        }
    }
}

/// One training batch with every random draw the losses need.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchContext {
    pub x0: Tensor,
    pub steps: Vec<usize>,
    /// Noise taking `x0` to `x_{t-1}`.
    pub eps_prev: Tensor,
    /// Noise of the forward step `x_{t-1} -> x_t`.
    pub eps: Tensor,
    pub x_prev: Tensor,
    pub x_t: Tensor,
    pub z: Tensor,
    pub z_post: Tensor,
    /// Noise of the auxiliary forward step applied to generated samples.
    pub eps_afd: Tensor,
}

/// Draw order: steps, `eps_prev`, `eps`, `z`, `z_post`, `eps_afd`.
pub fn make_batch_context(x0: &Tensor, sched: &NoiseSchedule, latent_dim: usize, rng: &mut LabRng) -> Result<BatchContext> {
    if x0.shape().len() != 2 || x0.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "batch must be a non-empty [rows, dim] matrix, got {:?}",
            x0.shape()
        )));
    }
    let (n, d) = (x0.rows(), x0.cols());
    let steps: Vec<usize> = (0..n).map(|_| 1 + rng.below(sched.steps())).collect();
    let eps_prev = rng.normal_tensor(&[n, d]);
    let eps = rng.normal_tensor(&[n, d]);
    let z = rng.normal_tensor(&[n, latent_dim]);
    let z_post = rng.normal_tensor(&[n, d]);
    let eps_afd = rng.normal_tensor(&[n, d]);
    let prev_steps: Vec<usize> = steps.iter().map(|t| t - 1).collect();
    let x_prev = q_sample_marginal_rows(x0, &prev_steps, &eps_prev, sched)?;
    let x_t = q_sample_step_rows(&x_prev, &steps, &eps, sched)?;
    Ok(BatchContext {
        x0: x0.clone(),
        steps,
        eps_prev,
        eps,
        x_prev,
        x_t,
        z,
        z_post,
        eps_afd,
    })
}

/// The models a loss is evaluated against.
#[derive(Clone, Copy, Debug)]
pub struct Nets<'a> {
    pub generator: &'a Denoiser,
    pub critic: &'a Critic,
    pub sched: &'a NoiseSchedule,
}

/// `x'_{t-1}`, differentiable in the generator parameters.
pub fn generate_prev(g: &mut Graph, nets: Nets<'_>, gp: &Bound, ctx: &BatchContext) -> Result<Var> {
    let x_t = g.constant(ctx.x_t.clone());
    let z = g.constant(ctx.z.clone());
    let x0_hat = nets.generator.forward(g, gp, x_t, z, &ctx.steps)?;
    posterior_sample(g, x_t, x0_hat, &ctx.steps, &ctx.z_post, nets.sched)
}

/// `[√(1-β_t)] , [√β_t] , [1/β_t]` per row; the first two span `dim` columns,
/// the last is a column.
fn step_constants(steps: &[usize], dim: usize, sched: &NoiseSchedule) -> ([Tensor; 2], Tensor) {
    let keep: Vec<f64> = steps.iter().map(|&t| (1.0 - sched.beta(t)).sqrt()).collect();
    let noise: Vec<f64> = steps.iter().map(|&t| sched.beta(t).sqrt()).collect();
    let inv: Vec<f64> = steps.iter().map(|&t| 1.0 / sched.beta(t)).collect();
    ([per_row(&keep, dim), per_row(&noise, dim)], per_row(&inv, 1))
}

/// `x'_t = √(1-β_t) x'_{t-1} + √β_t eps'`.
pub(crate) fn afd_forward(g: &mut Graph, fake: Var, ctx: &BatchContext, sched: &NoiseSchedule) -> Result<Var> {
    let ([keep, noise], _) = step_constants(&ctx.steps, ctx.x0.cols(), sched);
    let keep = g.constant(keep);
    let noise = g.constant(noise.zip_map(&ctx.eps_afd, "afd_forward", |a, b| a * b)?);
    let a = g.mul(keep, fake)?;
    g.add(a, noise)
}

/// `mean_i ‖a_i - b_i‖² / β_{t_i}`.
pub(crate) fn beta_scaled_sq_err(g: &mut Graph, a: Var, b: Var, ctx: &BatchContext, sched: &NoiseSchedule) -> Result<Var> {
    let (_, inv) = step_constants(&ctx.steps, 1, sched);
    let inv = g.constant(inv);
    let diff = g.sub(a, b)?;
    let sq = g.row_sq_norm(diff)?;
    let scaled = g.mul(sq, inv)?;
    g.mean(scaled)
}

fn mean_softplus(g: &mut Graph, logits: Var, negate: bool) -> Result<Var> {
    let x = if negate { g.neg(logits)? } else { logits };
    let s = g.softplus(x)?;
    g.mean(s)
}

fn mean_sq_dist(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.row_sq_norm(diff)?;
    g.mean(sq)
}

fn generator_adv(g: &mut Graph, logits: Var, mode: AdvMode) -> Result<Var> {
    match mode {
        AdvMode::NonSaturating => mean_softplus(g, logits, true),
        AdvMode::Saturating => {
            let s = mean_softplus(g, logits, false)?;
            g.neg(s)
        }
    }
}

fn check_marginal(nets: Nets<'_>) -> Result<()> {
    if nets.critic.mode() != CriticMode::Marginal {
        return Err(Error::InvalidArgument("this loss needs a marginal critic".into()));
    }
    Ok(())
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(w, v) in terms {
        let scaled = g.scale(v, w)?;
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("empty loss".into()))
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorTerms {
    pub adv_real: Var,
    pub adv_fake: Var,
    pub regularizer: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CriticTerms {
    pub d: DiscriminatorTerms,
    pub c_loss: Var,
    /// `d.total + c_loss`, the quantity one critic update descends.
    pub total: Var,
}

/// Discriminator and regression losses sharing one detached fake batch.
pub fn siddm_critic_losses(
    g: &mut Graph,
    nets: Nets<'_>,
    gp: &Bound,
    cp: &Bound,
    ctx: &BatchContext,
    lambda_reg: f64,
) -> Result<CriticTerms> {
    check_marginal(nets)?;
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda_reg must be finite and >= 0, got {lambda_reg}")));
    }
    let gen = gp.detached(g)?;
    let fake = generate_prev(g, nets, &gen, ctx)?;
    let fake = g.stop_grad(fake)?;

    let x_prev = g.constant(ctx.x_prev.clone());
    let real = nets.critic.forward(g, cp, x_prev, None, &ctx.steps)?;
    let out = nets.critic.forward(g, cp, fake, None, &ctx.steps)?;

    let adv_real = mean_softplus(g, real.adv, true)?;
    let adv_fake = mean_softplus(g, out.adv, false)?;
    let x0 = g.constant(ctx.x0.clone());
    let regularizer = mean_sq_dist(g, real.denoise, x0)?;
    let d_total = weighted_sum(g, &[(1.0, adv_real), (1.0, adv_fake), (lambda_reg, regularizer)])?;

    let target = afd_forward(g, fake, ctx, nets.sched)?;
    let c_loss = beta_scaled_sq_err(g, out.cpsi, target, ctx, nets.sched)?;
    let total = g.add(d_total, c_loss)?;
    Ok(CriticTerms {
        d: DiscriminatorTerms {
            adv_real,
            adv_fake,
            regularizer,
            total: d_total,
        },
        c_loss,
        total,
    })
}

/// `-log σ(D(x_{t-1})) - log(1 - σ(D(x'_{t-1}))) + λ_reg · mean‖denoise(x_{t-1}) - x0‖²`.
pub fn siddm_d_loss(
    g: &mut Graph,
    nets: Nets<'_>,
    gp: &Bound,
    cp: &Bound,
    ctx: &BatchContext,
    lambda_reg: f64,
) -> Result<DiscriminatorTerms> {
    Ok(siddm_critic_losses(g, nets, gp, cp, ctx, lambda_reg)?.d)
}

/// `mean ‖C(x'_{t-1}) - x'_t‖² / β_t` with both arguments detached from the
/// generator.
pub fn siddm_c_loss(g: &mut Graph, nets: Nets<'_>, gp: &Bound, cp: &Bound, ctx: &BatchContext) -> Result<Var> {
    Ok(siddm_critic_losses(g, nets, gp, cp, ctx, 0.0)?.c_loss)
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    pub adv: Var,
    /// See [`AfdTarget`] for the two forms.
    pub afd_cross_entropy: Var,
    /// `mean ‖C(x'_{t-1}) - x'_t‖² / β_t` with the generator attached.
    pub afd_entropy: Var,
    pub total: Var,
}

/// Adversarial term plus `λ_AFD · (cross entropy - entropy estimate)`, with
/// the critic frozen and the paired cross-entropy.
pub fn siddm_g_loss(
    g: &mut Graph,
    nets: Nets<'_>,
    gp: &Bound,
    cp: &Bound,
    ctx: &BatchContext,
    lambda_afd: AfdWeight,
    mode: AdvMode,
) -> Result<GeneratorTerms> {
    siddm_g_loss_with(g, nets, gp, cp, ctx, lambda_afd, mode, AfdTarget::Paired)
}

/// [`siddm_g_loss`] with a chosen cross-entropy form.
#[allow(clippy::too_many_arguments)]
pub fn siddm_g_loss_with(
    g: &mut Graph,
    nets: Nets<'_>,
    gp: &Bound,
    cp: &Bound,
    ctx: &BatchContext,
    lambda_afd: AfdWeight,
    mode: AdvMode,
    target: AfdTarget,
) -> Result<GeneratorTerms> {
    check_marginal(nets)?;
    lambda_afd.validate()?;
    let frozen = cp.detached(g)?;
    let fake = generate_prev(g, nets, gp, ctx)?;
    let out = nets.critic.forward(g, &frozen, fake, None, &ctx.steps)?;
    let adv = generator_adv(g, out.adv, mode)?;

    let ([keep, _], _) = step_constants(&ctx.steps, ctx.x0.cols(), nets.sched);
    let keep = g.constant(keep);
    let observed = match target {
        AfdTarget::Paired => {
            let x_prev = g.constant(ctx.x_prev.clone());
            g.mul(keep, x_prev)?
        }
        AfdTarget::PerSample => g.constant(ctx.x_t.clone()),
    };
    let mean_t = g.mul(keep, fake)?;
    let afd_cross_entropy = beta_scaled_sq_err(g, observed, mean_t, ctx, nets.sched)?;
    let target = afd_forward(g, fake, ctx, nets.sched)?;
    let afd_entropy = beta_scaled_sq_err(g, out.cpsi, target, ctx, nets.sched)?;

    let (w_adv, w_afd) = lambda_afd.weights();
    let total = weighted_sum(g, &[(w_adv, adv), (w_afd, afd_cross_entropy), (-w_afd, afd_entropy)])?;
    Ok(GeneratorTerms {
        adv,
        afd_cross_entropy,
        afd_entropy,
        total,
    })
}

/// Joint-critic discriminator loss on `(x_{t-1}, x_t)` pairs.
pub fn ddgan_d_loss(g: &mut Graph, nets: Nets<'_>, gp: &Bound, cp: &Bound, ctx: &BatchContext) -> Result<DiscriminatorTerms> {
    check_joint(nets)?;
    let gen = gp.detached(g)?;
    let fake = generate_prev(g, nets, &gen, ctx)?;
    let fake = g.stop_grad(fake)?;
    let x_prev = g.constant(ctx.x_prev.clone());
    let x_t = g.constant(ctx.x_t.clone());
    let real = nets.critic.forward(g, cp, x_prev, Some(x_t), &ctx.steps)?;
    let out = nets.critic.forward(g, cp, fake, Some(x_t), &ctx.steps)?;
    let adv_real = mean_softplus(g, real.adv, true)?;
    let adv_fake = mean_softplus(g, out.adv, false)?;
    let total = g.add(adv_real, adv_fake)?;
    let regularizer = g.constant(Tensor::scalar(0.0));
    Ok(DiscriminatorTerms {
        adv_real,
        adv_fake,
        regularizer,
        total,
    })
}

pub fn ddgan_g_loss(g: &mut Graph, nets: Nets<'_>, gp: &Bound, cp: &Bound, ctx: &BatchContext, mode: AdvMode) -> Result<Var> {
    check_joint(nets)?;
    let frozen = cp.detached(g)?;
    let fake = generate_prev(g, nets, gp, ctx)?;
    let x_t = g.constant(ctx.x_t.clone());
    let out = nets.critic.forward(g, &frozen, fake, Some(x_t), &ctx.steps)?;
    generator_adv(g, out.adv, mode)
}

fn check_joint(nets: Nets<'_>) -> Result<()> {
    if nets.critic.mode() != CriticMode::Joint {
        return Err(Error::InvalidArgument("this loss needs a joint critic".into()));
    }
    Ok(())
}

/// `mean ‖G(x_t, 0, t) - x0‖²`.
pub fn ddpm_loss(g: &mut Graph, generator: &Denoiser, gp: &Bound, ctx: &BatchContext) -> Result<Var> {
    let x_t = g.constant(ctx.x_t.clone());
    let z = g.constant(Tensor::zeros(&[ctx.x0.rows(), generator.config().latent_dim]));
    let x0_hat = generator.forward(g, gp, x_t, z, &ctx.steps)?;
    let x0 = g.constant(ctx.x0.clone());
    mean_sq_dist(g, x0_hat, x0)
}

/// Loss values of one batch. Components absent from an objective are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub d_loss: f64,
    pub c_loss: f64,
    pub g_loss: f64,
    pub adv_real: f64,
    pub adv_fake: f64,
    pub adv_gen: f64,
    pub afd_cross_entropy: f64,
    pub afd_entropy: f64,
    pub regularizer: f64,
}

impl LossBundle {
    pub fn components(&self) -> [(&'static str, f64); 9] {
        [
            ("d_loss", self.d_loss),
            ("c_loss", self.c_loss),
            ("g_loss", self.g_loss),
            ("adv_real", self.adv_real),
            ("adv_fake", self.adv_fake),
            ("adv_gen", self.adv_gen),
            ("afd_cross_entropy", self.afd_cross_entropy),
            ("afd_entropy", self.afd_entropy),
            ("regularizer", self.regularizer),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|(_, v)| v.is_finite())
    }

    /// Errors naming the non-finite components.
    pub fn check_finite(&self, iteration: u64) -> Result<()> {
        let bad: Vec<&str> = self
            .components()
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(k, _)| *k)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                iteration,
                components: bad.join(", "),
            })
        }
    }
}

/// Evaluates every loss of `objective` on one batch without gradients.
/// `critic` and `cparams` are ignored for the denoising baseline.
pub fn evaluate_losses(
    objective: Objective,
    nets: Nets<'_>,
    gparams: &ParamStore,
    cparams: &ParamStore,
    ctx: &BatchContext,
    weights: &LossWeights,
) -> Result<LossBundle> {
    let mut g = Graph::new();
    let gp = Bound::new(&mut g, gparams, false);
    let mut out = LossBundle::default();
    if objective == Objective::Ddpm {
        let l = ddpm_loss(&mut g, nets.generator, &gp, ctx)?;
        out.g_loss = g.scalar(l);
        return Ok(out);
    }
    let cp = Bound::new(&mut g, cparams, false);
    match objective {
        Objective::Ddgan => {
            let d = ddgan_d_loss(&mut g, nets, &gp, &cp, ctx)?;
            let gl = ddgan_g_loss(&mut g, nets, &gp, &cp, ctx, weights.adv_mode)?;
            out.d_loss = g.scalar(d.total);
            out.adv_real = g.scalar(d.adv_real);
            out.adv_fake = g.scalar(d.adv_fake);
            out.g_loss = g.scalar(gl);
            out.adv_gen = out.g_loss;
        }
        _ => {
            let c = siddm_critic_losses(&mut g, nets, &gp, &cp, ctx, weights.lambda_reg)?;
            let gl = siddm_g_loss_with(
                &mut g,
                nets,
                &gp,
                &cp,
                ctx,
                weights.lambda_afd,
                weights.adv_mode,
                weights.afd_target,
            )?;
            out.d_loss = g.scalar(c.d.total);
            out.c_loss = g.scalar(c.c_loss);
            out.adv_real = g.scalar(c.d.adv_real);
            out.adv_fake = g.scalar(c.d.adv_fake);
            out.regularizer = g.scalar(c.d.regularizer);
            out.g_loss = g.scalar(gl.total);
            out.adv_gen = g.scalar(gl.adv);
            out.afd_cross_entropy = g.scalar(gl.afd_cross_entropy);
            out.afd_entropy = g.scalar(gl.afd_entropy);
        }
    }
    Ok(out)
}
