//! Alternating critic/generator training on the mixture benchmark, with EMA,
//! periodic evaluation, run logs, checkpoints and parameter sweeps.
//!
//! Per iteration: draw a data batch and its [`BatchContext`], take one Adam
//! step on the critic (discriminator, regularizer and regression head
//! together), one Adam step on the generator against the updated critic, then
//! update the EMA copy. All draws come from the run's stream; evaluation uses
//! a separate stream derived from `(seed, iteration)` so resuming from a
//! checkpoint reproduces the uninterrupted run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::diffusion::{ancestral_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{evaluate_against, frechet_gaussian_2d, mog_sample, write_atomic, write_samples_csv, MetricsReport, MogSpec};
use crate::networks::{Critic, CriticMode, Denoiser, HeadInit, NetConfig};
use crate::objectives::{
    ddgan_d_loss, ddgan_g_loss, ddpm_loss, make_batch_context, siddm_critic_losses, siddm_g_loss_with, AdvMode, AfdTarget, AfdWeight,
    LossBundle, Nets, Objective,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamStore};
use crate::rng::LabRng;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Stream tag for evaluation draws, mixed with the iteration number.
const EVAL_STREAM: u64 = 0x6576_616c << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub objective: Objective,
    pub steps: usize,
    pub lambda_afd: AfdWeight,
    pub lambda_reg: f64,
    pub adv_mode: AdvMode,
    pub afd_target: AfdTarget,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub iters: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_betas: [f64; 2],
    pub ema_decay: f64,
    pub eval_every: u64,
    /// Samples drawn from the EMA generator at each evaluation.
    pub eval_samples: usize,
    pub seed: u64,
    pub mog: MogSpec,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub leaky_slope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Siddm,
            steps: 4,
            lambda_afd: AfdWeight::Finite(1.0),
            lambda_reg: 1.0,
            adv_mode: AdvMode::NonSaturating,
            afd_target: AfdTarget::Paired,
            latent_dim: 2,
            batch_size: 512,
            iters: 50_000,
            lr_g: 2e-4,
            lr_d: 1e-4,
            adam_betas: [0.5, 0.9],
            ema_decay: 0.999,
            eval_every: 1000,
            eval_samples: 10_000,
            seed: 0,
            mog: MogSpec::default(),
            hidden: vec![256, 256, 256],
            time_dim: 64,
            leaky_slope: 0.2,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Reduced scale that trains in about a minute on one CPU core: three
    /// hidden layers of 64, batch 128, 20k iterations, learning rates raised
    /// to 1e-3 (generator) and 5e-4 (critic).
    pub fn desk() -> Self {
        Self {
            batch_size: 128,
            iters: 20_000,
            lr_g: 1e-3,
            lr_d: 5e-4,
            eval_every: 2000,
            hidden: vec![64, 64, 64],
            time_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.objective == Objective::VanillaGan && self.steps != 1 {
            return bad(format!("vanilla_gan requires steps = 1, got {}", self.steps));
        }
        self.lambda_afd.validate()?;
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg must be finite and >= 0, got {}", self.lambda_reg));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad(format!("learning rates must be > 0, got {} and {}", self.lr_g, self.lr_d));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad(format!("adam betas must be in [0, 1), got {:?}", self.adam_betas));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be >= 2".into());
        }
        self.mog.validate()?;
        self.net_config().validate()?;
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            data_dim: 2,
            latent_dim: self.latent_dim,
            time_dim: self.time_dim,
            hidden: self.hidden.clone(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::cosine_default(self.steps)
    }

    /// The single-step marginal GAN trains with neither forward-diffusion
    /// matching nor the regularizer.
    fn effective_weights(&self) -> (AfdWeight, f64) {
        match self.objective {
            Objective::VanillaGan => (AfdWeight::Finite(0.0), 0.0),
            _ => (self.lambda_afd, self.lambda_reg),
        }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStates {
    pub generator: Adam,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic: Option<Adam>,
}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub step: u64,
    pub rng_state: LabRng,
    /// Generator tensors under `gen.`, critic tensors under `critic.`.
    pub params: ParamStore,
    pub ema_params: ParamStore,
    pub optimizer: OptimizerStates,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::MalformedCheckpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedCheckpoint("missing numeric `version`".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::CheckpointVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        ck.check_layout()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        for t in self.params.iter().chain(self.ema_params.iter()).map(|(_, t)| t) {
            if t.len() != t.shape().iter().product::<usize>() {
                return Err(Error::MalformedCheckpoint("tensor data length differs from its shape".into()));
            }
        }
        let models = Models::new(&self.config)?;
        let expected = models.init(&mut LabRng::seed_from_u64(0));
        compare_layout(&expected.0, &self.params)?;
        compare_layout(&expected.1, &self.ema_params)?;
        let gen = self.params.split_prefix("gen");
        compare_layout(&gen, &self.optimizer.generator.state.first_moment)?;
        compare_layout(&gen, &self.optimizer.generator.state.second_moment)?;
        match (&self.optimizer.critic, models.critic.is_some()) {
            (Some(adam), true) => {
                let critic = self.params.split_prefix("critic");
                compare_layout(&critic, &adam.state.first_moment)?;
                compare_layout(&critic, &adam.state.second_moment)
            }
            (None, false) => Ok(()),
            _ => Err(Error::MalformedCheckpoint("critic optimizer state does not match the objective".into())),
        }
    }
}

fn compare_layout(expected: &ParamStore, found: &ParamStore) -> Result<()> {
    for (name, t) in expected.iter() {
        let f = found
            .get(name)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("missing tensor `{name}`")))?;
        if f.shape() != t.shape() {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: f.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = found.names().find(|n| expected.get(n).is_none()) {
        return Err(Error::MalformedCheckpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}

/// Network definitions and schedule for one config.
#[derive(Clone, Debug)]
pub struct Models {
    pub sched: NoiseSchedule,
    pub generator: Denoiser,
    pub critic: Option<Critic>,
}

impl Models {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let net = config.net_config();
        Ok(Self {
            sched: config.schedule()?,
            generator: Denoiser::new(net.clone(), config.steps)?,
            critic: config
                .objective
                .critic_mode()
                .map(|mode| Critic::new(net, mode, config.steps))
                .transpose()?,
        })
    }

    /// `(params, ema params)` with generator then critic initialized from `rng`.
    fn init(&self, rng: &mut LabRng) -> (ParamStore, ParamStore) {
        let gen = self.generator.init(rng, HeadInit::Default);
        let mut params = ParamStore::new();
        gen.merge_into("gen", &mut params);
        if let Some(c) = &self.critic {
            c.init(rng, HeadInit::Default).merge_into("critic", &mut params);
        }
        let mut ema = ParamStore::new();
        gen.merge_into("gen", &mut ema);
        (params, ema)
    }

    /// Ancestral samples from generator parameters (unprefixed).
    pub fn sample(&self, gen: &ParamStore, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        let latent = self.generator.config().latent_dim;
        ancestral_sample(
            |x, z, steps| self.generator.predict(gen, x, z, steps),
            &self.sched,
            n,
            2,
            latent,
            rng,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub losses: LossBundle,
    pub metrics: MetricsReport,
    /// Fréchet distance of samples from the raw (non-averaged) generator.
    pub frechet_raw: f64,
}

/// Evaluation records in increasing iteration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

pub const RUN_LOG_HEADER: &str = "iteration,d_loss,c_loss,g_loss,adv_real,adv_fake,adv_gen,afd_cross_entropy,afd_entropy,regularizer,modes_covered,hq_fraction,frechet,sliced_w2,frechet_raw";

impl RunLog {
    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "log iterations must increase: {} after {}",
                    record.iteration, last.iteration
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.iteration);
            for (_, v) in r.losses.components() {
                let _ = write!(out, ",{v}");
            }
            let m = &r.metrics;
            let _ = writeln!(
                out,
                ",{},{},{},{},{}",
                m.modes_covered, m.hq_fraction, m.frechet, m.sliced_w2, r.frechet_raw
            );
        }
        out
    }
}

/// Live training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: RunConfig,
    models: Models,
    step: u64,
    rng: LabRng,
    gen: ParamStore,
    critic: ParamStore,
    ema: ParamStore,
    opt_g: Adam,
    opt_d: Option<Adam>,
    last_losses: LossBundle,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let models = Models::new(&config)?;
        let mut rng = LabRng::seed_from_u64(config.seed);
        let (params, _) = models.init(&mut rng);
        let gen = params.split_prefix("gen");
        let critic = params.split_prefix("critic");
        let opt_g = Adam::new(config.adam(config.lr_g), &gen)?;
        let opt_d = match models.critic {
            Some(_) => Some(Adam::new(config.adam(config.lr_d), &critic)?),
            None => None,
        };
        Ok(Self {
            ema: gen.clone(),
            config,
            models,
            step: 0,
            rng,
            gen,
            critic,
            opt_g,
            opt_d,
            last_losses: LossBundle::default(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.check_layout()?;
        let models = Models::new(&ck.config)?;
        Ok(Self {
            gen: ck.params.split_prefix("gen"),
            critic: ck.params.split_prefix("critic"),
            ema: ck.ema_params.split_prefix("gen"),
            config: ck.config,
            models,
            step: ck.step,
            rng: ck.rng_state,
            opt_g: ck.optimizer.generator,
            opt_d: ck.optimizer.critic,
            last_losses: LossBundle::default(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = ParamStore::new();
        self.gen.merge_into("gen", &mut params);
        self.critic.merge_into("critic", &mut params);
        let mut ema_params = ParamStore::new();
        self.ema.merge_into("gen", &mut ema_params);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            step: self.step,
            rng_state: self.rng.clone(),
            params,
            ema_params,
            optimizer: OptimizerStates {
                generator: self.opt_g.clone(),
                critic: self.opt_d.clone(),
            },
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generator_params(&self) -> &ParamStore {
        &self.gen
    }

    pub fn ema_params(&self) -> &ParamStore {
        &self.ema
    }

    pub fn last_losses(&self) -> &LossBundle {
        &self.last_losses
    }

    /// One critic update (when the objective has a critic), one generator
    /// update and one EMA update.
    pub fn train_step(&mut self) -> Result<&LossBundle> {
        let iteration = self.step + 1;
        let cfg = &self.config;
        let x0 = mog_sample(&cfg.mog, cfg.batch_size, &mut self.rng)?;
        let ctx = make_batch_context(&x0, &self.models.sched, cfg.latent_dim, &mut self.rng)?;
        let (lambda_afd, lambda_reg) = cfg.effective_weights();
        let mut losses = LossBundle::default();
        let phase = |e: Error, phase: &str| match e {
            Error::NonFinite { op } => Error::NonFiniteLoss {
                iteration,
                components: format!("{phase} ({op} produced a non-finite value)"),
            },
            other => other,
        };

        if let (Some(critic), Some(opt)) = (&self.models.critic, &mut self.opt_d) {
            let nets = Nets {
                generator: &self.models.generator,
                critic,
                sched: &self.models.sched,
            };
            let mut g = Graph::new();
            let gp = Bound::new(&mut g, &self.gen, false);
            let cp = Bound::new(&mut g, &self.critic, true);
            let total = match critic.mode() {
                CriticMode::Marginal => {
                    let t = siddm_critic_losses(&mut g, nets, &gp, &cp, &ctx, lambda_reg).map_err(|e| phase(e, "critic"))?;
                    losses.d_loss = g.scalar(t.d.total);
                    losses.c_loss = g.scalar(t.c_loss);
                    losses.adv_real = g.scalar(t.d.adv_real);
                    losses.adv_fake = g.scalar(t.d.adv_fake);
                    losses.regularizer = g.scalar(t.d.regularizer);
                    t.total
                }
                CriticMode::Joint => {
                    let t = ddgan_d_loss(&mut g, nets, &gp, &cp, &ctx).map_err(|e| phase(e, "critic"))?;
                    losses.d_loss = g.scalar(t.total);
                    losses.adv_real = g.scalar(t.adv_real);
                    losses.adv_fake = g.scalar(t.adv_fake);
                    t.total
                }
            };
            losses.check_finite(iteration)?;
            g.backward(total).map_err(|e| phase(e, "critic backward"))?;
            opt.step(&mut self.critic, &cp.grads(&g))?;
        }

        let mut g = Graph::new();
        let gp = Bound::new(&mut g, &self.gen, true);
        let g_total = match &self.models.critic {
            None => {
                let l = ddpm_loss(&mut g, &self.models.generator, &gp, &ctx).map_err(|e| phase(e, "generator"))?;
                losses.g_loss = g.scalar(l);
                l
            }
            Some(critic) => {
                let nets = Nets {
                    generator: &self.models.generator,
                    critic,
                    sched: &self.models.sched,
                };
                let cp = Bound::new(&mut g, &self.critic, false);
                match critic.mode() {
                    CriticMode::Marginal => {
                        let t = siddm_g_loss_with(&mut g, nets, &gp, &cp, &ctx, lambda_afd, cfg.adv_mode, cfg.afd_target)
                            .map_err(|e| phase(e, "generator"))?;
                        losses.g_loss = g.scalar(t.total);
                        losses.adv_gen = g.scalar(t.adv);
                        losses.afd_cross_entropy = g.scalar(t.afd_cross_entropy);
                        losses.afd_entropy = g.scalar(t.afd_entropy);
                        t.total
                    }
                    CriticMode::Joint => {
                        let l = ddgan_g_loss(&mut g, nets, &gp, &cp, &ctx, cfg.adv_mode)
                            .map_err(|e| phase(e, "generator"))?;
                        losses.g_loss = g.scalar(l);
                        losses.adv_gen = losses.g_loss;
                        l
                    }
                }
            }
        };
        losses.check_finite(iteration)?;
        g.backward(g_total).map_err(|e| phase(e, "generator backward"))?;
        self.opt_g.step(&mut self.gen, &gp.grads(&g))?;
        crate::optim::ema_update(&mut self.ema, &self.gen, self.config.ema_decay)?;

        self.step = iteration;
        self.last_losses = losses;
        Ok(&self.last_losses)
    }

    /// Metrics of EMA samples at the current step, plus the raw-generator
    /// Fréchet distance. Draws come from a stream keyed by the step.
    pub fn evaluate(&self) -> Result<LogRecord> {
        let cfg = &self.config;
        let mut rng = LabRng::derived(cfg.seed, EVAL_STREAM | self.step);
        let reference = mog_sample(&cfg.mog, cfg.eval_samples, &mut rng)?;
        let ema_samples = self.models.sample(&self.ema, cfg.eval_samples, &mut rng)?;
        let raw_samples = self.models.sample(&self.gen, cfg.eval_samples, &mut rng)?;
        Ok(LogRecord {
            iteration: self.step,
            losses: self.last_losses.clone(),
            metrics: evaluate_against(&ema_samples, &reference, &cfg.mog)?,
            frechet_raw: frechet_gaussian_2d(&reference, &raw_samples)?.distance,
        })
    }

    pub fn sample_ema(&self, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        self.models.sample(&self.ema, n, rng)
    }

    /// Trains until `config.iters`, evaluating every `eval_every` steps and at
    /// the last one. Returns the records produced by this call.
    pub fn run(&mut self) -> Result<RunLog> {
        self.run_with(|_, _| {})
    }

    /// [`Trainer::run`] with a callback after each evaluation, receiving the
    /// record and the seconds spent since the call started.
    pub fn run_with(&mut self, mut on_eval: impl FnMut(&LogRecord, f64)) -> Result<RunLog> {
        let start = Instant::now();
        let mut log = RunLog::default();
        while self.step < self.config.iters {
            self.train_step()?;
            if self.step % self.config.eval_every == 0 || self.step == self.config.iters {
                let record = self.evaluate()?;
                on_eval(&record, start.elapsed().as_secs_f64());
                log.push(record)?;
            }
        }
        Ok(log)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: RunLog,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SAMPLES_FILE: &str = "samples.csv";

/// Trains from scratch. With `output_dir` set, writes the final checkpoint,
/// the run log, per-evaluation wall-clock times and final EMA samples.
pub fn train(config: RunConfig) -> Result<TrainOutcome> {
    let trainer = Trainer::new(config)?;
    finish(trainer, RunLog::default())
}

/// Continues a checkpointed run to its configured iteration count. `prior`
/// holds the records already logged and is extended.
pub fn resume(checkpoint: Checkpoint, prior: RunLog) -> Result<TrainOutcome> {
    let trainer = Trainer::from_checkpoint(checkpoint)?;
    finish(trainer, prior)
}

fn finish(mut trainer: Trainer, mut log: RunLog) -> Result<TrainOutcome> {
    let mut timing = String::from("iteration,seconds\n");
    let new = trainer.run_with(|r, secs| {
        let _ = writeln!(timing, "{},{secs}", r.iteration);
    })?;
    for r in new.records {
        log.push(r)?;
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = &trainer.config.output_dir {
        checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        write_atomic(&dir.join(RUN_LOG_FILE), log.to_csv().as_bytes())?;
        write_atomic(&dir.join(TIMING_FILE), timing.as_bytes())?;
        let mut rng = LabRng::derived(trainer.config.seed, EVAL_STREAM | u64::from(u32::MAX));
        let samples = trainer.sample_ema(trainer.config.eval_samples, &mut rng)?;
        write_samples_csv(&dir.join(SAMPLES_FILE), &samples)?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaAfd,
    Steps,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_afd" | "lambda-afd" => Ok(SweepAxis::LambdaAfd),
            "steps" => Ok(SweepAxis::Steps),
            other => Err(Error::Parse(format!("unknown sweep axis `{other}` (expected lambda_afd or steps)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LambdaAfd => "lambda_afd",
            SweepAxis::Steps => "steps",
        }
    }

    /// The base config with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::LambdaAfd => c.lambda_afd = value.parse()?,
            SweepAxis::Steps => {
                c.steps = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid step count `{value}`")))?
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub metrics: MetricsReport,
}

/// One training run per value with the base seed, each writing into
/// `<output_dir>/<axis>_<value>` when the base has an output directory. Runs
/// execute on up to `threads` worker threads; results are in `values` order
/// and do not depend on the thread count.
pub fn ablation_sweep(base: &RunConfig, axis: SweepAxis, values: &[String], threads: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = axis.apply(base, v)?;
            c.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("{}_{v}", axis.name())));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let run = |c: &RunConfig| -> Result<MetricsReport> {
        let out = train(c.clone())?;
        out.log
            .last()
            .map(|r| r.metrics.clone())
            .ok_or_else(|| Error::InvalidArgument("sweep runs need iters >= 1".into()))
    };
    let results: Vec<Result<MetricsReport>> = if threads <= 1 {
        configs.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<MetricsReport>>> = (0..configs.len()).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_ref = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..threads.min(configs.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= configs.len() {
                        break;
                    }
                    let r = run(&configs[i]);
                    slots_ref.lock().expect("sweep worker panicked")[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every slot filled")).collect()
    };
    values
        .iter()
        .zip(results)
        .map(|(v, r)| {
            Ok(SweepRow {
                value: v.clone(),
                metrics: r?,
            })
        })
        .collect()
}

/// Wide table: one row per metric, one column per swept value.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from(axis.name());
    for r in rows {
        let _ = write!(out, ",{}", r.value);
    }
    out.push('\n');
    type Getter = fn(&MetricsReport) -> String;
    let metrics: [(&str, Getter); 4] = [
        ("modes_covered", |m| m.modes_covered.to_string()),
        ("hq_fraction", |m| m.hq_fraction.to_string()),
        ("frechet", |m| m.frechet.to_string()),
        ("sliced_w2", |m| m.sliced_w2.to_string()),
    ];
    for (name, get) in metrics {
        out.push_str(name);
        for r in rows {
            let _ = write!(out, ",{}", get(&r.metrics));
        }
        out.push('\n');
    }
    out
}
