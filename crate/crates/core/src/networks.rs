//! MLP denoiser and shared-trunk critic.
//!
//! Weights are `[fan_in, fan_out]` and layers compute `x · W + b`. Hidden
//! layers use a leaky rectifier. Initialization is He-style uniform on
//! `±√(6 / fan_in)` with zero biases.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::LabRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            latent_dim: 2,
            time_dim: 64,
            hidden: vec![256, 256, 256],
            leaky_slope: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::InvalidArgument("data_dim must be >= 1".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time embedding dimension must be even and positive, got {}",
                self.time_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// How the output heads start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    /// Zero for the denoiser output and the critic's denoise/regression heads;
    /// random for the adversarial head.
    Default,
    /// Every output head zero.
    Zero,
    /// Every output head random.
    Random,
}

/// Sinusoidal features of `u = t / T` at frequencies spaced geometrically
/// from 1 to 1000: `[sin(u·f_0) .. sin(u·f_{k-1}), cos(u·f_0) ..]`.
pub fn time_embed(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    if t == 0 || t > steps {
        return Err(Error::TimestepOutOfRange { t, steps });
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dimension must be even, got {dim}")));
    }
    let half = dim / 2;
    let u = t as f64 / steps as f64;
    let freq = |i: usize| {
        if half == 1 {
            1.0
        } else {
            1000f64.powf(i as f64 / (half - 1) as f64)
        }
    };
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| (u * freq(i)).sin()));
    out.extend((0..half).map(|i| (u * freq(i)).cos()));
    Ok(out)
}

pub fn time_embed_rows(steps_per_row: &[usize], steps: usize, dim: usize) -> Result<Tensor> {
    let table = (1..=steps).map(|t| time_embed(t, steps, dim)).collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(steps_per_row.len() * dim);
    for &t in steps_per_row {
        if t == 0 || t > steps {
            return Err(Error::TimestepOutOfRange { t, steps });
        }
        data.extend_from_slice(&table[t - 1]);
    }
    Tensor::matrix(steps_per_row.len(), dim, data)
}

#[derive(Clone, Debug, PartialEq)]
struct Linear {
    weight: String,
    bias: String,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn new(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            fan_in,
            fan_out,
        }
    }

    fn init(&self, rng: &mut LabRng, zero: bool, store: &mut ParamStore) {
        let bound = (6.0 / self.fan_in as f64).sqrt();
        let n = self.fan_in * self.fan_out;
        let w = if zero {
            vec![0.0; n]
        } else {
            (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect()
        };
        store.insert(self.weight.clone(), Tensor::from_parts(vec![self.fan_in, self.fan_out], w));
        store.insert(self.bias.clone(), Tensor::zeros(&[self.fan_out]));
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.var(&self.weight)?)?;
        g.add_row(h, p.var(&self.bias)?)
    }
}

fn build_trunk(prefix: &str, input: usize, hidden: &[usize]) -> Vec<Linear> {
    let mut layers = Vec::with_capacity(hidden.len());
    let mut fan_in = input;
    for (i, &w) in hidden.iter().enumerate() {
        layers.push(Linear::new(&format!("{prefix}.{i}"), fan_in, w));
        fan_in = w;
    }
    layers
}

fn trunk_forward(g: &mut Graph, p: &Bound, layers: &[Linear], mut x: Var, slope: f64) -> Result<Var> {
    for layer in layers {
        let h = layer.forward(g, p, x)?;
        x = g.leaky_relu(h, slope)?;
    }
    Ok(x)
}

/// `G(x_t, z, t) -> x0_hat`, input `concat(x_t, time_embed(t), z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    config: NetConfig,
    steps: usize,
    trunk: Vec<Linear>,
    out: Linear,
}

impl Denoiser {
    pub fn new(config: NetConfig, steps: usize) -> Result<Self> {
        config.validate()?;
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        let input = config.data_dim + config.time_dim + config.latent_dim;
        let trunk = build_trunk("trunk", input, &config.hidden);
        let out = Linear::new("out", *config.hidden.last().expect("validated"), config.data_dim);
        Ok(Self {
            config,
            steps,
            trunk,
            out,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn init(&self, rng: &mut LabRng, heads: HeadInit) -> ParamStore {
        let mut store = ParamStore::new();
        for layer in &self.trunk {
            layer.init(rng, false, &mut store);
        }
        self.out.init(rng, heads != HeadInit::Random, &mut store);
        store
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x_t: Var, z: Var, steps: &[usize]) -> Result<Var> {
        let c = &self.config;
        let rows = g.value(x_t).rows();
        let x_shape = g.value(x_t).shape().to_vec();
        if x_shape != [steps.len(), c.data_dim] {
            return Err(Error::ShapeMismatch {
                op: "denoiser",
                left: x_shape,
                right: vec![steps.len(), c.data_dim],
            });
        }
        let z_shape = g.value(z).shape().to_vec();
        if z_shape != [rows, c.latent_dim] {
            return Err(Error::ShapeMismatch {
                op: "denoiser latent",
                left: z_shape,
                right: vec![rows, c.latent_dim],
            });
        }
        let temb = g.constant(time_embed_rows(steps, self.steps, c.time_dim)?);
        let input = if c.latent_dim == 0 {
            g.concat(&[x_t, temb])?
        } else {
            g.concat(&[x_t, temb, z])?
        };
        let h = trunk_forward(g, p, &self.trunk, input, c.leaky_slope)?;
        self.out.forward(g, p, h)
    }

    /// Gradient-free prediction on plain tensors.
    pub fn predict(&self, params: &ParamStore, x_t: &Tensor, z: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, params, false);
        let x = g.constant(x_t.clone());
        let z = g.constant(z.clone());
        let out = self.forward(&mut g, &p, x, z, steps)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Input `concat(x, time_embed)`.
    Marginal,
    /// Input `concat(x_{t-1}, x_t, time_embed)`.
    Joint,
}

/// Logit, denoising reconstruction and regression outputs of one trunk pass.
#[derive(Clone, Copy, Debug)]
pub struct CriticOut {
    pub adv: Var,
    pub denoise: Var,
    pub cpsi: Var,
}

/// Shared-trunk critic with an adversarial logit head, a denoising head used
/// by the discriminator regularizer, and the regression head that estimates
/// the generator's forward-diffusion conditional.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    config: NetConfig,
    mode: CriticMode,
    steps: usize,
    trunk: Vec<Linear>,
    adv: Linear,
    denoise: Linear,
    cpsi: Linear,
}

impl Critic {
    pub fn new(config: NetConfig, mode: CriticMode, steps: usize) -> Result<Self> {
        config.validate()?;
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        let arity = match mode {
            CriticMode::Marginal => 1,
            CriticMode::Joint => 2,
        };
        let input = arity * config.data_dim + config.time_dim;
        let trunk = build_trunk("trunk", input, &config.hidden);
        let width = *config.hidden.last().expect("validated");
        Ok(Self {
            adv: Linear::new("head.adv", width, 1),
            denoise: Linear::new("head.denoise", width, config.data_dim),
            cpsi: Linear::new("head.cpsi", width, config.data_dim),
            config,
            mode,
            steps,
            trunk,
        })
    }

    pub fn mode(&self) -> CriticMode {
        self.mode
    }

    pub fn init(&self, rng: &mut LabRng, heads: HeadInit) -> ParamStore {
        let mut store = ParamStore::new();
        for layer in &self.trunk {
            layer.init(rng, false, &mut store);
        }
        self.adv.init(rng, heads == HeadInit::Zero, &mut store);
        self.denoise.init(rng, heads != HeadInit::Random, &mut store);
        self.cpsi.init(rng, heads != HeadInit::Random, &mut store);
        store
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, cond: Option<Var>, steps: &[usize]) -> Result<CriticOut> {
        let c = &self.config;
        let x_shape = g.value(x).shape().to_vec();
        if x_shape != [steps.len(), c.data_dim] {
            return Err(Error::ShapeMismatch {
                op: "critic",
                left: x_shape,
                right: vec![steps.len(), c.data_dim],
            });
        }
        let temb = g.constant(time_embed_rows(steps, self.steps, c.time_dim)?);
        let input = match (self.mode, cond) {
            (CriticMode::Marginal, None) => g.concat(&[x, temb])?,
            (CriticMode::Joint, Some(x_t)) => {
                g.value(x).expect_same_shape(g.value(x_t), "critic joint pair")?;
                g.concat(&[x, x_t, temb])?
            }
            (CriticMode::Marginal, Some(_)) => {
                return Err(Error::InvalidArgument("marginal critic takes no conditioning input".into()))
            }
            (CriticMode::Joint, None) => {
                return Err(Error::InvalidArgument("joint critic needs the x_t input".into()))
            }
        };
        let h = trunk_forward(g, p, &self.trunk, input, c.leaky_slope)?;
        Ok(CriticOut {
            adv: self.adv.forward(g, p, h)?,
            denoise: self.denoise.forward(g, p, h)?,
            cpsi: self.cpsi.forward(g, p, h)?,
        })
    }
}
