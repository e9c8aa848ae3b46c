//! Randomized gradient-check harness shared by the integration tests.
#![allow(dead_code)]

use siddm_core::autodiff::{Graph, Var};
use siddm_core::diffusion::NoiseSchedule;
use siddm_core::gradcheck::{grad_check, grad_check_stores, GradCheckReport, Stencil};
use siddm_core::networks::{Critic, CriticMode, Denoiser, HeadInit, NetConfig};
use siddm_core::objectives::{
    ddgan_d_loss, ddgan_g_loss, ddpm_loss, make_batch_context, siddm_c_loss, siddm_d_loss, siddm_g_loss, siddm_g_loss_with, AdvMode, AfdTarget,
    AfdWeight, Nets,
};
use siddm_core::params::{Bound, ParamStore};
use siddm_core::rng::LabRng;
use siddm_core::{Result, Tensor};

pub const H: f64 = 1e-4;
/// Whole-network losses are checked with the five-point stencil: at `H` the
/// central difference's truncation error, and at smaller steps its roundoff,
/// both reach the tolerance on small gradient components.
pub const H_OBJECTIVE: f64 = 2e-4;
pub const TOL: f64 = 1e-5;

#[derive(Debug)]
pub struct Summary {
    pub name: &'static str,
    pub passed: usize,
    pub trials: usize,
    pub worst: f64,
    /// Instances redrawn because a finite-difference probe crossed a kink.
    pub redrawn: usize,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

/// Runs `trials` checks, redrawing any instance whose probes straddle a
/// leaky-rectifier kink (at most `trials` redraws).
fn collect(name: &'static str, trials: usize, mut check: impl FnMut(u64) -> GradCheckReport) -> Summary {
    let mut s = Summary {
        name,
        passed: 0,
        trials,
        worst: 0.0,
        redrawn: 0,
    };
    let mut seed = 0u64;
    let mut done = 0;
    while done < trials {
        let report = check(seed);
        seed += 1;
        if report.kink_crossings > 0 && s.redrawn < trials {
            s.redrawn += 1;
            continue;
        }
        done += 1;
        s.worst = s.worst.max(report.max_rel_err);
        if report.pass {
            s.passed += 1;
        } else if std::env::var_os("GRADCHECK_DEBUG").is_some() {
            let (i, j) = report.worst;
            eprintln!(
                "{name} seed {} err {:e} analytic {:e} numeric {:e}",
                seed - 1,
                report.max_rel_err,
                report.analytic[i].data()[j],
                report.numeric[i].data()[j]
            );
        }
    }
    s
}

fn weighted_sum(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(out, r)?;
    g.sum(p)
}

type Builder = fn(&mut Graph, &[Var]) -> Result<Var>;

/// `(name, input shapes, positive inputs, op)`; the op output is contracted
/// with a random tensor of the same shape.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, bool, Builder)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], false, |g, v| g.matmul(v[0], v[1])),
        ("add", vec![vec![3, 2], vec![3, 2]], false, |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 2], vec![3, 2]], false, |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![3, 2], vec![3, 2]], false, |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![3, 2]], false, |g, v| g.scale(v[0], -1.7)),
        ("neg", vec![vec![3, 2]], false, |g, v| g.neg(v[0])),
        ("add_row", vec![vec![3, 4], vec![4]], false, |g, v| g.add_row(v[0], v[1])),
        ("leaky_relu", vec![vec![3, 4]], false, |g, v| g.leaky_relu(v[0], 0.2)),
        ("sigmoid", vec![vec![3, 4]], false, |g, v| g.sigmoid(v[0])),
        ("ln", vec![vec![3, 4]], true, |g, v| g.ln(v[0])),
        ("softplus", vec![vec![3, 4]], false, |g, v| g.softplus(v[0])),
        ("sum", vec![vec![3, 4]], false, |g, v| g.sum(v[0])),
        ("mean", vec![vec![3, 4]], false, |g, v| g.mean(v[0])),
        ("row_sq_norm", vec![vec![3, 4]], false, |g, v| g.row_sq_norm(v[0])),
        ("concat", vec![vec![3, 2], vec![3, 1], vec![3, 3]], false, |g, v| {
            g.concat(&[v[0], v[1], v[2]])
        }),
    ]
}

pub fn op_gradient_checks(trials: usize) -> Vec<Summary> {
    let mut out = Vec::new();
    for (name, shapes, positive, op) in op_cases() {
        out.push(collect(name, trials, |seed| {
            let mut rng = LabRng::derived(seed, 0x6f70);
            let points: Vec<Tensor> = shapes
                .iter()
                .map(|s| {
                    let t = rng.normal_tensor(s);
                    if positive {
                        t.map(|x| 0.5 + x.abs())
                    } else {
                        t
                    }
                })
                .collect();
            // The contraction weights depend only on the output shape.
            let mut g = Graph::new();
            let vars: Vec<Var> = points.iter().map(|p| g.constant(p.clone())).collect();
            let y = op(&mut g, &vars).unwrap();
            let shape = g.value(y).shape().to_vec();
            let r = rng.normal_tensor(&shape);
            grad_check(
                |g, v| {
                    let y = op(g, v)?;
                    weighted_sum(g, y, &r)
                },
                &points,
                H,
                TOL,
            )
            .unwrap()
        }));
    }
    out.push(collect("mse_4x4", trials, |seed| {
        let mut rng = LabRng::derived(seed, 0x6d73);
        let w = rng.normal_tensor(&[4, 4]);
        let x = rng.normal_tensor(&[4, 4]);
        let y = rng.normal_tensor(&[4, 4]);
        grad_check(
            |g, v| {
                let wx = g.matmul(v[0], v[1])?;
                let t = g.constant(y.clone());
                let d = g.sub(wx, t)?;
                let sq = g.mul(d, d)?;
                g.mean(sq)
            },
            &[w, x],
            H,
            TOL,
        )
        .unwrap()
    }));
    out
}

fn tiny() -> NetConfig {
    NetConfig {
        data_dim: 2,
        latent_dim: 2,
        time_dim: 4,
        hidden: vec![8, 8],
        leaky_slope: 0.2,
    }
}

struct Instance {
    sched: NoiseSchedule,
    gen: Denoiser,
    critic: Critic,
    gp: ParamStore,
    cp: ParamStore,
    ctx: siddm_core::objectives::BatchContext,
}

impl Instance {
    fn new(seed: u64, mode: CriticMode) -> Self {
        let mut rng = LabRng::derived(seed, 0x6f62);
        let steps = 1 + rng.below(4);
        let sched = NoiseSchedule::cosine_default(steps).unwrap();
        let gen = Denoiser::new(tiny(), steps).unwrap();
        let critic = Critic::new(tiny(), mode, steps).unwrap();
        let gp = gen.init(&mut rng, HeadInit::Random);
        let cp = critic.init(&mut rng, HeadInit::Random);
        let x0 = rng.normal_tensor(&[4, 2]);
        let ctx = make_batch_context(&x0, &sched, 2, &mut rng).unwrap();
        Self {
            sched,
            gen,
            critic,
            gp,
            cp,
            ctx,
        }
    }

    fn nets(&self) -> Nets<'_> {
        Nets {
            generator: &self.gen,
            critic: &self.critic,
            sched: &self.sched,
        }
    }
}

/// Each loss is checked against the parameters it trains: critic losses over
/// the critic, generator losses over the generator. The batch and every noise
/// draw are held fixed.
pub fn objective_gradient_checks(trials: usize) -> Vec<Summary> {
    let fixed = |g: &mut Graph, s: &ParamStore| Bound::new(g, s, false);
    vec![
        collect("siddm_d_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Marginal);
            let check = |g: &mut Graph, b: &[Bound]| {
                let gb = fixed(g, &s.gp);
                Ok(siddm_d_loss(g, s.nets(), &gb, &b[0], &s.ctx, 1.0)?.total)
            };
            grad_check_stores(check, &[s.cp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
        collect("siddm_c_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Marginal);
            let check = |g: &mut Graph, b: &[Bound]| {
                let gb = fixed(g, &s.gp);
                siddm_c_loss(g, s.nets(), &gb, &b[0], &s.ctx)
            };
            grad_check_stores(check, &[s.cp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
        collect("siddm_g_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Marginal);
            let weight = [AfdWeight::Finite(1.0), AfdWeight::Finite(0.0), AfdWeight::Infinite][seed as usize % 3];
            let mode = if seed % 2 == 0 { AdvMode::NonSaturating } else { AdvMode::Saturating };
            let target = if (seed / 6) % 2 == 0 { AfdTarget::Paired } else { AfdTarget::PerSample };
            let check = |g: &mut Graph, b: &[Bound]| {
                let cb = fixed(g, &s.cp);
                Ok(siddm_g_loss_with(g, s.nets(), &b[0], &cb, &s.ctx, weight, mode, target)?.total)
            };
            grad_check_stores(check, &[s.gp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
        collect("ddgan_d_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Joint);
            let check = |g: &mut Graph, b: &[Bound]| {
                let gb = fixed(g, &s.gp);
                Ok(ddgan_d_loss(g, s.nets(), &gb, &b[0], &s.ctx)?.total)
            };
            grad_check_stores(check, &[s.cp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
        collect("ddgan_g_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Joint);
            let check = |g: &mut Graph, b: &[Bound]| {
                let cb = fixed(g, &s.cp);
                ddgan_g_loss(g, s.nets(), &b[0], &cb, &s.ctx, AdvMode::NonSaturating)
            };
            grad_check_stores(check, &[s.gp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
        collect("ddpm_loss", trials, |seed| {
            let s = Instance::new(seed, CriticMode::Marginal);
            let check = |g: &mut Graph, b: &[Bound]| ddpm_loss(g, &s.gen, &b[0], &s.ctx);
            grad_check_stores(check, &[s.gp.clone()], H_OBJECTIVE, TOL, Stencil::FivePoint).unwrap()
        }),
    ]
}

fn all_zero(p: &ParamStore) -> bool {
    p.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
}

/// Binds both parameter sets with gradients on, backpropagates each loss and
/// returns `(name, generator grads all zero, critic grads all zero)`.
pub fn detachment_matrix(seed: u64) -> Vec<(&'static str, bool, bool)> {
    let mut out = Vec::new();
    for mode in [CriticMode::Marginal, CriticMode::Joint] {
        let s = Instance::new(seed, mode);
        type Loss = fn(&mut Graph, &Instance, &Bound, &Bound) -> Result<Var>;
        let losses: Vec<(&'static str, Loss)> = match mode {
            CriticMode::Marginal => vec![
                ("siddm_d_loss", |g, s, gp, cp| Ok(siddm_d_loss(g, s.nets(), gp, cp, &s.ctx, 1.0)?.total)),
                ("siddm_c_loss", |g, s, gp, cp| siddm_c_loss(g, s.nets(), gp, cp, &s.ctx)),
                ("siddm_g_loss", |g, s, gp, cp| {
                    Ok(siddm_g_loss(g, s.nets(), gp, cp, &s.ctx, AfdWeight::Finite(1.0), AdvMode::NonSaturating)?.total)
                }),
            ],
            CriticMode::Joint => vec![
                ("ddgan_d_loss", |g, s, gp, cp| Ok(ddgan_d_loss(g, s.nets(), gp, cp, &s.ctx)?.total)),
                ("ddgan_g_loss", |g, s, gp, cp| ddgan_g_loss(g, s.nets(), gp, cp, &s.ctx, AdvMode::NonSaturating)),
            ],
        };
        for (name, loss) in losses {
            let mut g = Graph::new();
            let gp = Bound::new(&mut g, &s.gp, true);
            let cp = Bound::new(&mut g, &s.cp, true);
            let l = loss(&mut g, &s, &gp, &cp).unwrap();
            g.backward(l).unwrap();
            out.push((name, all_zero(&gp.grads(&g)), all_zero(&cp.grads(&g))));
        }
    }
    out
}

/// Whether a detachment row matches what the loss is allowed to move.
pub fn detachment_ok(name: &str, gen_zero: bool, critic_zero: bool) -> bool {
    if name.ends_with("g_loss") {
        !gen_zero && critic_zero
    } else {
        gen_zero && !critic_zero
    }
}

/// Posterior mean and variance of `x_{t-1}` given scalar `x_t` and `x0`, by
/// Bayes' rule on 201 grid points over [-4, 4]. Requires `t >= 2` so the
/// prior over `x_{t-1}` has positive variance.
pub fn grid_posterior(sched: &NoiseSchedule, t: usize, x_t: f64, x0: f64) -> (f64, f64) {
    let beta = sched.beta(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let prior_var = 1.0 - ab_prev;
    let log_w = |x: f64| {
        let lik = (x_t - (1.0 - beta).sqrt() * x).powi(2) / beta;
        let prior = (x - ab_prev.sqrt() * x0).powi(2) / prior_var;
        -0.5 * (lik + prior)
    };
    let grid: Vec<f64> = (0..201).map(|i| -4.0 + 8.0 * i as f64 / 200.0).collect();
    let peak = grid.iter().map(|&x| log_w(x)).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = grid.iter().map(|&x| (log_w(x) - peak).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean = grid.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let var = grid.iter().zip(&w).map(|(x, w)| (x - mean).powi(2) * w).sum::<f64>() / z;
    (mean, var)
}

/// Largest `(mean, variance)` gap between the closed-form posterior and the
/// grid oracle over `t in 2..=T`, for each schedule length, on a lattice of
/// `(x_t, x0)` pairs in [-1, 1]². Wider lattices put the widest posteriors
/// (sd near 1 at t = T) against the grid edge, and the truncated tails alone
/// then exceed 1e-3 in variance.
pub fn posterior_grid_errors(step_counts: &[usize]) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for &steps in step_counts {
        let sched = NoiseSchedule::cosine_default(steps).unwrap();
        for t in 2..=steps {
            for i in 0..5 {
                for j in 0..5 {
                    let x_t = -1.0 + 0.5 * i as f64;
                    let x0 = -1.0 + 0.5 * j as f64;
                    let p = siddm_core::diffusion::posterior_params(
                        &Tensor::matrix(1, 1, vec![x_t]).unwrap(),
                        &Tensor::matrix(1, 1, vec![x0]).unwrap(),
                        t,
                        &sched,
                    )
                    .unwrap();
                    let (m, v) = grid_posterior(&sched, t, x_t, x0);
                    worst.0 = worst.0.max((p.mean.data()[0] - m).abs());
                    worst.1 = worst.1.max((p.var - v).abs());
                }
            }
        }
    }
    worst
}

/// Whether the t = 1 posterior collapses exactly to `(x0, 0)`.
pub fn first_step_collapses(step_counts: &[usize]) -> bool {
    step_counts.iter().all(|&steps| {
        let sched = NoiseSchedule::cosine_default(steps).unwrap();
        let x0 = Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap();
        let x_t = Tensor::matrix(1, 2, vec![2.0, 0.5]).unwrap();
        let p = siddm_core::diffusion::posterior_params(&x_t, &x0, 1, &sched).unwrap();
        p.var == 0.0 && p.mean == x0
    })
}

/// Largest `|∏_{s<=t} (1 - β_s) - ᾱ_t|` over all t.
pub fn telescoping_error(step_counts: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for &steps in step_counts {
        let sched = NoiseSchedule::cosine_default(steps).unwrap();
        let mut prod = 1.0;
        for t in 1..=steps {
            prod *= 1.0 - sched.beta(t);
            worst = worst.max((prod - sched.alpha_bar(t)).abs());
        }
    }
    worst
}
