//! Exact divergences between finite distributions, and a checker for the
//! joint-JSD bound built from a marginal JSD and a conditional KL.
//!
//! Logarithms are natural. Integrals over the support use the counting
//! measure, so the bound's constants are `c1 = nx / 2` and `c2 = 1 / 2`, and
//! conditional quantities are unweighted sums over `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::LabRng;

/// Violations smaller than this are treated as rounding.
pub const SLACK_TOLERANCE: f64 = 1e-12;

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "divergence",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    Ok(())
}

/// `½ Σ |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ p ln(p / q)` with `0 ln 0 = 0`. Errors where `q = 0 < p`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let mut total = 0.0;
    for (index, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::InfiniteKl { index, p: a });
        }
        total += a * (a / b).ln();
    }
    // Rounding can leave a tiny negative sum for near-identical inputs.
    Ok(total.max(0.0))
}

pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl(p, &m)? + 0.5 * kl(q, &m)?)
}

/// Joint table over `nx × ny` cells, row-major in `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    nx: usize,
    ny: usize,
    p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conditional {
    /// `nx` rows of `P(y | x)`.
    pub rows: Vec<Vec<f64>>,
    /// Rows whose marginal mass was zero and were set uniform.
    pub uniform_rows: Vec<usize>,
}

impl DiscreteJoint {
    pub fn new(nx: usize, ny: usize, p: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!("support must be non-empty, got {nx}x{ny}")));
        }
        if p.len() != nx * ny {
            return Err(Error::ShapeMismatch {
                op: "discrete_joint",
                left: vec![nx, ny],
                right: vec![p.len()],
            });
        }
        if let Some(bad) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("probabilities must be finite and >= 0, got {bad}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { nx, ny, p })
    }

    /// `P_X ⊗ P_Y`.
    pub fn product(px: &[f64], py: &[f64]) -> Result<Self> {
        let p = px.iter().flat_map(|a| py.iter().map(move |b| a * b)).collect();
        Self::new(px.len(), py.len(), p)
    }

    /// Builds `P_X(x) · P(y | x)`.
    pub fn from_factors(px: &[f64], cond: &[Vec<f64>]) -> Result<Self> {
        if cond.len() != px.len() || cond.is_empty() {
            return Err(Error::InvalidArgument("one conditional row per x value required".into()));
        }
        let ny = cond[0].len();
        let mut p = Vec::with_capacity(px.len() * ny);
        for (a, row) in px.iter().zip(cond) {
            if row.len() != ny {
                return Err(Error::InvalidArgument("conditional rows differ in length".into()));
            }
            p.extend(row.iter().map(|b| a * b));
        }
        // Products of normalized factors can drift past the 1e-12 sum check.
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        Self::new(px.len(), ny, p)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn table(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.ny + y]
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.p.chunks(self.ny).map(|r| r.iter().sum()).collect()
    }

    pub fn conditional_y_given_x(&self) -> Conditional {
        let mut rows = Vec::with_capacity(self.nx);
        let mut uniform_rows = Vec::new();
        for (x, row) in self.p.chunks(self.ny).enumerate() {
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                rows.push(row.iter().map(|v| v / mass).collect());
            } else {
                uniform_rows.push(x);
                rows.push(vec![1.0 / self.ny as f64; self.ny]);
            }
        }
        Conditional { rows, uniform_rows }
    }
}

/// Dirichlet(1, …, 1) over all `nx · ny` cells.
pub fn random_joint(nx: usize, ny: usize, rng: &mut LabRng) -> Result<DiscreteJoint> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("support must be non-empty, got {nx}x{ny}")));
    }
    let mut p: Vec<f64> = (0..nx * ny).map(|_| rng.exponential()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    DiscreteJoint::new(nx, ny, p)
}

/// One inequality of the chain: `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: rhs - lhs >= -SLACK_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub nx: usize,
    pub ny: usize,
    pub measure: String,
    pub c1: f64,
    pub c2: f64,
    pub lhs_jsd_joint: f64,
    pub jsd_marginal: f64,
    /// `Σ_x KL(P(·|x) ‖ Q(·|x))`; absent when infinite.
    pub kl_conditional: Option<f64>,
    pub rhs_total: Option<f64>,
    pub tv_joint: f64,
    pub tv_marginal: f64,
    /// `½ Σ_x Σ_y |Q(y|x) - P(y|x)|`.
    pub tv_conditional: f64,
    /// `tv(Q_XY, Q_{Y|X} P_X)`, first leg of the triangle split.
    pub tv_q_to_mixed: f64,
    /// `tv(Q_{Y|X} P_X, P_XY)`, second leg.
    pub tv_mixed_to_p: f64,
    pub triangle: Inequality,
    /// `tv_q_to_mixed ≤ c1 · tv_marginal`.
    pub marginal_step: Inequality,
    /// `tv_mixed_to_p ≤ c2 · tv_conditional`.
    pub conditional_step: Inequality,
    /// `tv_joint ≤ c1 · tv_marginal + c2 · tv_conditional`.
    pub tv_combined: Inequality,
    /// Pinsker on the joints, the marginals and every conditional row.
    pub pinsker_holds: bool,
    /// `½ tv² ≤ jsd ≤ 2 tv` on the joints and the marginals.
    pub sandwich_holds: bool,
    /// Rows of either conditional filled in as uniform.
    pub uniform_rows_q: Vec<usize>,
    pub uniform_rows_p: Vec<usize>,
    /// The final bound; `None` when the conditional KL is infinite.
    pub holds: Option<bool>,
    pub slack: Option<f64>,
}

fn pinsker(p: &[f64], q: &[f64]) -> Result<bool> {
    match kl(p, q) {
        Ok(k) => Ok((k / 2.0).sqrt() - tv_distance(p, q)? >= -SLACK_TOLERANCE),
        // Infinite KL bounds nothing.
        Err(Error::InfiniteKl { .. }) => Ok(true),
        Err(e) => Err(e),
    }
}

fn sandwich(p: &[f64], q: &[f64]) -> Result<bool> {
    let tv = tv_distance(p, q)?;
    let j = jsd(p, q)?;
    Ok(j - 0.5 * tv * tv >= -SLACK_TOLERANCE && 2.0 * tv - j >= -SLACK_TOLERANCE)
}

/// Evaluates the bound `JSD(Q_XY, P_XY) ≤ 2c1 √(2 JSD(Q_X, P_X)) + 2c2 √(2 KL_cond)`
/// and each step of its derivation.
pub fn verify_theorem(q: &DiscreteJoint, p: &DiscreteJoint) -> Result<TheoremReport> {
    if q.nx != p.nx || q.ny != p.ny {
        return Err(Error::ShapeMismatch {
            op: "verify_theorem",
            left: vec![q.nx, q.ny],
            right: vec![p.nx, p.ny],
        });
    }
    let (nx, ny) = (q.nx, q.ny);
    let c1 = nx as f64 / 2.0;
    let c2 = 0.5;

    let qx = q.marginal_x();
    let px = p.marginal_x();
    let qc = q.conditional_y_given_x();
    let pc = p.conditional_y_given_x();

    let mut mixed = Vec::with_capacity(nx * ny);
    for (a, row) in px.iter().zip(&qc.rows) {
        mixed.extend(row.iter().map(|b| a * b));
    }

    let lhs = jsd(q.table(), p.table())?;
    let jsd_marginal = jsd(&qx, &px)?;
    let tv_joint = tv_distance(q.table(), p.table())?;
    let tv_marginal = tv_distance(&qx, &px)?;
    let mut tv_conditional = 0.0;
    let mut kl_conditional = Some(0.0);
    let mut pinsker_holds = pinsker(p.table(), q.table())? && pinsker(&px, &qx)?;
    for (pr, qr) in pc.rows.iter().zip(&qc.rows) {
        tv_conditional += tv_distance(qr, pr)?;
        pinsker_holds &= pinsker(pr, qr)?;
        kl_conditional = match (kl_conditional, kl(pr, qr)) {
            (Some(acc), Ok(k)) => Some(acc + k),
            (_, Err(Error::InfiniteKl { .. })) | (None, Ok(_)) => None,
            (_, Err(e)) => return Err(e),
        };
    }
    let tv_q_to_mixed = tv_distance(q.table(), &mixed)?;
    let tv_mixed_to_p = tv_distance(&mixed, p.table())?;
    let sandwich_holds = sandwich(q.table(), p.table())? && sandwich(&qx, &px)?;

    let rhs_total = kl_conditional.map(|k| 2.0 * c1 * (2.0 * jsd_marginal).sqrt() + 2.0 * c2 * (2.0 * k).sqrt());
    let slack = rhs_total.map(|r| r - lhs);
    Ok(TheoremReport {
        nx,
        ny,
        measure: "counting".into(),
        c1,
        c2,
        lhs_jsd_joint: lhs,
        jsd_marginal,
        kl_conditional,
        rhs_total,
        tv_joint,
        tv_marginal,
        tv_conditional,
        tv_q_to_mixed,
        tv_mixed_to_p,
        triangle: Inequality::new(tv_joint, tv_q_to_mixed + tv_mixed_to_p),
        marginal_step: Inequality::new(tv_q_to_mixed, c1 * tv_marginal),
        conditional_step: Inequality::new(tv_mixed_to_p, c2 * tv_conditional),
        tv_combined: Inequality::new(tv_joint, c1 * tv_marginal + c2 * tv_conditional),
        pinsker_holds,
        sandwich_holds,
        uniform_rows_q: qc.uniform_rows,
        uniform_rows_p: pc.uniform_rows,
        holds: slack.map(|s| s >= -SLACK_TOLERANCE),
        slack,
    })
}

/// Aggregate over many reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    /// Trials where the final bound was evaluated and failed.
    pub violations: usize,
    /// Trials with an infinite conditional KL.
    pub not_applicable: usize,
    pub triangle_failures: usize,
    pub pinsker_failures: usize,
    pub sandwich_failures: usize,
    pub marginal_step_failures: usize,
    pub conditional_step_failures: usize,
    pub min_slack: Option<f64>,
}

impl TrialSummary {
    pub fn from_reports(reports: &[TheoremReport]) -> Self {
        let count = |f: &dyn Fn(&TheoremReport) -> bool| reports.iter().filter(|r| f(r)).count();
        Self {
            trials: reports.len(),
            violations: count(&|r| r.holds == Some(false)),
            not_applicable: count(&|r| r.holds.is_none()),
            triangle_failures: count(&|r| !r.triangle.holds),
            pinsker_failures: count(&|r| !r.pinsker_holds),
            sandwich_failures: count(&|r| !r.sandwich_holds),
            marginal_step_failures: count(&|r| !r.marginal_step.holds),
            conditional_step_failures: count(&|r| !r.conditional_step.holds),
            min_slack: reports.iter().filter_map(|r| r.slack).reduce(f64::min),
        }
    }
}

/// `trials` independent pairs with supports drawn uniformly from
/// `1..=max_support` in each coordinate. Trial `i` uses its own stream, so
/// the result does not depend on evaluation order.
pub fn run_trials(trials: usize, max_support: usize, seed: u64) -> Result<Vec<TheoremReport>> {
    if max_support == 0 {
        return Err(Error::InvalidArgument("max support must be >= 1".into()));
    }
    (0..trials)
        .map(|i| {
            let mut rng = LabRng::derived(seed, i as u64);
            let nx = 1 + rng.below(max_support);
            let ny = 1 + rng.below(max_support);
            let q = random_joint(nx, ny, &mut rng)?;
            let p = random_joint(nx, ny, &mut rng)?;
            verify_theorem(&q, &p)
        })
        .collect()
}
