//! Central-difference gradient checking.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Finite-difference formula used for the numeric gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h²).
    #[default]
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h⁴). Lets a
    /// larger `h` keep roundoff down on losses with large values.
    FivePoint,
}

/// Below this magnitude the absolute error is compared instead.
pub const ABS_FALLBACK: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst component.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub pass: bool,
    /// Perturbed evaluations that switched a leaky-rectifier input to the
    /// other side of its kink. Nonzero means the central difference straddled
    /// a non-differentiable point and the comparison is not meaningful there.
    pub kink_crossings: usize,
}

/// Checks a graph-built scalar function at `points`. The builder receives one
/// gradient-tracking leaf per point.
pub fn grad_check<F>(build: F, points: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<Eval> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        Ok((g.scalar(loss), vars.iter().map(|&v| g.grad(v)).collect(), g.kink_pattern()))
    };
    run(eval, points, h, tol, Stencil::Central)
}

type Eval = (f64, Vec<Tensor>, Vec<bool>);

/// [`grad_check`] over every tensor of several parameter stores. The builder
/// receives one [`Bound`] per store, all tracking gradients.
pub fn grad_check_stores<F>(
    build: F,
    stores: &[ParamStore],
    h: f64,
    tol: f64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Bound]) -> Result<Var>,
{
    let layout: Vec<Vec<String>> = stores.iter().map(|s| s.names().cloned().collect()).collect();
    let points: Vec<Tensor> = stores
        .iter()
        .flat_map(|s| s.iter().map(|(_, t)| t.clone()))
        .collect();
    let eval = |xs: &[Tensor]| -> Result<Eval> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let mut it = vars.iter();
        let bounds: Vec<Bound> = layout
            .iter()
            .map(|names| Bound::from_vars(names.iter().map(|n| (n.clone(), *it.next().expect("layout"))).collect()))
            .collect();
        let loss = build(&mut g, &bounds)?;
        g.backward(loss)?;
        Ok((g.scalar(loss), vars.iter().map(|&v| g.grad(v)).collect(), g.kink_pattern()))
    };
    run(eval, &points, h, tol, stencil)
}

/// Checks any `(value, gradient)` oracle against central differences of its
/// own value.
pub fn grad_check_with<F>(value_and_grad: F, points: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    run(
        |xs| value_and_grad(xs).map(|(v, g)| (v, g, Vec::new())),
        points,
        h,
        tol,
        Stencil::Central,
    )
}

fn run<F>(eval: F, points: &[Tensor], h: f64, tol: f64, stencil: Stencil) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Eval>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let (_, analytic, pattern) = eval(points)?;
    let mut kink_crossings = 0;
    let mut value_at = |xs: &[Tensor]| -> Result<f64> {
        let (v, _, p) = eval(xs)?;
        if p != pattern {
            kink_crossings += 1;
        }
        Ok(v)
    };
    if analytic.len() != points.len() {
        return Err(Error::InvalidArgument("gradient count differs from input count".into()));
    }
    let mut numeric = Vec::with_capacity(points.len());
    let mut max_rel_err = 0.0f64;
    let mut worst = (0, 0);
    let mut shifted = points.to_vec();
    for (input, point) in points.iter().enumerate() {
        analytic[input].expect_same_shape(point, "grad_check")?;
        let mut num = Tensor::zeros(point.shape());
        for index in 0..point.len() {
            let base = point.data()[index];
            shifted[input].data_mut()[index] = base + h;
            let mut at = |offset: f64| -> Result<f64> {
                shifted[input].data_mut()[index] = base + offset;
                value_at(&shifted)
            };
            let n = match stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
                }
            };
            shifted[input].data_mut()[index] = base;

            let a = analytic[input].data()[index];
            if !n.is_finite() {
                return Err(Error::NonFiniteGradient {
                    which: "numeric",
                    input,
                    index,
                });
            }
            if !a.is_finite() {
                return Err(Error::NonFiniteGradient {
                    which: "analytic",
                    input,
                    index,
                });
            }
            num.data_mut()[index] = n;
            let err = relative_error(a, n);
            if err > max_rel_err {
                max_rel_err = err;
                worst = (input, index);
            }
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        analytic,
        numeric,
        pass: max_rel_err <= tol,
        kink_crossings,
    })
}

/// `|a - n| / max(|a|, |n|)`, or the absolute error when both are tiny.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FALLBACK {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_passes() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let report = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[x],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.analytic[0].data(), &[6.0]);
        assert!((report.numeric[0].data()[0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn sign_flipped_backward_fails() {
        let x = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let wrong = |xs: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let v: f64 = xs[0].data().iter().map(|a| a * a).sum();
            Ok((v, vec![xs[0].map(|a| -2.0 * a)]))
        };
        let report = grad_check_with(wrong, &[x], 1e-4, 1e-5).unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_err > 1.0);
    }

    #[test]
    fn non_finite_numeric_gradient_is_an_error() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let bad = |xs: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let v = xs[0].data()[0];
            let value = if v > 1.0 { f64::INFINITY } else { v };
            Ok((value, vec![Tensor::ones(&[1])]))
        };
        assert!(matches!(
            grad_check_with(bad, &[x], 1e-4, 1e-5),
            Err(Error::NonFiniteGradient { which: "numeric", .. })
        ));
    }

    #[test]
    fn straddling_a_kink_is_reported() {
        let x = Tensor::new(vec![2], vec![2e-5, 1.0]).unwrap();
        let report = grad_check(
            |g, v| {
                let r = g.leaky_relu(v[0], 0.2)?;
                g.sum(r)
            },
            &[x],
            1e-4,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.kink_crossings, 1);
        assert!(!report.pass);
    }

    #[test]
    fn tiny_gradients_use_absolute_error() {
        assert_eq!(relative_error(1e-12, 2e-12), 1e-12);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
