//! Central finite-difference verification of [`Graph::backward`].

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor of the relative error; keeps round-off in near-zero
/// gradients (about `1e-16·|f|/h`) from dominating.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(leaf, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Elements re-checked at smaller steps because the first difference disagreed.
    pub refined: usize,
}

/// Errors above this trigger differences at `h/10` and `h/100`; a ReLU kink
/// inside `[x − h, x + h]` is rarely also inside the narrower windows. A
/// scalar bias feeding many ReLUs can need the smallest one.
const REFINE_ABOVE: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of every element of every leaf against
/// `(f(x+h) − f(x−h)) / 2h`, retrying disagreeing elements at `h/10` and
/// `h/100` and keeping the best agreement.
/// `build` must return a scalar.
pub fn check_gradients<F>(leaves: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut values = leaves.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        refined: 0,
    };
    let central = |values: &mut Vec<Tensor>, li: usize, e: usize, h: f64| -> Result<f64> {
        let x0 = values[li].data()[e];
        values[li].data_mut()[e] = x0 + h;
        let fp = eval(values)?;
        values[li].data_mut()[e] = x0 - h;
        let fm = eval(values)?;
        values[li].data_mut()[e] = x0;
        Ok((fp - fm) / (2.0 * h))
    };
    for li in 0..leaves.len() {
        for e in 0..leaves[li].len() {
            let a = analytic[li][e];
            let mut err = rel_error(a, central(&mut values, li, e, h)?);
            if err > REFINE_ABOVE {
                report.refined += 1;
                for div in [10.0, 100.0] {
                    err = err.min(rel_error(a, central(&mut values, li, e, h / div)?));
                    if err <= REFINE_ABOVE {
                        break;
                    }
                }
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (li, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
