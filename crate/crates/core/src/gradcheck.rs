//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is an
//! oracle independent of every backward rule on the tape.

use rand::seq::index::sample;

use crate::error::Result;
use crate::rng::prng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this in both routes are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(param index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares backward gradients of `loss_fn` against central differences with
/// step `h` on up to `max_entries` randomly chosen parameter elements.
pub fn check_gradients<F>(
    params: &[Tensor],
    loss_fn: F,
    h: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut rng = prng(seed);
    let mut picks: Vec<usize> = if total <= max_entries {
        (0..total).collect()
    } else {
        sample(&mut rng, total, max_entries).into_vec()
    };
    picks.sort_unstable();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
        let l = loss_fn(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut work = params.to_vec();
    for flat in picks {
        let (mut pi, mut ei) = (0, flat);
        while ei >= params[pi].numel() {
            ei -= params[pi].numel();
            pi += 1;
        }
        let orig = work[pi].data()[ei];
        work[pi].data_mut()[ei] = orig + h;
        let up = eval(&work)?;
        work[pi].data_mut()[ei] = orig - h;
        let down = eval(&work)?;
        work[pi].data_mut()[ei] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[pi].data()[ei];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((pi, ei, a, numeric));
        }
    }
    Ok(report)
}
