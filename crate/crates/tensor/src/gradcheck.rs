//! Central finite-difference verification of tape gradients.
//!
//! The relative error of a coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! Non-smooth points are detected by comparing one-sided slopes at two step
//! sizes: at a kink their gap stays constant as the step halves, while for a
//! smooth function it shrinks linearly.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Per-parameter cap on checked coordinates, evenly strided; `None` checks all.
    pub per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-8,
            per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Accumulator {
    report: GradCheckReport,
    opts: GradCheckOptions,
}

impl Accumulator {
    fn new(opts: GradCheckOptions) -> Self {
        Self {
            report: GradCheckReport {
                max_rel_error: 0.0,
                worst_coordinate: 0,
                analytic: 0.0,
                numeric: 0.0,
                coordinates: 0,
            },
            opts,
        }
    }

    /// `eval(delta)` returns the function value with the coordinate shifted by `delta`.
    fn coordinate(
        &mut self,
        idx: usize,
        analytic: f64,
        mut eval: impl FnMut(f64) -> Result<f64>,
    ) -> Result<()> {
        let h = self.opts.step;
        let f0 = eval(0.0)?;
        let fp = eval(h)?;
        let fm = eval(-h)?;
        let fp2 = eval(h / 2.0)?;
        let fm2 = eval(-h / 2.0)?;
        for (v, what) in [
            (f0, "f(x)"),
            (fp, "f(x+h)"),
            (fm, "f(x-h)"),
            (fp2, "f(x+h/2)"),
            (fm2, "f(x-h/2)"),
            (analytic, "analytic gradient"),
        ] {
            if !v.is_finite() {
                return Err(TensorError::NonFinite {
                    coordinate: idx,
                    detail: format!("{what} = {v}"),
                });
            }
        }
        let numeric = (fp - fm) / (2.0 * h);
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        let gap = fwd - bwd;
        let gap_half = (fp2 - f0) / (h / 2.0) - (f0 - fm2) / (h / 2.0);
        let noise_floor = 1e-6 * numeric.abs().max(1.0);
        if gap.abs() > noise_floor && gap_half.abs() > 0.75 * gap.abs() {
            return Err(TensorError::NonSmooth {
                coordinate: idx,
                forward: fwd,
                backward: bwd,
            });
        }
        let err = relative_error(analytic, numeric, self.opts.floor);
        let r = &mut self.report;
        r.coordinates += 1;
        if err > r.max_rel_error || r.coordinates == 1 {
            r.max_rel_error = err;
            r.worst_coordinate = idx;
            r.analytic = analytic;
            r.numeric = numeric;
        }
        Ok(())
    }
}

/// Checks the gradient of a scalar function of one input tensor.
pub fn grad_check<Fun>(
    point: &Tensor<f64>,
    opts: GradCheckOptions,
    f: Fun,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    input_check(None, point, opts, f)
}

/// Like [`grad_check`], on a tape that also carries the (fixed) parameters of `store`.
pub fn grad_check_with_params<Fun>(
    store: &ParamStore<f64>,
    point: &Tensor<f64>,
    opts: GradCheckOptions,
    f: Fun,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    input_check(Some(store), point, opts, f)
}

fn input_check<Fun>(
    store: Option<&ParamStore<f64>>,
    point: &Tensor<f64>,
    opts: GradCheckOptions,
    f: Fun,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let run = |t: Tensor<f64>, with_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = match store {
            Some(s) => Tape::with_params(s),
            None => Tape::new(),
        };
        let x = tape.input(t);
        let y = f(&mut tape, x)?;
        let value = tape.scalar(y);
        if !with_grad {
            return Ok((value, None));
        }
        tape.backward(y)?;
        let g = tape
            .grad(x)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(x).len()]);
        Ok((value, Some(g)))
    };
    let (_, grad) = run(point.clone(), true)?;
    let grad = grad.expect("gradient requested");
    let mut acc = Accumulator::new(opts);
    for (i, &analytic) in grad.iter().enumerate() {
        acc.coordinate(i, analytic, |delta| {
            let mut p = point.clone();
            p.data_mut()[i] += delta;
            Ok(run(p, false)?.0)
        })?;
    }
    Ok(acc.report)
}

/// Checks the gradient of a scalar function with respect to every parameter
/// coordinate in `store`. Coordinates are numbered in store order.
pub fn grad_check_params<Fun>(
    store: &ParamStore<f64>,
    opts: GradCheckOptions,
    f: Fun,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let y = f(&mut tape)?;
        tape.backward(y)?;
        tape.param_gradients()
    };
    let mut work = store.clone();
    let mut acc = Accumulator::new(opts);
    let mut flat = 0;
    for pi in 0..store.len() {
        let id = crate::params::ParamId(pi);
        let n = store.get(id).value.numel();
        let stride = match opts.per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for ci in (0..n).step_by(stride) {
            let base = store.get(id).value.data()[ci];
            let a = analytic.values[pi][ci];
            acc.coordinate(flat + ci, a, |delta| {
                work.get_mut(id).value.data_mut()[ci] = base + delta;
                let mut tape = Tape::with_params(&work);
                let y = f(&mut tape)?;
                Ok(tape.scalar(y))
            })?;
            work.get_mut(id).value.data_mut()[ci] = base;
        }
        flat += n;
    }
    Ok(acc.report)
}
