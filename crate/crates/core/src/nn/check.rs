//! Central finite-difference gradient checks.

use super::{Mlp, Tensor};
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; below it the error is absolute.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Central differences `(f(v + h e_i) - f(v - h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut v = at.to_vec();
    (0..v.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FdReport {
    /// Max relative error per parameter entry, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// Compares analytic gradients of `sum(net(x))` against central differences.
/// Passes when every relative error is strictly below `tol`.
pub fn finite_diff_check(net: &Mlp, x: &Tensor, h: f64, tol: f64) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (y, trace) = net.forward(x)?;
    let upstream = Tensor::filled(y.shape().to_vec(), 1.0);
    let (grads, dx) = net.backward(&trace, &upstream)?;

    let objective = |n: &Mlp, input: &Tensor| -> f64 {
        n.eval(input).map(|o| o.data().iter().sum()).unwrap_or(f64::NAN)
    };

    let mut probe = net.clone();
    let base = net.params().flatten();
    let numeric = central_difference(
        |v| {
            probe.params_mut().unflatten(v).expect("same layout");
            objective(&probe, x)
        },
        &base,
        h,
    );

    let mut per_param = Vec::new();
    let mut offset = 0;
    for (name, g) in grads.iter() {
        let n = g.len();
        per_param.push((
            name.to_string(),
            max_relative_error(g.data(), &numeric[offset..offset + n]),
        ));
        offset += n;
    }
    let max_param_error = per_param.iter().map(|p| p.1).fold(0.0, f64::max);

    let numeric_x = central_difference(
        |v| {
            let xi = Tensor::from_parts_unchecked(x.shape().to_vec(), v.to_vec()).expect("shape");
            objective(net, &xi)
        },
        x.data(),
        h,
    );
    let max_input_error = max_relative_error(dx.data(), &numeric_x);
    let passed = max_param_error < tol && max_input_error < tol;
    Ok(FdReport {
        per_param,
        max_param_error,
        max_input_error,
        passed,
    })
}
