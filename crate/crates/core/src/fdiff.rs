//! Central finite-difference utilities. These are the independent oracles the
//! analytic gradients, Jacobians and Hessian traces are checked against.

use crate::error::{Error, Result};

/// Step size rule shared by the Jacobian/Hessian oracles: absolute near the
/// origin, relative for large arguments.
pub fn fd_step(x: &[f64]) -> f64 {
    let inf = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    1e-4 * inf.max(1.0)
}

/// Central differences (f(a + h e_k) - f(a - h e_k)) / (2h) per dimension.
pub fn finite_diff_grad<F>(f: F, a: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(a.len());
    let mut x = a.to_vec();
    for k in 0..a.len() {
        x[k] = a[k] + h;
        let plus = f(&x);
        x[k] = a[k] - h;
        let minus = f(&x);
        x[k] = a[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "f non-finite near coordinate {k}: f+ = {plus}, f- = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector field, column k = dF/dx_k.
/// Returned row-major as rows[i][k] = dF_i/dx_k.
pub fn finite_diff_jacobian<F>(f: F, a: &[f64], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = a.len();
    let probe = f(a);
    let out = probe.len();
    let mut jac = vec![vec![0.0; n]; out];
    let mut x = a.to_vec();
    for k in 0..n {
        x[k] = a[k] + h;
        let plus = f(&x);
        x[k] = a[k] - h;
        let minus = f(&x);
        x[k] = a[k];
        for i in 0..out {
            let v = (plus[i] - minus[i]) / (2.0 * h);
            if !v.is_finite() {
                return Err(Error::OracleFailure(format!(
                    "jacobian entry ({i}, {k}) non-finite"
                )));
            }
            jac[i][k] = v;
        }
    }
    Ok(jac)
}

/// Trace of the Jacobian of `f` (for gradient fields: the Hessian trace).
pub fn finite_diff_jacobian_trace<F>(f: F, a: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut trace = 0.0;
    let mut x = a.to_vec();
    for k in 0..a.len() {
        x[k] = a[k] + h;
        let plus = f(&x)[k];
        x[k] = a[k] - h;
        let minus = f(&x)[k];
        x[k] = a[k];
        let v = (plus - minus) / (2.0 * h);
        if !v.is_finite() {
            return Err(Error::OracleFailure(format!("trace term {k} non-finite")));
        }
        trace += v;
    }
    Ok(trace)
}
