//! Central finite-difference audit of jet entries.
//!
//! The scale convention: an entry passes at tolerance `rtol` when
//! `|ad - fd| <= max(rtol * max(|ad|, |fd|), atol)` with `atol = 1e-8`.
//! [`FdReport::max_rel_err`] folds the floor into the denominator, so
//! `max_rel_err <= rtol` is exactly that criterion.

use crate::error::{Error, Result};
use crate::jet::JetVal;

pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    pub ad: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

impl FdReport {
    pub fn worst(&self) -> &FdEntry {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .expect("report has entries")
    }

    pub fn passes(&self, rtol: f64) -> bool {
        self.max_rel_err <= rtol
    }
}

fn push(entries: &mut Vec<FdEntry>, name: String, ad: f64, fd: f64, rtol_floor: f64) {
    let abs_err = (ad - fd).abs();
    let scale = ad.abs().max(fd.abs()).max(rtol_floor);
    entries.push(FdEntry { name, ad, fd, abs_err, rel_err: abs_err / scale });
}

/// Compare a jet against central finite differences of `eval` at `(t, x)`.
///
/// Covers the time derivative, the spatial gradient and every Hessian entry
/// (diagonal via the three-point stencil, mixed via the four-point stencil).
/// `eps` must lie in `(0, 1e-2]`.
pub fn check_against_fd<F>(eval: F, t: f64, x: &[f64], jet: &JetVal, eps: f64) -> Result<FdReport>
where
    F: Fn(f64, &[f64]) -> f64,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Precondition(format!(
            "fd step must lie in (0, 1e-2], got {eps}"
        )));
    }
    let d = x.len();
    assert_eq!(jet.dim, d);
    // The floor folded into the relative denominator: atol / rtol with the
    // audit's canonical rtol of 1e-5.
    let rtol_floor = FD_ABS_FLOOR / 1e-5;
    let mut entries = Vec::new();

    let f0 = eval(t, x);
    push(&mut entries, "v".into(), jet.v, f0, rtol_floor);

    let fd_t = (eval(t + eps, x) - eval(t - eps, x)) / (2.0 * eps);
    push(&mut entries, "dt".into(), jet.dt, fd_t, rtol_floor);

    let mut xp = x.to_vec();
    for i in 0..d {
        xp.copy_from_slice(x);
        xp[i] = x[i] + eps;
        let fp = eval(t, &xp);
        xp[i] = x[i] - eps;
        let fm = eval(t, &xp);
        push(&mut entries, format!("dx{i}"), jet.dx(i), (fp - fm) / (2.0 * eps), rtol_floor);
        push(
            &mut entries,
            format!("dxx{i}{i}"),
            jet.dxx(i, i),
            (fp - 2.0 * f0 + fm) / (eps * eps),
            rtol_floor,
        );
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut probe = |si: f64, sj: f64| {
                xp.copy_from_slice(x);
                xp[i] = x[i] + si * eps;
                xp[j] = x[j] + sj * eps;
                eval(t, &xp)
            };
            let fd = (probe(1.0, 1.0) - probe(1.0, -1.0) - probe(-1.0, 1.0)
                + probe(-1.0, -1.0))
                / (4.0 * eps * eps);
            push(&mut entries, format!("dxx{i}{j}"), jet.dxx(i, j), fd, rtol_floor);
        }
    }

    let max_abs_err = entries.iter().map(|e| e.abs_err).fold(0.0, f64::max);
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(FdReport { entries, max_abs_err, max_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_step() {
        let jet = JetVal::new(1, 0.0, 0.0);
        let err = check_against_fd(|_, _| 0.0, 0.0, &[0.0], &jet, 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn linear_function_has_tiny_fd_error() {
        // f(t, x) = 3t + 2x: gradient exact, Hessian exactly zero.
        let mut jet = JetVal::new(1, 3.0 * 0.5 + 2.0 * 0.25, 3.0);
        jet.set_dx(0, 2.0);
        jet.set_dxx(0, 0, 0.0);
        let rep =
            check_against_fd(|t, x| 3.0 * t + 2.0 * x[0], 0.5, &[0.25], &jet, 1e-4).unwrap();
        assert!(rep.passes(1e-5), "max rel err {}", rep.max_rel_err);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut jet = JetVal::new(1, 0.25, 0.0);
        jet.set_dx(0, 1.5); // truth is 2x = 1.0
        jet.set_dxx(0, 0, 2.0);
        let rep = check_against_fd(|_, x| x[0] * x[0], 0.0, &[0.5], &jet, 1e-4).unwrap();
        assert!(!rep.passes(1e-5));
        assert_eq!(rep.worst().name, "dx0");
    }
}
