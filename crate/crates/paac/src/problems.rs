//! Built-in principal-agent case studies.
//!
//! Each problem fixes the reduced HJB data the solver needs: state/control
//! dimensions, the training box, the Hamiltonian integrand (generator plus
//! running reward, before the sup), the terminal condition, first-order
//! condition residuals for the unconstrained controls, the constraint
//! penalty, and closed-form value/control functions where they exist.
//!
//! Formulas are written once against [`Real`], so the same code path serves
//! plain evaluation, finite-difference checks and tape recording.

use crate::error::{Error, Result};
use crate::jet::JetVal;
use crate::tape::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Terminal lump-sum contract, mixture-of-exponentials principal utility.
    /// State x, control Z.
    HmMixture,
    /// Solely continuous payment. State w, controls (α, β, Z).
    ContinuousPayment,
    /// Continuous payment with box constraints on β and β+Z.
    ConstrainedPayment,
    /// Geometric output dynamics, scalar control. States (x, w), control Z.
    GbmScalarControl,
    /// First-best problem with drift and volatility control. States (x, w),
    /// controls (Z, a).
    FirstBest2Control,
}

/// Box constraints on the continuous-payment controls; absent bounds are
/// unconstrained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CtrlBounds {
    pub beta_lo: Option<f64>,
    pub beta_hi: Option<f64>,
    /// Bounds on the effort aggregate β+Z.
    pub effort_lo: Option<f64>,
    pub effort_hi: Option<f64>,
}

impl CtrlBounds {
    pub fn any(&self) -> bool {
        self.beta_lo.is_some()
            || self.beta_hi.is_some()
            || self.effort_lo.is_some()
            || self.effort_hi.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct PaParams {
    pub gamma_a: f64,
    pub gamma_p: f64,
    /// Second mixture exponent of the principal utility.
    pub gamma_p2: f64,
    /// Mixture weight on the `gamma_p` component.
    pub lambda: f64,
    pub c0: f64,
    pub sigma: f64,
    pub bounds: CtrlBounds,
}

impl Default for PaParams {
    fn default() -> Self {
        PaParams {
            gamma_a: 0.5,
            gamma_p: 1.0,
            gamma_p2: 2.0,
            lambda: 1.0,
            c0: 0.0,
            sigma: 1.0,
            bounds: CtrlBounds::default(),
        }
    }
}

/// Spatial jet of the value surrogate as seen by problem formulas.
pub struct JetArgs<'a, R> {
    pub dim: usize,
    pub v: R,
    pub dx: &'a [R],
    pub dxx: &'a [R],
}

impl<'a, R: Real> JetArgs<'a, R> {
    pub fn dx(&self, i: usize) -> R {
        self.dx[i]
    }

    pub fn dxx(&self, i: usize, j: usize) -> R {
        self.dxx[i * self.dim + j]
    }

    pub fn from_val(jet: &'a JetValSlices) -> JetArgs<'a, f64> {
        JetArgs { dim: jet.dim, v: jet.v, dx: &jet.dx[..jet.dim], dxx: &jet.dxx[..jet.dim * jet.dim] }
    }
}

/// Flattened [`JetVal`] buffers for the `f64` formula path.
pub struct JetValSlices {
    pub dim: usize,
    pub v: f64,
    pub dx: [f64; 2],
    pub dxx: [f64; 4],
}

impl JetValSlices {
    pub fn of(jet: &JetVal) -> Self {
        let d = jet.dim;
        let mut s = JetValSlices { dim: d, v: jet.v, dx: [0.0; 2], dxx: [0.0; 4] };
        for i in 0..d {
            s.dx[i] = jet.dx(i);
            for j in 0..d {
                s.dxx[i * d + j] = jet.dxx(i, j);
            }
        }
        s
    }
}

/// Monotonicity a solved surrogate is expected to satisfy at `t = 0`.
#[derive(Clone, Copy, Debug)]
pub struct MonotoneSpec {
    pub label: &'static str,
    /// `None` = value surrogate, `Some(k)` = control coordinate `k`.
    pub control: Option<usize>,
    pub axis: usize,
    /// `+1.0` nondecreasing, `-1.0` nonincreasing along the axis.
    pub sign: f64,
}

/// Observed control functional with a closed-form target.
#[derive(Clone, Copy, Debug)]
pub struct CtrlCheck {
    pub label: &'static str,
    /// Observed value = sum of these control coordinates.
    pub coords: &'static [usize],
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub kind: Kind,
    pub params: PaParams,
    pub horizon: f64,
    pub domain: Vec<(f64, f64)>,
}

pub const REGISTRY: [&str; 5] = [
    "hm_mixture",
    "continuous_payment",
    "constrained_payment",
    "gbm_scalar_control",
    "first_best_2control",
];

impl Problem {
    pub fn by_name(name: &str) -> Result<Problem> {
        let kind = match name {
            "hm_mixture" => Kind::HmMixture,
            "continuous_payment" => Kind::ContinuousPayment,
            "constrained_payment" => Kind::ConstrainedPayment,
            "gbm_scalar_control" => Kind::GbmScalarControl,
            "first_best_2control" => Kind::FirstBest2Control,
            _ => {
                return Err(Error::UnknownProblem {
                    name: name.to_string(),
                    known: REGISTRY.to_vec(),
                })
            }
        };
        Ok(Problem::new(kind))
    }

    pub fn new(kind: Kind) -> Problem {
        let mut params = PaParams::default();
        let domain = match kind {
            Kind::HmMixture => vec![(0.0, 1.0)],
            Kind::ContinuousPayment => vec![(0.0, 1.0)],
            Kind::ConstrainedPayment => {
                // case 1 bounds by default
                params.bounds = CtrlBounds {
                    beta_lo: Some(0.0),
                    beta_hi: Some(0.1),
                    effort_lo: Some(0.0),
                    effort_hi: Some(0.5),
                };
                vec![(0.0, 1.0)]
            }
            Kind::GbmScalarControl => vec![(0.0, 2.0), (-1.0, 1.0)],
            Kind::FirstBest2Control => {
                params.gamma_a = 1.0;
                params.gamma_p = 1.0;
                vec![(0.0, 1.0), (-2.5, -0.5)]
            }
        };
        Problem { kind, params, horizon: 1.0, domain }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::HmMixture => "hm_mixture",
            Kind::ContinuousPayment => "continuous_payment",
            Kind::ConstrainedPayment => "constrained_payment",
            Kind::GbmScalarControl => "gbm_scalar_control",
            Kind::FirstBest2Control => "first_best_2control",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            Kind::HmMixture | Kind::ContinuousPayment | Kind::ConstrainedPayment => 1,
            Kind::GbmScalarControl | Kind::FirstBest2Control => 2,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self.kind {
            Kind::HmMixture | Kind::GbmScalarControl => 1,
            Kind::ContinuousPayment | Kind::ConstrainedPayment => 3,
            Kind::FirstBest2Control => 2,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self.kind {
            Kind::HmMixture => &["x"],
            Kind::ContinuousPayment | Kind::ConstrainedPayment => &["w"],
            Kind::GbmScalarControl | Kind::FirstBest2Control => &["x", "w"],
        }
    }

    pub fn control_names(&self) -> &'static [&'static str] {
        match self.kind {
            Kind::HmMixture => &["Z"],
            Kind::ContinuousPayment | Kind::ConstrainedPayment => &["alpha", "beta", "Z"],
            Kind::GbmScalarControl => &["Z"],
            Kind::FirstBest2Control => &["Z", "a"],
        }
    }

    pub fn is_constrained(&self) -> bool {
        self.params.bounds.any()
    }

    // ── terminal condition ───────────────────────────────────────────

    pub fn terminal_expr<R: Real>(&self, x: &[R]) -> R {
        let p = &self.params;
        match self.kind {
            Kind::HmMixture => {
                let a = (x[0] * (-p.gamma_p)).exp() * (-p.lambda);
                let b = (x[0] * (-p.gamma_p2)).exp() * (-(1.0 - p.lambda));
                a + b
            }
            Kind::ContinuousPayment | Kind::ConstrainedPayment => -x[0],
            Kind::GbmScalarControl => x[0] - x[1].exp(),
            Kind::FirstBest2Control => {
                let expo = -p.gamma_p / p.gamma_a;
                -((x[0] * (-p.gamma_p)).exp() * (-x[1]).powc(expo))
            }
        }
    }

    /// Terminal value with domain checking.
    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        assert_eq!(x.len(), self.state_dim());
        if self.kind == Kind::FirstBest2Control && x[1] >= 0.0 {
            return Err(Error::Precondition(format!(
                "terminal condition undefined for w = {} >= 0",
                x[1]
            )));
        }
        let g = self.terminal_expr(x);
        if !g.is_finite() {
            return Err(Error::NonFinite { what: "terminal", t: self.horizon, x: x.to_vec() });
        }
        Ok(g)
    }

    // ── Hamiltonian integrand (before the sup) ───────────────────────

    pub fn hamiltonian_expr<R: Real>(&self, _t: f64, x: &[f64], u: &[R], jet: &JetArgs<'_, R>) -> R {
        let p = &self.params;
        match self.kind {
            Kind::HmMixture => {
                let z = u[0];
                let vx = jet.dx(0);
                let vxx = jet.dxx(0, 0);
                vx * (z - z.sq() * (0.5 * (1.0 + p.gamma_a)))
                    + vxx * z.neg_add(1.0).sq() * 0.5
            }
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                let (al, be, z) = (u[0], u[1], u[2]);
                let vw = jet.dx(0);
                let vww = jet.dxx(0, 0);
                let drift = z.sq() * 0.5 - be.sq() * 0.5 - al - p.c0;
                drift * vw + z.sq() * vww * 0.5 + be.neg_add(1.0) * (be + z) - al
            }
            Kind::GbmScalarControl => {
                let z = u[0];
                let scale = p.sigma * p.sigma * x[0] * x[0];
                let vx = jet.dx(0);
                let vw = jet.dx(1);
                let vxx = jet.dxx(0, 0);
                let vww = jet.dxx(1, 1);
                let vxw = jet.dxx(0, 1);
                let inner = z * vx
                    + z.sq() * vw * 0.5
                    + (vxx + z.sq() * vww) * 0.5
                    + z * vxw;
                inner * scale
            }
            Kind::FirstBest2Control => {
                let (z, a) = (u[0], u[1]);
                let vx = jet.dx(0);
                let vxx = jet.dxx(0, 0);
                let vww = jet.dxx(1, 1);
                let vxw = jet.dxx(0, 1);
                a * vx + a.sq() * (vxx + z.sq() * vww) * 0.5 + a.sq() * z * vxw
            }
        }
    }

    pub fn hamiltonian(&self, t: f64, x: &[f64], u: &[f64], jet: &JetVal) -> Result<f64> {
        let slices = JetValSlices::of(jet);
        let args = JetArgs::<f64>::from_val(&slices);
        let h = self.hamiltonian_expr(t, x, u, &args);
        if !h.is_finite() {
            return Err(Error::NonFinite { what: "hamiltonian", t, x: x.to_vec() });
        }
        Ok(h)
    }

    // ── first-order conditions ───────────────────────────────────────

    /// ∂H/∂u_k for the unconstrained control coordinates; constrained
    /// coordinates are governed by the penalty instead.
    pub fn foc_expr<R: Real>(&self, _t: f64, x: &[f64], u: &[R], jet: &JetArgs<'_, R>) -> Vec<R> {
        let p = &self.params;
        match self.kind {
            Kind::HmMixture => {
                let z = u[0];
                let vx = jet.dx(0);
                let vxx = jet.dxx(0, 0);
                vec![vx * (z * (1.0 + p.gamma_a)).neg_add(1.0) + vxx * (z - 1.0)]
            }
            Kind::ContinuousPayment => {
                let (_al, be, z) = (u[0], u[1], u[2]);
                let vw = jet.dx(0);
                let vww = jet.dxx(0, 0);
                let f_al = -vw - 1.0;
                let f_be = (be * vw + be * 2.0 + z).neg_add(1.0);
                let f_z = z * vw + z * vww + be.neg_add(1.0);
                vec![f_al, f_be, f_z]
            }
            Kind::ConstrainedPayment => {
                let vw = jet.dx(0);
                vec![-vw - 1.0]
            }
            Kind::GbmScalarControl => {
                let z = u[0];
                let scale = p.sigma * p.sigma * x[0] * x[0];
                let vx = jet.dx(0);
                let vw = jet.dx(1);
                let vww = jet.dxx(1, 1);
                let vxw = jet.dxx(0, 1);
                vec![(vx + z * vw + z * vww + vxw) * scale]
            }
            Kind::FirstBest2Control => {
                let (z, a) = (u[0], u[1]);
                let vx = jet.dx(0);
                let vxx = jet.dxx(0, 0);
                let vww = jet.dxx(1, 1);
                let vxw = jet.dxx(0, 1);
                let f_z = a.sq() * z * vww + a.sq() * vxw;
                let f_a = vx + a * (vxx + z.sq() * vww) + a * z * vxw * 2.0;
                vec![f_z, f_a]
            }
        }
    }

    pub fn foc_residuals(&self, t: f64, x: &[f64], u: &[f64], jet: &JetVal) -> Result<Vec<f64>> {
        let slices = JetValSlices::of(jet);
        let args = JetArgs::<f64>::from_val(&slices);
        let f = self.foc_expr(t, x, u, &args);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "first-order condition", t, x: x.to_vec() });
        }
        Ok(f)
    }

    // ── constraint penalty ───────────────────────────────────────────

    /// Pointwise penalty; `None` when the problem has no constraints (the
    /// penalty is identically zero).
    pub fn penalty_expr<R: Real>(&self, u: &[R]) -> Option<R> {
        let b = &self.params.bounds;
        if !b.any() {
            return None;
        }
        let beta = u[1];
        let effort = u[1] + u[2];
        let mut acc = beta.lift(0.0);
        if let Some(lo) = b.beta_lo {
            acc = acc + (-beta + lo).pospart();
        }
        if let Some(hi) = b.beta_hi {
            acc = acc + (beta - hi).pospart();
        }
        if let Some(lo) = b.effort_lo {
            acc = acc + (-effort + lo).pospart();
        }
        if let Some(hi) = b.effort_hi {
            acc = acc + (effort - hi).pospart();
        }
        Some(acc)
    }

    pub fn penalty(&self, u: &[f64]) -> f64 {
        self.penalty_expr(u).unwrap_or(0.0)
    }

    /// All configured constraints satisfied at `u`.
    pub fn feasible(&self, u: &[f64]) -> bool {
        self.penalty(u) == 0.0
    }

    // ── closed forms ─────────────────────────────────────────────────

    /// Principal risk-aversion exponent of the single-component cases.
    fn hm_pure_gamma(&self) -> Option<f64> {
        if self.params.lambda == 1.0 {
            Some(self.params.gamma_p)
        } else if self.params.lambda == 0.0 {
            Some(self.params.gamma_p2)
        } else {
            None
        }
    }

    fn hm_drift_constant(&self, gamma: f64) -> f64 {
        0.5 * (1.0 + gamma) * (1.0 + gamma) / (1.0 + self.params.gamma_a + gamma) - 0.5 * gamma
    }

    /// Constant optimal effort of the single-component terminal-contract case.
    pub fn hm_constant_control(&self, gamma: f64) -> f64 {
        (1.0 + gamma) / (1.0 + self.params.gamma_a + gamma)
    }

    /// Mixture interpolation of the two single-component constant controls.
    pub fn hm_linear_reference(&self) -> f64 {
        let p = &self.params;
        p.lambda * self.hm_constant_control(p.gamma_p)
            + (1.0 - p.lambda) * self.hm_constant_control(p.gamma_p2)
    }

    /// Slope of the continuous-payment value `k` in `V = k (T-t) - w`,
    /// honoring a binding effort cap.
    fn payment_value_slope(&self) -> f64 {
        let c0 = self.params.c0;
        let ubar = self.params.bounds.effort_hi.unwrap_or(f64::INFINITY);
        if ubar >= 1.0 {
            c0 + 0.5
        } else {
            c0 - 0.5 * ubar * ubar + ubar
        }
    }

    /// Effort aggregate β+Z at the optimum of the continuous-payment cases.
    pub fn payment_effort_target(&self) -> f64 {
        let lo = self.params.bounds.effort_lo.unwrap_or(f64::NEG_INFINITY);
        let hi = self.params.bounds.effort_hi.unwrap_or(f64::INFINITY);
        1.0f64.clamp(lo, hi)
    }

    pub fn has_analytic_value(&self) -> bool {
        match self.kind {
            Kind::HmMixture => self.hm_pure_gamma().is_some(),
            Kind::ContinuousPayment | Kind::ConstrainedPayment | Kind::GbmScalarControl => true,
            Kind::FirstBest2Control => false,
        }
    }

    pub fn analytic_value(&self, t: f64, x: &[f64]) -> Result<f64> {
        let p = &self.params;
        let tau = self.horizon - t;
        match self.kind {
            Kind::HmMixture => {
                let gamma = self
                    .hm_pure_gamma()
                    .ok_or(Error::Unsupported("closed form requires a pure exponential utility"))?;
                let c = self.hm_drift_constant(gamma);
                Ok(-(-gamma * (x[0] + c * tau)).exp())
            }
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                Ok(self.payment_value_slope() * tau - x[0])
            }
            Kind::GbmScalarControl => {
                let s2 = p.sigma * p.sigma;
                let e = (s2 * tau).exp() - 1.0;
                Ok(x[0] - x[1].exp() + 0.25 * (-x[1]).exp() * x[0] * x[0] * e)
            }
            Kind::FirstBest2Control => Err(Error::Unsupported("no closed-form value")),
        }
    }

    /// Closed-form optimal control where each coordinate is determined.
    pub fn analytic_control(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            Kind::HmMixture => {
                let gamma = self
                    .hm_pure_gamma()
                    .ok_or(Error::Unsupported("closed form requires a pure exponential utility"))?;
                Ok(vec![self.hm_constant_control(gamma)])
            }
            Kind::GbmScalarControl => Ok(vec![0.5 * (-x[1]).exp()]),
            Kind::ContinuousPayment | Kind::ConstrainedPayment => Err(Error::Unsupported(
                "only the effort aggregate β+Z is pinned by the closed form",
            )),
            Kind::FirstBest2Control => Err(Error::Unsupported("no closed-form control")),
        }
    }

    /// A maximizing control vector usable as a Hamiltonian witness; unlike
    /// [`Self::analytic_control`], undetermined coordinates get a canonical
    /// feasible choice.
    pub fn analytic_control_witness(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                let s = self.payment_effort_target();
                let b = &self.params.bounds;
                let lo = b.beta_lo.unwrap_or(f64::NEG_INFINITY);
                let hi = b.beta_hi.unwrap_or(f64::INFINITY);
                let beta = (0.5 * s).clamp(lo, hi);
                Ok(vec![0.0, beta, s - beta])
            }
            _ => self.analytic_control(t, x),
        }
    }

    /// Hand-coded jet of the closed-form value.
    pub fn analytic_value_jet(&self, t: f64, x: &[f64]) -> Result<JetVal> {
        let p = &self.params;
        let tau = self.horizon - t;
        match self.kind {
            Kind::HmMixture => {
                let gamma = self
                    .hm_pure_gamma()
                    .ok_or(Error::Unsupported("closed form requires a pure exponential utility"))?;
                let c = self.hm_drift_constant(gamma);
                let e = (-gamma * (x[0] + c * tau)).exp();
                let mut jet = JetVal::new(1, -e, -gamma * c * e);
                jet.set_dx(0, gamma * e);
                jet.set_dxx(0, 0, -gamma * gamma * e);
                Ok(jet)
            }
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                let k = self.payment_value_slope();
                let mut jet = JetVal::new(1, k * tau - x[0], -k);
                jet.set_dx(0, -1.0);
                jet.set_dxx(0, 0, 0.0);
                Ok(jet)
            }
            Kind::GbmScalarControl => {
                let s2 = p.sigma * p.sigma;
                let (xx, w) = (x[0], x[1]);
                let ew = w.exp();
                let emw = (-w).exp();
                let grow = (s2 * tau).exp();
                let e = grow - 1.0;
                let v = xx - ew + 0.25 * emw * xx * xx * e;
                let mut jet = JetVal::new(2, v, -0.25 * s2 * emw * xx * xx * grow);
                jet.set_dx(0, 1.0 + 0.5 * emw * xx * e);
                jet.set_dx(1, -ew - 0.25 * emw * xx * xx * e);
                jet.set_dxx(0, 0, 0.5 * emw * e);
                jet.set_dxx(1, 1, -ew + 0.25 * emw * xx * xx * e);
                jet.set_dxx(0, 1, -0.5 * emw * xx * e);
                Ok(jet)
            }
            Kind::FirstBest2Control => Err(Error::Unsupported("no closed-form value")),
        }
    }

    // ── reporting helpers ────────────────────────────────────────────

    /// Control functionals with closed-form targets.
    pub fn ctrl_checks(&self) -> &'static [CtrlCheck] {
        match self.kind {
            Kind::HmMixture => &[CtrlCheck { label: "Z", coords: &[0] }],
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                &[CtrlCheck { label: "beta_plus_Z", coords: &[1, 2] }]
            }
            Kind::GbmScalarControl => &[CtrlCheck { label: "Z", coords: &[0] }],
            Kind::FirstBest2Control => &[],
        }
    }

    pub fn ctrl_check_target(&self, check: &CtrlCheck, t: f64, x: &[f64]) -> Result<f64> {
        match self.kind {
            Kind::HmMixture => Ok(self.analytic_control(t, x)?[0]),
            Kind::ContinuousPayment | Kind::ConstrainedPayment => {
                let _ = check;
                Ok(self.payment_effort_target())
            }
            Kind::GbmScalarControl => Ok(self.analytic_control(t, x)?[0]),
            Kind::FirstBest2Control => Err(Error::Unsupported("no closed-form control")),
        }
    }

    /// Qualitative monotonicity expected of the solved surfaces at `t = 0`.
    pub fn monotone_specs(&self) -> &'static [MonotoneSpec] {
        match self.kind {
            Kind::FirstBest2Control => &[
                MonotoneSpec { label: "V_incr_x", control: None, axis: 0, sign: 1.0 },
                MonotoneSpec { label: "V_decr_w", control: None, axis: 1, sign: -1.0 },
                MonotoneSpec { label: "Z_decr_x", control: Some(0), axis: 0, sign: -1.0 },
                MonotoneSpec { label: "Z_decr_w", control: Some(0), axis: 1, sign: -1.0 },
            ],
            _ => &[],
        }
    }

    // ── Monte Carlo rollout dynamics ─────────────────────────────────

    /// Scalar auxiliary-state dynamics for the problems that expose them.
    pub fn has_rollout(&self) -> bool {
        matches!(self.kind, Kind::HmMixture | Kind::ContinuousPayment)
    }

    pub fn rollout_drift(&self, _s: f64, _state: f64, u: &[f64]) -> f64 {
        match self.kind {
            Kind::HmMixture => {
                let z = u[0];
                z - 0.5 * (1.0 + self.params.gamma_a) * z * z
            }
            Kind::ContinuousPayment => {
                let (al, be, z) = (u[0], u[1], u[2]);
                -self.params.c0 + 0.5 * z * z - 0.5 * be * be - al
            }
            _ => unreachable!("no rollout dynamics"),
        }
    }

    pub fn rollout_vol(&self, _s: f64, _state: f64, u: &[f64]) -> f64 {
        match self.kind {
            Kind::HmMixture => 1.0 - u[0],
            Kind::ContinuousPayment => u[2],
            _ => unreachable!("no rollout dynamics"),
        }
    }

    pub fn rollout_running(&self, _s: f64, _state: f64, u: &[f64]) -> f64 {
        match self.kind {
            Kind::HmMixture => 0.0,
            Kind::ContinuousPayment => {
                let (al, be, z) = (u[0], u[1], u[2]);
                (1.0 - be) * (be + z) - al
            }
            _ => unreachable!("no rollout dynamics"),
        }
    }

    pub fn rollout_terminal(&self, state: f64) -> f64 {
        self.terminal_expr(&[state])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn random_jet(rng: &mut ChaCha8Rng, dim: usize) -> JetVal {
        let mut jet = JetVal::new(dim, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for i in 0..dim {
            jet.set_dx(i, rng.gen_range(-2.0..2.0));
            for j in i..dim {
                jet.set_dxx(i, j, rng.gen_range(-2.0..2.0));
            }
        }
        jet
    }

    #[test]
    fn terminal_values_match_closed_forms() {
        let p2 = Problem::new(Kind::ContinuousPayment);
        assert_eq!(p2.terminal(&[0.7]).unwrap(), -0.7);

        let p4 = Problem::new(Kind::GbmScalarControl);
        assert_eq!(p4.terminal(&[1.0, 0.0]).unwrap(), 0.0);

        let p5 = Problem::new(Kind::FirstBest2Control);
        assert!(close(p5.terminal(&[0.0, -1.0]).unwrap(), -1.0, 1e-15));
        assert!(p5.terminal(&[0.0, 0.5]).is_err());
        assert!(p5.terminal(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn payment_hamiltonian_known_values() {
        // With V_w = -1, V_ww = 0 and C₀ = 0 the integrand collapses to
        // ½ - ½(β+Z-1)² regardless of α.
        let p2 = Problem::new(Kind::ContinuousPayment);
        let mut jet = JetVal::new(1, 0.0, 0.0);
        jet.set_dx(0, -1.0);
        jet.set_dxx(0, 0, 0.0);
        for alpha in [0.0, 0.3, -2.0] {
            let h1 = p2.hamiltonian(0.2, &[0.5], &[alpha, 0.5, 0.5], &jet).unwrap();
            assert!(close(h1, 0.5, 1e-14), "{h1}");
            let h2 = p2.hamiltonian(0.2, &[0.5], &[alpha, 0.25, 0.25], &jet).unwrap();
            assert!(close(h2, 0.375, 1e-14), "{h2}");
        }
    }

    #[test]
    fn payment_foc_zero_at_optimum() {
        let p2 = Problem::new(Kind::ContinuousPayment);
        let mut jet = JetVal::new(1, 0.0, 0.0);
        jet.set_dx(0, -1.0);
        jet.set_dxx(0, 0, 0.0);
        let f = p2.foc_residuals(0.1, &[0.4], &[0.7, 0.5, 0.5], &jet).unwrap();
        assert_eq!(f.len(), 3);
        for r in f {
            assert!(close(r, 0.0, 1e-14), "{r}");
        }
        let p3 = Problem::new(Kind::ConstrainedPayment);
        let f3 = p3.foc_residuals(0.1, &[0.4], &[0.7, 0.05, 0.4], &jet).unwrap();
        assert_eq!(f3.len(), 1);
    }

    #[test]
    fn gbm_foc_vanishes_at_quadratic_vertex() {
        let p4 = Problem::new(Kind::GbmScalarControl);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let jet = random_jet(&mut rng, 2);
            let denom = jet.dx(1) + jet.dxx(1, 1);
            if denom.abs() < 1e-3 {
                continue;
            }
            let z = -(jet.dx(0) + jet.dxx(0, 1)) / denom;
            let x = [rng.gen_range(0.1..2.0), rng.gen_range(-1.0..1.0)];
            let f = p4.foc_residuals(0.3, &x, &[z], &jet).unwrap();
            assert!(f[0].abs() < 1e-10 * (1.0 + z.abs()), "{}", f[0]);
        }
    }

    #[test]
    fn foc_matches_fd_of_hamiltonian() {
        // ∂H/∂u_k by central differences at 100 random (point, u, jet) tuples
        // per problem; relative tolerance 1e-6.
        let problems = [
            Problem::new(Kind::HmMixture),
            Problem::new(Kind::ContinuousPayment),
            Problem::new(Kind::GbmScalarControl),
            Problem::new(Kind::FirstBest2Control),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for p in &problems {
            let d = p.state_dim();
            let a = p.control_dim();
            for _ in 0..100 {
                let jet = random_jet(&mut rng, d);
                let x: Vec<f64> =
                    p.domain.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                let u: Vec<f64> = (0..a).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let t = rng.gen_range(0.0..1.0);
                let foc = p.foc_residuals(t, &x, &u, &jet).unwrap();
                // constrained coordinates are not in the foc vector
                let full: Vec<usize> = match p.kind {
                    Kind::ConstrainedPayment => vec![0],
                    _ => (0..a).collect(),
                };
                let eps = 1e-5;
                for (fi, &k) in full.iter().enumerate() {
                    let mut up = u.clone();
                    up[k] += eps;
                    let hp = p.hamiltonian(t, &x, &up, &jet).unwrap();
                    up[k] = u[k] - eps;
                    let hm = p.hamiltonian(t, &x, &up, &jet).unwrap();
                    let fd = (hp - hm) / (2.0 * eps);
                    assert!(
                        close(foc[fi], fd, 1e-6),
                        "{}: coord {k} foc {} vs fd {fd}",
                        p.name(),
                        foc[fi]
                    );
                }
            }
        }
    }

    #[test]
    fn penalty_printed_cases() {
        let mut p3 = Problem::new(Kind::ConstrainedPayment);
        // case 1: β ∈ [0, 0.1], β+Z ∈ [0, 0.5]
        assert_eq!(p3.penalty(&[0.0, 0.05, 0.25]), 0.0);
        assert!(close(p3.penalty(&[0.0, 0.2, 0.4]), 0.2, 1e-15));
        // case 2: β ∈ [0, 0.2] only
        p3.params.bounds = CtrlBounds {
            beta_lo: Some(0.0),
            beta_hi: Some(0.2),
            effort_lo: None,
            effort_hi: None,
        };
        assert!(close(p3.penalty(&[0.0, -0.1, 5.0]), 0.1, 1e-15));
        // case 3: β ≤ 0.5, β+Z ≤ 1.2
        p3.params.bounds = CtrlBounds {
            beta_lo: None,
            beta_hi: Some(0.5),
            effort_lo: None,
            effort_hi: Some(1.2),
        };
        assert_eq!(p3.penalty(&[0.0, 0.4, 0.7]), 0.0);
        assert!(p3.penalty(&[0.0, 0.6, 0.7]) > 0.0);
    }

    #[test]
    fn penalty_zero_set_is_the_feasible_box() {
        let p3 = Problem::new(Kind::ConstrainedPayment);
        // boundary
        assert_eq!(p3.penalty(&[0.0, 0.1, 0.4]), 0.0);
        assert_eq!(p3.penalty(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(p3.penalty(&[0.0, 0.1, 0.0]), 0.0);
        // interior
        assert_eq!(p3.penalty(&[0.0, 0.05, 0.2]), 0.0);
        // exterior, one constraint at a time
        assert!(p3.penalty(&[0.0, -0.01, 0.2]) > 0.0);
        assert!(p3.penalty(&[0.0, 0.11, 0.2]) > 0.0);
        assert!(p3.penalty(&[0.0, 0.05, -0.2]) > 0.0);
        assert!(p3.penalty(&[0.0, 0.05, 0.5]) > 0.0);
    }

    #[test]
    fn analytic_values_at_reference_points() {
        let p2 = Problem::new(Kind::ContinuousPayment);
        assert!(close(p2.analytic_value(0.0, &[0.0]).unwrap(), 0.5, 1e-15));

        let p1 = Problem::new(Kind::HmMixture);
        let z = p1.analytic_control(0.0, &[0.5]).unwrap()[0];
        assert!(close(z, 0.8, 1e-15));

        let mut p1b = Problem::new(Kind::HmMixture);
        p1b.params.lambda = 0.0;
        let zb = p1b.analytic_control(0.0, &[0.5]).unwrap()[0];
        assert!(close(zb, 6.0 / 7.0, 1e-15));

        let p4 = Problem::new(Kind::GbmScalarControl);
        let v = p4.analytic_value(0.0, &[1.0, 0.0]).unwrap();
        assert!(close(v, (1.0f64.exp() - 1.0) / 4.0, 1e-15));
        assert!(close(p4.analytic_control(0.0, &[1.0, 0.0]).unwrap()[0], 0.5, 1e-15));

        let mut p1c = Problem::new(Kind::HmMixture);
        p1c.params.lambda = 0.5;
        assert!(p1c.analytic_value(0.0, &[0.5]).is_err());
        assert!(close(p1c.hm_linear_reference(), 0.4 + 3.0 / 7.0, 1e-15));

        let p5 = Problem::new(Kind::FirstBest2Control);
        assert!(matches!(p5.analytic_value(0.0, &[0.5, -1.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn analytic_self_consistency_on_grid() {
        // ∂t V* + H(u*, jet(V*)) vanishes to 1e-10 over a 20-per-axis grid.
        let mut probs = vec![
            Problem::new(Kind::ContinuousPayment),
            Problem::new(Kind::ConstrainedPayment),
            Problem::new(Kind::GbmScalarControl),
            Problem::new(Kind::HmMixture),
        ];
        probs.push({
            let mut p = Problem::new(Kind::HmMixture);
            p.params.lambda = 0.0;
            p
        });
        probs.push({
            let mut p = Problem::new(Kind::ConstrainedPayment);
            p.params.bounds = CtrlBounds {
                beta_lo: None,
                beta_hi: Some(0.5),
                effort_lo: None,
                effort_hi: Some(1.2),
            };
            p
        });
        for p in &probs {
            let n = 20;
            let d = p.state_dim();
            for it in 0..n {
                let t = it as f64 / (n - 1) as f64 * p.horizon;
                let mut worst: f64 = 0.0;
                let mut probe = |x: &[f64]| {
                    let jet = p.analytic_value_jet(t, x).unwrap();
                    let u = p.analytic_control_witness(t, x).unwrap();
                    let h = p.hamiltonian(t, x, &u, &jet).unwrap();
                    worst = worst.max((jet.dt + h).abs());
                };
                if d == 1 {
                    for ix in 0..n {
                        let x = p.domain[0].0
                            + (p.domain[0].1 - p.domain[0].0) * ix as f64 / (n - 1) as f64;
                        probe(&[x]);
                    }
                } else {
                    for ix in 0..n {
                        for iw in 0..n {
                            let x = p.domain[0].0
                                + (p.domain[0].1 - p.domain[0].0) * ix as f64 / (n - 1) as f64;
                            let w = p.domain[1].0
                                + (p.domain[1].1 - p.domain[1].0) * iw as f64 / (n - 1) as f64;
                            probe(&[x, w]);
                        }
                    }
                }
                assert!(worst <= 1e-10, "{}: residual {worst} at t={t}", p.name());
            }
        }
    }

    #[test]
    fn payment_argmax_clamps_to_effort_box() {
        // Brute-force grid search over β+Z confirms the maximizer of the
        // collapsed integrand is clamp(1, u̲, ū).
        let cases = [(0.0, 0.5), (0.0, 1.5), (0.2, 0.8), (0.0, 1.0)];
        for &(lo, hi) in &cases {
            let mut p = Problem::new(Kind::ConstrainedPayment);
            p.params.bounds = CtrlBounds {
                beta_lo: None,
                beta_hi: None,
                effort_lo: Some(lo),
                effort_hi: Some(hi),
            };
            let mut jet = JetVal::new(1, 0.0, 0.0);
            jet.set_dx(0, -1.0);
            jet.set_dxx(0, 0, 0.0);
            let mut best = (f64::NEG_INFINITY, f64::NAN);
            let n = 2001;
            for i in 0..n {
                let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                let h = p.hamiltonian(0.3, &[0.5], &[0.0, 0.0, s], &jet).unwrap();
                if h > best.0 {
                    best = (h, s);
                }
            }
            let expect = 1.0f64.clamp(lo, hi);
            assert!(
                (best.1 - expect).abs() <= (hi - lo) / (n - 1) as f64 + 1e-12,
                "bounds ({lo},{hi}): argmax {} vs {expect}",
                best.1
            );
        }
    }

    #[test]
    fn unknown_problem_lists_registry() {
        match Problem::by_name("typo") {
            Err(Error::UnknownProblem { known, .. }) => {
                assert_eq!(known.len(), 5);
            }
            other => panic!("expected unknown-problem error, got {other:?}"),
        }
    }
}
