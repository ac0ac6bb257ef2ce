//! Alternating actor-critic training loop.
//!
//! Each step takes one Adam update of the value parameters on the summed
//! squared interior residual (controls held fixed), then one Adam update of
//! the control parameters on the negated Hamiltonian plus the constraint
//! penalty (value jets held fixed at the just-updated parameters). An epoch
//! runs `b` such steps on a frozen batch before resampling. Validation
//! metrics on the fixed set drive the stopping rule: max pointwise interior
//! loss below `tol_int`, max first-order-condition residual below `tol_ctrl`,
//! and, for constrained problems, max penalty exactly zero.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{validate, Metrics, SurrogateEval};
use crate::error::{Error, Result};
use crate::jet::{Jet1, Jet2, JetK, JetVal, Sc};
use crate::net::{ControlSurrogate, NetConfig, TermKind, ValueSurrogate};
use crate::problems::{JetArgs, Problem};
use crate::sampling::{draw_batch, Point, SampleDesign, ValidationSet};
use crate::tape::{TapeCell, Var};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr_end: f64,
    pub power: f64,
    pub decay_steps: u64,
}

impl LrSchedule {
    /// Polynomial decay: `(lr0-lr_end)·(1 - min(n,N)/N)^p + lr_end`.
    pub fn lr_at(&self, n: u64) -> f64 {
        let nn = self.decay_steps.max(1);
        let frac = n.min(nn) as f64 / nn as f64;
        (self.lr0 - self.lr_end) * (1.0 - frac).powf(self.power) + self.lr_end
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrainConfig {
    /// Batch size.
    pub m: usize,
    /// Inner gradient steps per epoch (batch refresh cadence).
    pub b: usize,
    pub tol_int: f64,
    pub tol_ctrl: f64,
    pub lr: LrSchedule,
    pub max_steps: u64,
    pub penalty_weight: f64,
    /// Validation set size.
    pub m_v: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 2000,
            b: 10,
            tol_int: 1e-2,
            tol_ctrl: 1e-3,
            lr: LrSchedule { lr0: 1e-3, lr_end: 1e-4, power: 0.8, decay_steps: 10_000 },
            max_steps: 10_000,
            penalty_weight: 1.0,
            m_v: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_int > 0.0 && self.tol_ctrl > 0.0) {
            return Err(Error::Config {
                key: "train.tol".into(),
                msg: "tolerances must be positive".into(),
            });
        }
        if !(self.lr.lr0 >= self.lr.lr_end && self.lr.lr_end > 0.0) {
            return Err(Error::Config {
                key: "train.lr".into(),
                msg: "need lr0 >= lr_end > 0".into(),
            });
        }
        if self.b < 1 {
            return Err(Error::Config { key: "train.b".into(), msg: "b must be >= 1".into() });
        }
        Ok(())
    }
}

/// Adam with standard moment defaults; zero-initialized moments, one step
/// counter increment per update.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub l2_int: f64,
    pub linf_int: f64,
    pub linf_ctrl: f64,
    pub p1: f64,
    pub pinf: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Converged,
    MaxSteps,
    /// Validation metrics went non-finite; training aborted with the report.
    Diverged,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub rows: Vec<MetricsRow>,
    pub steps: u64,
    pub converged_at: Option<u64>,
    pub outcome: Outcome,
    pub wall_secs: f64,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }
}

pub struct TrainSetup<'a> {
    pub problem: &'a Problem,
    pub value_cfg: NetConfig,
    pub control_cfg: NetConfig,
    pub shared_heads: bool,
    pub clip: Option<(f64, f64)>,
    pub design: SampleDesign,
    pub cfg: TrainConfig,
    pub batch_rng: ChaCha8Rng,
    pub validation: ValidationSet,
}

/// Actor-critic state: surrogates, optimizers, step counter.
pub struct Paac<'a> {
    pub problem: &'a Problem,
    pub vsurr: ValueSurrogate<'a>,
    pub csurr: ControlSurrogate,
    pub cfg: TrainConfig,
    adam_v: Adam,
    adam_u: Adam,
    pub step: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss_interior: f64,
    pub loss_control: f64,
}

impl<'a> Paac<'a> {
    pub fn new(setup: &TrainSetup<'a>) -> Result<Paac<'a>> {
        setup.cfg.validate()?;
        setup.value_cfg.validate()?;
        setup.control_cfg.validate()?;
        let problem = setup.problem;
        let d = problem.state_dim();
        let a = problem.control_dim();
        let vsurr = ValueSurrogate::new(
            &setup.value_cfg,
            d,
            TermKind::OfProblem(problem),
            problem.horizon,
        );
        let csurr = if setup.shared_heads {
            ControlSurrogate::shared(&setup.control_cfg, d, a)
        } else {
            ControlSurrogate::separate(&setup.control_cfg, d, a)
        }
        .with_clip(setup.clip);
        let adam_v = Adam::new(vsurr.theta.len());
        let adam_u = Adam::new(csurr.theta.len());
        Ok(Paac { problem, vsurr, csurr, cfg: setup.cfg, adam_v, adam_u, step: 0 })
    }

    /// Controls at every batch point with the current actor parameters.
    pub fn batch_controls(&self, batch: &[Point]) -> Vec<[f64; 3]> {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&self.csurr.theta);
        let mut out = Vec::with_capacity(batch.len());
        for pt in batch {
            cell.reset_point();
            let tv = cell.input_t(pt.t);
            for (i, &xi) in pt.state().iter().enumerate() {
                cell.input_x(xi, i);
            }
            let uvars = self.csurr.expr(&cell, tv.id, 0);
            let mut u = [0.0; 3];
            for (k, v) in uvars.iter().enumerate() {
                u[k] = v.value();
            }
            out.push(u);
        }
        out
    }

    /// Wrapped value jets at every batch point with the current critic
    /// parameters (plain numbers; nothing flows back into the critic).
    pub fn batch_jets(&self, batch: &[Point]) -> Result<Vec<JetVal>> {
        match self.problem.state_dim() {
            1 => self.batch_jets_impl::<Jet1>(batch),
            2 => self.batch_jets_impl::<Jet2>(batch),
            d => panic!("unsupported state dimension {d}"),
        }
    }

    fn batch_jets_impl<J: JetK>(&self, batch: &[Point]) -> Result<Vec<JetVal>> {
        let cell: TapeCell<J> = TapeCell::new();
        cell.bind_params(&self.vsurr.theta);
        let mut out = Vec::with_capacity(batch.len());
        for pt in batch {
            cell.reset_point();
            let tv = cell.input_t(pt.t);
            let xv: Vec<Var<'_, J>> = pt
                .state()
                .iter()
                .enumerate()
                .map(|(i, &v)| cell.input_x(v, i))
                .collect();
            let v = self.vsurr.expr(&cell, tv, &xv, 0);
            let jv = v.jet();
            if !jv.is_finite() {
                return Err(Error::NonFinite {
                    what: "value jet",
                    t: pt.t,
                    x: pt.state().to_vec(),
                });
            }
            out.push(jv);
        }
        Ok(out)
    }

    /// Summed squared interior residual over the batch and its gradient with
    /// respect to the critic parameters; controls enter as constants.
    pub fn loss_interior(
        &self,
        batch: &[Point],
        controls: &[[f64; 3]],
    ) -> Result<(f64, Vec<f64>)> {
        match self.problem.state_dim() {
            1 => self.loss_interior_impl::<Jet1>(batch, controls),
            2 => self.loss_interior_impl::<Jet2>(batch, controls),
            d => panic!("unsupported state dimension {d}"),
        }
    }

    fn loss_interior_impl<J: JetK>(
        &self,
        batch: &[Point],
        controls: &[[f64; 3]],
    ) -> Result<(f64, Vec<f64>)> {
        let problem = self.problem;
        let d = problem.state_dim();
        let a = problem.control_dim();
        let cell: TapeCell<J> = TapeCell::new();
        cell.bind_params(&self.vsurr.theta);
        cell.zero_grad();
        let mut loss = 0.0;
        for (pt, u) in batch.iter().zip(controls.iter()) {
            cell.reset_point();
            let tv = cell.input_t(pt.t);
            let xv: Vec<Var<'_, J>> = pt
                .state()
                .iter()
                .enumerate()
                .map(|(i, &v)| cell.input_x(v, i))
                .collect();
            let v = self.vsurr.expr(&cell, tv, &xv, 0);
            let dt = cell.extract(v, crate::jet::SLOT_DT);
            let dx = [
                cell.extract(v, crate::jet::slot_dx(0)),
                cell.extract(v, crate::jet::slot_dx(if d > 1 { 1 } else { 0 })),
            ];
            let mut dxx = [dx[0]; 4];
            for i in 0..d {
                for j in i..d {
                    let node = cell.extract(v, crate::jet::slot_dxx(d, i, j));
                    dxx[i * d + j] = node;
                    dxx[j * d + i] = node;
                }
            }
            let uvars: Vec<Var<'_, J>> =
                u[..a].iter().map(|&c| cell.constant(c)).collect();
            let args = JetArgs { dim: d, v, dx: &dx[..d], dxx: &dxx[..d * d] };
            let h = problem.hamiltonian_expr(pt.t, pt.state(), &uvars, &args);
            let contrib = (dt + h).sq();
            let cv = contrib.value();
            if !cv.is_finite() {
                return Err(Error::NonFinite {
                    what: "interior residual",
                    t: pt.t,
                    x: pt.state().to_vec(),
                });
            }
            loss += cv;
            cell.backward(contrib);
        }
        Ok((loss, cell.param_grad()))
    }

    /// Negated Hamiltonian sum plus weighted penalty over the batch and its
    /// gradient with respect to the actor parameters; value jets enter as
    /// constants.
    pub fn loss_control(
        &self,
        batch: &[Point],
        jets: &[JetVal],
    ) -> Result<(f64, Vec<f64>)> {
        let problem = self.problem;
        let d = problem.state_dim();
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&self.csurr.theta);
        cell.zero_grad();
        let mut loss = 0.0;
        for (pt, jv) in batch.iter().zip(jets.iter()) {
            cell.reset_point();
            let tv = cell.input_t(pt.t);
            for (i, &xi) in pt.state().iter().enumerate() {
                cell.input_x(xi, i);
            }
            let uvars = self.csurr.expr(&cell, tv.id, 0);
            let vc = cell.constant(jv.v);
            let dxc = [
                cell.constant(jv.dx(0)),
                cell.constant(jv.dx(if d > 1 { 1 } else { 0 })),
            ];
            let mut dxxc = [dxc[0]; 4];
            for i in 0..d {
                for j in 0..d {
                    dxxc[i * d + j] = cell.constant(jv.dxx(i, j));
                }
            }
            let args = JetArgs { dim: d, v: vc, dx: &dxc[..d], dxx: &dxxc[..d * d] };
            let h = problem.hamiltonian_expr(pt.t, pt.state(), &uvars, &args);
            let mut contrib = -h;
            if let Some(pen) = problem.penalty_expr(&uvars) {
                contrib = contrib + pen * self.cfg.penalty_weight;
            }
            let cv = contrib.value();
            if !cv.is_finite() {
                return Err(Error::NonFinite {
                    what: "control loss",
                    t: pt.t,
                    x: pt.state().to_vec(),
                });
            }
            loss += cv;
            cell.backward(contrib);
        }
        Ok((loss, cell.param_grad()))
    }

    /// One critic update from the interior loss, then one actor update from
    /// the control loss evaluated with the just-updated critic.
    pub fn paac_step(&mut self, batch: &[Point]) -> Result<StepStats> {
        let lr = self.cfg.lr.lr_at(self.step);
        let controls = self.batch_controls(batch);
        let (loss_v, grad_v) = self.loss_interior(batch, &controls)?;
        self.adam_v.step(&mut self.vsurr.theta, &grad_v, lr);
        let jets = self.batch_jets(batch)?;
        let (loss_u, grad_u) = self.loss_control(batch, &jets)?;
        self.adam_u.step(&mut self.csurr.theta, &grad_u, lr);
        self.step += 1;
        Ok(StepStats { loss_interior: loss_v, loss_control: loss_u })
    }

    pub fn eval(&self) -> SurrogateEval<'_> {
        SurrogateEval { problem: self.problem, vsurr: &self.vsurr, csurr: &self.csurr }
    }

    fn stop_reached(&self, m: &Metrics) -> bool {
        m.linf_int <= self.cfg.tol_int
            && m.linf_ctrl <= self.cfg.tol_ctrl
            && (!self.problem.is_constrained() || m.pinf == 0.0)
    }
}

/// Run the full loop: draw a batch, take `b` steps on it, refresh, validate,
/// stop on the tolerance rule or the step budget.
pub fn train(setup: &mut TrainSetup<'_>) -> Result<(Paac<'_>, RunReport)> {
    let mut paac = Paac::new(setup)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut converged_at = None;
    let mut outcome = Outcome::MaxSteps;
    let problem = setup.problem;

    'epochs: while paac.step < setup.cfg.max_steps {
        let batch = {
            let eval = paac.eval();
            let mut residual = |p: &Point| eval.residual_mag(p.t, p.state());
            let need_res = setup.design.kind == crate::sampling::DesignKind::Rad;
            draw_batch(
                &setup.design,
                setup.cfg.m,
                problem.horizon,
                &problem.domain,
                &mut setup.batch_rng,
                if need_res { Some(&mut residual) } else { None },
            )?
        };
        for _ in 0..setup.cfg.b {
            paac.paac_step(&batch)?;
            if paac.step >= setup.cfg.max_steps {
                break;
            }
        }
        let metrics = validate(problem, &paac.eval(), &setup.validation)?;
        let row = MetricsRow {
            step: paac.step,
            l2_int: metrics.l2_int,
            linf_int: metrics.linf_int,
            linf_ctrl: metrics.linf_ctrl,
            p1: metrics.p1,
            pinf: metrics.pinf,
            lr: paac.cfg.lr.lr_at(paac.step),
        };
        rows.push(row);
        if !metrics.is_finite() {
            outcome = Outcome::Diverged;
            break 'epochs;
        }
        if paac.stop_reached(&metrics) {
            converged_at = Some(paac.step);
            outcome = Outcome::Converged;
            break 'epochs;
        }
    }

    let report = RunReport {
        problem: problem.name().to_string(),
        rows,
        steps: paac.step,
        converged_at,
        outcome,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    Ok((paac, report))
}
