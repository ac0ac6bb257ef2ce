//! Parametric surrogates: a residual swish network and a gated comparator,
//! both evaluated through the tape, plus the value wrapper that injects the
//! terminal condition exactly.
//!
//! The value surrogate evaluates to `G(x) + (T-t)^γ · raw(t,x;θ)`, so the
//! terminal equation holds as a hard constraint rather than a loss term.
//! Control surrogates expose one interface whether the coordinates share a
//! body with multiple heads or come from separate networks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::jet::{Jet1, Jet2, JetK, JetVal, Sc};
use crate::problems::Problem;
use crate::tape::{input_jet, Real, TapeCell, UnOp, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Dense stack with identity skips added before the swish activation.
    Residual,
    /// LSTM-like gated layers with tanh nonlinearities.
    Gated,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Residual => "paac_residual",
            Architecture::Gated => "dgm_gated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paac_residual" | "residual" | "paac" => Ok(Architecture::Residual),
            "dgm_gated" | "gated" | "dgm" => Ok(Architecture::Gated),
            other => Err(Error::Config {
                key: "arch".into(),
                msg: format!("unknown architecture '{other}'"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NetConfig {
    pub arch: Architecture,
    pub layers: usize,
    pub width: usize,
    pub output_dim: usize,
    pub init_seed: u64,
    /// Terminal-correction exponent; only read by value surrogates.
    pub gamma: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.width < 1 || self.output_dim < 1 {
            return Err(Error::Config {
                key: "net".into(),
                msg: "layers, width and output_dim must all be >= 1".into(),
            });
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config {
                key: "net.gamma".into(),
                msg: "terminal exponent must be positive".into(),
            });
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            arch: Architecture::Residual,
            layers: 3,
            width: 32,
            output_dim: 1,
            init_seed: 0,
            gamma: 1.0,
        }
    }
}

/// Shape-and-offset layout of one network's flat parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct NetPlan {
    pub arch: Architecture,
    pub in_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub out_dim: usize,
    pub param_len: usize,
}

#[derive(Clone, Debug)]
pub struct TensorDesc {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub off: usize,
}

struct Cursor {
    off: usize,
}

impl Cursor {
    fn take(&mut self, n: usize) -> usize {
        let at = self.off;
        self.off += n;
        at
    }
}

impl NetPlan {
    pub fn new(arch: Architecture, in_dim: usize, layers: usize, width: usize, out_dim: usize) -> Self {
        let mut plan = NetPlan { arch, in_dim, width, layers, out_dim, param_len: 0 };
        plan.param_len = plan.tensor_table().iter().map(|t| t.rows * t.cols).sum();
        plan
    }

    pub fn from_config(cfg: &NetConfig, in_dim: usize) -> Self {
        Self::new(cfg.arch, in_dim, cfg.layers, cfg.width, cfg.output_dim)
    }

    /// Tensors in layout order; `init_theta` and the evaluators walk the same
    /// order, so offsets always agree.
    pub fn tensor_table(&self) -> Vec<TensorDesc> {
        let (w, d, o) = (self.width, self.in_dim, self.out_dim);
        let mut cur = Cursor { off: 0 };
        let mut out = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, cur: &mut Cursor| {
            let off = cur.take(rows * cols);
            out.push(TensorDesc { name, rows, cols, off });
        };
        match self.arch {
            Architecture::Residual => {
                push("w_in".into(), w, d, &mut cur);
                push("b_in".into(), w, 1, &mut cur);
                for l in 0..self.layers {
                    push(format!("w_blk{l}"), w, w, &mut cur);
                    push(format!("b_blk{l}"), w, 1, &mut cur);
                }
                push("w_out".into(), o, w, &mut cur);
                push("b_out".into(), o, 1, &mut cur);
            }
            Architecture::Gated => {
                push("w_in".into(), w, d, &mut cur);
                push("b_in".into(), w, 1, &mut cur);
                for l in 0..self.layers {
                    for gate in ["z", "g", "r", "h"] {
                        push(format!("u_{gate}{l}"), w, d, &mut cur);
                        push(format!("w_{gate}{l}"), w, w, &mut cur);
                        push(format!("b_{gate}{l}"), w, 1, &mut cur);
                    }
                }
                push("w_out".into(), o, w, &mut cur);
                push("b_out".into(), o, 1, &mut cur);
            }
        }
        out
    }
}

/// Glorot-uniform weights, zero biases; bit-reproducible for a fixed seed.
pub fn init_theta(plan: &NetPlan, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; plan.param_len];
    for t in plan.tensor_table() {
        if t.cols == 1 {
            continue; // bias
        }
        let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
        for v in &mut theta[t.off..t.off + t.rows * t.cols] {
            *v = rng.gen_range(-limit..limit);
        }
    }
    theta
}

/// Evaluate the network over input nodes `[input_start .. input_start+in_dim)`
/// with parameters at `base` in the tape's bound block. Returns the index of
/// the first output node.
pub fn eval_plan<J: JetK>(plan: &NetPlan, cell: &TapeCell<J>, input_start: u32, base: usize) -> u32 {
    let (w, d, o) = (plan.width, plan.in_dim, plan.out_dim);
    let mut cur = Cursor { off: base };
    match plan.arch {
        Architecture::Residual => {
            let w_in = cur.take(w * d);
            let b_in = cur.take(w);
            let pre = cell.dense(input_start, d, w, w_in, Some(b_in));
            let mut h = cell.unary_range(UnOp::Swish, pre, w);
            for _ in 0..plan.layers {
                let w_l = cur.take(w * w);
                let b_l = cur.take(w);
                let z = cell.dense(h, w, w, w_l, Some(b_l));
                let s = cell.add_range(z, h, w);
                h = cell.unary_range(UnOp::Swish, s, w);
            }
            let w_out = cur.take(o * w);
            let b_out = cur.take(o);
            cell.dense(h, w, o, w_out, Some(b_out))
        }
        Architecture::Gated => {
            let w1 = cur.take(w * d);
            let b1 = cur.take(w);
            let pre = cell.dense(input_start, d, w, w1, Some(b1));
            let mut s = cell.unary_range(UnOp::Tanh, pre, w);
            for _ in 0..plan.layers {
                let mut gate = |state: u32| {
                    let u_off = cur.take(w * d);
                    let w_off = cur.take(w * w);
                    let b_off = cur.take(w);
                    let pre = cell.dense2(input_start, d, state, w, w, u_off, w_off, b_off);
                    cell.unary_range(UnOp::Tanh, pre, w)
                };
                let z = gate(s);
                let g = gate(s);
                let r = gate(s);
                let sr = cell.mul_range(s, r, w);
                let h = gate(sr);
                let one_m_g = cell.csub_range(1.0, g, w);
                let a = cell.mul_range(one_m_g, h, w);
                let b = cell.mul_range(z, s, w);
                s = cell.add_range(a, b, w);
            }
            let w_out = cur.take(o * w);
            let b_out = cur.take(o);
            cell.dense(s, w, o, w_out, Some(b_out))
        }
    }
}

/// Terminal function handle for the value wrapper. `OfProblem` delegates to
/// the case study's terminal condition; the other variants serve tests.
#[derive(Clone, Copy)]
pub enum TermKind<'a> {
    OfProblem(&'a Problem),
    Const(f64),
    /// `b + Σ w_i x_i`.
    Affine(&'a [f64], f64),
}

impl<'a> TermKind<'a> {
    pub fn expr<R: Real>(&self, x: &[R]) -> R {
        match self {
            TermKind::OfProblem(p) => p.terminal_expr(x),
            TermKind::Const(c) => x[0].lift(*c),
            TermKind::Affine(w, b) => {
                let mut acc = x[0].lift(*b);
                for (xi, wi) in x.iter().zip(w.iter()) {
                    acc = acc + *xi * *wi;
                }
                acc
            }
        }
    }
}

/// Value network with the terminal condition injected into the output.
pub struct ValueSurrogate<'a> {
    pub plan: NetPlan,
    pub theta: Vec<f64>,
    pub term: TermKind<'a>,
    pub horizon: f64,
    pub gamma: f64,
}

impl<'a> ValueSurrogate<'a> {
    pub fn new(cfg: &NetConfig, state_dim: usize, term: TermKind<'a>, horizon: f64) -> Self {
        let plan = NetPlan::from_config(cfg, 1 + state_dim);
        let theta = init_theta(&plan, cfg.init_seed);
        ValueSurrogate { plan, theta, term, horizon, gamma: cfg.gamma }
    }

    pub fn state_dim(&self) -> usize {
        self.plan.in_dim - 1
    }

    /// Record the wrapped value `G(x) + (T-t)^γ · raw` on a tape whose inputs
    /// are the consecutive nodes `t, x_0, .., x_{d-1}` starting at `tv`.
    pub fn expr<'c, J: JetK>(
        &self,
        cell: &'c TapeCell<J>,
        tv: Var<'c, J>,
        xv: &[Var<'c, J>],
        base: usize,
    ) -> Var<'c, J> {
        let raw_start = eval_plan(&self.plan, cell, tv.id, base);
        let raw = cell.var_at(raw_start);
        let g = self.term.expr(xv);
        let tau = tv.neg_add(self.horizon);
        let scale = if self.gamma == 1.0 { tau } else { tau.powc(self.gamma) };
        g + scale * raw
    }

    /// Wrapped value at a point (plain number).
    pub fn forward_value(&self, t: f64, x: &[f64]) -> f64 {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&self.theta);
        let tv = cell.input_t(t);
        let xv: Vec<_> = x.iter().enumerate().map(|(i, &v)| cell.input_x(v, i)).collect();
        self.expr(&cell, tv, &xv, 0).value()
    }

    /// Jet of the wrapped value (terminal injection differentiated through).
    pub fn value_jet(&self, t: f64, x: &[f64]) -> Result<JetVal> {
        match self.state_dim() {
            1 => {
                let cell: TapeCell<Jet1> = TapeCell::new();
                cell.bind_params(&self.theta);
                let jet = input_jet(&cell, t, x, |c, tv, xv| self.expr(c, tv, xv, 0))?;
                Ok(jet.values())
            }
            2 => {
                let cell: TapeCell<Jet2> = TapeCell::new();
                cell.bind_params(&self.theta);
                let jet = input_jet(&cell, t, x, |c, tv, xv| self.expr(c, tv, xv, 0))?;
                Ok(jet.values())
            }
            d => panic!("unsupported state dimension {d}"),
        }
    }
}

/// Control network(s): one shared body with `a` heads, or `a` separate
/// networks flattened into a single parameter block.
pub struct ControlSurrogate {
    pub plans: Vec<NetPlan>,
    pub offsets: Vec<usize>,
    pub theta: Vec<f64>,
    pub clip: Option<(f64, f64)>,
    pub out_dim: usize,
}

impl ControlSurrogate {
    pub fn shared(cfg: &NetConfig, state_dim: usize, out_dim: usize) -> Self {
        let plan = NetPlan::new(cfg.arch, 1 + state_dim, cfg.layers, cfg.width, out_dim);
        let theta = init_theta(&plan, cfg.init_seed);
        ControlSurrogate {
            offsets: vec![0],
            plans: vec![plan],
            theta,
            clip: None,
            out_dim,
        }
    }

    pub fn separate(cfg: &NetConfig, state_dim: usize, out_dim: usize) -> Self {
        let mut plans = Vec::new();
        let mut offsets = Vec::new();
        let mut theta = Vec::new();
        for k in 0..out_dim {
            let plan = NetPlan::new(cfg.arch, 1 + state_dim, cfg.layers, cfg.width, 1);
            offsets.push(theta.len());
            theta.extend(init_theta(&plan, cfg.init_seed.wrapping_add(k as u64)));
            plans.push(plan);
        }
        ControlSurrogate { plans, offsets, theta, clip: None, out_dim }
    }

    pub fn with_clip(mut self, clip: Option<(f64, f64)>) -> Self {
        self.clip = clip;
        self
    }

    /// Record all control coordinates on a tape; clipping is a hard clamp in
    /// the forward pass with a straight-through backward.
    pub fn expr<'c, J: JetK>(
        &self,
        cell: &'c TapeCell<J>,
        input_start: u32,
        theta_base: usize,
    ) -> Vec<Var<'c, J>> {
        let mut out = Vec::with_capacity(self.out_dim);
        for (plan, off) in self.plans.iter().zip(self.offsets.iter()) {
            let start = eval_plan(plan, cell, input_start, theta_base + off);
            for k in 0..plan.out_dim {
                let v = cell.var_at(start + k as u32);
                out.push(match self.clip {
                    Some((lo, hi)) => v.clamp_st(lo, hi),
                    None => v,
                });
            }
        }
        debug_assert_eq!(out.len(), self.out_dim);
        out
    }

    /// Control vector at a point (plain numbers, clipped).
    pub fn forward_control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&self.theta);
        let tv = cell.input_t(t);
        for (i, &v) in x.iter().enumerate() {
            cell.input_x(v, i);
        }
        self.expr(&cell, tv.id, 0).iter().map(|v| v.value()).collect()
    }
}

// ── checkpoints ──────────────────────────────────────────────────────

/// Text checkpoint: layout header plus row-major tensors.
pub fn save_checkpoint(path: &std::path::Path, plan: &NetPlan, theta: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "paac-net v1 arch={} in_dim={} width={} layers={} out_dim={}",
        plan.arch.name(),
        plan.in_dim,
        plan.width,
        plan.layers,
        plan.out_dim
    )?;
    for t in plan.tensor_table() {
        writeln!(f, "tensor {} {} {}", t.name, t.rows, t.cols)?;
        for r in 0..t.rows {
            let row: Vec<String> = (0..t.cols)
                .map(|c| format!("{:?}", theta[t.off + r * t.cols + c]))
                .collect();
            writeln!(f, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(NetPlan, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::CheckpointMismatch {
        expected: "paac-net v1 header".into(),
        found: "empty file".into(),
    })?;
    let mut fields = std::collections::HashMap::new();
    for tok in header.split_whitespace().skip(2) {
        if let Some((k, v)) = tok.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        fields.get(k).cloned().ok_or_else(|| Error::CheckpointMismatch {
            expected: format!("header field {k}"),
            found: header.to_string(),
        })
    };
    let arch = Architecture::parse(&get("arch")?)?;
    let parse_n = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::CheckpointMismatch {
            expected: format!("numeric {k}"),
            found: header.to_string(),
        })
    };
    let plan = NetPlan::new(
        arch,
        parse_n("in_dim")?,
        parse_n("layers")?,
        parse_n("width")?,
        parse_n("out_dim")?,
    );
    let mut theta = vec![0.0; plan.param_len];
    for t in plan.tensor_table() {
        let head = lines.next().unwrap_or_default();
        let expect = format!("tensor {} {} {}", t.name, t.rows, t.cols);
        if head != expect {
            return Err(Error::CheckpointMismatch { expected: expect, found: head.to_string() });
        }
        for r in 0..t.rows {
            let line = lines.next().unwrap_or_default();
            let mut vals = line.split_whitespace();
            for c in 0..t.cols {
                let tok = vals.next().ok_or_else(|| Error::CheckpointMismatch {
                    expected: format!("{} values in row", t.cols),
                    found: line.to_string(),
                })?;
                theta[t.off + r * t.cols + c] =
                    tok.parse().map_err(|_| Error::CheckpointMismatch {
                        expected: "float".into(),
                        found: tok.to_string(),
                    })?;
            }
        }
    }
    Ok((plan, theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let plan = NetPlan::new(Architecture::Residual, 2, 3, 32, 1);
        let a = init_theta(&plan, 7);
        let b = init_theta(&plan, 7);
        assert_eq!(a, b);
        let c = init_theta(&plan, 8);
        assert_ne!(a, c);
        for t in plan.tensor_table() {
            if t.cols == 1 {
                assert!(a[t.off..t.off + t.rows].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn glorot_bound_holds_for_32x32() {
        let plan = NetPlan::new(Architecture::Residual, 2, 3, 32, 1);
        let theta = init_theta(&plan, 123);
        let bound = (6.0f64 / 64.0).sqrt();
        for t in plan.tensor_table() {
            if t.rows == 32 && t.cols == 32 {
                for &v in &theta[t.off..t.off + 32 * 32] {
                    assert!(v.abs() < bound, "{v} exceeds {bound}");
                }
            }
        }
    }

    #[test]
    fn zero_weight_net_outputs_terminal_for_all_t() {
        let cfg = NetConfig::default();
        let mut surr = ValueSurrogate::new(&cfg, 1, TermKind::Affine(&[-1.0], 0.0), 1.0);
        surr.theta.iter_mut().for_each(|v| *v = 0.0);
        for &(t, x) in &[(0.0, 0.3), (0.5, 0.9), (1.0, 0.1)] {
            let v = surr.forward_value(t, &[x]);
            assert_eq!(v, -x);
        }
        let jet = surr.value_jet(0.25, &[0.6]).unwrap();
        assert_eq!(jet.dx(0), -1.0);
        assert_eq!(jet.dxx(0, 0), 0.0);
    }

    #[test]
    fn terminal_exactness_is_bitwise() {
        let cfg = NetConfig { init_seed: 3, ..NetConfig::default() };
        let surr = ValueSurrogate::new(&cfg, 1, TermKind::Const(1.0), 1.0);
        for &x in &[0.0, 0.33, 0.91] {
            assert_eq!(surr.forward_value(1.0, &[x]), 1.0);
        }
    }

    #[test]
    fn wrapper_arithmetic_example() {
        // γ=1, raw ≡ 2 (zero weights, output bias 2), T-t = 0.5, G ≡ 1 → 2.0
        let cfg = NetConfig::default();
        let mut surr = ValueSurrogate::new(&cfg, 1, TermKind::Const(1.0), 1.0);
        surr.theta.iter_mut().for_each(|v| *v = 0.0);
        let table = surr.plan.tensor_table();
        let b_out = table.last().unwrap();
        surr.theta[b_out.off] = 2.0;
        let v = surr.forward_value(0.5, &[0.4]);
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn wrapper_dt_at_terminal_time() {
        // At t=T with γ=1: ∂t V = -raw(T,x).
        let cfg = NetConfig { init_seed: 11, ..NetConfig::default() };
        let surr = ValueSurrogate::new(&cfg, 1, TermKind::Const(0.0), 1.0);
        let x = [0.37];
        let jet = surr.value_jet(1.0, &x).unwrap();
        // raw(T, x) recovered from the unwrapped plan
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&surr.theta);
        let tv = cell.input_t(1.0);
        cell.input_x(x[0], 0);
        let raw = cell.var_at(eval_plan(&surr.plan, &cell, tv.id, 0)).value();
        assert!((jet.dt + raw).abs() < 1e-12, "dt={} raw={}", jet.dt, raw);
    }

    #[test]
    fn control_clipping_clamps_hard() {
        let cfg = NetConfig::default();
        let mut cs = ControlSurrogate::shared(&cfg, 1, 1).with_clip(Some((-10.0, 10.0)));
        cs.theta.iter_mut().for_each(|v| *v = 0.0);
        let table = cs.plans[0].tensor_table();
        let b_out = table.last().unwrap();
        cs.theta[b_out.off] = 42.0;
        let u = cs.forward_control(0.3, &[0.5]);
        assert_eq!(u, vec![10.0]);
    }

    #[test]
    fn shared_and_separate_heads_same_interface() {
        let cfg = NetConfig { init_seed: 5, ..NetConfig::default() };
        let shared = ControlSurrogate::shared(&cfg, 1, 3);
        let separate = ControlSurrogate::separate(&cfg, 1, 3);
        assert_eq!(shared.forward_control(0.2, &[0.4]).len(), 3);
        assert_eq!(separate.forward_control(0.2, &[0.4]).len(), 3);
    }

    #[test]
    fn architectures_interchangeable_behind_eval() {
        for arch in [Architecture::Residual, Architecture::Gated] {
            let cfg = NetConfig { arch, init_seed: 2, ..NetConfig::default() };
            let surr = ValueSurrogate::new(&cfg, 1, TermKind::Const(0.0), 1.0);
            let v = surr.forward_value(0.4, &[0.6]);
            assert!(v.is_finite());
            let jet = surr.value_jet(0.4, &[0.6]).unwrap();
            assert!(jet.is_finite());
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let plan = NetPlan::new(Architecture::Gated, 3, 2, 8, 2);
        let theta = init_theta(&plan, 99);
        let dir = std::env::temp_dir().join("paac_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        save_checkpoint(&path, &plan, &theta).unwrap();
        let (plan2, theta2) = load_checkpoint(&path).unwrap();
        assert_eq!(plan, plan2);
        assert_eq!(theta, theta2);
    }
}
