//! Computation tape: jet-valued forward recording with one reverse sweep over
//! parameters.
//!
//! The tape is append-only within an evaluation and parents always precede
//! children. Nodes carry [`JetK`] jets, so first and second input derivatives
//! ride along the forward pass; the reverse sweep propagates an adjoint per
//! jet slot, which makes parameter gradients of losses built from derivative
//! entries (∂t, gradient, Hessian) a single pass.
//!
//! Network layers are recorded as fused range ops (`Dense`, `ActRange`, ...)
//! that read parameter values straight from the bound parameter block —
//! weights do not become individual nodes, and their gradients accumulate
//! into a flat buffer aligned with the block. Scalar ops (including the
//! caller-supplied [`TapeCell::record`]) cover loss assembly and custom
//! one-off operations.
//!
//! Tapes are single-owner and never shared across threads. Gradients from
//! successive `backward` calls accumulate, so batch sums reduce in the order
//! points are replayed.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::jet::{slot_dx, slot_dxx, JetK, JetVal, SLOT_DT};

const NO_BIAS: u32 = u32::MAX;

/// Scalar maps with derivatives up to third order (the reverse sweep of a
/// Hessian slot needs one order more than the slot itself).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnOp {
    Exp,
    Ln,
    Sq,
    Swish,
    Sigmoid,
    Tanh,
    /// `max(x, 0)` with zero derivatives at the kink.
    PosPart,
    /// `x^c` for a constant exponent.
    PowC(f64),
    /// Hard clamp in the forward pass, straight-through (slope one) in the
    /// backward pass so saturated controls keep receiving gradient.
    ClampSt(f64, f64),
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and first three derivatives of `tag` at `x`.
fn derivs(tag: UnOp, x: f64) -> (f64, f64, f64, f64) {
    match tag {
        UnOp::Exp => {
            let e = x.exp();
            (e, e, e, e)
        }
        UnOp::Ln => {
            let inv = 1.0 / x;
            (x.ln(), inv, -inv * inv, 2.0 * inv * inv * inv)
        }
        UnOp::Sq => (x * x, 2.0 * x, 2.0, 0.0),
        UnOp::Swish => {
            let s = sigmoid(x);
            let s1 = s * (1.0 - s);
            let s2 = s1 * (1.0 - 2.0 * s);
            let s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
            (x * s, s + x * s1, 2.0 * s1 + x * s2, 3.0 * s2 + x * s3)
        }
        UnOp::Sigmoid => {
            let s = sigmoid(x);
            let s1 = s * (1.0 - s);
            let s2 = s1 * (1.0 - 2.0 * s);
            let s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
            (s, s1, s2, s3)
        }
        UnOp::Tanh => {
            let t = x.tanh();
            let d1 = 1.0 - t * t;
            let d2 = -2.0 * t * d1;
            let d3 = d1 * (6.0 * t * t - 2.0);
            (t, d1, d2, d3)
        }
        UnOp::PosPart => {
            if x > 0.0 {
                (x, 1.0, 0.0, 0.0)
            } else {
                (0.0, 0.0, 0.0, 0.0)
            }
        }
        UnOp::PowC(c) => (
            x.powf(c),
            c * x.powf(c - 1.0),
            c * (c - 1.0) * x.powf(c - 2.0),
            c * (c - 1.0) * (c - 2.0) * x.powf(c - 3.0),
        ),
        UnOp::ClampSt(lo, hi) => (x.clamp(lo, hi), 1.0, 0.0, 0.0),
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    /// Constant or seeded input; nothing to do in reverse.
    Leaf,
    /// Node viewing `params[idx]`; adjoint value-slot flows to the gradient.
    Param { idx: u32 },
    Add { a: u32, b: u32 },
    Sub { a: u32, b: u32 },
    Mul { a: u32, b: u32 },
    AddC { a: u32 },
    MulC { a: u32, c: f64 },
    /// `c - a`.
    CSub { a: u32 },
    Un { tag: UnOp, a: u32 },
    /// Value-carrier of `a`'s jet slot `k`.
    Extract { a: u32, k: u32 },
    /// Caller-recorded op with explicit local partials (range into `cargs`);
    /// propagated linearly across slots.
    Custom { start: u32, n: u32 },
    /// `out_k = b_k + Σ_j W[k][j] · in_j` over `len` output nodes.
    Dense { a: u32, n_in: u32, w: u32, b: u32 },
    /// Two-block dense: `out_k = b_k + Σ_j U[k][j]·x_j + Σ_j W[k][j]·s_j`.
    Dense2 { x: u32, n_x: u32, s: u32, n_s: u32, u: u32, w: u32, b: u32 },
    AddR { a: u32, b: u32 },
    MulR { a: u32, b: u32 },
    /// `c - a_k` elementwise.
    CSubR { a: u32 },
    UnR { tag: UnOp, a: u32 },
}

#[derive(Clone, Copy, Debug)]
struct Rec {
    out: u32,
    len: u32,
    op: Op,
}

pub struct Tape<J: JetK> {
    p: Vec<f64>,
    pgrad: Vec<f64>,
    vals: Vec<J>,
    adj: Vec<J>,
    ops: Vec<Rec>,
    cargs: Vec<(u32, f64)>,
}

impl<J: JetK> Tape<J> {
    fn new() -> Self {
        Tape {
            p: Vec::new(),
            pgrad: Vec::new(),
            vals: Vec::with_capacity(2048),
            adj: Vec::new(),
            ops: Vec::with_capacity(512),
            cargs: Vec::new(),
        }
    }

    #[inline]
    fn push(&mut self, jet: J, op: Op) -> u32 {
        let id = self.vals.len() as u32;
        self.vals.push(jet);
        self.ops.push(Rec { out: id, len: 1, op });
        id
    }

    fn backward_from(&mut self, root: u32) {
        self.adj.clear();
        self.adj.resize(self.vals.len(), J::zero());
        self.adj[root as usize].slot_add(0, 1.0);
        for rec in self.ops.iter().rev() {
            let o = rec.out as usize;
            match rec.op {
                Op::Leaf => {}
                Op::Param { idx } => {
                    self.pgrad[idx as usize] += self.adj[o].slot(0);
                }
                Op::Add { a, b } => {
                    let c = self.adj[o];
                    self.adj[a as usize] = self.adj[a as usize].add(c);
                    self.adj[b as usize] = self.adj[b as usize].add(c);
                }
                Op::Sub { a, b } => {
                    let c = self.adj[o];
                    self.adj[a as usize] = self.adj[a as usize].add(c);
                    self.adj[b as usize] = self.adj[b as usize].sub(c);
                }
                Op::Mul { a, b } => {
                    let c = self.adj[o];
                    let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
                    let mut abar = J::zero();
                    let mut bbar = J::zero();
                    J::mul_rev(c, va, vb, &mut abar, &mut bbar);
                    self.adj[a as usize] = self.adj[a as usize].add(abar);
                    self.adj[b as usize] = self.adj[b as usize].add(bbar);
                }
                Op::AddC { a } => {
                    let c = self.adj[o];
                    self.adj[a as usize] = self.adj[a as usize].add(c);
                }
                Op::MulC { a, c } => {
                    let cb = self.adj[o];
                    self.adj[a as usize].axpy(c, cb);
                }
                Op::CSub { a } => {
                    let cb = self.adj[o];
                    self.adj[a as usize] = self.adj[a as usize].sub(cb);
                }
                Op::Un { tag, a } => {
                    let cb = self.adj[o];
                    let va = self.vals[a as usize];
                    let (_, d1, d2, d3) = derivs(tag, va.val());
                    let mut abar = J::zero();
                    J::unary_rev(cb, va, d1, d2, d3, &mut abar);
                    self.adj[a as usize] = self.adj[a as usize].add(abar);
                }
                Op::Extract { a, k } => {
                    let cb = self.adj[o];
                    let mut abar = J::zero();
                    J::extract_rev(cb, k as usize, &mut abar);
                    self.adj[a as usize] = self.adj[a as usize].add(abar);
                }
                Op::Custom { start, n } => {
                    let cb = self.adj[o];
                    for &(parent, partial) in
                        &self.cargs[start as usize..(start + n) as usize]
                    {
                        self.adj[parent as usize].axpy(partial, cb);
                    }
                }
                Op::Dense { a, n_in, w, b } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    let ain = &mut head[a as usize..(a + n_in) as usize];
                    for k in 0..rec.len as usize {
                        let cb = tail[k];
                        if b != NO_BIAS {
                            self.pgrad[b as usize + k] += cb.slot(0);
                        }
                        let row = w as usize + k * n_in as usize;
                        let wrow = &self.p[row..row + n_in as usize];
                        let vin =
                            &self.vals[a as usize..(a + n_in) as usize];
                        let grow = &mut self.pgrad[row..row + n_in as usize];
                        for j in 0..n_in as usize {
                            ain[j].axpy(wrow[j], cb);
                            grow[j] += cb.dot(vin[j]);
                        }
                    }
                }
                Op::Dense2 { x, n_x, s, n_s, u, w, b } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    for k in 0..rec.len as usize {
                        let cb = tail[k];
                        if b != NO_BIAS {
                            self.pgrad[b as usize + k] += cb.slot(0);
                        }
                        let urow = u as usize + k * n_x as usize;
                        for j in 0..n_x as usize {
                            head[x as usize + j].axpy(self.p[urow + j], cb);
                            self.pgrad[urow + j] +=
                                cb.dot(self.vals[x as usize + j]);
                        }
                        let wrow = w as usize + k * n_s as usize;
                        for j in 0..n_s as usize {
                            head[s as usize + j].axpy(self.p[wrow + j], cb);
                            self.pgrad[wrow + j] +=
                                cb.dot(self.vals[s as usize + j]);
                        }
                    }
                }
                Op::AddR { a, b } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    for k in 0..rec.len as usize {
                        let c = tail[k];
                        head[a as usize + k] = head[a as usize + k].add(c);
                        head[b as usize + k] = head[b as usize + k].add(c);
                    }
                }
                Op::MulR { a, b } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    for k in 0..rec.len as usize {
                        let c = tail[k];
                        let (va, vb) =
                            (self.vals[a as usize + k], self.vals[b as usize + k]);
                        let mut abar = J::zero();
                        let mut bbar = J::zero();
                        J::mul_rev(c, va, vb, &mut abar, &mut bbar);
                        head[a as usize + k] = head[a as usize + k].add(abar);
                        head[b as usize + k] = head[b as usize + k].add(bbar);
                    }
                }
                Op::CSubR { a } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    for k in 0..rec.len as usize {
                        head[a as usize + k] = head[a as usize + k].sub(tail[k]);
                    }
                }
                Op::UnR { tag, a } => {
                    let (head, tail) = self.adj.split_at_mut(o);
                    for k in 0..rec.len as usize {
                        let va = self.vals[a as usize + k];
                        let (_, d1, d2, d3) = derivs(tag, va.val());
                        let mut abar = J::zero();
                        J::unary_rev(tail[k], va, d1, d2, d3, &mut abar);
                        head[a as usize + k] = head[a as usize + k].add(abar);
                    }
                }
            }
        }
    }
}

/// Shared handle so [`Var`] operands can record onto the tape through `&self`.
pub struct TapeCell<J: JetK> {
    inner: RefCell<Tape<J>>,
}

/// Node reference; cheap to copy, pinned to its tape.
#[derive(Clone, Copy)]
pub struct Var<'c, J: JetK> {
    cell: &'c TapeCell<J>,
    pub id: u32,
}

impl<J: JetK> Default for TapeCell<J> {
    fn default() -> Self {
        Self::new()
    }
}

impl<J: JetK> TapeCell<J> {
    pub fn new() -> Self {
        TapeCell { inner: RefCell::new(Tape::new()) }
    }

    /// Copy a parameter block into the tape and size the gradient buffer.
    pub fn bind_params(&self, params: &[f64]) {
        let mut t = self.inner.borrow_mut();
        t.p.clear();
        t.p.extend_from_slice(params);
        t.pgrad.clear();
        t.pgrad.resize(params.len(), 0.0);
    }

    /// Drop all nodes, keeping bound parameters and accumulated gradients.
    pub fn reset_point(&self) {
        let mut t = self.inner.borrow_mut();
        t.vals.clear();
        t.ops.clear();
        t.cargs.clear();
    }

    pub fn zero_grad(&self) {
        let mut t = self.inner.borrow_mut();
        for g in t.pgrad.iter_mut() {
            *g = 0.0;
        }
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().vals.len()
    }

    /// Reverse sweep from `root` (seeding its value slot); parameter
    /// gradients accumulate on top of previous sweeps.
    pub fn backward(&self, root: Var<'_, J>) {
        self.inner.borrow_mut().backward_from(root.id);
    }

    /// Adjoint of a node's value slot after the last `backward`.
    pub fn adjoint(&self, v: Var<'_, J>) -> f64 {
        self.inner.borrow().adj[v.id as usize].slot(0)
    }

    pub fn param_grad(&self) -> Vec<f64> {
        self.inner.borrow().pgrad.clone()
    }

    pub fn add_param_grad_to(&self, out: &mut [f64]) {
        let t = self.inner.borrow();
        for (o, g) in out.iter_mut().zip(t.pgrad.iter()) {
            *o += *g;
        }
    }

    // ── node constructors ────────────────────────────────────────────

    pub fn constant(&self, c: f64) -> Var<'_, J> {
        let id = self.inner.borrow_mut().push(J::from_val(c), Op::Leaf);
        Var { cell: self, id }
    }

    /// Seeded time input (unit ∂t).
    pub fn input_t(&self, t: f64) -> Var<'_, J> {
        let id = self.inner.borrow_mut().push(J::seed_t(t), Op::Leaf);
        Var { cell: self, id }
    }

    /// Seeded spatial input along `axis`.
    pub fn input_x(&self, v: f64, axis: usize) -> Var<'_, J> {
        debug_assert!(axis < J::D || J::D == 0);
        let id = self.inner.borrow_mut().push(J::seed_x(v, axis), Op::Leaf);
        Var { cell: self, id }
    }

    /// Node viewing bound parameter `idx`.
    pub fn param(&self, idx: usize) -> Var<'_, J> {
        let mut t = self.inner.borrow_mut();
        debug_assert!(idx < t.p.len());
        let v = t.p[idx];
        let id = t.push(J::from_val(v), Op::Param { idx: idx as u32 });
        Var { cell: self, id }
    }

    /// Record a caller-defined op from its value and local partials.
    /// Jet slots propagate linearly through the given partials, which is
    /// exact for (locally) linear ops and first-order otherwise; the named
    /// tape ops carry full second-order rules.
    pub fn record(&self, value: f64, parents: &[(Var<'_, J>, f64)]) -> Var<'_, J> {
        let mut t = self.inner.borrow_mut();
        let start = t.cargs.len() as u32;
        let mut jet = J::from_val(value);
        for &(p, partial) in parents {
            debug_assert!((p.id as usize) < t.vals.len(), "input not on tape");
            let pj = t.vals[p.id as usize];
            for k in 1..J::SLOTS {
                jet.slot_add(k, partial * pj.slot(k));
            }
            t.cargs.push((p.id, partial));
        }
        let id = t.push(jet, Op::Custom { start, n: parents.len() as u32 });
        Var { cell: self, id }
    }

    fn bin(&self, op: fn(u32, u32) -> Op, jet: J, a: u32, b: u32) -> Var<'_, J> {
        let id = self.inner.borrow_mut().push(jet, op(a, b));
        Var { cell: self, id }
    }

    pub fn unary(&self, tag: UnOp, a: Var<'_, J>) -> Var<'_, J> {
        let mut t = self.inner.borrow_mut();
        let va = t.vals[a.id as usize];
        let (f, d1, d2, _) = derivs(tag, va.val());
        let id = t.push(J::unary(va, f, d1, d2), Op::Un { tag, a: a.id });
        Var { cell: self, id }
    }

    /// Value-carrier of jet slot `k` of `a`.
    pub fn extract(&self, a: Var<'_, J>, k: usize) -> Var<'_, J> {
        let mut t = self.inner.borrow_mut();
        let jet = J::extract(t.vals[a.id as usize], k);
        let id = t.push(jet, Op::Extract { a: a.id, k: k as u32 });
        Var { cell: self, id }
    }

    // ── fused range ops (network layers) ─────────────────────────────

    /// Dense layer over `n_in` consecutive nodes starting at `a`; weights are
    /// row-major at parameter offset `w`, optional bias at `b`.
    pub fn dense(
        &self,
        a: u32,
        n_in: usize,
        n_out: usize,
        w: usize,
        b: Option<usize>,
    ) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        let bias = b.map(|x| x as u32).unwrap_or(NO_BIAS);
        for k in 0..n_out {
            let mut acc = match b {
                Some(boff) => J::from_val(t.p[boff + k]),
                None => J::zero(),
            };
            let row = w + k * n_in;
            for j in 0..n_in {
                acc.axpy(t.p[row + j], t.vals[a as usize + j]);
            }
            t.vals.push(acc);
        }
        t.ops.push(Rec {
            out,
            len: n_out as u32,
            op: Op::Dense { a, n_in: n_in as u32, w: w as u32, b: bias },
        });
        out
    }

    /// Two-block dense (gate pre-activation): `U·x + W·s + b`.
    #[allow(clippy::too_many_arguments)]
    pub fn dense2(
        &self,
        x: u32,
        n_x: usize,
        s: u32,
        n_s: usize,
        n_out: usize,
        u: usize,
        w: usize,
        b: usize,
    ) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        for k in 0..n_out {
            let mut acc = J::from_val(t.p[b + k]);
            let urow = u + k * n_x;
            for j in 0..n_x {
                acc.axpy(t.p[urow + j], t.vals[x as usize + j]);
            }
            let wrow = w + k * n_s;
            for j in 0..n_s {
                acc.axpy(t.p[wrow + j], t.vals[s as usize + j]);
            }
            t.vals.push(acc);
        }
        t.ops.push(Rec {
            out,
            len: n_out as u32,
            op: Op::Dense2 {
                x,
                n_x: n_x as u32,
                s,
                n_s: n_s as u32,
                u: u as u32,
                w: w as u32,
                b: b as u32,
            },
        });
        out
    }

    pub fn add_range(&self, a: u32, b: u32, n: usize) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        for k in 0..n {
            let v = t.vals[a as usize + k].add(t.vals[b as usize + k]);
            t.vals.push(v);
        }
        t.ops.push(Rec { out, len: n as u32, op: Op::AddR { a, b } });
        out
    }

    pub fn mul_range(&self, a: u32, b: u32, n: usize) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        for k in 0..n {
            let v = t.vals[a as usize + k].mul(t.vals[b as usize + k]);
            t.vals.push(v);
        }
        t.ops.push(Rec { out, len: n as u32, op: Op::MulR { a, b } });
        out
    }

    /// `c - a_k` elementwise (gate complement).
    pub fn csub_range(&self, c: f64, a: u32, n: usize) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        for k in 0..n {
            let v = t.vals[a as usize + k].scale(-1.0).add(J::from_val(c));
            t.vals.push(v);
        }
        t.ops.push(Rec { out, len: n as u32, op: Op::CSubR { a } });
        out
    }

    pub fn unary_range(&self, tag: UnOp, a: u32, n: usize) -> u32 {
        let mut t = self.inner.borrow_mut();
        let out = t.vals.len() as u32;
        for k in 0..n {
            let va = t.vals[a as usize + k];
            let (f, d1, d2, _) = derivs(tag, va.val());
            t.vals.push(J::unary(va, f, d1, d2));
        }
        t.ops.push(Rec { out, len: n as u32, op: Op::UnR { tag, a } });
        out
    }

    pub fn var_at(&self, id: u32) -> Var<'_, J> {
        Var { cell: self, id }
    }

    pub fn jet_of(&self, v: Var<'_, J>) -> JetVal {
        JetVal::from_slots(self.inner.borrow().vals[v.id as usize])
    }

    /// Gradient of a scalar node with respect to the given parameter nodes.
    /// Runs a fresh reverse sweep; deterministic for a fixed tape.
    pub fn grad_params(&self, loss: Var<'_, J>, params: &[Var<'_, J>]) -> Vec<f64> {
        {
            let mut t = self.inner.borrow_mut();
            debug_assert!((loss.id as usize) < t.vals.len(), "loss is not a scalar node on this tape");
            for g in t.pgrad.iter_mut() {
                *g = 0.0;
            }
            t.backward_from(loss.id);
        }
        let t = self.inner.borrow();
        params.iter().map(|p| t.adj[p.id as usize].slot(0)).collect()
    }
}

impl<'c, J: JetK> Var<'c, J> {
    pub fn value(self) -> f64 {
        self.cell.inner.borrow().vals[self.id as usize].val()
    }

    pub fn jet(self) -> JetVal {
        self.cell.jet_of(self)
    }

    pub fn exp(self) -> Self {
        self.cell.unary(UnOp::Exp, self)
    }

    pub fn ln(self) -> Self {
        self.cell.unary(UnOp::Ln, self)
    }

    pub fn sq(self) -> Self {
        self.cell.unary(UnOp::Sq, self)
    }

    pub fn swish(self) -> Self {
        self.cell.unary(UnOp::Swish, self)
    }

    pub fn tanh(self) -> Self {
        self.cell.unary(UnOp::Tanh, self)
    }

    pub fn pospart(self) -> Self {
        self.cell.unary(UnOp::PosPart, self)
    }

    pub fn powc(self, c: f64) -> Self {
        self.cell.unary(UnOp::PowC(c), self)
    }

    pub fn clamp_st(self, lo: f64, hi: f64) -> Self {
        self.cell.unary(UnOp::ClampSt(lo, hi), self)
    }
}

impl<'c, J: JetK> Add for Var<'c, J> {
    type Output = Var<'c, J>;
    fn add(self, rhs: Self) -> Self::Output {
        let jet = {
            let t = self.cell.inner.borrow();
            t.vals[self.id as usize].add(t.vals[rhs.id as usize])
        };
        self.cell.bin(|a, b| Op::Add { a, b }, jet, self.id, rhs.id)
    }
}

impl<'c, J: JetK> Sub for Var<'c, J> {
    type Output = Var<'c, J>;
    fn sub(self, rhs: Self) -> Self::Output {
        let jet = {
            let t = self.cell.inner.borrow();
            t.vals[self.id as usize].sub(t.vals[rhs.id as usize])
        };
        self.cell.bin(|a, b| Op::Sub { a, b }, jet, self.id, rhs.id)
    }
}

impl<'c, J: JetK> Mul for Var<'c, J> {
    type Output = Var<'c, J>;
    fn mul(self, rhs: Self) -> Self::Output {
        let jet = {
            let t = self.cell.inner.borrow();
            t.vals[self.id as usize].mul(t.vals[rhs.id as usize])
        };
        self.cell.bin(|a, b| Op::Mul { a, b }, jet, self.id, rhs.id)
    }
}

impl<'c, J: JetK> Add<f64> for Var<'c, J> {
    type Output = Var<'c, J>;
    fn add(self, c: f64) -> Self::Output {
        let mut t = self.cell.inner.borrow_mut();
        let mut jet = t.vals[self.id as usize];
        jet.slot_add(0, c);
        let id = t.push(jet, Op::AddC { a: self.id });
        Var { cell: self.cell, id }
    }
}

impl<'c, J: JetK> Sub<f64> for Var<'c, J> {
    type Output = Var<'c, J>;
    fn sub(self, c: f64) -> Self::Output {
        self + (-c)
    }
}

impl<'c, J: JetK> Mul<f64> for Var<'c, J> {
    type Output = Var<'c, J>;
    fn mul(self, c: f64) -> Self::Output {
        let mut t = self.cell.inner.borrow_mut();
        let jet = t.vals[self.id as usize].scale(c);
        let id = t.push(jet, Op::MulC { a: self.id, c });
        Var { cell: self.cell, id }
    }
}

impl<'c, J: JetK> Neg for Var<'c, J> {
    type Output = Var<'c, J>;
    fn neg(self) -> Self::Output {
        self * -1.0
    }
}

/// Scalar abstraction shared by plain `f64` evaluation and tape recording, so
/// Hamiltonians, terminal conditions and penalties are written once.
pub trait Real:
    Copy
    + Add<Self, Output = Self>
    + Sub<Self, Output = Self>
    + Mul<Self, Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    /// `c - self`.
    fn neg_add(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powc(self, c: f64) -> Self;
    fn pospart(self) -> Self;
    fn sq(self) -> Self {
        self * self
    }
    fn value(self) -> f64;
}

impl Real for f64 {
    fn lift(self, c: f64) -> Self {
        c
    }
    fn neg_add(self, c: f64) -> Self {
        c - self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powc(self, c: f64) -> Self {
        self.powf(c)
    }
    fn pospart(self) -> Self {
        self.max(0.0)
    }
    fn value(self) -> f64 {
        self
    }
}

impl<'c, J: JetK> Real for Var<'c, J> {
    fn lift(self, c: f64) -> Self {
        self.cell.constant(c)
    }
    fn neg_add(self, c: f64) -> Self {
        let mut t = self.cell.inner.borrow_mut();
        let jet = t.vals[self.id as usize].scale(-1.0).add(J::from_val(c));
        let id = t.push(jet, Op::CSub { a: self.id });
        Var { cell: self.cell, id }
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn powc(self, c: f64) -> Self {
        Var::powc(self, c)
    }
    fn pospart(self) -> Self {
        Var::pospart(self)
    }
    fn value(self) -> f64 {
        Var::value(self)
    }
}

/// Jet of a scalar expression at `(t, x)`: each entry is a tape node, so
/// losses built from them reach parameters in one reverse sweep.
pub struct JetNodes<'c, J: JetK> {
    pub v: Var<'c, J>,
    pub dt: Var<'c, J>,
    dim: usize,
    dx: Vec<Var<'c, J>>,
    dxx: Vec<Var<'c, J>>,
}

impl<'c, J: JetK> JetNodes<'c, J> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dx(&self, i: usize) -> Var<'c, J> {
        self.dx[i]
    }

    /// Mixed partials are a single shared node mirrored across the diagonal.
    pub fn dxx(&self, i: usize, j: usize) -> Var<'c, J> {
        self.dxx[i * self.dim + j]
    }

    pub fn values(&self) -> JetVal {
        let mut out = JetVal::new(self.dim, self.v.value(), self.dt.value());
        for i in 0..self.dim {
            out.set_dx(i, self.dx[i].value());
            for j in i..self.dim {
                out.set_dxx(i, j, self.dxx(i, j).value());
            }
        }
        out
    }
}

/// Evaluate `f` at seeded inputs and split its jet into addressable nodes.
///
/// `f` receives the time node and the spatial nodes and returns the scalar
/// output node. Errors with the offending point if any jet entry overflowed.
pub fn input_jet<'c, J: JetK, F>(
    cell: &'c TapeCell<J>,
    t: f64,
    x: &[f64],
    f: F,
) -> Result<JetNodes<'c, J>>
where
    F: FnOnce(&'c TapeCell<J>, Var<'c, J>, &[Var<'c, J>]) -> Var<'c, J>,
{
    assert_eq!(x.len(), J::D, "input dimension must match jet dimension");
    let tv = cell.input_t(t);
    let xv: Vec<Var<'c, J>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| cell.input_x(v, i))
        .collect();
    let out = f(cell, tv, &xv);
    let d = J::D;
    let raw = {
        let tape = cell.inner.borrow();
        tape.vals[out.id as usize]
    };
    if !raw.is_finite() {
        return Err(Error::NonFinite { what: "jet evaluation", t, x: x.to_vec() });
    }
    let dt = cell.extract(out, SLOT_DT);
    let dx: Vec<_> = (0..d).map(|i| cell.extract(out, slot_dx(i))).collect();
    let mut dxx = vec![dt; d * d];
    for i in 0..d {
        for j in i..d {
            let node = cell.extract(out, slot_dxx(d, i, j));
            dxx[i * d + j] = node;
            dxx[j * d + i] = node;
        }
    }
    Ok(JetNodes { v: out, dt, dim: d, dx, dxx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet1, Jet2, Sc};

    #[test]
    fn record_mul_matches_product_rule() {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[]);
        let x = cell.constant(2.0);
        let y = cell.constant(3.0);
        let m = cell.record(6.0, &[(x, 3.0), (y, 2.0)]);
        assert_eq!(m.value(), 6.0);
        cell.backward(m);
        assert_eq!(cell.adjoint(x), 3.0);
        assert_eq!(cell.adjoint(y), 2.0);
    }

    #[test]
    fn record_swish_partial_at_zero() {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[]);
        let x = cell.constant(0.0);
        let s = cell.record(0.0, &[(x, 0.5)]);
        assert_eq!(s.value(), 0.0);
        cell.backward(s);
        assert_eq!(cell.adjoint(x), 0.5);
    }

    #[test]
    fn record_fanin_accumulates() {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[]);
        let a = cell.constant(1.5);
        let s = cell.record(3.0, &[(a, 1.0), (a, 1.0)]);
        assert_eq!(s.value(), 3.0);
        cell.backward(s);
        assert_eq!(cell.adjoint(a), 2.0);
    }

    #[test]
    fn grad_params_quadratic() {
        // loss = θ² at θ=3 → gradient 6
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[3.0]);
        let th = cell.param(0);
        let loss = th.sq();
        let g = cell.grad_params(loss, &[th]);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn grad_params_constant_loss_is_zero() {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[1.0, -2.0]);
        let a = cell.param(0);
        let b = cell.param(1);
        let loss = cell.constant(7.0).sq();
        let g = cell.grad_params(loss, &[a, b]);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn grad_through_extracted_jet_entry() {
        // f = θ·x with x seeded; loss = (∂f/∂x)² = θ² → dloss/dθ = 2θ
        let cell: TapeCell<Jet1> = TapeCell::new();
        let theta = 1.7;
        cell.bind_params(&[theta]);
        let th = cell.param(0);
        let x = cell.input_x(2.0, 0);
        let f = th * x;
        let fx = cell.extract(f, slot_dx(0));
        assert!((fx.value() - theta).abs() < 1e-15);
        let loss = fx.sq();
        let g = cell.grad_params(loss, &[th]);
        assert!((g[0] - 2.0 * theta).abs() < 1e-12);
    }

    #[test]
    fn input_jet_polynomial() {
        let cell: TapeCell<Jet2> = TapeCell::new();
        cell.bind_params(&[]);
        let jet = input_jet(&cell, 0.0, &[2.0, 3.0], |_, _t, x| x[0] * x[0] * x[1])
            .unwrap();
        let jv = jet.values();
        assert_eq!(jv.v, 12.0);
        assert_eq!(jv.dx(0), 12.0);
        assert_eq!(jv.dx(1), 4.0);
        assert_eq!(jv.dxx(0, 0), 6.0);
        assert_eq!(jv.dxx(0, 1), 4.0);
        assert_eq!(jv.dxx(1, 1), 0.0);
    }

    #[test]
    fn jet_linearity() {
        // jet(a·f + b·g) == a·jet(f) + b·jet(g) entrywise
        let (a, b) = (1.25, -0.75);
        let eval = |with_combo: bool| -> Vec<f64> {
            let cell: TapeCell<Jet2> = TapeCell::new();
            cell.bind_params(&[]);
            let t = cell.input_t(0.4);
            let x0 = cell.input_x(0.3, 0);
            let x1 = cell.input_x(-0.2, 1);
            let f = (x0 * x1 + t).swish();
            let g = (x0 + x1 * x1).exp();
            let jets: Vec<JetVal> = if with_combo {
                vec![(f * a + g * b).jet()]
            } else {
                vec![f.jet(), g.jet()]
            };
            if with_combo {
                let j = jets[0];
                vec![j.v, j.dt, j.dx(0), j.dx(1), j.dxx(0, 0), j.dxx(0, 1), j.dxx(1, 1)]
            } else {
                let (jf, jg) = (jets[0], jets[1]);
                let comb = |pf: f64, pg: f64| a * pf + b * pg;
                vec![
                    comb(jf.v, jg.v),
                    comb(jf.dt, jg.dt),
                    comb(jf.dx(0), jg.dx(0)),
                    comb(jf.dx(1), jg.dx(1)),
                    comb(jf.dxx(0, 0), jg.dxx(0, 0)),
                    comb(jf.dxx(0, 1), jg.dxx(0, 1)),
                    comb(jf.dxx(1, 1), jg.dxx(1, 1)),
                ]
            }
        };
        let lhs = eval(true);
        let rhs = eval(false);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() <= 1e-14 * (1.0 + r.abs()), "{l} vs {r}");
        }
    }

    #[test]
    fn dense_op_matches_scalar_ops() {
        // One dense row replayed as scalar ops must agree in value and grad.
        let params = [0.3, -0.7, 0.25, 0.1, -0.4, 0.9];
        let fused = {
            let cell: TapeCell<Jet1> = TapeCell::new();
            cell.bind_params(&params);
            let x = cell.input_x(0.8, 0);
            let t = cell.input_t(0.1);
            let base = x.id;
            let _keep = t; // layout: [x, t]
            let out = cell.dense(base, 2, 2, 0, Some(4));
            let o0 = cell.var_at(out);
            let o1 = cell.var_at(out + 1);
            let loss = (o0 * o1).sq();
            cell.zero_grad();
            cell.backward(loss);
            (loss.value(), cell.param_grad())
        };
        let scalar = {
            let cell: TapeCell<Jet1> = TapeCell::new();
            cell.bind_params(&params);
            let x = cell.input_x(0.8, 0);
            let t = cell.input_t(0.1);
            let w: Vec<_> = (0..4).map(|i| cell.param(i)).collect();
            let b: Vec<_> = (4..6).map(|i| cell.param(i)).collect();
            let o0 = w[0] * x + w[1] * t + b[0];
            let o1 = w[2] * x + w[3] * t + b[1];
            let loss = (o0 * o1).sq();
            cell.zero_grad();
            cell.backward(loss);
            (loss.value(), cell.param_grad())
        };
        assert!((fused.0 - scalar.0).abs() < 1e-14);
        for (a, b) in fused.1.iter().zip(scalar.1.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_accumulates_across_points() {
        let cell: TapeCell<Sc> = TapeCell::new();
        cell.bind_params(&[2.0]);
        let mut total = 0.0;
        for x in [1.0, 3.0] {
            cell.reset_point();
            let th = cell.param(0);
            let xin = cell.constant(x);
            let r = th * xin;
            let loss = r.sq();
            total += loss.value();
            cell.backward(loss);
        }
        // Σ (θx)² → d/dθ = 2θ(1+9) = 40
        assert_eq!(total, 4.0 + 36.0);
        assert_eq!(cell.param_grad()[0], 40.0);
    }
}
