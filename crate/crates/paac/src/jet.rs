//! Truncated second-order jets propagated through the tape.
//!
//! Every tape node carries a jet: the node's value together with its
//! derivatives along the seeded input directions — one first-order slot for
//! time and first/second-order slots for the spatial coordinates. Propagating
//! jets forward while recording the tape means a single reverse sweep over the
//! tape yields parameter gradients of any scalar built from jet entries
//! (value, ∂t, gradient, Hessian alike).
//!
//! Slots are stored as one flat `[f64; S]` so the per-slot loops vectorize:
//! layout `[v, dt, dx_0.., dxx_00, dxx_01, ..]` with the Hessian kept as a
//! full row-major matrix, mirrored bit-identically across the diagonal.

/// Slot arithmetic required by the tape. `D` is the spatial dimension.
pub trait JetK: Copy + Send + Sync + 'static {
    const D: usize;
    const SLOTS: usize;

    fn zero() -> Self;
    fn from_val(v: f64) -> Self;
    fn val(self) -> f64;
    fn slot(self, k: usize) -> f64;
    fn slot_add(&mut self, k: usize, w: f64);
    /// Input node for the time coordinate: unit ∂t seed.
    fn seed_t(v: f64) -> Self;
    /// Input node for spatial coordinate `axis`: unit gradient seed.
    fn seed_x(v: f64, axis: usize) -> Self;
    fn is_finite(self) -> bool;

    fn add(self, b: Self) -> Self;
    fn sub(self, b: Self) -> Self;
    fn scale(self, c: f64) -> Self;
    /// `self += c * b` — the dense-layer kernel.
    fn axpy(&mut self, c: f64, b: Self);
    /// Slot-wise dot product (weight-gradient kernel).
    fn dot(self, b: Self) -> f64;

    /// Product rule across all slots.
    fn mul(self, b: Self) -> Self;
    /// Adjoint of `mul`: accumulate into both parents given the result adjoint.
    fn mul_rev(cbar: Self, a: Self, b: Self, abar: &mut Self, bbar: &mut Self);

    /// Chain rule for a scalar map with derivatives `(f, d1, d2)` at `a.val()`.
    fn unary(a: Self, f: f64, d1: f64, d2: f64) -> Self;
    /// Adjoint of `unary`; needs the third derivative because the Hessian
    /// slots depend on the input value through `d2`.
    fn unary_rev(cbar: Self, a: Self, d1: f64, d2: f64, d3: f64, abar: &mut Self);

    /// Value-carrier of slot `k`: result has `v = a.slot(k)`, all other slots
    /// zero. This is how jet entries become addressable scalars in a loss.
    fn extract(a: Self, k: usize) -> Self;
    fn extract_rev(cbar: Self, k: usize, abar: &mut Self);
}

/// Scalar-only node (no input-direction slots); used for tapes that only need
/// reverse mode over parameters, e.g. the control-network sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sc(pub f64);

impl JetK for Sc {
    const D: usize = 0;
    const SLOTS: usize = 1;

    #[inline(always)]
    fn zero() -> Self {
        Sc(0.0)
    }
    #[inline(always)]
    fn from_val(v: f64) -> Self {
        Sc(v)
    }
    #[inline(always)]
    fn val(self) -> f64 {
        self.0
    }
    #[inline(always)]
    fn slot(self, k: usize) -> f64 {
        debug_assert_eq!(k, 0);
        self.0
    }
    #[inline(always)]
    fn slot_add(&mut self, k: usize, w: f64) {
        debug_assert_eq!(k, 0);
        self.0 += w;
    }
    #[inline(always)]
    fn seed_t(v: f64) -> Self {
        Sc(v)
    }
    #[inline(always)]
    fn seed_x(v: f64, _axis: usize) -> Self {
        Sc(v)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        self.0.is_finite()
    }
    #[inline(always)]
    fn add(self, b: Self) -> Self {
        Sc(self.0 + b.0)
    }
    #[inline(always)]
    fn sub(self, b: Self) -> Self {
        Sc(self.0 - b.0)
    }
    #[inline(always)]
    fn scale(self, c: f64) -> Self {
        Sc(self.0 * c)
    }
    #[inline(always)]
    fn axpy(&mut self, c: f64, b: Self) {
        self.0 += c * b.0;
    }
    #[inline(always)]
    fn dot(self, b: Self) -> f64 {
        self.0 * b.0
    }
    #[inline(always)]
    fn mul(self, b: Self) -> Self {
        Sc(self.0 * b.0)
    }
    #[inline(always)]
    fn mul_rev(cbar: Self, a: Self, b: Self, abar: &mut Self, bbar: &mut Self) {
        abar.0 += cbar.0 * b.0;
        bbar.0 += cbar.0 * a.0;
    }
    #[inline(always)]
    fn unary(_a: Self, f: f64, _d1: f64, _d2: f64) -> Self {
        Sc(f)
    }
    #[inline(always)]
    fn unary_rev(cbar: Self, _a: Self, d1: f64, _d2: f64, _d3: f64, abar: &mut Self) {
        abar.0 += cbar.0 * d1;
    }
    #[inline(always)]
    fn extract(a: Self, k: usize) -> Self {
        debug_assert_eq!(k, 0);
        a
    }
    #[inline(always)]
    fn extract_rev(cbar: Self, k: usize, abar: &mut Self) {
        debug_assert_eq!(k, 0);
        abar.0 += cbar.0;
    }
}

/// Jet with `D` spatial axes stored in `S = 2 + D + D*D` flat slots.
#[derive(Clone, Copy, Debug)]
pub struct Jet<const D: usize, const S: usize> {
    pub s: [f64; S],
}

/// One spatial dimension: `[v, dt, dx, dxx]`.
pub type Jet1 = Jet<1, 4>;
/// Two spatial dimensions: `[v, dt, dx0, dx1, dxx00, dxx01, dxx10, dxx11]`.
pub type Jet2 = Jet<2, 8>;

#[inline(always)]
const fn ix(i: usize) -> usize {
    2 + i
}

#[inline(always)]
const fn ixx(d: usize, i: usize, j: usize) -> usize {
    2 + d + i * d + j
}

impl<const D: usize, const S: usize> JetK for Jet<D, S> {
    const D: usize = D;
    const SLOTS: usize = S;

    #[inline(always)]
    fn zero() -> Self {
        Jet { s: [0.0; S] }
    }

    #[inline(always)]
    fn from_val(v: f64) -> Self {
        let mut s = [0.0; S];
        s[0] = v;
        Jet { s }
    }

    #[inline(always)]
    fn val(self) -> f64 {
        self.s[0]
    }

    #[inline(always)]
    fn slot(self, k: usize) -> f64 {
        self.s[k]
    }

    #[inline(always)]
    fn slot_add(&mut self, k: usize, w: f64) {
        self.s[k] += w;
    }

    #[inline(always)]
    fn seed_t(v: f64) -> Self {
        let mut s = [0.0; S];
        s[0] = v;
        s[1] = 1.0;
        Jet { s }
    }

    #[inline(always)]
    fn seed_x(v: f64, axis: usize) -> Self {
        let mut s = [0.0; S];
        s[0] = v;
        s[ix(axis)] = 1.0;
        Jet { s }
    }

    #[inline(always)]
    fn is_finite(self) -> bool {
        self.s.iter().all(|v| v.is_finite())
    }

    #[inline(always)]
    fn add(self, b: Self) -> Self {
        let mut s = self.s;
        for k in 0..S {
            s[k] += b.s[k];
        }
        Jet { s }
    }

    #[inline(always)]
    fn sub(self, b: Self) -> Self {
        let mut s = self.s;
        for k in 0..S {
            s[k] -= b.s[k];
        }
        Jet { s }
    }

    #[inline(always)]
    fn scale(self, c: f64) -> Self {
        let mut s = self.s;
        for k in 0..S {
            s[k] *= c;
        }
        Jet { s }
    }

    #[inline(always)]
    fn axpy(&mut self, c: f64, b: Self) {
        for k in 0..S {
            self.s[k] += c * b.s[k];
        }
    }

    #[inline(always)]
    fn dot(self, b: Self) -> f64 {
        let mut acc = 0.0;
        for k in 0..S {
            acc += self.s[k] * b.s[k];
        }
        acc
    }

    #[inline(always)]
    fn mul(self, b: Self) -> Self {
        let a = &self.s;
        let bb = &b.s;
        let mut s = [0.0; S];
        s[0] = a[0] * bb[0];
        s[1] = a[1] * bb[0] + a[0] * bb[1];
        for i in 0..D {
            s[ix(i)] = a[ix(i)] * bb[0] + a[0] * bb[ix(i)];
        }
        for i in 0..D {
            for j in i..D {
                let v = a[ixx(D, i, j)] * bb[0]
                    + a[ix(i)] * bb[ix(j)]
                    + a[ix(j)] * bb[ix(i)]
                    + a[0] * bb[ixx(D, i, j)];
                s[ixx(D, i, j)] = v;
                s[ixx(D, j, i)] = v;
            }
        }
        Jet { s }
    }

    #[inline(always)]
    fn mul_rev(cbar: Self, a: Self, b: Self, abar: &mut Self, bbar: &mut Self) {
        let c = &cbar.s;
        // value slot picks up every slot's dependence on a.v / b.v
        let mut av = c[0] * b.s[0] + c[1] * b.s[1];
        let mut bv = c[0] * a.s[0] + c[1] * a.s[1];
        for k in 2..S {
            av += c[k] * b.s[k];
            bv += c[k] * a.s[k];
        }
        abar.s[0] += av;
        bbar.s[0] += bv;
        abar.s[1] += c[1] * b.s[0];
        bbar.s[1] += c[1] * a.s[0];
        for k in 0..D {
            let mut ax = c[ix(k)] * b.s[0];
            let mut bx = c[ix(k)] * a.s[0];
            for j in 0..D {
                let csym = c[ixx(D, k, j)] + c[ixx(D, j, k)];
                ax += csym * b.s[ix(j)];
                bx += csym * a.s[ix(j)];
            }
            abar.s[ix(k)] += ax;
            bbar.s[ix(k)] += bx;
        }
        for i in 0..D {
            for j in 0..D {
                abar.s[ixx(D, i, j)] += c[ixx(D, i, j)] * b.s[0];
                bbar.s[ixx(D, i, j)] += c[ixx(D, i, j)] * a.s[0];
            }
        }
    }

    #[inline(always)]
    fn unary(a: Self, f: f64, d1: f64, d2: f64) -> Self {
        let av = &a.s;
        let mut s = [0.0; S];
        s[0] = f;
        s[1] = d1 * av[1];
        for i in 0..D {
            s[ix(i)] = d1 * av[ix(i)];
        }
        for i in 0..D {
            for j in i..D {
                let v = d1 * av[ixx(D, i, j)] + d2 * av[ix(i)] * av[ix(j)];
                s[ixx(D, i, j)] = v;
                s[ixx(D, j, i)] = v;
            }
        }
        Jet { s }
    }

    #[inline(always)]
    fn unary_rev(cbar: Self, a: Self, d1: f64, d2: f64, d3: f64, abar: &mut Self) {
        let c = &cbar.s;
        let av = &a.s;
        let mut acc_v = c[0] * d1 + c[1] * d2 * av[1];
        for i in 0..D {
            acc_v += c[ix(i)] * d2 * av[ix(i)];
        }
        for i in 0..D {
            for j in 0..D {
                acc_v += c[ixx(D, i, j)]
                    * (d3 * av[ix(i)] * av[ix(j)] + d2 * av[ixx(D, i, j)]);
            }
        }
        abar.s[0] += acc_v;
        abar.s[1] += c[1] * d1;
        for k in 0..D {
            let mut ax = c[ix(k)] * d1;
            for j in 0..D {
                ax += d2 * (c[ixx(D, k, j)] + c[ixx(D, j, k)]) * av[ix(j)];
            }
            abar.s[ix(k)] += ax;
        }
        for i in 0..D {
            for j in 0..D {
                abar.s[ixx(D, i, j)] += c[ixx(D, i, j)] * d1;
            }
        }
    }

    #[inline(always)]
    fn extract(a: Self, k: usize) -> Self {
        Self::from_val(a.s[k])
    }

    #[inline(always)]
    fn extract_rev(cbar: Self, k: usize, abar: &mut Self) {
        abar.s[k] += cbar.s[0];
    }
}

/// Jet read out as plain numbers (diagnostics, validation, FD checks).
#[derive(Clone, Copy, Debug, Default)]
pub struct JetVal {
    pub dim: usize,
    pub v: f64,
    pub dt: f64,
    dx: [f64; 2],
    dxx: [f64; 4],
}

impl JetVal {
    pub fn new(dim: usize, v: f64, dt: f64) -> Self {
        JetVal { dim, v, dt, dx: [0.0; 2], dxx: [0.0; 4] }
    }

    pub fn dx(&self, i: usize) -> f64 {
        debug_assert!(i < self.dim);
        self.dx[i]
    }

    pub fn dxx(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim);
        self.dxx[i * self.dim + j]
    }

    pub fn set_dx(&mut self, i: usize, v: f64) {
        self.dx[i] = v;
    }

    pub fn set_dxx(&mut self, i: usize, j: usize, v: f64) {
        self.dxx[i * self.dim + j] = v;
        self.dxx[j * self.dim + i] = v;
    }

    pub fn is_finite(&self) -> bool {
        let d = self.dim;
        self.v.is_finite()
            && self.dt.is_finite()
            && self.dx[..d].iter().all(|v| v.is_finite())
            && self.dxx[..d * d].iter().all(|v| v.is_finite())
    }

    /// Read the full jet out of a node's slots.
    pub fn from_slots<J: JetK>(j: J) -> Self {
        let d = J::D;
        let mut out = JetVal::new(d, j.val(), if J::SLOTS > 1 { j.slot(1) } else { 0.0 });
        for i in 0..d {
            out.dx[i] = j.slot(ix(i));
        }
        for i in 0..d {
            for jj in 0..d {
                out.dxx[i * d + jj] = j.slot(ixx(d, i, jj));
            }
        }
        out
    }
}

/// Slot index of ∂/∂x_i within a jet.
pub const fn slot_dx(i: usize) -> usize {
    ix(i)
}

/// Slot index of ∂²/∂x_i∂x_j within a jet of dimension `d`.
pub const fn slot_dxx(d: usize, i: usize, j: usize) -> usize {
    ixx(d, i, j)
}

/// Slot index of ∂/∂t.
pub const SLOT_DT: usize = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_inputs_expose_unit_derivatives() {
        let t = Jet2::seed_t(0.3);
        assert_eq!(t.val(), 0.3);
        assert_eq!(t.slot(SLOT_DT), 1.0);
        let x1 = Jet2::seed_x(2.0, 1);
        assert_eq!(x1.slot(slot_dx(1)), 1.0);
        assert_eq!(x1.slot(slot_dx(0)), 0.0);
    }

    #[test]
    fn product_rule_on_polynomial() {
        // f(x0, x1) = x0^2 * x1 at (2, 3): v=12, grad=(12,4), hess=[[6,4],[4,0]]
        let x0 = Jet2::seed_x(2.0, 0);
        let x1 = Jet2::seed_x(3.0, 1);
        let f = x0.mul(x0).mul(x1);
        let jv = JetVal::from_slots(f);
        assert_eq!(jv.v, 12.0);
        assert_eq!(jv.dx(0), 12.0);
        assert_eq!(jv.dx(1), 4.0);
        assert_eq!(jv.dxx(0, 0), 6.0);
        assert_eq!(jv.dxx(0, 1), 4.0);
        assert_eq!(jv.dxx(1, 0), 4.0);
        assert_eq!(jv.dxx(1, 1), 0.0);
    }

    #[test]
    fn hessian_mirror_is_bit_identical() {
        let x0 = Jet2::seed_x(0.7, 0);
        let x1 = Jet2::seed_x(-1.3, 1);
        let f = Jet2::unary(x0.mul(x1).add(x0), (0.7f64 * -1.3 + 0.7).exp(), 1.0, 1.0);
        let d = 2;
        for i in 0..d {
            for j in 0..d {
                let a = f.slot(slot_dxx(d, i, j));
                let b = f.slot(slot_dxx(d, j, i));
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
