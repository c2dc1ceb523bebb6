//! Small dense complex matrices and the matrix functions used on links.
//!
//! Two implementations of [`Mat`] exist: a bare `Complex64` for the abelian
//! case and [`DMat`] for `n x n` blocks. The lattice kernels are generic over
//! the trait so the U(1) path runs on plain scalars.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use smallvec::SmallVec;

pub const I: C = C { re: 0.0, im: 1.0 };

pub trait Mat: Clone + Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn zeros(n: usize) -> Self;
    fn eye(n: usize) -> Self;
    fn from_slice(n: usize, s: &[C]) -> Self;
    fn write(&self, out: &mut [C]);
    fn mul(&self, o: &Self) -> Self;
    fn adj(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn cscale(&self, s: C) -> Self;
    fn add_scaled(&mut self, o: &Self, s: f64);
    /// Re tr(self^† o).
    fn dot(&self, o: &Self) -> f64;
    fn norm_sqr(&self) -> f64 {
        self.dot(self)
    }
    /// Projection onto anti-Hermitian matrices, (X - X^†)/2.
    fn skew(&self) -> Self;
    fn exp_skew(&self) -> Self;
    fn log_unitary(&self) -> Self;
    /// Adjoint of the Frechet derivative of `exp` at `self`, applied to `g`.
    fn exp_skew_adj(&self, g: &Self) -> Self;
    /// Adjoint of the Frechet derivative of the principal `log` at `self`.
    fn log_unitary_adj(&self, g: &Self) -> Self;
    /// out = self * v
    fn apply(&self, v: &[C], out: &mut [C]);
    /// out = self^† * v
    fn apply_adj(&self, v: &[C], out: &mut [C]);
    /// self += s * a b^†
    fn add_outer(&mut self, a: &[C], b: &[C], s: f64);
}

impl Mat for C {
    #[inline]
    fn dim(&self) -> usize {
        1
    }
    #[inline]
    fn zeros(_: usize) -> Self {
        C::new(0.0, 0.0)
    }
    #[inline]
    fn eye(_: usize) -> Self {
        C::new(1.0, 0.0)
    }
    #[inline]
    fn from_slice(_: usize, s: &[C]) -> Self {
        s[0]
    }
    #[inline]
    fn write(&self, out: &mut [C]) {
        out[0] = *self;
    }
    #[inline]
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    #[inline]
    fn adj(&self) -> Self {
        self.conj()
    }
    #[inline]
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    #[inline]
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    #[inline]
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn cscale(&self, s: C) -> Self {
        self * s
    }
    #[inline]
    fn add_scaled(&mut self, o: &Self, s: f64) {
        *self += o * s;
    }
    #[inline]
    fn dot(&self, o: &Self) -> f64 {
        self.re * o.re + self.im * o.im
    }
    #[inline]
    fn skew(&self) -> Self {
        C::new(0.0, self.im)
    }
    #[inline]
    fn exp_skew(&self) -> Self {
        let (s, c) = self.im.sin_cos();
        C::new(c, s)
    }
    #[inline]
    fn log_unitary(&self) -> Self {
        C::new(0.0, self.arg())
    }
    #[inline]
    fn exp_skew_adj(&self, g: &Self) -> Self {
        self.exp_skew().conj() * g
    }
    #[inline]
    fn log_unitary_adj(&self, g: &Self) -> Self {
        (C::new(1.0, 0.0) / self).conj() * g
    }
    #[inline]
    fn apply(&self, v: &[C], out: &mut [C]) {
        out[0] = self * v[0];
    }
    #[inline]
    fn apply_adj(&self, v: &[C], out: &mut [C]) {
        out[0] = self.conj() * v[0];
    }
    #[inline]
    fn add_outer(&mut self, a: &[C], b: &[C], s: f64) {
        *self += a[0] * b[0].conj() * s;
    }
}

/// Dense row-major complex square matrix, stored inline up to 2 x 2.
#[derive(Clone, Debug, PartialEq)]
pub struct DMat {
    pub n: usize,
    pub a: SmallVec<[C; 4]>,
}

impl DMat {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C {
        self.a[i * self.n + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C) {
        self.a[i * self.n + j] = v;
    }
    pub fn trace(&self) -> C {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
    pub fn diag(d: &[C]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }
    pub fn max_abs(&self) -> f64 {
        self.a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
    /// |X + X^†|_max, zero for anti-Hermitian input.
    pub fn skew_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max((self.get(i, j) + self.get(j, i).conj()).norm());
            }
        }
        m
    }
    pub fn to_nalgebra(&self) -> DMatrix<C> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }
    pub fn from_nalgebra(m: &DMatrix<C>) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }
    pub fn matvec(&self, v: &[C]) -> Vec<C> {
        let mut out = vec![C::new(0.0, 0.0); self.n];
        self.apply(v, &mut out);
        out
    }
}

/// Spectral data of a normal matrix: unitary eigenvectors (columns of `w`)
/// and eigenvalues.
struct Eig {
    w: DMat,
    lam: SmallVec<[C; 4]>,
}

fn eig_normal(m: &DMat, hermitian_hint: bool) -> Eig {
    match m.n {
        1 => Eig {
            w: DMat::eye(1),
            lam: smallvec::smallvec![m.a[0]],
        },
        2 => eig2(m),
        _ => {
            if hermitian_hint {
                // m = i H with H Hermitian.
                let h = m.cscale(-I).to_nalgebra();
                let e = nalgebra::SymmetricEigen::new(h);
                Eig {
                    w: DMat::from_nalgebra(&e.eigenvectors),
                    lam: e.eigenvalues.iter().map(|x| I * *x).collect(),
                }
            } else {
                let s = nalgebra::Schur::new(m.to_nalgebra());
                let (q, t) = s.unpack();
                let lam = (0..m.n).map(|i| t[(i, i)]).collect();
                Eig {
                    w: DMat::from_nalgebra(&q),
                    lam,
                }
            }
        }
    }
}

fn eig2(m: &DMat) -> Eig {
    let (p, q, r, s) = (m.a[0], m.a[1], m.a[2], m.a[3]);
    let half_tr = (p + s) * 0.5;
    let half_diff = (p - s) * 0.5;
    let disc = (half_diff * half_diff + q * r).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    // Null vector of (m - l1): take the better conditioned of the two rows.
    let v_a = [q, l1 - p];
    let v_b = [l1 - s, r];
    let na = v_a[0].norm_sqr() + v_a[1].norm_sqr();
    let nb = v_b[0].norm_sqr() + v_b[1].norm_sqr();
    let scale = m.a.iter().map(|z| z.norm_sqr()).sum::<f64>().max(1e-300);
    let (v, nv) = if na >= nb { (v_a, na) } else { (v_b, nb) };
    if nv <= 1e-28 * scale {
        // Scalar matrix: any basis diagonalizes it.
        return Eig {
            w: DMat::eye(2),
            lam: smallvec::smallvec![p, s],
        };
    }
    let inv = 1.0 / nv.sqrt();
    let (x, y) = (v[0] * inv, v[1] * inv);
    let mut w = DMat::zeros(2);
    w.set(0, 0, x);
    w.set(1, 0, y);
    w.set(0, 1, -y.conj());
    w.set(1, 1, x.conj());
    Eig {
        w,
        lam: smallvec::smallvec![l1, l2],
    }
}

/// (e^a - e^b)/(a - b), stable for a close to b.
fn exp_divdiff(a: C, b: C) -> C {
    let z = a - b;
    if z.norm() < 1e-4 {
        b.exp() * (C::new(1.0, 0.0) + z * 0.5 + z * z / 6.0 + z * z * z / 24.0)
    } else {
        (a.exp() - b.exp()) / z
    }
}

/// (log a - log b)/(a - b) for a, b on the unit circle.
fn log_divdiff(a: C, b: C) -> C {
    let (al, be) = (a.arg(), b.arg());
    let x = 0.5 * (al - be);
    let ratio = if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x / x.sin()
    };
    // Radii enter through 1/sqrt(|a||b|); exactly one for unitary input.
    C::from_polar(ratio / (a.norm() * b.norm()).sqrt(), -0.5 * (al + be))
}

fn spectral_apply(e: &Eig, f: impl Fn(C) -> C) -> DMat {
    let n = e.w.n;
    let fl: SmallVec<[C; 4]> = e.lam.iter().map(|l| f(*l)).collect();
    let mut out = DMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = C::new(0.0, 0.0);
            for k in 0..n {
                acc += e.w.get(i, k) * fl[k] * e.w.get(j, k).conj();
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn spectral_adjoint(e: &Eig, g: &DMat, dd: impl Fn(C, C) -> C) -> DMat {
    let n = e.w.n;
    let wt = e.w.adj();
    let mut inner = wt.mul(g).mul(&e.w);
    for i in 0..n {
        for j in 0..n {
            let k = dd(e.lam[i], e.lam[j]).conj();
            let v = inner.get(i, j) * k;
            inner.set(i, j, v);
        }
    }
    e.w.mul(&inner).mul(&wt)
}

impl Mat for DMat {
    #[inline]
    fn dim(&self) -> usize {
        self.n
    }
    fn zeros(n: usize) -> Self {
        DMat {
            n,
            a: smallvec::smallvec![C::new(0.0, 0.0); n * n],
        }
    }
    fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = C::new(1.0, 0.0);
        }
        m
    }
    fn from_slice(n: usize, s: &[C]) -> Self {
        DMat {
            n,
            a: SmallVec::from_slice(&s[..n * n]),
        }
    }
    fn write(&self, out: &mut [C]) {
        out[..self.a.len()].copy_from_slice(&self.a);
    }
    fn mul(&self, o: &Self) -> Self {
        let n = self.n;
        if n == 1 {
            return DMat {
                n,
                a: smallvec::smallvec![self.a[0] * o.a[0]],
            };
        }
        if n == 2 {
            let (a, b) = (&self.a, &o.a);
            return DMat {
                n,
                a: smallvec::smallvec![
                    a[0] * b[0] + a[1] * b[2],
                    a[0] * b[1] + a[1] * b[3],
                    a[2] * b[0] + a[3] * b[2],
                    a[2] * b[1] + a[3] * b[3]
                ],
            };
        }
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * n + k];
                for j in 0..n {
                    out.a[i * n + j] += x * o.a[k * n + j];
                }
            }
        }
        out
    }
    fn adj(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[j * n + i] = self.a[i * n + j].conj();
            }
        }
        out
    }
    fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (x, y) in out.a.iter_mut().zip(o.a.iter()) {
            *x += y;
        }
        out
    }
    fn sub(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (x, y) in out.a.iter_mut().zip(o.a.iter()) {
            *x -= y;
        }
        out
    }
    fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for x in out.a.iter_mut() {
            *x *= s;
        }
        out
    }
    fn cscale(&self, s: C) -> Self {
        let mut out = self.clone();
        for x in out.a.iter_mut() {
            *x *= s;
        }
        out
    }
    fn add_scaled(&mut self, o: &Self, s: f64) {
        for (x, y) in self.a.iter_mut().zip(o.a.iter()) {
            *x += y * s;
        }
    }
    fn dot(&self, o: &Self) -> f64 {
        self.a
            .iter()
            .zip(o.a.iter())
            .map(|(x, y)| x.re * y.re + x.im * y.im)
            .sum()
    }
    fn skew(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[i * n + j] = (self.a[i * n + j] - self.a[j * n + i].conj()) * 0.5;
            }
        }
        out
    }
    fn exp_skew(&self) -> Self {
        if self.n == 1 {
            return DMat {
                n: 1,
                a: smallvec::smallvec![self.a[0].exp()],
            };
        }
        let e = eig_normal(self, true);
        spectral_apply(&e, |l| l.exp())
    }
    fn log_unitary(&self) -> Self {
        if self.n == 1 {
            return DMat {
                n: 1,
                a: smallvec::smallvec![self.a[0].log_unitary()],
            };
        }
        let e = eig_normal(self, false);
        spectral_apply(&e, |l| C::new(l.norm().ln(), l.arg()))
    }
    fn exp_skew_adj(&self, g: &Self) -> Self {
        if self.n == 1 {
            return DMat {
                n: 1,
                a: smallvec::smallvec![self.a[0].exp_skew_adj(&g.a[0])],
            };
        }
        let e = eig_normal(self, true);
        spectral_adjoint(&e, g, exp_divdiff)
    }
    fn log_unitary_adj(&self, g: &Self) -> Self {
        if self.n == 1 {
            return DMat {
                n: 1,
                a: smallvec::smallvec![self.a[0].log_unitary_adj(&g.a[0])],
            };
        }
        let e = eig_normal(self, false);
        spectral_adjoint(&e, g, log_divdiff)
    }
    fn apply(&self, v: &[C], out: &mut [C]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = C::new(0.0, 0.0);
            for j in 0..n {
                acc += self.a[i * n + j] * v[j];
            }
            out[i] = acc;
        }
    }
    fn apply_adj(&self, v: &[C], out: &mut [C]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = C::new(0.0, 0.0);
            for j in 0..n {
                acc += self.a[j * n + i].conj() * v[j];
            }
            out[i] = acc;
        }
    }
    fn add_outer(&mut self, a: &[C], b: &[C], s: f64) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.a[i * n + j] += a[i] * b[j].conj() * s;
            }
        }
    }
}

/// Random anti-Hermitian matrix with Gaussian entries of scale `s`.
pub fn random_skew<R: rand::Rng>(rng: &mut R, n: usize, s: f64) -> DMat {
    use rand_distr::{Distribution, StandardNormal};
    let mut m = DMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m.set(i, j, C::new(re, im) * s);
        }
    }
    m.skew()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &DMat, b: &DMat) -> f64 {
        a.sub(b).max_abs()
    }

    // Truncated Taylor series as an independent exponential.
    fn exp_series(x: &DMat) -> DMat {
        let mut term = DMat::eye(x.n);
        let mut acc = DMat::eye(x.n);
        for k in 1..40 {
            term = term.mul(x).scale(1.0 / k as f64);
            acc = acc.add(&term);
        }
        acc
    }

    #[test]
    fn exp_matches_series_and_log_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            for _ in 0..20 {
                let x = random_skew(&mut rng, n, 0.7);
                let e = x.exp_skew();
                assert!(close(&e, &exp_series(&x)) < 1e-12);
                assert!(close(&e.mul(&e.adj()), &DMat::eye(n)) < 1e-12);
                assert!(close(&e.log_unitary(), &x) < 1e-10);
            }
        }
    }

    #[test]
    fn log_of_scalar_and_degenerate_unitaries() {
        let z = C::from_polar(1.0, 0.3);
        let m = DMat::eye(2).cscale(z);
        let l = m.log_unitary();
        assert!(close(&l, &DMat::eye(2).cscale(C::new(0.0, 0.3))) < 1e-14);
    }

    fn frechet_fd(f: impl Fn(&DMat) -> DMat, x: &DMat, e: &DMat) -> DMat {
        let h = 1e-6;
        f(&x.add(&e.scale(h))).sub(&f(&x.sub(&e.scale(h)))).scale(0.5 / h)
    }

    #[test]
    fn derivative_adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=3 {
            for _ in 0..10 {
                let x = random_skew(&mut rng, n, 0.8);
                let p = x.exp_skew();
                let e = random_skew(&mut rng, n, 1.0);
                let g = random_skew(&mut rng, n, 1.0).add(&DMat::eye(n).scale(0.3));
                let lhs = g.dot(&frechet_fd(|y| y.exp_skew(), &x, &e));
                let rhs = x.exp_skew_adj(&g).dot(&e);
                assert!((lhs - rhs).abs() < 1e-7 * (1.0 + lhs.abs()), "{lhs} {rhs}");
                // Perturb the unitary inside the group: p -> p exp(t e).
                let de = p.mul(&e);
                let t = 1e-6;
                let lp = p.mul(&e.scale(t).exp_skew()).log_unitary();
                let lm = p.mul(&e.scale(-t).exp_skew()).log_unitary();
                let lhs = g.dot(&lp.sub(&lm).scale(0.5 / t));
                let rhs = p.log_unitary_adj(&g).dot(&de);
                assert!((lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs()), "{lhs} {rhs}");
            }
        }
    }

    #[test]
    fn scalar_impl_agrees_with_dense() {
        let x = C::new(0.0, 0.4);
        let d = DMat::from_slice(1, &[x]);
        assert!((x.exp_skew() - d.exp_skew().a[0]).norm() < 1e-15);
        let g = C::new(0.3, -0.2);
        let dg = DMat::from_slice(1, &[g]);
        assert!((x.exp_skew_adj(&g) - d.exp_skew_adj(&dg).a[0]).norm() < 1e-15);
    }
}
