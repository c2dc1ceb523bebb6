//! The flat Kähler torus T⁴ = (ℝ/Lℤ)⁴ on an N⁴ lattice, with forward
//! difference exterior calculus, its adjoint, the (p,q) splitting of 2-forms
//! and an FFT Poisson solver.
//!
//! Complex coordinates are z¹ = x¹ + i x², z² = x³ + i x⁴ (directions 0,1 and
//! 2,3 in code) and ω = dx¹∧dx² + dx³∧dx⁴.

use num_complex::Complex64 as C;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum LatticeError {
    #[error("lattice needs N >= 2 and L > 0 (got N = {n}, L = {l})")]
    BadTorus { n: usize, l: f64 },
    #[error("exterior derivative of a top-degree form")]
    TopDegree,
    #[error("codifferential of a 0-form")]
    ZeroDegree,
    #[error("expected a {expected}-form, got degree {got}")]
    Degree { expected: usize, got: usize },
    #[error("right-hand side has nonzero mean {mean:e}")]
    NonzeroMean { mean: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad field dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The six coordinate planes in lexicographic order.
pub const PLANES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn plane_index(mu: usize, nu: usize) -> usize {
    PLANES.iter().position(|&(a, b)| a == mu && b == nu).expect("mu < nu")
}

/// Sorted direction sets of the k-cells at a site.
pub fn components(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..16 {
        if mask.count_ones() as usize == k {
            out.push((0..4).filter(|d| mask & (1 << d) != 0).collect::<Vec<_>>());
        }
    }
    out.sort();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaehlerTorus {
    pub n: usize,
    pub l: f64,
}

impl KaehlerTorus {
    pub fn new(n: usize, l: f64) -> Result<Self, LatticeError> {
        if n < 2 || !(l > 0.0) || !l.is_finite() {
            return Err(LatticeError::BadTorus { n, l });
        }
        Ok(KaehlerTorus { n, l })
    }

    pub fn unit(n: usize) -> Self {
        Self::new(n, 1.0).expect("valid lattice")
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.n.pow(4)
    }

    pub fn vol(&self) -> f64 {
        self.l.powi(4)
    }

    /// Quadrature weight of one site, h⁴.
    #[inline]
    pub fn cell(&self) -> f64 {
        self.h().powi(4)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 4] {
        let n = self.n;
        [idx / (n * n * n), (idx / (n * n)) % n, (idx / n) % n, idx % n]
    }

    #[inline]
    pub fn index(&self, x: [usize; 4]) -> usize {
        let n = self.n;
        ((x[0] * n + x[1]) * n + x[2]) * n + x[3]
    }

    #[inline]
    pub fn stride(&self, mu: usize) -> usize {
        self.n.pow(3 - mu as u32)
    }

    /// Neighbour of `idx` one step along ±mu, with periodic wrap.
    #[inline]
    pub fn shift(&self, idx: usize, mu: usize, forward: bool) -> usize {
        let s = self.stride(mu);
        let c = (idx / s) % self.n;
        if forward {
            if c + 1 == self.n {
                idx + s - self.n * s
            } else {
                idx + s
            }
        } else if c == 0 {
            idx + self.n * s - s
        } else {
            idx - s
        }
    }

    pub fn shift_by(&self, idx: usize, d: [isize; 4]) -> usize {
        let x = self.coords(idx);
        let n = self.n as isize;
        let mut y = [0usize; 4];
        for k in 0..4 {
            y[k] = (x[k] as isize + d[k]).rem_euclid(n) as usize;
        }
        self.index(y)
    }

    /// Forward and backward neighbour tables, `[site][mu]`.
    pub fn neighbours(&self) -> (Vec<[usize; 4]>, Vec<[usize; 4]>) {
        let v = self.sites();
        let mut f = vec![[0; 4]; v];
        let mut b = vec![[0; 4]; v];
        for x in 0..v {
            for mu in 0..4 {
                f[x][mu] = self.shift(x, mu, true);
                b[x][mu] = self.shift(x, mu, false);
            }
        }
        (f, b)
    }

    /// Physical position of a site.
    pub fn position(&self, idx: usize) -> [f64; 4] {
        let c = self.coords(idx);
        let h = self.h();
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h, c[3] as f64 * h]
    }

    /// Minimal-image displacement y − x on the torus, physical units.
    pub fn displacement(&self, x: [f64; 4], y: [f64; 4]) -> [f64; 4] {
        let mut d = [0.0; 4];
        for k in 0..4 {
            let mut t = (y[k] - x[k]) % self.l;
            if t > 0.5 * self.l {
                t -= self.l;
            } else if t < -0.5 * self.l {
                t += self.l;
            }
            d[k] = t;
        }
        d
    }

    pub fn distance(&self, x: [f64; 4], y: [f64; 4]) -> f64 {
        self.displacement(x, y).iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Real,
    Complex,
    Algebra,
    Vector,
}

impl ValueKind {
    fn code(self) -> u32 {
        match self {
            ValueKind::Real => 0,
            ValueKind::Complex => 1,
            ValueKind::Algebra => 2,
            ValueKind::Vector => 3,
        }
    }
    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => ValueKind::Real,
            1 => ValueKind::Complex,
            2 => ValueKind::Algebra,
            3 => ValueKind::Vector,
            _ => return None,
        })
    }
}

/// A k-form with `width` complex lanes per component.
///
/// Layout: `data[(site * ncomp + comp) * width + lane]`, components ordered
/// as in [`components`]. Real forms keep zero imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteForm {
    pub degree: usize,
    pub kind: ValueKind,
    pub width: usize,
    pub data: Vec<C>,
}

pub fn binomial4(k: usize) -> usize {
    [1, 4, 6, 4, 1][k]
}

impl DiscreteForm {
    pub fn zeros(torus: &KaehlerTorus, degree: usize, kind: ValueKind, width: usize) -> Self {
        DiscreteForm {
            degree,
            kind,
            width,
            data: vec![C::new(0.0, 0.0); torus.sites() * binomial4(degree) * width],
        }
    }

    pub fn scalar_fn(torus: &KaehlerTorus, f: impl Fn([f64; 4]) -> f64) -> Self {
        let mut out = Self::zeros(torus, 0, ValueKind::Real, 1);
        for x in 0..torus.sites() {
            out.data[x] = C::new(f(torus.position(x)), 0.0);
        }
        out
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        binomial4(self.degree)
    }

    #[inline]
    pub fn at(&self, site: usize, comp: usize) -> &[C] {
        let o = (site * self.ncomp() + comp) * self.width;
        &self.data[o..o + self.width]
    }

    #[inline]
    pub fn at_mut(&mut self, site: usize, comp: usize) -> &mut [C] {
        let o = (site * self.ncomp() + comp) * self.width;
        let w = self.width;
        &mut self.data[o..o + w]
    }

    fn same_shape(&self, o: &Self) -> Result<(), LatticeError> {
        if self.degree != o.degree || self.width != o.width || self.data.len() != o.data.len() {
            return Err(LatticeError::Shape(format!(
                "degree {}/{} width {}/{}",
                self.degree, o.degree, self.width, o.width
            )));
        }
        Ok(())
    }

    /// Discrete L² pairing h⁴ Σ Re⟨f, g⟩.
    pub fn inner(&self, o: &Self, torus: &KaehlerTorus) -> Result<f64, LatticeError> {
        self.same_shape(o)?;
        Ok(torus.cell() * self.data.iter().zip(&o.data).map(|(a, b)| (a.conj() * b).re).sum::<f64>())
    }

    pub fn norm_l2(&self, torus: &KaehlerTorus) -> f64 {
        (torus.cell() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// h⁴ Σ over sites, per component and lane.
    pub fn integrate(&self, torus: &KaehlerTorus) -> Vec<C> {
        let stride = self.ncomp() * self.width;
        let mut out = vec![C::new(0.0, 0.0); stride];
        for chunk in self.data.chunks(stride) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out.iter().map(|z| z * torus.cell()).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        out
    }

    pub fn axpy(&mut self, s: f64, o: &Self) -> Result<(), LatticeError> {
        self.same_shape(o)?;
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b * s;
        }
        Ok(())
    }
}

pub fn exterior_d(torus: &KaehlerTorus, f: &DiscreteForm) -> Result<DiscreteForm, LatticeError> {
    if f.degree >= 4 {
        return Err(LatticeError::TopDegree);
    }
    let k = f.degree;
    let src = components(k);
    let dst = components(k + 1);
    let mut out = DiscreteForm::zeros(torus, k + 1, f.kind, f.width);
    let inv_h = 1.0 / torus.h();
    for x in 0..torus.sites() {
        for (jc, set) in dst.iter().enumerate() {
            for (pos, &j) in set.iter().enumerate() {
                let rest: Vec<usize> = set.iter().copied().filter(|&d| d != j).collect();
                let ic = src.iter().position(|s| *s == rest).unwrap();
                let sign = if pos % 2 == 0 { inv_h } else { -inv_h };
                let y = torus.shift(x, j, true);
                for lane in 0..f.width {
                    let v = (f.at(y, ic)[lane] - f.at(x, ic)[lane]) * sign;
                    out.at_mut(x, jc)[lane] += v;
                }
            }
        }
    }
    Ok(out)
}

pub fn codifferential(torus: &KaehlerTorus, f: &DiscreteForm) -> Result<DiscreteForm, LatticeError> {
    if f.degree == 0 {
        return Err(LatticeError::ZeroDegree);
    }
    let k = f.degree;
    let src = components(k);
    let dst = components(k - 1);
    let mut out = DiscreteForm::zeros(torus, k - 1, f.kind, f.width);
    let inv_h = 1.0 / torus.h();
    for x in 0..torus.sites() {
        for (ic, set) in dst.iter().enumerate() {
            for j in 0..4 {
                if set.contains(&j) {
                    continue;
                }
                let mut full = set.clone();
                full.push(j);
                full.sort();
                let pos = full.iter().position(|&d| d == j).unwrap();
                let jc = src.iter().position(|s| *s == full).unwrap();
                let sign = if pos % 2 == 0 { -inv_h } else { inv_h };
                let y = torus.shift(x, j, false);
                for lane in 0..f.width {
                    let v = (f.at(x, jc)[lane] - f.at(y, jc)[lane]) * sign;
                    out.at_mut(x, ic)[lane] += v;
                }
            }
        }
    }
    Ok(out)
}

/// Pointwise (p,q) decomposition of a 2-form.
#[derive(Clone, Debug)]
pub struct TypeSplit {
    pub f20: DiscreteForm,
    pub f11: DiscreteForm,
    pub f02: DiscreteForm,
    /// ΛF.
    pub trace: DiscreteForm,
}

/// Components of dz¹∧dz² in the real plane order of [`PLANES`].
pub const DZ1_DZ2: [C; 6] = [
    C { re: 0.0, im: 0.0 },
    C { re: 1.0, im: 0.0 },
    C { re: 0.0, im: 1.0 },
    C { re: 0.0, im: 1.0 },
    C { re: -1.0, im: 0.0 },
    C { re: 0.0, im: 0.0 },
];

pub fn type_split(torus: &KaehlerTorus, f: &DiscreteForm) -> Result<TypeSplit, LatticeError> {
    if f.degree != 2 {
        return Err(LatticeError::Degree {
            expected: 2,
            got: f.degree,
        });
    }
    let kind = if f.kind == ValueKind::Real { ValueKind::Complex } else { f.kind };
    let mut f20 = DiscreteForm::zeros(torus, 2, kind, f.width);
    let mut f02 = f20.clone();
    let mut f11 = f20.clone();
    let mut trace = DiscreteForm::zeros(torus, 0, f.kind, f.width);
    let i = C::new(0.0, 1.0);
    for x in 0..torus.sites() {
        for lane in 0..f.width {
            let g = |p: usize| f.at(x, p)[lane];
            // Coefficients against dz¹∧dz² and its conjugate, |dz¹∧dz²|² = 4.
            let a = g(1) - g(4);
            let b = g(2) + g(3);
            let c20 = (a - i * b) * 0.25;
            let c02 = (a + i * b) * 0.25;
            for p in 0..6 {
                let v20 = DZ1_DZ2[p] * c20;
                let v02 = DZ1_DZ2[p].conj() * c02;
                f20.at_mut(x, p)[lane] = v20;
                f02.at_mut(x, p)[lane] = v02;
                f11.at_mut(x, p)[lane] = g(p) - v20 - v02;
            }
            trace.at_mut(x, 0)[lane] = g(0) + g(5);
        }
    }
    Ok(TypeSplit { f20, f11, f02, trace })
}

/// In-place 4D DFT of one complex lane stored row-major over N⁴.
pub(crate) fn fft4(torus: &KaehlerTorus, data: &mut [C], inverse: bool) {
    let n = torus.n;
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![C::new(0.0, 0.0); n];
    let mut scratch = vec![C::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mu in 0..4 {
        let s = torus.stride(mu);
        for base in 0..torus.sites() {
            if (base / s) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = data[base + k * s];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for k in 0..n {
                data[base + k * s] = line[k];
            }
        }
    }
}

/// Eigenvalue of the discrete Laplacian −d*d at Fourier mode `idx`.
pub(crate) fn laplacian_symbol(torus: &KaehlerTorus, idx: usize) -> f64 {
    let k = torus.coords(idx);
    let h2 = torus.h() * torus.h();
    k.iter()
        .map(|&km| (2.0 * (2.0 * std::f64::consts::PI * km as f64 / torus.n as f64).cos() - 2.0) / h2)
        .sum()
}

/// Discrete Laplacian Δ = −d*d on 0-forms.
pub fn laplacian(torus: &KaehlerTorus, u: &DiscreteForm) -> Result<DiscreteForm, LatticeError> {
    if u.degree != 0 {
        return Err(LatticeError::Degree { expected: 0, got: u.degree });
    }
    Ok(codifferential(torus, &exterior_d(torus, u)?)?.scale(-1.0))
}

/// Solves Δu = rhs on the torus with zero-mean u, lane by lane.
pub fn laplace_solve(torus: &KaehlerTorus, rhs: &DiscreteForm) -> Result<DiscreteForm, LatticeError> {
    if rhs.degree != 0 {
        return Err(LatticeError::Degree { expected: 0, got: rhs.degree });
    }
    let v = torus.sites();
    let w = rhs.width;
    let mut out = rhs.clone();
    let mut lane_data = vec![C::new(0.0, 0.0); v];
    let rms = (rhs.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / v as f64).sqrt();
    for lane in 0..w {
        let mut sum = C::new(0.0, 0.0);
        for x in 0..v {
            let z = rhs.data[x * w + lane];
            lane_data[x] = z;
            sum += z;
        }
        let mean = sum.norm() / v as f64;
        if mean > 1e-10 * rms {
            return Err(LatticeError::NonzeroMean { mean });
        }
        fft4(torus, &mut lane_data, false);
        lane_data[0] = C::new(0.0, 0.0);
        for (k, z) in lane_data.iter_mut().enumerate().skip(1) {
            *z /= laplacian_symbol(torus, k);
        }
        fft4(torus, &mut lane_data, true);
        let norm = 1.0 / v as f64;
        for x in 0..v {
            let mut z = lane_data[x] * norm;
            if rhs.kind == ValueKind::Real {
                z.im = 0.0;
            }
            out.data[x * w + lane] = z;
        }
    }
    Ok(out)
}

/// Random smooth real scalar: a sum of `terms` cosines with integer
/// wavevectors in [−kmax, kmax]⁴, Gaussian amplitudes damped by 1/(1 + |k|²).
pub fn band_limited<R: rand::Rng>(torus: &KaehlerTorus, rng: &mut R, kmax: i32, terms: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut modes = Vec::with_capacity(terms);
    for _ in 0..terms {
        let k: [f64; 4] = std::array::from_fn(|_| rng.random_range(-kmax..=kmax) as f64);
        let k2: f64 = k.iter().map(|v| v * v).sum();
        let amp: f64 = StandardNormal.sample(rng);
        let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        modes.push((k, amp / (1.0 + k2), phase));
    }
    let w = 2.0 * std::f64::consts::PI / torus.l;
    (0..torus.sites())
        .map(|x| {
            let p = torus.position(x);
            modes
                .iter()
                .map(|(k, a, ph)| a * (w * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3] * p[3]) + ph).cos())
                .sum()
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"VLXF";

/// Writes the little-endian field dump: magic, N, L, degree, value type,
/// f64 components per site, then row-major site data.
pub fn write_dump<W: Write>(mut w: W, torus: &KaehlerTorus, f: &DiscreteForm) -> Result<(), LatticeError> {
    let real = f.kind == ValueKind::Real;
    let per_site = f.ncomp() * f.width * if real { 1 } else { 2 };
    w.write_all(MAGIC)?;
    w.write_all(&(torus.n as u32).to_le_bytes())?;
    w.write_all(&torus.l.to_le_bytes())?;
    w.write_all(&(f.degree as u32).to_le_bytes())?;
    w.write_all(&f.kind.code().to_le_bytes())?;
    w.write_all(&(per_site as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(f.data.len() * 16);
    for z in &f.data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        if !real {
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<(KaehlerTorus, DiscreteForm), LatticeError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LatticeError::Dump("bad magic".into()));
    }
    let mut u = [0u8; 4];
    let mut d = [0u8; 8];
    let mut read_u32 = |r: &mut R| -> Result<u32, LatticeError> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let n = read_u32(&mut r)? as usize;
    r.read_exact(&mut d)?;
    let l = f64::from_le_bytes(d);
    let degree = read_u32(&mut r)? as usize;
    let kind = ValueKind::from_code(read_u32(&mut r)?).ok_or_else(|| LatticeError::Dump("value type".into()))?;
    let per_site = read_u32(&mut r)? as usize;
    if degree > 4 {
        return Err(LatticeError::Dump("degree".into()));
    }
    let torus = KaehlerTorus::new(n, l)?;
    let real = kind == ValueKind::Real;
    let lanes = per_site / if real { 1 } else { 2 };
    if lanes == 0 || lanes % binomial4(degree) != 0 {
        return Err(LatticeError::Dump("component count".into()));
    }
    let width = lanes / binomial4(degree);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let count = torus.sites() * lanes;
    let need = count * 8 * if real { 1 } else { 2 };
    if bytes.len() != need {
        return Err(LatticeError::Dump(format!("expected {need} data bytes, got {}", bytes.len())));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    let data = (0..count)
        .map(|i| if real { C::new(f(i), 0.0) } else { C::new(f(2 * i), f(2 * i + 1)) })
        .collect();
    Ok((torus, DiscreteForm { degree, kind, width, data }))
}

/// CSV of a scalar 0-form: site coordinates, then value columns.
pub fn write_csv<W: Write>(mut w: W, torus: &KaehlerTorus, f: &DiscreteForm) -> Result<(), LatticeError> {
    if f.degree != 0 || f.width != 1 {
        return Err(LatticeError::Shape("CSV export takes scalar 0-forms".into()));
    }
    let complex = f.kind != ValueKind::Real;
    writeln!(w, "{}", if complex { "x1,x2,x3,x4,re,im" } else { "x1,x2,x3,x4,value" })?;
    for x in 0..torus.sites() {
        let p = torus.position(x);
        let z = f.data[x];
        if complex {
            writeln!(w, "{},{},{},{},{},{}", p[0], p[1], p[2], p[3], z.re, z.im)?;
        } else {
            writeln!(w, "{},{},{},{},{}", p[0], p[1], p[2], p[3], z.re)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_form(t: &KaehlerTorus, k: usize, width: usize, seed: u64) -> DiscreteForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = DiscreteForm::zeros(t, k, ValueKind::Complex, width);
        for z in f.data.iter_mut() {
            *z = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        f
    }

    fn integer_form(t: &KaehlerTorus, k: usize, seed: u64) -> DiscreteForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = DiscreteForm::zeros(t, k, ValueKind::Real, 1);
        for z in f.data.iter_mut() {
            *z = C::new(rng.random_range(-50i32..50) as f64, 0.0);
        }
        f
    }

    #[test]
    fn torus_basics() {
        let t = KaehlerTorus::new(4, 2.0).unwrap();
        let one = DiscreteForm::scalar_fn(&t, |_| 1.0);
        assert!((one.integrate(&t)[0].re - 16.0).abs() < 1e-12);
        assert!(KaehlerTorus::new(1, 1.0).is_err());
        for x in [0, 17, 255] {
            assert_eq!(t.index(t.coords(x)), x);
            for mu in 0..4 {
                assert_eq!(t.shift(t.shift(x, mu, true), mu, false), x);
            }
        }
        assert_eq!(t.shift(t.index([3, 0, 0, 0]), 0, true), 0);
    }

    #[test]
    fn kaehler_form_has_trace_two() {
        let t = KaehlerTorus::unit(3);
        let mut w = DiscreteForm::zeros(&t, 2, ValueKind::Real, 1);
        for x in 0..t.sites() {
            w.at_mut(x, 0)[0] = C::new(1.0, 0.0);
            w.at_mut(x, 5)[0] = C::new(1.0, 0.0);
        }
        let s = type_split(&t, &w).unwrap();
        assert!(s.trace.data.iter().all(|z| (z - C::new(2.0, 0.0)).norm() == 0.0));
        assert_eq!(s.f20.max_abs(), 0.0);
        assert_eq!(s.f02.max_abs(), 0.0);
    }

    #[test]
    fn dz1_dz2_is_pure_type_20() {
        let t = KaehlerTorus::unit(2);
        let mut f = DiscreteForm::zeros(&t, 2, ValueKind::Complex, 1);
        for x in 0..t.sites() {
            for p in 0..6 {
                f.at_mut(x, p)[0] = DZ1_DZ2[p];
            }
        }
        let s = type_split(&t, &f).unwrap();
        assert!(s.f20.data.iter().zip(&f.data).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(s.f11.max_abs() < 1e-15 && s.f02.max_abs() < 1e-15);
    }

    #[test]
    fn type_split_projectors() {
        let t = KaehlerTorus::unit(3);
        let f = random_form(&t, 2, 2, 3);
        let s = type_split(&t, &f).unwrap();
        for i in 0..f.data.len() {
            assert!((s.f20.data[i] + s.f11.data[i] + s.f02.data[i] - f.data[i]).norm() < 1e-15);
        }
        let again = type_split(&t, &s.f20).unwrap();
        assert!(again.f20.data.iter().zip(&s.f20.data).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(again.f02.max_abs() < 1e-15 && again.f11.max_abs() < 1e-15);
        assert!(type_split(&t, &s.f20).unwrap().trace.max_abs() < 1e-14);
        assert!(type_split(&t, &s.f02).unwrap().trace.max_abs() < 1e-14);
        // Pointwise orthogonality of the three pieces.
        let ip = |a: &DiscreteForm, b: &DiscreteForm| a.inner(b, &t).unwrap();
        assert!(ip(&s.f20, &s.f02).abs() < 1e-14);
        assert!(ip(&s.f20, &s.f11).abs() < 1e-14);
        assert!(ip(&s.f11, &s.f02).abs() < 1e-14);
    }

    #[test]
    fn dd_vanishes_exactly_on_integer_forms() {
        let t = KaehlerTorus::new(4, 4.0).unwrap();
        for k in 0..3 {
            let f = integer_form(&t, k, 10 + k as u64);
            let ddf = exterior_d(&t, &exterior_d(&t, &f).unwrap()).unwrap();
            assert_eq!(ddf.max_abs(), 0.0);
            let s = codifferential(&t, &codifferential(&t, &integer_form(&t, k + 2, 20)).unwrap()).unwrap();
            assert_eq!(s.max_abs(), 0.0);
        }
    }

    #[test]
    fn discrete_stokes() {
        let t = KaehlerTorus::new(4, 4.0).unwrap();
        for k in 0..4 {
            let df = exterior_d(&t, &integer_form(&t, k, 30 + k as u64)).unwrap();
            assert!(df.integrate(&t).iter().all(|z| z.norm() == 0.0));
        }
        assert!(exterior_d(&t, &integer_form(&t, 4, 1)).is_err());
        assert!(codifferential(&t, &integer_form(&t, 0, 1)).is_err());
    }

    #[test]
    fn adjointness() {
        let t = KaehlerTorus::new(3, 0.7).unwrap();
        for k in 0..4 {
            let f = random_form(&t, k, 2, 40 + k as u64);
            let g = random_form(&t, k + 1, 2, 50 + k as u64);
            let lhs = exterior_d(&t, &f).unwrap().inner(&g, &t).unwrap();
            let rhs = f.inner(&codifferential(&t, &g).unwrap(), &t).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "{k}: {lhs} {rhs}");
        }
        let g = random_form(&t, 0, 1, 7);
        let dg = exterior_d(&t, &g).unwrap();
        let lhs = codifferential(&t, &dg).unwrap().inner(&g, &t).unwrap();
        assert!((lhs - dg.inner(&dg, &t).unwrap()).abs() < 1e-10 * lhs.abs());
    }

    #[test]
    fn derivative_converges_at_second_order_at_cell_centres() {
        let err = |n: usize| {
            let t = KaehlerTorus::unit(n);
            let f = DiscreteForm::scalar_fn(&t, |p| (2.0 * PI * p[0]).sin());
            let df = exterior_d(&t, &f).unwrap();
            let h = t.h();
            (0..t.sites())
                .map(|x| {
                    let p = t.position(x);
                    let exact = 2.0 * PI * (2.0 * PI * (p[0] + 0.5 * h)).cos();
                    (df.at(x, 0)[0].re - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(16) / err(32);
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn laplace_solve_examples() {
        let t = KaehlerTorus::unit(8);
        let zero = DiscreteForm::zeros(&t, 0, ValueKind::Real, 1);
        assert_eq!(laplace_solve(&t, &zero).unwrap().max_abs(), 0.0);
        let rhs = DiscreteForm::scalar_fn(&t, |p| (2.0 * PI * p[0]).sin());
        let u = laplace_solve(&t, &rhs).unwrap();
        let res = laplacian(&t, &u).unwrap();
        let mut diff = res.clone();
        diff.axpy(-1.0, &rhs).unwrap();
        assert!(diff.norm_l2(&t) < 1e-10 * rhs.norm_l2(&t));
        // Discrete symbol: u = −sin / (4 sin²(πh/L)/h²).
        let h = t.h();
        let sym = 4.0 * (PI * h).sin().powi(2) / (h * h);
        for x in 0..t.sites() {
            let want = -(2.0 * PI * t.position(x)[0]).sin() / sym;
            assert!((u.data[x].re - want).abs() < 1e-12);
        }
        // Continuum limit (L/2π)², relative gap ≈ (πh)²/3.
        let gap = sym * (0.5 / PI).powi(2) - 1.0;
        assert!((gap + (PI * h).powi(2) / 3.0).abs() < 0.1 * (PI * h).powi(2) / 3.0, "{gap}");
        let c = DiscreteForm::scalar_fn(&t, |_| 3.0);
        assert!(matches!(laplace_solve(&t, &c), Err(LatticeError::NonzeroMean { .. })));
    }

    #[test]
    fn laplace_solve_random_complex_lanes() {
        let t = KaehlerTorus::new(6, 1.3).unwrap();
        let mut rhs = random_form(&t, 0, 3, 9);
        let mean = rhs.integrate(&t).iter().map(|z| z / t.vol()).collect::<Vec<_>>();
        for x in 0..t.sites() {
            for l in 0..3 {
                rhs.data[x * 3 + l] -= mean[l];
            }
        }
        let u = laplace_solve(&t, &rhs).unwrap();
        let mut r = laplacian(&t, &u).unwrap();
        r.axpy(-1.0, &rhs).unwrap();
        assert!(r.norm_l2(&t) < 1e-10 * rhs.norm_l2(&t));
        assert!(u.integrate(&t).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn dump_round_trip() {
        let t = KaehlerTorus::new(3, 1.5).unwrap();
        for (kind, k, w) in [(ValueKind::Real, 0, 1), (ValueKind::Algebra, 1, 4), (ValueKind::Vector, 0, 2)] {
            let mut f = random_form(&t, k, w, 11);
            f.kind = kind;
            if kind == ValueKind::Real {
                f.data.iter_mut().for_each(|z| z.im = 0.0);
            }
            let mut buf = Vec::new();
            write_dump(&mut buf, &t, &f).unwrap();
            let (t2, g) = read_dump(&buf[..]).unwrap();
            assert_eq!(t2, t);
            assert_eq!(g, f);
        }
        assert!(read_dump(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let t = KaehlerTorus::unit(2);
        let f = DiscreteForm::scalar_fn(&t, |p| p[0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t, &f).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 17);
        assert!(s.starts_with("x1,x2,x3,x4,value"));
    }
}
