//! Structure groups U(1) and U(n), their representations, the moment map and
//! the a-priori constant bounding |φ|² by |μ(φ) − τ|.
//!
//! Conventions: 𝔨 is realised as anti-Hermitian matrices with the inner
//! product ⟨X, Y⟩ = −tr(XY) = Re tr(X†Y). On the traceless part this is the
//! usual −tr pairing; on the centre it restricts to −(1/n) tr X tr Y after
//! splitting off the trace. The moment map is the element μ(φ) ∈ 𝔨 with
//! ⟨μ(φ), X⟩ = Im ⟨φ, ρ_*(X)φ⟩ for every X ∈ 𝔨, and the real centre weight
//! is λ(ξ) = Im λ_ℂ(ξ) where ρ_*(ξ) = λ_ℂ(ξ)·1.

use crate::linalg::{random_skew, DMat, Mat, I};
use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type AlgebraElement = DMat;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AlgebraError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular inner-product table")]
    SingularGram,
    #[error("cannot parse representation descriptor `{0}`")]
    Descriptor(String),
    #[error("admissibility failure: {0}")]
    Inadmissible(String),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    U1,
    UN(usize),
}

#[derive(Clone, Debug)]
pub struct StructureGroup {
    pub kind: GroupKind,
    /// Matrix size of the defining representation.
    pub n: usize,
    pub basis: Vec<DMat>,
    pub center: Vec<DMat>,
    /// Row-major Gram matrix of `basis`.
    pub gram: Vec<f64>,
    gram_inv: Vec<f64>,
}

impl StructureGroup {
    pub fn new(kind: GroupKind) -> Self {
        let n = match kind {
            GroupKind::U1 => 1,
            GroupKind::UN(n) => n,
        };
        let r2 = 0.5f64.sqrt();
        let mut basis = Vec::with_capacity(n * n);
        for j in 0..n {
            let mut m = DMat::zeros(n);
            m.set(j, j, I);
            basis.push(m);
        }
        for j in 0..n {
            for k in (j + 1)..n {
                let mut a = DMat::zeros(n);
                a.set(j, k, C::new(r2, 0.0));
                a.set(k, j, C::new(-r2, 0.0));
                basis.push(a);
                let mut s = DMat::zeros(n);
                s.set(j, k, C::new(0.0, r2));
                s.set(k, j, C::new(0.0, r2));
                basis.push(s);
            }
        }
        let dim = basis.len();
        let mut gram = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                gram[a * dim + b] = inner(&basis[a], &basis[b]);
            }
        }
        let gram_inv = DMatrix::from_row_slice(dim, dim, &gram)
            .try_inverse()
            .map(|m| m.transpose().as_slice().to_vec())
            .unwrap_or_default();
        StructureGroup {
            kind,
            n,
            basis,
            center: vec![DMat::eye(n).cscale(I)],
            gram,
            gram_inv,
        }
    }

    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }

    /// Coordinates of X in the basis, by solving the Gram system.
    pub fn coords(&self, x: &DMat) -> Result<Vec<f64>, AlgebraError> {
        let b: Vec<f64> = self.basis.iter().map(|e| inner(e, x)).collect();
        self.solve_gram(&b)
    }

    fn solve_gram(&self, b: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        let dim = self.algebra_dim();
        if self.gram_inv.len() != dim * dim {
            return Err(AlgebraError::SingularGram);
        }
        Ok((0..dim)
            .map(|a| (0..dim).map(|c| self.gram_inv[a * dim + c] * b[c]).sum())
            .collect())
    }

    pub fn combine(&self, coeffs: &[f64]) -> DMat {
        let mut out = DMat::zeros(self.n);
        for (e, c) in self.basis.iter().zip(coeffs) {
            out.add_scaled(e, *c);
        }
        out
    }

    /// Orthogonal projection onto the semisimple (traceless) part.
    pub fn semisimple_part(&self, x: &DMat) -> DMat {
        let mut out = x.clone();
        for z in &self.center {
            let c = inner(z, x) / inner(z, z);
            out.add_scaled(z, -c);
        }
        out
    }

    pub fn random_element<R: Rng>(&self, rng: &mut R, scale: f64) -> DMat {
        random_skew(rng, self.n, scale)
    }

    pub fn random_group_element<R: Rng>(&self, rng: &mut R) -> DMat {
        random_skew(rng, self.n, 1.5).exp_skew()
    }
}

/// ⟨X, Y⟩ = Re tr(X†Y), which equals −tr(XY) on 𝔨.
pub fn inner(x: &DMat, y: &DMat) -> f64 {
    x.dot(y)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepDescriptor {
    U1 { charge: i32 },
    Fundamental { n: usize },
    Symmetric { n: usize, k: usize },
    /// Direct sum with a trivial summand; never admissible, kept for tests of
    /// the degenerate case.
    PlusTrivial { base: Box<RepDescriptor>, extra: usize },
}

impl fmt::Display for RepDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepDescriptor::U1 { charge } => write!(f, "u1:{charge}"),
            RepDescriptor::Fundamental { n } => write!(f, "un:{n}:fund"),
            RepDescriptor::Symmetric { n, k } => write!(f, "un:{n}:sym{k}"),
            RepDescriptor::PlusTrivial { base, extra } => write!(f, "{base}+triv{extra}"),
        }
    }
}

impl std::str::FromStr for RepDescriptor {
    type Err = AlgebraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AlgebraError::Descriptor(s.to_string());
        if let Some((base, extra)) = s.rsplit_once("+triv") {
            let extra: usize = extra.parse().map_err(|_| bad())?;
            return Ok(RepDescriptor::PlusTrivial {
                base: Box::new(base.parse()?),
                extra,
            });
        }
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["u1", q] => Ok(RepDescriptor::U1 {
                charge: q.parse().map_err(|_| bad())?,
            }),
            ["un", n, kind] => {
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                if *kind == "fund" {
                    Ok(RepDescriptor::Fundamental { n })
                } else if let Some(k) = kind.strip_prefix("sym") {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(bad());
                    }
                    Ok(RepDescriptor::Symmetric { n, k })
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

/// One entry of the sparse table of ρ_*: ρ_*(X)[row, col] += coef · X[i, j].
#[derive(Clone, Copy, Debug)]
struct Entry {
    row: usize,
    col: usize,
    i: usize,
    j: usize,
    coef: f64,
}

#[derive(Clone, Debug)]
pub struct Representation {
    pub group: StructureGroup,
    pub descriptor: RepDescriptor,
    pub dim: usize,
    table: Vec<Entry>,
    /// λ_ℂ(ξ) for each centre basis element.
    pub center_weight: Vec<C>,
    /// U(1) charge when the representation is one-dimensional abelian.
    pub charge: Option<f64>,
}

fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in (0..=left).rev() {
            cur.push(a);
            rec(n, left - a, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, 0, &mut Vec::new(), &mut out);
    out
}

impl Representation {
    pub fn parse(s: &str) -> Result<Self, AlgebraError> {
        Ok(Self::new(s.parse()?))
    }

    pub fn new(descriptor: RepDescriptor) -> Self {
        let (group, dim, table, charge) = Self::build(&descriptor);
        let mut rep = Representation {
            group,
            descriptor,
            dim,
            table,
            center_weight: Vec::new(),
            charge,
        };
        rep.center_weight = rep
            .group
            .center
            .iter()
            .map(|z| rep.push(z).get(0, 0))
            .collect();
        rep
    }

    fn build(d: &RepDescriptor) -> (StructureGroup, usize, Vec<Entry>, Option<f64>) {
        match d {
            RepDescriptor::U1 { charge } => (
                StructureGroup::new(GroupKind::U1),
                1,
                vec![Entry {
                    row: 0,
                    col: 0,
                    i: 0,
                    j: 0,
                    coef: *charge as f64,
                }],
                Some(*charge as f64),
            ),
            RepDescriptor::Fundamental { n } => {
                let mut t = Vec::new();
                for i in 0..*n {
                    for j in 0..*n {
                        t.push(Entry {
                            row: i,
                            col: j,
                            i,
                            j,
                            coef: 1.0,
                        });
                    }
                }
                let kind = if *n == 1 { GroupKind::U1 } else { GroupKind::UN(*n) };
                let charge = if *n == 1 { Some(1.0) } else { None };
                (StructureGroup::new(kind), *n, t, charge)
            }
            RepDescriptor::Symmetric { n, k } => {
                // Orthonormal monomial basis u_α = x^α sqrt(k!/α!); X acts
                // as a derivation: X·x^α = Σ_ij X_ij α_j x^{α − e_j + e_i}.
                let ms = multisets(*n, *k);
                let index = |a: &Vec<usize>| ms.iter().position(|m| m == a).unwrap();
                let mut t = Vec::new();
                for (col, alpha) in ms.iter().enumerate() {
                    for i in 0..*n {
                        for j in 0..*n {
                            if alpha[j] == 0 {
                                continue;
                            }
                            let coef = if i == j {
                                alpha[i] as f64
                            } else {
                                (alpha[j] as f64 * (alpha[i] + 1) as f64).sqrt()
                            };
                            let mut beta = alpha.clone();
                            beta[j] -= 1;
                            beta[i] += 1;
                            t.push(Entry {
                                row: index(&beta),
                                col,
                                i,
                                j,
                                coef,
                            });
                        }
                    }
                }
                let kind = if *n == 1 { GroupKind::U1 } else { GroupKind::UN(*n) };
                let charge = if *n == 1 { Some(*k as f64) } else { None };
                (StructureGroup::new(kind), ms.len(), t, charge)
            }
            RepDescriptor::PlusTrivial { base, extra } => {
                let (g, dim, t, _) = Self::build(base);
                (g, dim + extra, t, None)
            }
        }
    }

    pub fn n(&self) -> usize {
        self.group.n
    }

    /// The matrix ρ_*(X) acting on V.
    pub fn push(&self, x: &DMat) -> DMat {
        let mut out = DMat::zeros(self.dim);
        let n = self.group.n;
        for e in &self.table {
            out.a[e.row * self.dim + e.col] += x.a[e.i * n + e.j] * e.coef;
        }
        out
    }

    /// Transpose of ρ_* for the real pairings, projected to 𝔨.
    pub fn pull(&self, m: &DMat) -> DMat {
        let n = self.group.n;
        let mut y = DMat::zeros(n);
        for e in &self.table {
            y.a[e.i * n + e.j] += m.a[e.row * self.dim + e.col] * e.coef;
        }
        y.skew()
    }

    pub fn infinitesimal_action(&self, x: &DMat, phi: &[C]) -> Result<Vec<C>, AlgebraError> {
        self.check_dims(x, phi)?;
        Ok(self.push(x).matvec(phi))
    }

    fn check_dims(&self, x: &DMat, phi: &[C]) -> Result<(), AlgebraError> {
        if x.n != self.group.n {
            return Err(AlgebraError::Dimension {
                expected: self.group.n,
                got: x.n,
            });
        }
        self.check_phi(phi)
    }

    fn check_phi(&self, phi: &[C]) -> Result<(), AlgebraError> {
        if phi.len() != self.dim {
            return Err(AlgebraError::Dimension {
                expected: self.dim,
                got: phi.len(),
            });
        }
        Ok(())
    }

    /// Group action ρ(g) = exp(ρ_*(log g)).
    pub fn group_matrix(&self, g: &DMat) -> DMat {
        self.push(&g.log_unitary()).exp_skew()
    }

    pub fn act(&self, g: &DMat, phi: &[C]) -> Vec<C> {
        self.group_matrix(g).matvec(phi)
    }

    /// Im ⟨φ, ρ_*(X)φ⟩, the defining pairing of the moment map.
    pub fn pairing(&self, x: &DMat, phi: &[C]) -> f64 {
        let v = self.push(x).matvec(phi);
        phi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum::<C>().im
    }

    pub fn moment_map(&self, phi: &[C]) -> Result<DMat, AlgebraError> {
        self.check_phi(phi)?;
        let b: Vec<f64> = self.group.basis.iter().map(|e| self.pairing(e, phi)).collect();
        let c = self.group.solve_gram(&b)?;
        Ok(self.group.combine(&c))
    }

    /// Real weight λ(X) for X in the centre.
    pub fn lambda(&self, x: &DMat) -> f64 {
        self.lambda_c(x).im
    }

    pub fn lambda_c(&self, x: &DMat) -> C {
        let coords: Vec<f64> = self
            .group
            .center
            .iter()
            .map(|z| inner(z, x) / inner(z, z))
            .collect();
        coords.iter().zip(&self.center_weight).map(|(c, w)| w * *c).sum()
    }

    /// Max over random φ of |ρ_*(ξ)φ − λ_ℂ(ξ)φ| for each centre basis ξ.
    pub fn lambda_consistency(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for (z, w) in self.group.center.iter().zip(&self.center_weight) {
            for _ in 0..16 {
                let phi = random_vector(&mut rng, self.dim);
                let v = self.push(z).matvec(&phi);
                for (a, b) in v.iter().zip(&phi) {
                    worst = worst.max((a - w * b).norm());
                }
            }
        }
        worst
    }
}

pub fn random_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<C> {
    (0..d)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C::new(re, im)
        })
        .collect()
}

fn normalize(v: &mut [C]) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v.iter_mut() {
        *z /= n;
    }
}

/// τ = Σ c_a z_a for the centre basis z_a, with λ(τ) cached.
#[derive(Clone, Debug, Serialize)]
pub struct CentralParameter {
    pub coeffs: Vec<f64>,
    #[serde(skip)]
    pub value: DMat,
    pub lambda: f64,
}

impl CentralParameter {
    pub fn new(rep: &Representation, coeffs: &[f64]) -> Self {
        let mut value = DMat::zeros(rep.group.n);
        for (z, c) in rep.group.center.iter().zip(coeffs) {
            value.add_scaled(z, *c);
        }
        let lambda = rep.lambda(&value);
        CentralParameter {
            coeffs: coeffs.to_vec(),
            value,
            lambda,
        }
    }

    /// τ = t·i·1.
    pub fn scalar(rep: &Representation, t: f64) -> Self {
        Self::new(rep, &[t])
    }

    pub fn matrix(&self) -> &DMat {
        &self.value
    }

    pub fn norm_sqr(&self) -> f64 {
        self.matrix().norm_sqr()
    }

    /// Largest commutator with the algebra basis (zero for central τ).
    pub fn commutator_defect(&self, g: &StructureGroup) -> f64 {
        let t = self.matrix();
        g.basis
            .iter()
            .map(|e| t.mul(e).sub(&e.mul(t)).max_abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub pass: bool,
    pub min_semisimple_norm: f64,
    pub lambda_consistency: f64,
    pub semisimple_dim: usize,
    pub note: String,
}

pub fn admissibility_check(rep: &Representation) -> AdmissibilityReport {
    let lambda_err = rep.lambda_consistency(7);
    let lambda_ok = lambda_err < 1e-10;
    let ss_dim = rep.group.algebra_dim() - rep.group.center.len();
    if ss_dim == 0 {
        let lam = rep.lambda(&rep.group.center[0]);
        let pass = lambda_ok && lam != 0.0;
        return AdmissibilityReport {
            pass,
            min_semisimple_norm: 0.0,
            lambda_consistency: lambda_err,
            semisimple_dim: 0,
            note: if pass {
                "abelian: governed by the nonzero centre weight".into()
            } else {
                "abelian with zero weight or non-scalar centre".into()
            },
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = f64::INFINITY;
    for _ in 0..32 {
        let mut phi = random_vector(&mut rng, rep.dim);
        normalize(&mut phi);
        best = best.min(minimize_semisimple_norm(rep, phi));
        if best < 1e-8 {
            break;
        }
    }
    let pass = lambda_ok && best >= 1e-8;
    AdmissibilityReport {
        pass,
        min_semisimple_norm: best,
        lambda_consistency: lambda_err,
        semisimple_dim: ss_dim,
        note: if !lambda_ok {
            "centre does not act by scalars".into()
        } else if pass {
            "semisimple part acts without trivial subspace".into()
        } else {
            "semisimple part fixes a unit vector".into()
        },
    }
}

/// Riemannian descent of |μ_ss(φ)|² on the unit sphere with step doubling.
fn minimize_semisimple_norm(rep: &Representation, mut phi: Vec<C>) -> f64 {
    let f = |p: &[C]| {
        let mu = rep.moment_map(p).expect("dimension checked");
        rep.group.semisimple_part(&mu).norm_sqr()
    };
    let mut val = f(&phi);
    let mut step = 0.1;
    for _ in 0..2000 {
        if val.sqrt() < 1e-9 {
            break;
        }
        let mu_ss = rep.group.semisimple_part(&rep.moment_map(&phi).unwrap());
        // Gradient of |μ_ss|² in the real inner product: −4i ρ_*(μ_ss) φ.
        let mut g: Vec<C> = rep.push(&mu_ss).matvec(&phi).iter().map(|z| z * (-4.0 * I)).collect();
        let radial: f64 = g.iter().zip(&phi).map(|(a, b)| (b.conj() * a).re).sum();
        for (a, b) in g.iter_mut().zip(&phi) {
            *a -= b * radial;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut trial: Vec<C> = phi.iter().zip(&g).map(|(p, d)| p - d * step).collect();
            normalize(&mut trial);
            let tv = f(&trial);
            if tv < val {
                phi = trial;
                val = tv;
                step *= 2.0;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    val.sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundConstant {
    /// Inflated estimate Ĉ.
    pub value: f64,
    /// Raw supremum over the samples before inflation.
    pub sup: f64,
    pub samples: usize,
    pub seed: u64,
}

pub const BOUND_SAFETY: f64 = 1.25;

/// Sup over r > 0 of r²/|r²μ − τ| for a unit vector with moment map μ.
///
/// With u = 1/r² the reciprocal square is |τ|²u² − 2⟨μ,τ⟩u + |μ|², a
/// quadratic whose minimum over u > 0 is explicit. `None` when it vanishes.
fn radial_sup(mu: &DMat, tau: &DMat) -> Option<f64> {
    let mm = mu.norm_sqr();
    let mt = inner(mu, tau);
    let tt = tau.norm_sqr();
    let qmin = if mt > 0.0 && tt > 0.0 { mm - mt * mt / tt } else { mm };
    let scale = mm.max(tt).max(1e-300);
    if qmin <= 1e-14 * scale {
        None
    } else {
        Some(1.0 / qmin.sqrt())
    }
}

/// Log grid of r² values used alongside the closed-form radial supremum.
fn radial_grid(tau_norm: f64) -> impl Iterator<Item = f64> {
    let base = tau_norm.max(1.0);
    (0..49).map(move |i| base * 10f64.powf(-4.0 + i as f64 / 6.0))
}

pub fn estimate_bound_constant(
    rep: &Representation,
    tau: &CentralParameter,
    samples: usize,
    seed: u64,
) -> Result<BoundConstant, AlgebraError> {
    const MIN_SAMPLES: usize = 10_000;
    if samples < MIN_SAMPLES {
        return Err(AlgebraError::TooFewSamples {
            min: MIN_SAMPLES,
            got: samples,
        });
    }
    let report = admissibility_check(rep);
    if !report.pass {
        return Err(AlgebraError::Inadmissible(report.note));
    }
    let t = tau.matrix();
    let tn = t.norm_sqr().sqrt();
    let sample = |i: usize| -> Result<f64, AlgebraError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut phi = random_vector(&mut rng, rep.dim);
        normalize(&mut phi);
        let mu = rep.moment_map(&phi)?;
        let exact = radial_sup(&mu, t).ok_or_else(|| {
            AlgebraError::Inadmissible(format!(
                "ratio |φ|²/|μ(φ)−τ| diverges along sample {i}"
            ))
        })?;
        let grid = radial_grid(tn)
            .map(|r2| r2 / mu.scale(r2).sub(t).norm_sqr().sqrt())
            .fold(0.0, f64::max);
        Ok(exact.max(grid))
    };
    let sup = crate::par::try_max(samples, sample)?;
    Ok(BoundConstant {
        value: sup * BOUND_SAFETY,
        sup,
        samples,
        seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundVerification {
    pub samples: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

/// Fresh-seed check of |φ|² ≤ Ĉ|μ(φ) − τ| with radii spread log-uniformly.
pub fn verify_bound_constant(
    rep: &Representation,
    tau: &CentralParameter,
    c_hat: f64,
    samples: usize,
    seed: u64,
) -> BoundVerification {
    let t = tau.matrix();
    let scale = t.norm_sqr().sqrt().max(1.0);
    let ratio = |i: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)));
        let mut phi = random_vector(&mut rng, rep.dim);
        normalize(&mut phi);
        let r2 = scale * 10f64.powf(rng.random_range(-4.0..4.0));
        for z in phi.iter_mut() {
            *z *= r2.sqrt();
        }
        let mu = rep.moment_map(&phi).expect("dimension");
        r2 / mu.sub(t).norm_sqr().sqrt()
    };
    let ratios: Vec<f64> = crate::par::map(samples, ratio);
    BoundVerification {
        samples,
        violations: ratios.iter().filter(|r| **r > c_hat).count(),
        worst_ratio: ratios.iter().cloned().fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reps() -> Vec<Representation> {
        ["u1:1", "u1:3", "un:2:fund", "un:3:fund", "un:2:sym2", "un:3:sym2"]
            .iter()
            .map(|s| Representation::parse(s).unwrap())
            .collect()
    }

    #[test]
    fn descriptors_round_trip() {
        for s in ["u1:-2", "un:2:fund", "un:3:sym4", "un:2:fund+triv1"] {
            assert_eq!(s.parse::<RepDescriptor>().unwrap().to_string(), s);
        }
        assert!("un:0:fund".parse::<RepDescriptor>().is_err());
        assert!("su2".parse::<RepDescriptor>().is_err());
    }

    #[test]
    fn symmetric_power_dimension() {
        assert_eq!(Representation::parse("un:2:sym3").unwrap().dim, 4);
        assert_eq!(Representation::parse("un:3:sym2").unwrap().dim, 6);
    }

    #[test]
    fn gram_is_identity_and_center_commutes() {
        for n in 1..=3 {
            let g = StructureGroup::new(if n == 1 { GroupKind::U1 } else { GroupKind::UN(n) });
            let d = g.algebra_dim();
            assert_eq!(d, n * n);
            for a in 0..d {
                for b in 0..d {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g.gram[a * d + b] - want).abs() < 1e-14);
                }
                assert!(g.center[0].mul(&g.basis[a]).sub(&g.basis[a].mul(&g.center[0])).max_abs() < 1e-12);
                assert!(g.basis[a].skew_defect() < 1e-15);
            }
        }
    }

    #[test]
    fn inner_product_splits_as_documented() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = StructureGroup::new(GroupKind::UN(3));
        let x = g.random_element(&mut rng, 1.0);
        let y = g.random_element(&mut rng, 1.0);
        let (x0, y0) = (g.semisimple_part(&x), g.semisimple_part(&y));
        let lhs = inner(&x, &y);
        let rhs = -(x0.mul(&y0).trace().re) - (x.trace() * y.trace()).re / 3.0;
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((lhs + x.mul(&y).trace().re).abs() < 1e-12);
    }

    #[test]
    fn moment_map_examples() {
        let u1 = Representation::parse("u1:1").unwrap();
        assert_eq!(u1.moment_map(&[C::new(0.0, 0.0)]).unwrap().max_abs(), 0.0);
        let q = Representation::parse("u1:3").unwrap();
        let phi = [C::new(0.3, -1.2)];
        let mu = q.moment_map(&phi).unwrap();
        let xi = DMat::eye(1).cscale(I);
        assert!((inner(&mu, &xi) - q.pairing(&xi, &phi)).abs() < 1e-14);
        assert!((mu.get(0, 0) - I * 3.0 * phi[0].norm_sqr()).norm() < 1e-14);
        // Fundamental at e_1: ⟨μ, X⟩ = Im X_11 over the whole basis.
        let f = Representation::parse("un:3:fund").unwrap();
        let e1 = [C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0)];
        let mu = f.moment_map(&e1).unwrap();
        for x in &f.group.basis {
            assert!((inner(&mu, x) - x.get(0, 0).im).abs() < 1e-14);
        }
        assert!(u1.moment_map(&[C::new(1.0, 0.0); 2]).is_err());
    }

    #[test]
    fn infinitesimal_action_examples() {
        let q = Representation::parse("u1:2").unwrap();
        let phi = [C::new(0.5, 0.25)];
        let x = DMat::eye(1).cscale(C::new(0.0, 0.7));
        let v = q.infinitesimal_action(&x, &phi).unwrap();
        assert!((v[0] - I * 2.0 * 0.7 * phi[0]).norm() < 1e-15);
        let f = Representation::parse("un:2:fund").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_skew(&mut rng, 2, 1.0);
        let phi = random_vector(&mut rng, 2);
        assert_eq!(f.infinitesimal_action(&x, &phi).unwrap(), x.matvec(&phi));
        assert!(f.infinitesimal_action(&DMat::zeros(3), &phi).is_err());
    }

    #[test]
    fn defining_identity_on_many_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rep in reps() {
            for _ in 0..1000 / 6 + 1 {
                let phi = random_vector(&mut rng, rep.dim);
                let mu = rep.moment_map(&phi).unwrap();
                assert!(mu.skew_defect() < 1e-12);
                for x in &rep.group.basis {
                    assert!((inner(&mu, x) - rep.pairing(x, &phi)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn symmetric_power_is_a_lie_algebra_map() {
        // ρ_*([X,Y]) = [ρ_*X, ρ_*Y] and ρ(g) agrees with exp of ρ_*.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rep = Representation::parse("un:3:sym3").unwrap();
        let x = random_skew(&mut rng, 3, 1.0);
        let y = random_skew(&mut rng, 3, 1.0);
        let br = x.mul(&y).sub(&y.mul(&x));
        let (px, py) = (rep.push(&x), rep.push(&y));
        let lhs = rep.push(&br);
        let rhs = px.mul(&py).sub(&py.mul(&px));
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        assert!(px.skew_defect() < 1e-13);
    }

    #[test]
    fn pull_is_transpose_of_push() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for rep in reps() {
            let x = random_skew(&mut rng, rep.n(), 1.0);
            let m = random_skew(&mut rng, rep.dim, 1.0);
            assert!((rep.push(&x).dot(&m) - x.dot(&rep.pull(&m))).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn equivariance_and_center_identity(seed in 0u64..1000, which in 0usize..6) {
            let rep = &reps()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_vector(&mut rng, rep.dim);
            let k = rep.group.random_group_element(&mut rng);
            let lhs = rep.moment_map(&rep.act(&k, &phi)).unwrap();
            let rhs = k.mul(&rep.moment_map(&phi).unwrap()).mul(&k.adj());
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-10);
            let xi = &rep.group.center[0];
            let norm2: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
            let mu = rep.moment_map(&phi).unwrap();
            prop_assert!((rep.lambda(xi) * norm2 - inner(&mu, xi)).abs() < 1e-10 * (1.0 + norm2));
        }

        #[test]
        fn infinitesimal_action_is_unitary(seed in 0u64..1000, which in 0usize..6) {
            let rep = &reps()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_vector(&mut rng, rep.dim);
            let x = random_skew(&mut rng, rep.n(), 1.0);
            let v = rep.infinitesimal_action(&x, &phi).unwrap();
            let s: C = phi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            prop_assert!(s.re.abs() < 1e-10);
        }
    }

    #[test]
    fn center_weights() {
        assert!((Representation::parse("u1:3").unwrap().lambda(&DMat::eye(1).cscale(I)) - 3.0).abs() < 1e-15);
        let s = Representation::parse("un:2:sym3").unwrap();
        assert!((s.lambda(&s.group.center[0]) - 3.0).abs() < 1e-14);
        for rep in reps() {
            assert!(rep.lambda_consistency(1) < 1e-12);
        }
    }

    #[test]
    fn admissibility_examples() {
        assert!(admissibility_check(&Representation::parse("u1:2").unwrap()).pass);
        assert!(!admissibility_check(&Representation::parse("u1:0").unwrap()).pass);
        let f = admissibility_check(&Representation::parse("un:2:fund").unwrap());
        assert!(f.pass);
        // Closed form on the unit sphere: |μ_ss| = sqrt(1 − 1/n).
        assert!((f.min_semisimple_norm - 0.5f64.sqrt()).abs() < 1e-6);
        let bad = admissibility_check(&Representation::parse("un:2:fund+triv1").unwrap());
        assert!(!bad.pass);
    }

    #[test]
    fn bound_constant_closed_forms() {
        // U(1), τ = −it: |μ − τ| = |φ|² + t so the sup of the ratio is 1.
        let u1 = Representation::parse("u1:1").unwrap();
        let tau = CentralParameter::scalar(&u1, -2.0);
        let c = estimate_bound_constant(&u1, &tau, 10_000, 1).unwrap();
        assert!((c.sup - 1.0).abs() < 1e-12);
        assert!((c.value - 1.25).abs() < 1e-12);
        // U(2) fundamental, τ = 0: |μ(φ)| = |φ|² exactly.
        let f = Representation::parse("un:2:fund").unwrap();
        let c = estimate_bound_constant(&f, &CentralParameter::scalar(&f, 0.0), 10_000, 1).unwrap();
        assert!((c.sup - 1.0).abs() < 1e-12);
        // U(1) with τ = +it: μ − τ vanishes on the sphere |φ|² = t.
        let plus = CentralParameter::scalar(&u1, 2.0);
        assert!(estimate_bound_constant(&u1, &plus, 10_000, 1).is_err());
        let bad = Representation::parse("un:2:fund+triv1").unwrap();
        assert!(matches!(
            estimate_bound_constant(&bad, &CentralParameter::scalar(&bad, 0.0), 10_000, 1),
            Err(AlgebraError::Inadmissible(_))
        ));
        assert!(estimate_bound_constant(&f, &CentralParameter::scalar(&f, 0.0), 10, 1).is_err());
    }

    #[test]
    fn bound_constant_matches_brute_force_radial_scan() {
        let f = Representation::parse("un:2:fund").unwrap();
        let tau = CentralParameter::scalar(&f, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut phi = random_vector(&mut rng, 2);
            normalize(&mut phi);
            let mu = f.moment_map(&phi).unwrap();
            let exact = radial_sup(&mu, tau.matrix()).unwrap();
            let scan = (0..20000)
                .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 20000.0))
                .map(|r2| r2 / mu.scale(r2).sub(tau.matrix()).norm_sqr().sqrt())
                .fold(0.0, f64::max);
            assert!(scan <= exact * (1.0 + 1e-12) && scan > exact * (1.0 - 1e-4));
        }
    }

    #[test]
    fn tau_is_central() {
        let f = Representation::parse("un:3:fund").unwrap();
        let tau = CentralParameter::scalar(&f, 0.8);
        assert!(tau.commutator_defect(&f.group) < 1e-12);
        assert!((tau.lambda - 0.8).abs() < 1e-14);
    }
}
