//! Discrete Sobolev norms, sampled embedding and multiplication constants,
//! and the identities and bounds satisfied by φ at a vortex.

use crate::algebra::{estimate_bound_constant, inner, AlgebraError, CentralParameter};
use crate::energy::degree_tau;
use crate::fields::{vortex_residuals, FieldsError, Pair};
use crate::lattice::{band_limited, DiscreteForm, KaehlerTorus, LatticeError, ValueKind};
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Highest derivative order the stencils support.
pub const MAX_ORDER: usize = 3;
/// Inflation applied to every sampled constant before fresh-seed checks.
pub const INFLATION: f64 = 1.25;
/// Base dimension n.
const DIM: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("derivative order {0} exceeds the stencil budget {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("exponent p = {0} must be ≥ 1")]
    Exponent(f64),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("not a vortex: residual {residual:e} above {eps:e}")]
    NotAVortex { residual: f64, eps: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Fields(#[from] FieldsError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// The space L^p_k on the 4-torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevIndex {
    pub k: usize,
    pub p: f64,
}

impl SobolevIndex {
    pub fn new(k: usize, p: f64) -> Result<Self, AnalysisError> {
        if k > MAX_ORDER {
            return Err(AnalysisError::OrderTooLarge(k));
        }
        if !(p >= 1.0) {
            return Err(AnalysisError::Exponent(p));
        }
        Ok(SobolevIndex { k, p })
    }

    /// w(k, p) = k − n/p.
    pub fn weight(&self) -> f64 {
        self.k as f64 - DIM / self.p
    }
}

/// A periodic box of sites: `lo + [0, len)` in every direction, wrapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SubBox {
    pub lo: [usize; 4],
    pub len: [usize; 4],
}

impl SubBox {
    pub fn whole(torus: &KaehlerTorus) -> Self {
        SubBox { lo: [0; 4], len: [torus.n; 4] }
    }

    /// Cube of side `len` centred on a site.
    pub fn centred(torus: &KaehlerTorus, centre: [usize; 4], len: usize) -> Self {
        let n = torus.n;
        let lo = centre.map(|c| (c + n - len / 2 % n) % n);
        SubBox { lo, len: [len.min(n); 4] }
    }

    pub fn contains(&self, torus: &KaehlerTorus, x: usize) -> bool {
        let c = torus.coords(x);
        (0..4).all(|m| (c[m] + torus.n - self.lo[m]) % torus.n < self.len[m])
    }

    pub fn volume(&self, torus: &KaehlerTorus) -> f64 {
        self.len.iter().map(|&l| l as f64).product::<f64>() * torus.cell()
    }

    /// True when `inner` stays at least one site away from the faces of
    /// `self` in every direction, the lattice form of V ⋐ U.
    pub fn compactly_contains(&self, torus: &KaehlerTorus, inner: &SubBox) -> bool {
        let n = torus.n;
        (0..4).all(|m| {
            if self.len[m] >= n && inner.len[m] < n {
                return true;
            }
            let off = (inner.lo[m] + n - self.lo[m]) % n;
            off >= 1 && off + inner.len[m] < self.len[m]
        })
    }
}

fn forward_diff(torus: &KaehlerTorus, data: &[C], stride: usize, mu: usize) -> Vec<C> {
    let inv_h = 1.0 / torus.h();
    let mut out = vec![C::new(0.0, 0.0); data.len()];
    for x in 0..torus.sites() {
        let y = torus.shift(x, mu, true);
        for j in 0..stride {
            out[x * stride + j] = (data[y * stride + j] - data[x * stride + j]) * inv_h;
        }
    }
    out
}

/// Every D^α f with |α| ≤ k, α running over sorted multi-indices.
fn derivatives(torus: &KaehlerTorus, f: &DiscreteForm, k: usize) -> Vec<Vec<C>> {
    let stride = f.ncomp() * f.width;
    let mut out = vec![f.data.clone()];
    let mut frontier = vec![(f.data.clone(), 0usize)];
    for _ in 0..k {
        let mut next = Vec::new();
        for (g, first) in &frontier {
            for mu in *first..4 {
                let d = forward_diff(torus, g, stride, mu);
                out.push(d.clone());
                next.push((d, mu));
            }
        }
        frontier = next;
    }
    out
}

fn lp_power(torus: &KaehlerTorus, data: &[C], stride: usize, p: f64, region: Option<&SubBox>) -> f64 {
    let mut acc = 0.0;
    for x in 0..torus.sites() {
        if region.is_some_and(|r| !r.contains(torus, x)) {
            continue;
        }
        let m2: f64 = data[x * stride..(x + 1) * stride].iter().map(|z| z.norm_sqr()).sum();
        acc += m2.powf(0.5 * p);
    }
    acc * torus.cell()
}

/// (Σ_{|α|≤k} ‖D^α f‖_p^p)^{1/p} with forward differences; the pointwise
/// value is the Euclidean norm over all components and lanes.
pub fn sobolev_norm(torus: &KaehlerTorus, f: &DiscreteForm, idx: SobolevIndex) -> Result<f64, AnalysisError> {
    sobolev_norm_on(torus, f, idx, None)
}

/// [`sobolev_norm`] with the sum restricted to a sub-box.
pub fn sobolev_norm_on(
    torus: &KaehlerTorus,
    f: &DiscreteForm,
    idx: SobolevIndex,
    region: Option<&SubBox>,
) -> Result<f64, AnalysisError> {
    if idx.k > MAX_ORDER {
        return Err(AnalysisError::OrderTooLarge(idx.k));
    }
    let stride = f.ncomp() * f.width;
    let total: f64 = derivatives(torus, f, idx.k)
        .iter()
        .map(|d| lp_power(torus, d, stride, idx.p, region))
        .sum();
    Ok(total.powf(1.0 / idx.p))
}

/// Random band-limited complex scalar used by the sampled checks.
pub fn random_field(torus: &KaehlerTorus, rng: &mut ChaCha8Rng) -> DiscreteForm {
    let re = band_limited(torus, rng, 2, 8);
    let im = band_limited(torus, rng, 2, 8);
    let mut f = DiscreteForm::zeros(torus, 0, ValueKind::Complex, 1);
    for (x, z) in f.data.iter_mut().enumerate() {
        *z = C::new(re[x], im[x]);
    }
    f
}

fn product(f: &DiscreteForm, g: &DiscreteForm) -> DiscreteForm {
    let mut out = f.clone();
    for (z, w) in out.data.iter_mut().zip(&g.data) {
        *z *= w;
    }
    out
}

/// Outcome of a sampled constant: estimate on one seed, verify on another.
#[derive(Clone, Debug, Serialize)]
pub struct SampledConstant {
    /// Supremum of the ratio over the estimation samples.
    pub estimate: f64,
    /// `estimate × INFLATION`, the constant checked on fresh samples.
    pub inflated: f64,
    pub samples: usize,
    pub violations: usize,
    pub worst_fresh: f64,
    pub seeds: [u64; 2],
}

fn sampled(
    samples: usize,
    seeds: [u64; 2],
    ratio: impl Fn(&mut ChaCha8Rng) -> Result<f64, AnalysisError> + Sync + Send,
) -> Result<SampledConstant, AnalysisError> {
    let run = |seed: u64| -> Result<Vec<f64>, AnalysisError> {
        crate::par::map(samples, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            ratio(&mut rng)
        })
        .into_iter()
        .collect()
    };
    let estimate = run(seeds[0])?.into_iter().fold(0.0, f64::max);
    let inflated = estimate * INFLATION;
    let fresh = run(seeds[1])?;
    Ok(SampledConstant {
        estimate,
        inflated,
        samples,
        violations: fresh.iter().filter(|r| **r > inflated).count(),
        worst_fresh: fresh.iter().cloned().fold(0.0, f64::max),
        seeds,
    })
}

/// Sampled constant of L^p_k → L^q_j over band-limited fields.
pub fn embedding_check(
    torus: &KaehlerTorus,
    from: SobolevIndex,
    to: SobolevIndex,
    samples: usize,
    seeds: [u64; 2],
) -> Result<SampledConstant, AnalysisError> {
    if to.k > from.k || to.weight() > from.weight() + 1e-12 {
        return Err(AnalysisError::Hypothesis(format!(
            "no embedding L^{}_{} → L^{}_{}",
            from.p, from.k, to.p, to.k
        )));
    }
    sampled(samples, seeds, |rng| {
        let f = random_field(torus, rng);
        if from == to {
            return Ok(1.0);
        }
        Ok(sobolev_norm(torus, &f, to)? / sobolev_norm(torus, &f, from)?)
    })
}

/// Sampled constant of L^p_k × L^q_j → L^r_i, (f, g) ↦ fg.
pub fn multiplication_check(
    torus: &KaehlerTorus,
    f_idx: SobolevIndex,
    g_idx: SobolevIndex,
    out_idx: SobolevIndex,
    samples: usize,
    seeds: [u64; 2],
) -> Result<SampledConstant, AnalysisError> {
    let (wf, wg, wo) = (f_idx.weight(), g_idx.weight(), out_idx.weight());
    if out_idx.k > f_idx.k.min(g_idx.k) || wo > wf.min(wg) + 1e-12 || wo > wf + wg + 1e-12 {
        return Err(AnalysisError::Hypothesis(format!(
            "no product L^{}_{} × L^{}_{} → L^{}_{}",
            f_idx.p, f_idx.k, g_idx.p, g_idx.k, out_idx.p, out_idx.k
        )));
    }
    sampled(samples, seeds, |rng| {
        let f = random_field(torus, rng);
        let g = random_field(torus, rng);
        multiplication_ratio(torus, &f, &g, f_idx, g_idx, out_idx)
    })
}

/// ‖fg‖_out / (‖f‖ ‖g‖).
pub fn multiplication_ratio(
    torus: &KaehlerTorus,
    f: &DiscreteForm,
    g: &DiscreteForm,
    f_idx: SobolevIndex,
    g_idx: SobolevIndex,
    out_idx: SobolevIndex,
) -> Result<f64, AnalysisError> {
    let num = sobolev_norm(torus, &product(f, g), out_idx)?;
    Ok(num / (sobolev_norm(torus, f, f_idx)? * sobolev_norm(torus, g, g_idx)?))
}

/// Accepts an ε-vortex, or a pair whose section vanishes to `1e-4` in L^∞
/// with the other two equations solved: the zero branch, where the first
/// equation has no solution and the norm identity becomes an inequality.
fn vortex_or_zero(pair: &Pair, tau: &CentralParameter, eps: f64) -> Result<bool, AnalysisError> {
    let r = vortex_residuals(pair, tau)?.norms;
    if r.is_vortex(eps) {
        return Ok(false);
    }
    let others = r.f20.max(r.f02).max(r.dbar);
    if others < eps && pair.phi.max_abs() < 1e-4 {
        return Ok(true);
    }
    Err(AnalysisError::NotAVortex { residual: r.max(), eps })
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiL2Identity {
    /// −2π deg_ξ P + ⟨τ, ξ⟩ vol(X).
    pub lhs: f64,
    /// λ(ξ) ‖φ‖²_{L²}.
    pub rhs: f64,
    pub lambda_xi: f64,
    /// |lhs − rhs| / |lhs| when λ(ξ) ≠ 0; |lhs| when λ(ξ) = 0.
    pub gap: f64,
    pub zero_branch: bool,
    /// On the zero branch or when λ(ξ) = 0: whether lhs ≤ 0, resp. lhs ≈ 0.
    pub constraint_holds: Option<bool>,
}

/// The norm identity for a central element ξ at a solution.
pub fn phi_l2_identity(
    pair: &Pair,
    tau: &CentralParameter,
    xi: &CentralParameter,
    eps: f64,
) -> Result<PhiL2Identity, AnalysisError> {
    let zero_branch = vortex_or_zero(pair, tau, eps)?;
    let t = &pair.torus;
    let lhs = -2.0 * std::f64::consts::PI * degree_tau(pair, xi) + inner(tau.matrix(), xi.matrix()) * t.vol();
    let phi2 = pair.phi.norm_l2(t).powi(2);
    let rhs = xi.lambda * phi2;
    let scale = lhs.abs().max(inner(tau.matrix(), xi.matrix()).abs() * t.vol()).max(1e-300);
    let (gap, constraint_holds) = if xi.lambda == 0.0 {
        (lhs.abs(), Some(lhs.abs() <= 1e-8 * scale))
    } else if zero_branch {
        ((lhs - rhs).abs() / scale, Some(lhs * xi.lambda.signum() <= 1e-8 * scale))
    } else {
        ((lhs - rhs).abs() / lhs.abs().max(1e-300), None)
    };
    Ok(PhiL2Identity {
        lhs,
        rhs,
        lambda_xi: xi.lambda,
        gap,
        zero_branch,
        constraint_holds,
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// max|φ|² ≤ |τ|²/λ(τ), for λ(τ) > 0.
    TauOverLambda,
    /// max|φ|² ≤ Ĉ max{|τ|, 1 − λ(τ)} with the sampled constant Ĉ.
    Sampled { c_hat: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct PointwiseBound {
    pub kind: BoundKind,
    pub max_phi2: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
    /// bound·(1 + slack) − max|φ|².
    pub margin: f64,
}

/// Pointwise bound on |φ|² at a solution; `slack` is relative.
pub fn phi_pointwise_bound_check(
    pair: &Pair,
    tau: &CentralParameter,
    eps: f64,
    slack: f64,
    seed: u64,
) -> Result<PointwiseBound, AnalysisError> {
    vortex_or_zero(pair, tau, eps)?;
    pointwise_bound(pair, tau, slack, seed)
}

/// The bound itself, without the solution precondition.
pub fn pointwise_bound(pair: &Pair, tau: &CentralParameter, slack: f64, seed: u64) -> Result<PointwiseBound, AnalysisError> {
    let d = pair.dim();
    let max_phi2 = pair
        .phi
        .data
        .chunks(d)
        .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max);
    let tt = tau.norm_sqr();
    let (kind, bound) = if tau.lambda > 0.0 {
        (BoundKind::TauOverLambda, tt / tau.lambda)
    } else {
        let c = estimate_bound_constant(&pair.rep, tau, 10_000, seed)?.value;
        (BoundKind::Sampled { c_hat: c }, c * tt.sqrt().max(1.0 - tau.lambda))
    };
    let margin = bound * (1.0 + slack) - max_phi2;
    Ok(PointwiseBound {
        kind,
        max_phi2,
        bound,
        slack,
        holds: margin >= 0.0,
        margin,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityProbe {
    pub order: usize,
    /// ‖A‖_{L²_p(V)} + ‖φ‖_{L²_p(V)}.
    pub lhs: f64,
    /// ‖A‖_{L²₁(U)} + ‖φ‖_{L⁴(U)} + vol(U).
    pub rhs: f64,
    pub ratio: f64,
    pub warning: Option<String>,
}

/// Ratio of the higher norms on V to the energy-level norms on U.
pub fn interior_regularity_probe(pair: &Pair, u: &SubBox, v: &SubBox, order: usize) -> Result<RegularityProbe, AnalysisError> {
    let t = &pair.torus;
    let hi = SobolevIndex::new(order, 2.0)?;
    let lhs = sobolev_norm_on(t, &pair.a, hi, Some(v))? + sobolev_norm_on(t, &pair.phi, hi, Some(v))?;
    let rhs = sobolev_norm_on(t, &pair.a, SobolevIndex::new(1, 2.0)?, Some(u))?
        + sobolev_norm_on(t, &pair.phi, SobolevIndex::new(0, 4.0)?, Some(u))?
        + u.volume(t);
    let warning = (!u.compactly_contains(t, v)).then(|| "V is not compactly contained in U".to_string());
    Ok(RegularityProbe {
        order,
        lhs,
        rhs,
        ratio: lhs / rhs,
        warning,
    })
}
