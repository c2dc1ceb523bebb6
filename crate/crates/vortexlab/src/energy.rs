//! The Yang–Mills–Higgs functional, its topological decomposition, the
//! Chern–Weil numbers, the exact gradient of the lattice functional and a
//! descent minimizer (nonlinear conjugate gradients or Barzilai–Borwein).
//!
//! Two lattice functionals are available. The action density is
//! Σ|F_μν|² + |μ(φ) − τ|² + 2Σ|D_μφ|²; the vortex density is
//! |ΛF − μ + τ|² + 4|F^{2,0}|² + 4|∂̄_Aφ|². In the continuum they differ by
//! the topological term, and with the sign conventions of this crate
//!
//! ```text
//! vortex = action − 4π deg_τ + 8π² Ch₂,   deg_τ = −(1/2π)∫⟨ΛF, τ⟩.
//! ```
//!
//! On the lattice the identity holds up to O(h²); the gap is reported as
//! the decomposition defect.

use crate::algebra::{CentralParameter, Representation};
use crate::fields::{with_state, Backend, FieldState, LatticeCache, Pair, ResidualNorms, Vec4, FACES};
use crate::lattice::{DiscreteForm, KaehlerTorus, ValueKind, PLANES};
use crate::fields::{FieldsError, TwistData};
use crate::linalg::{DMat, Mat, I};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("no convergence after {iterations} iterations (residual {residual:e}, gradient {gradient:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        gradient: f64,
        best: Box<Pair>,
        trace: Vec<TraceEntry>,
    },
    #[error("step control failed at iteration {iteration}: no decrease down to step {step:e}")]
    StepFailure { iteration: usize, step: f64 },
    #[error("tau does not match the structure group")]
    TauShape,
    #[error(transparent)]
    Fields(#[from] FieldsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// The action Σ|F|² + |μ − τ|² + 2|Dφ|².
    Ymh,
    /// The sum of squared vortex residuals.
    Vortex,
}

/// Scalars of the energy decomposition. Squared norms are L² over the torus.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub ymh: f64,
    pub f_norm2: f64,
    pub moment_norm2: f64,
    pub dphi_norm2_x2: f64,
    pub four_pi_deg: f64,
    pub eight_pi2_ch2: f64,
    pub deg_tau: f64,
    pub ch2: f64,
    pub alternate: f64,
    pub r1_norm2: f64,
    pub f20_norm2_x4: f64,
    pub dbar_norm2_x4: f64,
    /// alternate − (ymh − 4π deg_τ + 8π² Ch₂).
    pub defect: f64,
}

/// A tangent vector: ℓ² coefficients on links and sites.
#[derive(Clone, Debug)]
pub struct Tangent {
    pub a: DiscreteForm,
    pub phi: DiscreteForm,
    /// Right-trivialised link gradient skew(U†∂S/∂U) + ρ-part; covariant
    /// under gauge transformations.
    pub link_force: Vec<DMat>,
}

impl Tangent {
    pub fn dot(&self, o: &Tangent) -> f64 {
        dot_c(&self.a.data, &o.a.data) + dot_c(&self.phi.data, &o.phi.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// s·self, without the link force.
    pub fn scaled(&self, s: f64) -> Tangent {
        Tangent {
            a: self.a.scale(s),
            phi: self.phi.scale(s),
            link_force: Vec::new(),
        }
    }

    /// self += s·o on the field components.
    pub fn axpy(&mut self, s: f64, o: &Tangent) {
        for (z, y) in self.a.data.iter_mut().zip(&o.a.data) {
            *z += y * s;
        }
        for (z, y) in self.phi.data.iter_mut().zip(&o.phi.data) {
            *z += y * s;
        }
    }
}

fn dot_c(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub ymh: f64,
    pub alternate: f64,
    pub norms: ResidualNorms,
    pub grad: Option<Tangent>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    f2: f64,
    m2: f64,
    d2: f64,
    r1: f64,
    f20x4: f64,
    c2: f64,
}

fn sums<M: Backend>(s: &FieldState<M>, tau: &M) -> Sums {
    let v = s.torus.sites();
    let d = s.d;
    let mut out = Sums::default();
    for x in 0..v {
        for p in 0..6 {
            out.f2 += s.clover[x * 6 + p].norm_sqr();
        }
        out.m2 += s.mu[x].sub(tau).norm_sqr();
        out.d2 += s.dphi[x * 4 * d..(x + 1) * 4 * d].iter().map(|z| z.norm_sqr()).sum::<f64>();
        let f = &s.clover[x * 6..x * 6 + 6];
        out.r1 += f[0].add(&f[5]).sub(&s.mu[x]).add(tau).norm_sqr();
        out.f20x4 += f[1].sub(&f[4]).norm_sqr() + f[2].add(&f[3]).norm_sqr();
        out.c2 += s.cbar[x * 2 * d..(x + 1) * 2 * d].iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    let w = s.torus.cell();
    Sums {
        f2: out.f2 * w,
        m2: out.m2 * w,
        d2: out.d2 * w,
        r1: out.r1 * w,
        f20x4: out.f20x4 * w,
        c2: out.c2 * w,
    }
}

fn norms_of(s: &Sums) -> ResidualNorms {
    ResidualNorms {
        r1: s.r1.sqrt(),
        f20: (0.25 * s.f20x4).sqrt(),
        f02: (0.25 * s.f20x4).sqrt(),
        dbar: (2.0 * s.c2).sqrt(),
    }
}

fn check_tau(pair: &Pair, tau: &CentralParameter) -> Result<(), EnergyError> {
    if tau.matrix().n != pair.n() {
        return Err(EnergyError::TauShape);
    }
    Ok(())
}

/// deg_τ = −(1/2π) ∫⟨ΛF, τ⟩.
pub fn degree_tau(pair: &Pair, tau: &CentralParameter) -> f64 {
    with_state!(pair, s => degree_of(&s, &M_of(tau)))
}

#[allow(non_snake_case)]
fn M_of<M: Backend>(tau: &CentralParameter) -> M {
    M::from_dmat(tau.matrix())
}

fn degree_of<M: Backend>(s: &FieldState<M>, tau: &M) -> f64 {
    let mut acc = 0.0;
    for x in 0..s.torus.sites() {
        acc += s.lambda_f(x).dot(tau);
    }
    -acc * s.torus.cell() / (2.0 * PI)
}

/// Ch₂ = (1/8π²)∫⟨F∧F⟩ with the plaquette cup product: the first factor sits
/// at x, the second at x+μ+ν, transported back along x → x+μ → x+μ+ν.
pub fn ch2(pair: &Pair) -> f64 {
    with_state!(pair, s => ch2_of(&s))
}

/// Planes paired with their complements, with the shuffle sign.
const SHUFFLES: [(usize, usize, f64); 6] = [(0, 5, 1.0), (1, 4, -1.0), (2, 3, 1.0), (3, 2, 1.0), (4, 1, -1.0), (5, 0, 1.0)];

fn ch2_of<M: Backend>(s: &FieldState<M>) -> f64 {
    let h2 = s.torus.h().powi(2);
    let mut acc = 0.0;
    for x in 0..s.torus.sites() {
        for &(p, q, sign) in SHUFFLES.iter() {
            let (mu, nu) = PLANES[p];
            let xm = s.geo.fwd[x][mu];
            let y = s.geo.fwd[xm][nu];
            let w = s.u[x * 4 + mu].mul(&s.u[xm * 4 + nu]);
            let second = w.mul(&s.logp[y * 6 + q]).mul(&w.adj());
            acc += sign * s.logp[x * 6 + p].dot(&second);
        }
    }
    acc * s.torus.cell() / (h2 * h2) / (8.0 * PI * PI)
}

pub fn ymh_total(pair: &Pair, tau: &CentralParameter) -> Result<EnergyReport, EnergyError> {
    check_tau(pair, tau)?;
    Ok(with_state!(pair, s => report_of(&s, &M_of(tau))))
}

fn report_of<M: Backend>(s: &FieldState<M>, tau: &M) -> EnergyReport {
    let sm = sums(s, tau);
    let deg = degree_of(s, tau);
    let c2 = ch2_of(s);
    let ymh = sm.f2 + sm.m2 + 2.0 * sm.d2;
    let alternate = sm.r1 + sm.f20x4 + 8.0 * sm.c2;
    EnergyReport {
        ymh,
        f_norm2: sm.f2,
        moment_norm2: sm.m2,
        dphi_norm2_x2: 2.0 * sm.d2,
        four_pi_deg: 4.0 * PI * deg,
        eight_pi2_ch2: 8.0 * PI * PI * c2,
        deg_tau: deg,
        ch2: c2,
        alternate,
        r1_norm2: sm.r1,
        f20_norm2_x4: sm.f20x4,
        dbar_norm2_x4: 8.0 * sm.c2,
        defect: alternate - (ymh - 4.0 * PI * deg + 8.0 * PI * PI * c2),
    }
}

/// Pointwise action density Σ|F|² + |μ − τ|² + 2|Dφ|² as a real 0-form.
pub fn ymh_density(pair: &Pair, tau: &CentralParameter) -> Result<DiscreteForm, EnergyError> {
    check_tau(pair, tau)?;
    let t = pair.torus;
    let vals: Vec<f64> = with_state!(pair, s => {
        let tm = M_of(tau);
        let d = s.d;
        (0..t.sites())
            .map(|x| {
                let f: f64 = (0..6).map(|p| s.clover[x * 6 + p].norm_sqr()).sum();
                let m = s.mu[x].sub(&tm).norm_sqr();
                let dd: f64 = s.dphi[x * 4 * d..(x + 1) * 4 * d].iter().map(|z| z.norm_sqr()).sum();
                f + m + 2.0 * dd
            })
            .collect()
    });
    let mut out = DiscreteForm::zeros(&t, 0, ValueKind::Real, 1);
    for (z, v) in out.data.iter_mut().zip(vals) {
        z.re = v;
    }
    Ok(out)
}

pub fn evaluate(pair: &Pair, tau: &CentralParameter, objective: Objective, grad: bool) -> Result<Evaluation, EnergyError> {
    evaluate_cached(pair, tau, objective, grad, &Arc::new(LatticeCache::new(pair)))
}

/// As [`evaluate`], reusing neighbour tables and twist phases.
pub fn evaluate_cached(
    pair: &Pair,
    tau: &CentralParameter,
    objective: Objective,
    grad: bool,
    geo: &Arc<LatticeCache>,
) -> Result<Evaluation, EnergyError> {
    check_tau(pair, tau)?;
    Ok(if pair.is_scalar() {
        let s = FieldState::<C>::with_cache(pair, geo.clone());
        eval_state(pair, &s, &M_of(tau), objective, grad)
    } else {
        let s = FieldState::<DMat>::with_cache(pair, geo.clone());
        eval_state(pair, &s, &M_of(tau), objective, grad)
    })
}

fn eval_state<M: Backend>(pair: &Pair, s: &FieldState<M>, tau: &M, objective: Objective, grad: bool) -> Evaluation {
    let sm = sums(s, tau);
    let ymh = sm.f2 + sm.m2 + 2.0 * sm.d2;
    let alternate = sm.r1 + sm.f20x4 + 8.0 * sm.c2;
    let value = match objective {
        Objective::Ymh => ymh,
        Objective::Vortex => alternate,
    };
    let grad = grad.then(|| gradient_of(pair, s, tau, objective));
    Evaluation {
        value,
        ymh,
        alternate,
        norms: norms_of(&sm),
        grad,
    }
}

pub fn ymh_gradient(pair: &Pair, tau: &CentralParameter) -> Result<Tangent, EnergyError> {
    gradient(pair, tau, Objective::Ymh)
}

pub fn gradient(pair: &Pair, tau: &CentralParameter, objective: Objective) -> Result<Tangent, EnergyError> {
    Ok(evaluate(pair, tau, objective, true)?.grad.expect("gradient requested"))
}

#[inline]
fn vslice(v: &[C], i: usize, d: usize) -> &[C] {
    &v[i * d..(i + 1) * d]
}

/// ρ_*(X)φ for X ∈ 𝔨, with a fast path for one-dimensional U(1).
fn push_apply<M: Backend>(rep: &Representation, x: &M, phi: &[C], out: &mut [C]) {
    match (rep.charge, phi.len()) {
        (Some(q), 1) if rep.n() == 1 => {
            let z = x.to_dmat().a[0];
            out[0] = z * q * phi[0];
        }
        _ => {
            rep.push(&x.to_dmat()).apply(phi, out);
        }
    }
}

fn pull_of<M: Backend>(rep: &Representation, m: &M) -> M {
    match rep.charge {
        Some(q) if rep.dim == 1 && rep.n() == 1 => m.scale(q).skew(),
        _ => M::from_dmat(&rep.pull(&m.to_dmat())),
    }
}

fn gradient_of<M: Backend>(pair: &Pair, s: &FieldState<M>, tau: &M, objective: Objective) -> Tangent {
    let t = s.torus;
    let v = t.sites();
    let d = s.d;
    let n = pair.n();
    let h = t.h();
    let w = t.cell();
    let zero_m = M::zeros(n);
    let zc = C::new(0.0, 0.0);

    // Cotangents of the primitives.
    let mut gf: Vec<M> = vec![zero_m.clone(); 6 * v];
    let mut gmu: Vec<M> = vec![zero_m.clone(); v];
    let mut gd: Vec<C> = vec![zc; 4 * v * d];
    let mut gc: Vec<C> = vec![zc; 2 * v * d];
    match objective {
        Objective::Ymh => {
            for x in 0..v {
                for p in 0..6 {
                    gf[x * 6 + p] = s.clover[x * 6 + p].scale(2.0 * w);
                }
                gmu[x] = s.mu[x].sub(tau).scale(2.0 * w);
            }
            for (g, z) in gd.iter_mut().zip(&s.dphi) {
                *g = z * (4.0 * w);
            }
        }
        Objective::Vortex => {
            for x in 0..v {
                let f = &s.clover[x * 6..x * 6 + 6];
                let r1 = f[0].add(&f[5]).sub(&s.mu[x]).add(tau).scale(2.0 * w);
                let a = f[1].sub(&f[4]).scale(2.0 * w);
                let b = f[2].add(&f[3]).scale(2.0 * w);
                gf[x * 6] = r1.clone();
                gf[x * 6 + 5] = r1.clone();
                gmu[x] = r1.scale(-1.0);
                gf[x * 6 + 1] = a.clone();
                gf[x * 6 + 4] = a.scale(-1.0);
                gf[x * 6 + 2] = b.clone();
                gf[x * 6 + 3] = b;
            }
            for (g, z) in gc.iter_mut().zip(&s.cbar) {
                *g = z * (16.0 * w);
            }
        }
    }

    let mut gu: Vec<M> = vec![zero_m.clone(); 4 * v];
    let mut gr: Vec<M> = vec![M::zeros(d); 4 * v];
    let mut gphi: Vec<C> = vec![zc; v * d];
    let mut tmp: Vec4 = smallvec::smallvec![zc; d];

    // ∂̄ coefficients.
    if objective == Objective::Vortex {
        for x in 0..v {
            for (j, &(a, b)) in FACES.iter().enumerate() {
                let g: Vec4 = vslice(&gc, x * 2 + j, d).iter().map(|z| z * 0.25).collect();
                let gi: Vec4 = g.iter().map(|z| -I * z).collect();
                let xa = s.geo.fwd[x][a];
                let xb = s.geo.fwd[x][b];
                for k in 0..d {
                    gd[(x * 4 + a) * d + k] += g[k];
                    gd[(x * 4 + b) * d + k] += gi[k];
                }
                s.r[x * 4 + b].apply_adj(&g, &mut tmp);
                for k in 0..d {
                    gd[(xb * 4 + a) * d + k] += tmp[k];
                }
                gr[x * 4 + b].add_outer(&g, vslice(&s.dphi, xb * 4 + a, d), 1.0);
                s.r[x * 4 + a].apply_adj(&gi, &mut tmp);
                for k in 0..d {
                    gd[(xa * 4 + b) * d + k] += tmp[k];
                }
                gr[x * 4 + a].add_outer(&gi, vslice(&s.dphi, xa * 4 + b, d), 1.0);
            }
        }
    }

    // Covariant differences.
    let inv_h = 1.0 / h;
    for x in 0..v {
        for mu in 0..4 {
            let y = s.geo.fwd[x][mu];
            let g: Vec4 = vslice(&gd, x * 4 + mu, d).iter().map(|z| z * inv_h).collect();
            s.r[x * 4 + mu].apply_adj(&g, &mut tmp);
            for k in 0..d {
                gphi[y * d + k] += tmp[k];
                gphi[x * d + k] -= g[k];
            }
            gr[x * 4 + mu].add_outer(&g, vslice(&s.phi, y, d), 1.0);
        }
    }

    // Moment map: ∂/∂φ ⟨G, μ(φ)⟩ = −2iρ_*(G)φ.
    for x in 0..v {
        push_apply(&pair.rep, &gmu[x].skew(), vslice(&s.phi, x, d), &mut tmp);
        for k in 0..d {
            gphi[x * d + k] += -2.0 * I * tmp[k];
        }
    }

    // Clover average.
    let mut gl: Vec<M> = vec![zero_m.clone(); 6 * v];
    let cs = 0.25 / (h * h);
    for x in 0..v {
        for (p, &(mu, nu)) in PLANES.iter().enumerate() {
            let g = gf[x * 6 + p].scale(cs);
            let xm = s.geo.bwd[x][mu];
            let xn = s.geo.bwd[x][nu];
            let xmn = s.geo.bwd[xm][nu];
            gl[x * 6 + p].add_scaled(&g, 1.0);
            // a†L a with a = U_μ(x−μ).
            let a = &s.u[xm * 4 + mu];
            let l = &s.logp[xm * 6 + p];
            gl[xm * 6 + p].add_scaled(&a.mul(&g).mul(&a.adj()), 1.0);
            gu[xm * 4 + mu].add_scaled(&transport_cotangent(l, a, &g), 1.0);
            // W†L W with W = U_μ(x−μ−ν)U_ν(x−ν).
            let u1 = &s.u[xmn * 4 + mu];
            let u2 = &s.u[xn * 4 + nu];
            let wm = u1.mul(u2);
            let l = &s.logp[xmn * 6 + p];
            gl[xmn * 6 + p].add_scaled(&wm.mul(&g).mul(&wm.adj()), 1.0);
            let gw = transport_cotangent(l, &wm, &g);
            gu[xmn * 4 + mu].add_scaled(&gw.mul(&u2.adj()), 1.0);
            gu[xn * 4 + nu].add_scaled(&u1.adj().mul(&gw), 1.0);
            // b†L b with b = U_ν(x−ν).
            let l = &s.logp[xn * 6 + p];
            gl[xn * 6 + p].add_scaled(&u2.mul(&g).mul(&u2.adj()), 1.0);
            gu[xn * 4 + nu].add_scaled(&transport_cotangent(l, u2, &g), 1.0);
        }
    }

    // Plaquette logarithms and products P = U₁U₂(U₄U₃)†.
    for x in 0..v {
        for (p, &(mu, nu)) in PLANES.iter().enumerate() {
            let gp = s.plaq[x * 6 + p].log_unitary_adj(&gl[x * 6 + p].skew());
            let xm = s.geo.fwd[x][mu];
            let xn = s.geo.fwd[x][nu];
            let u1 = &s.u[x * 4 + mu];
            let u2 = &s.u[xm * 4 + nu];
            let u3 = &s.u[xn * 4 + mu];
            let u4 = &s.u[x * 4 + nu];
            let c = u4.mul(u3);
            let ga = gp.mul(&c);
            let gcm = u1.mul(u2).adj().mul(&gp).adj();
            gu[x * 4 + mu].add_scaled(&ga.mul(&u2.adj()), 1.0);
            gu[xm * 4 + nu].add_scaled(&u1.adj().mul(&ga), 1.0);
            gu[x * 4 + nu].add_scaled(&gcm.mul(&u3.adj()), 1.0);
            gu[xn * 4 + mu].add_scaled(&u4.adj().mul(&gcm), 1.0);
        }
    }

    // Links: U = ω exp(hA), R = ω_V exp(hρ_*(A)).
    let mut ga = DiscreteForm::zeros(&t, 1, ValueKind::Algebra, n * n);
    let mut force = Vec::with_capacity(4 * v);
    for l in 0..4 * v {
        let gexp = gu[l].cscale(s.geo.wu[l].conj());
        let gexp_r = gr[l].cscale(s.geo.wv[l].conj());
        let mut g = s.ha[l].exp_skew_adj(&gexp).skew().scale(h);
        g.add_scaled(&pull_of(&pair.rep, &s.hra[l].exp_skew_adj(&gexp_r)), h);
        g.write(ga.at_mut(l / 4, l % 4));
        let mut z = s.u[l].adj().mul(&gu[l]).skew();
        z.add_scaled(&pull_of(&pair.rep, &s.r[l].adj().mul(&gr[l])), 1.0);
        force.push(z.to_dmat());
    }
    Tangent {
        a: ga,
        phi: DiscreteForm {
            degree: 0,
            kind: ValueKind::Vector,
            width: d,
            data: gphi,
        },
        link_force: force,
    }
}

/// Cotangent of a in T = a†La given the cotangent G of T: La G† + L†a G.
#[inline]
fn transport_cotangent<M: Backend>(l: &M, a: &M, g: &M) -> M {
    l.mul(a).mul(&g.adj()).add(&l.adj().mul(a).mul(g))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub objective: Objective,
    pub max_iter: usize,
    /// Converged when every residual L² norm is below this.
    pub target_eps: f64,
    /// Stationary when the L² norm of the L² gradient is below this.
    pub grad_tol: f64,
    /// First trial step in units of h².
    pub initial_step: f64,
    /// Heavy-ball coefficient in [0, 1), used by [`StepRule::BarzilaiBorwein`].
    pub momentum: f64,
    pub max_backtracks: usize,
    pub rule: StepRule,
}

/// How each descent step is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Alternating BB1/BB2 steps along −∇, halved until the objective does not rise.
    BarzilaiBorwein,
    /// Momentum with the Polak–Ribière+ coefficient and a strong Wolfe line search.
    Conjugate,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            objective: Objective::Vortex,
            max_iter: 20_000,
            target_eps: 1e-6,
            grad_tol: 1e-9,
            initial_step: 0.01,
            momentum: 0.0,
            max_backtracks: 60,
            rule: StepRule::Conjugate,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub ymh: f64,
    pub residual: f64,
    pub gradient: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    /// All residual norms below the target.
    Converged,
    /// Gradient below tolerance with residuals above target.
    Stationary,
    /// Steepest descent cannot find a decrease resolvable in double
    /// precision: every trial value lies within rounding of the current one.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub pair: Pair,
    pub termination: Termination,
    pub iterations: usize,
    pub norms: ResidualNorms,
    pub trace: Vec<TraceEntry>,
}

fn axpy_pair(p: &mut Pair, s: f64, g: &Tangent) {
    for (z, y) in p.a.data.iter_mut().zip(&g.a.data) {
        *z += y * s;
    }
    for (z, y) in p.phi.data.iter_mut().zip(&g.phi.data) {
        *z += y * s;
    }
}

fn pair_diff(a: &Pair, b: &Pair) -> (Vec<C>, Vec<C>) {
    let da = a.a.data.iter().zip(&b.a.data).map(|(x, y)| x - y).collect();
    let dp = a.phi.data.iter().zip(&b.phi.data).map(|(x, y)| x - y).collect();
    (da, dp)
}

/// First-order descent on the chosen objective. Every accepted step lowers
/// the objective or raises it by at most 1e-12.
pub fn minimize(pair0: &Pair, tau: &CentralParameter, opts: &MinimizeOptions) -> Result<MinimizeOutcome, EnergyError> {
    check_tau(pair0, tau)?;
    if tau.lambda == 0.0 && pair0.rep.charge.is_none() {
        log::warn!("λ(τ) = 0: expect φ → 0 or no solution");
    }
    match opts.rule {
        StepRule::BarzilaiBorwein => minimize_bb(pair0, tau, opts),
        StepRule::Conjugate => minimize_conjugate(pair0, tau, opts),
    }
}

fn check_done(e: &Evaluation, gnorm: f64, opts: &MinimizeOptions) -> Option<Termination> {
    if e.norms.is_vortex(opts.target_eps) {
        Some(Termination::Converged)
    } else if gnorm < opts.grad_tol {
        Some(Termination::Stationary)
    } else {
        None
    }
}

fn not_converged(x: Pair, e: &Evaluation, gscale: f64, opts: &MinimizeOptions, trace: Vec<TraceEntry>) -> EnergyError {
    EnergyError::NotConverged {
        iterations: opts.max_iter,
        residual: e.norms.max(),
        gradient: e.grad.as_ref().map(|g| g.norm() * gscale).unwrap_or(f64::NAN),
        best: Box::new(x),
        trace,
    }
}

fn minimize_bb(pair0: &Pair, tau: &CentralParameter, opts: &MinimizeOptions) -> Result<MinimizeOutcome, EnergyError> {
    let h2 = pair0.torus.h().powi(2);
    let gscale = 1.0 / h2;
    let geo = Arc::new(LatticeCache::new(pair0));
    let mut x = pair0.clone();
    let mut e = evaluate_cached(&x, tau, opts.objective, true, &geo)?;
    let mut prev: Option<Pair> = None;
    let mut alpha = opts.initial_step / h2;
    let mut trace = Vec::new();
    for k in 0..=opts.max_iter {
        let g = e.grad.as_ref().unwrap();
        let gnorm = g.norm() * gscale;
        trace.push(TraceEntry {
            iteration: k,
            objective: e.value,
            ymh: e.ymh,
            residual: e.norms.max(),
            gradient: gnorm,
            step: alpha,
        });
        if let Some(termination) = check_done(&e, gnorm, opts) {
            return Ok(MinimizeOutcome {
                pair: x,
                termination,
                iterations: k,
                norms: e.norms,
                trace,
            });
        }
        if k == opts.max_iter {
            break;
        }
        let mut step = alpha;
        let mut beta = opts.momentum;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial = x.clone();
            axpy_pair(&mut trial, -step, g);
            if let (Some(p), true) = (&prev, beta > 0.0) {
                let (da, dp) = pair_diff(&x, p);
                for (z, y) in trial.a.data.iter_mut().zip(&da) {
                    *z += y * beta;
                }
                for (z, y) in trial.phi.data.iter_mut().zip(&dp) {
                    *z += y * beta;
                }
            }
            let et = evaluate_cached(&trial, tau, opts.objective, true, &geo)?;
            if et.value.is_finite() && et.value <= e.value + 1e-12 {
                accepted = Some((trial, et));
                break;
            }
            step *= 0.5;
            beta = 0.0;
        }
        let Some((xn, en)) = accepted else {
            return Err(EnergyError::StepFailure { iteration: k, step });
        };
        let gn = en.grad.as_ref().unwrap();
        let (sa, sp) = pair_diff(&xn, &x);
        let ya: Vec<C> = gn.a.data.iter().zip(&g.a.data).map(|(p, q)| p - q).collect();
        let yp: Vec<C> = gn.phi.data.iter().zip(&g.phi.data).map(|(p, q)| p - q).collect();
        let ss = dot_c(&sa, &sa) + dot_c(&sp, &sp);
        let sy = dot_c(&sa, &ya) + dot_c(&sp, &yp);
        let yy = dot_c(&ya, &ya) + dot_c(&yp, &yp);
        alpha = if sy > 0.0 {
            if k % 2 == 0 {
                ss / sy
            } else {
                sy / yy
            }
        } else {
            step * 2.0
        };
        prev = Some(std::mem::replace(&mut x, xn));
        e = en;
    }
    Err(not_converged(x, &e, gscale, opts, trace))
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    eval: Option<(Pair, Evaluation)>,
}

/// Minimizer of the cubic through two probes, kept inside the bracket.
fn cubic_step(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let (left, right) = (a.min(b), a.max(b));
    let width = right - left;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if t.is_finite() {
        t.clamp(left + 0.1 * width, right - 0.1 * width)
    } else {
        mid
    }
}

fn minimize_conjugate(pair0: &Pair, tau: &CentralParameter, opts: &MinimizeOptions) -> Result<MinimizeOutcome, EnergyError> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.1;
    let h2 = pair0.torus.h().powi(2);
    let gscale = 1.0 / h2;
    let geo = Arc::new(LatticeCache::new(pair0));
    let mut x = pair0.clone();
    let mut e = evaluate_cached(&x, tau, opts.objective, true, &geo)?;
    let mut dir: Option<Direction> = None;
    let mut last = (opts.initial_step / h2, 0.0);
    let mut trace = Vec::new();
    for k in 0..=opts.max_iter {
        let g = e.grad.clone().unwrap();
        let gnorm = g.norm() * gscale;
        trace.push(TraceEntry {
            iteration: k,
            objective: e.value,
            ymh: e.ymh,
            residual: e.norms.max(),
            gradient: gnorm,
            step: last.0,
        });
        if let Some(termination) = check_done(&e, gnorm, opts) {
            return Ok(MinimizeOutcome {
                pair: x,
                termination,
                iterations: k,
                norms: e.norms,
                trace,
            });
        }
        if k == opts.max_iter {
            break;
        }
        let mut p = g.scaled(-1.0);
        if let Some(old) = &dir {
            let beta = (g.dot(&g) - g.dot(&old.grad)) / old.gg;
            p.axpy(beta.max(0.0), &old.tangent);
        }
        let mut slope0 = p.dot(&g);
        if !(slope0 < 0.0) {
            p = g.scaled(-1.0);
            slope0 = -g.dot(&g);
        }
        let mut alpha = if last.1 < 0.0 {
            (last.0 * last.1 / slope0).max(f64::MIN_POSITIVE)
        } else {
            opts.initial_step / h2
        };
        let f0 = e.value;
        let mut lo = Probe { alpha: 0.0, value: f0, slope: slope0, eval: None };
        let mut hi: Option<Probe> = None;
        let mut accepted = None;
        let mut closest = f64::INFINITY;
        for _ in 0..=opts.max_backtracks {
            let mut trial = x.clone();
            axpy_pair(&mut trial, alpha, &p);
            let et = evaluate_cached(&trial, tau, opts.objective, true, &geo)?;
            if et.value.is_finite() {
                closest = closest.min((et.value - f0).abs());
            }
            let slope = et.grad.as_ref().unwrap().dot(&p);
            let probe = Probe { alpha, value: et.value, slope, eval: Some((trial, et)) };
            if !probe.value.is_finite() || probe.value > f0 + C1 * alpha * slope0 || probe.value >= lo.value {
                hi = Some(probe);
            } else if probe.slope.abs() <= -C2 * slope0 {
                accepted = Some(probe);
                break;
            } else {
                let flip = match &hi {
                    Some(h) => probe.slope * (h.alpha - probe.alpha) >= 0.0,
                    None => probe.slope >= 0.0,
                };
                if flip {
                    hi = Some(std::mem::replace(&mut lo, probe));
                } else {
                    lo = probe;
                }
            }
            alpha = match &hi {
                None => 4.0 * lo.alpha,
                Some(h) if !h.value.is_finite() => 0.5 * (lo.alpha + h.alpha),
                Some(h) => cubic_step(&lo, h),
            };
        }
        let probe = match accepted {
            Some(p) => p,
            None if lo.eval.is_some() => lo,
            None if dir.is_some() => {
                dir = None;
                last = (opts.initial_step / h2, 0.0);
                continue;
            }
            None if closest <= 64.0 * f64::EPSILON * f0.abs().max(f64::MIN_POSITIVE) => {
                return Ok(MinimizeOutcome {
                    pair: x,
                    termination: Termination::Stalled,
                    iterations: k,
                    norms: e.norms,
                    trace,
                });
            }
            None => return Err(EnergyError::StepFailure { iteration: k, step: alpha }),
        };
        let (xn, en) = probe.eval.unwrap();
        dir = Some(Direction { gg: g.dot(&g), tangent: p, grad: g });
        last = (probe.alpha, slope0);
        x = xn;
        e = en;
    }
    Err(not_converged(x, &e, gscale, opts, trace))
}

struct Direction {
    tangent: Tangent,
    grad: Tangent,
    gg: f64,
}

/// −2π deg_τ + |τ|² vol(X): the value λ(τ)‖φ‖² must take at a vortex.
/// Solutions with φ ≠ 0 need it positive.
pub fn vortex_threshold(pair: &Pair, tau: &CentralParameter) -> f64 {
    -2.0 * PI * degree_tau(pair, tau) + tau.norm_sqr() * pair.torus.vol()
}

fn theta_section(torus: &KaehlerTorus, k: f64, x: usize) -> C {
    let c = torus.coords(x);
    let h = torus.h() / torus.l;
    let (x0, x1) = (c[0] as f64 * h, c[1] as f64 * h);
    let z = C::new(x0, x1);
    let theta: C = (-12i32..=12)
        .map(|m| {
            let m = m as f64;
            (C::new(0.0, 2.0 * PI * k * m) * z - PI * k * m * m).exp()
        })
        .sum();
    (PI * k * (z * z - x0 * x0)).exp() * theta
}

/// Starting pair for a solve: the background connection of the twist and a
/// section in its lowest Landau level when the flux sits in the (x¹, x²)
/// face, a constant section otherwise. ‖φ‖² is set to the value forced by
/// the norm identity, or to 0.1 when no nonzero section can solve the
/// equations (0 when τ = 0). `noise` adds a band-limited perturbation drawn from `seed`.
pub fn seed_pair(
    torus: KaehlerTorus,
    rep: Arc<Representation>,
    twist: TwistData,
    tau: &CentralParameter,
    seed: u64,
    noise: f64,
) -> Result<Pair, EnergyError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = if noise > 0.0 {
        Pair::random_smooth(torus, rep, twist, &mut rng, noise, noise, 0.0)?
    } else {
        Pair::zero(torus, rep, twist)?
    };
    check_tau(&p, tau)?;
    let m = p.twist.m;
    let only_first_face = (0..4).all(|a| (0..4).all(|b| (a, b) == (0, 1) || (a, b) == (1, 0) || m[a][b] == 0));
    let k = if p.twist.is_trivial() { 0.0 } else { (p.twist_weight() * m[0][1] as f64).round() };
    let raw: Vec<C> = (0..torus.sites())
        .map(|x| {
            if k >= 1.0 && only_first_face {
                theta_section(&torus, k, x)
            } else {
                C::new(1.0, 0.0)
            }
        })
        .collect();
    let base = p.clone();
    let target = if tau.lambda > 0.0 { vortex_threshold(&base, tau) / tau.lambda } else { 0.0 };
    let target = if target > 0.0 {
        target
    } else if tau.norm_sqr() == 0.0 {
        0.0
    } else {
        0.1
    };
    let nn: f64 = raw.iter().map(|z| z.norm_sqr()).sum::<f64>() * torus.cell();
    let scale = (target / nn).sqrt();
    let d = p.dim();
    for (x, z) in raw.iter().enumerate() {
        p.phi.data[x * d] += z * scale;
    }
    Ok(p)
}

/// Which branch of the norm identity a solve is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Threshold positive: a vortex with ‖φ‖² fixed by the norm identity.
    Vortex,
    /// Threshold ≤ 0: φ must vanish; the action is minimized instead.
    ZeroSection,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub branch: Branch,
    pub threshold: f64,
    pub outcome: MinimizeOutcome,
}

/// Runs [`minimize`] on the residual objective above threshold, and on the
/// action at or below it, where no nonzero section solves the equations.
pub fn solve(pair0: &Pair, tau: &CentralParameter, opts: &MinimizeOptions) -> Result<SolveOutcome, EnergyError> {
    check_tau(pair0, tau)?;
    let threshold = vortex_threshold(pair0, tau);
    let zero = tau.lambda > 0.0 && threshold <= 1e-12 * tau.norm_sqr().max(1.0);
    let mut o = opts.clone();
    if zero {
        o.objective = Objective::Ymh;
    }
    let outcome = minimize(pair0, tau, &o)?;
    Ok(SolveOutcome {
        branch: if zero { Branch::ZeroSection } else { Branch::Vortex },
        threshold,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gauge_act, GaugeTransformation, TwistData};
    use crate::lattice::KaehlerTorus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rep(s: &str) -> Arc<Representation> {
        Arc::new(Representation::parse(s).unwrap())
    }

    fn rand_pair(n: usize, r: &str, twist: TwistData, seed: u64, amp: f64) -> Pair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Pair::random_smooth(KaehlerTorus::unit(n), rep(r), twist, &mut rng, amp, 0.5, 1.0).unwrap()
    }

    fn random_direction(p: &Pair, seed: u64) -> Tangent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = p.a.clone();
        for x in 0..p.torus.sites() {
            for mu in 0..4 {
                let m = p.rep.group.random_element(&mut rng, 1.0);
                a.at_mut(x, mu).copy_from_slice(&m.a);
            }
        }
        let phi = DiscreteForm {
            data: crate::algebra::random_vector(&mut rng, p.phi.data.len()),
            ..p.phi.clone()
        };
        Tangent { a, phi, link_force: Vec::new() }
    }

    fn fd_check(p: &Pair, tau: &CentralParameter, obj: Objective, dirs: u64) -> f64 {
        let g = gradient(p, tau, obj).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..dirs {
            let v = random_direction(p, 100 + k);
            let eps = 1e-4;
            let mut plus = p.clone();
            axpy_pair(&mut plus, eps, &v);
            let mut minus = p.clone();
            axpy_pair(&mut minus, -eps, &v);
            let fp = evaluate(&plus, tau, obj, false).unwrap().value;
            let fm = evaluate(&minus, tau, obj, false).unwrap().value;
            let fd = (fp - fm) / (2.0 * eps);
            let an = g.dot(&v);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-300));
        }
        worst
    }

    #[test]
    fn gradient_matches_central_differences() {
        let tau1 = CentralParameter::scalar(&rep("u1:1"), 3.0);
        let p = rand_pair(4, "u1:1", TwistData::planar(1, 1), 1, 0.8);
        assert!(fd_check(&p, &tau1, Objective::Ymh, 5) < 1e-6);
        assert!(fd_check(&p, &tau1, Objective::Vortex, 5) < 1e-6);
        let p = rand_pair(3, "un:2:fund", TwistData::planar(1, 0), 2, 0.8);
        let tau2 = CentralParameter::scalar(&p.rep, 1.5);
        assert!(fd_check(&p, &tau2, Objective::Ymh, 4) < 1e-6);
        assert!(fd_check(&p, &tau2, Objective::Vortex, 4) < 1e-6);
        let p = rand_pair(3, "un:2:sym2", TwistData::trivial(), 3, 0.8);
        let tau3 = CentralParameter::scalar(&p.rep, 0.7);
        assert!(fd_check(&p, &tau3, Objective::Vortex, 3) < 1e-6);
        let p = rand_pair(3, "u1:2", TwistData::planar(0, 1), 4, 0.8);
        let tau4 = CentralParameter::scalar(&p.rep, 0.7);
        assert!(fd_check(&p, &tau4, Objective::Vortex, 3) < 1e-6);
    }

    #[test]
    fn zero_pair_is_critical() {
        let p = Pair::zero(KaehlerTorus::unit(3), rep("un:2:fund"), TwistData::trivial()).unwrap();
        let tau = CentralParameter::scalar(&p.rep, 0.0);
        let g = ymh_gradient(&p, &tau).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn trivial_energies() {
        let t = KaehlerTorus::new(3, 1.4).unwrap();
        let r = rep("un:2:fund");
        let p = Pair::zero(t, r.clone(), TwistData::trivial()).unwrap();
        let tau = CentralParameter::scalar(&r, 2.0);
        let e = ymh_total(&p, &tau).unwrap();
        assert!((e.ymh - tau.norm_sqr() * t.vol()).abs() < 1e-12);
        assert!((e.alternate - e.ymh).abs() < 1e-12);
        let mut q = p.clone();
        for x in 0..t.sites() {
            q.phi.data[2 * x] = C::new(0.6, 0.8);
            q.phi.data[2 * x + 1] = C::new(-0.3, 0.1);
        }
        let zero = CentralParameter::scalar(&r, 0.0);
        let e = ymh_total(&q, &zero).unwrap();
        let mu = crate::fields::moment_of(&r, q.phi_at(0));
        assert!((e.ymh - mu.norm_sqr() * t.vol()).abs() < 1e-12);
    }

    #[test]
    fn chern_weil_numbers_of_constant_fluxes() {
        let r = rep("u1:1");
        for (a, b) in [(1, 0), (1, 1), (2, 1), (-1, 3)] {
            let p = Pair::zero(KaehlerTorus::unit(6), r.clone(), TwistData::planar(a, b)).unwrap();
            assert!((ch2(&p) - (a * b) as f64).abs() < 1e-10);
            let xi = CentralParameter::scalar(&r, 1.0);
            assert!((degree_tau(&p, &xi) - (a + b) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn chern_weil_numbers_are_invariant_under_small_perturbations() {
        let r = rep("u1:1");
        let base = Pair::zero(KaehlerTorus::unit(5), r.clone(), TwistData::planar(2, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Pair::random_smooth(base.torus, r.clone(), base.twist, &mut rng, 0.3, 0.0, 0.0).unwrap();
        let xi = CentralParameter::scalar(&r, 1.0);
        assert!((ch2(&noise) - 2.0).abs() < 1e-8);
        assert!((degree_tau(&noise, &xi) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn pure_gauge_has_zero_topology() {
        let p = rand_pair(4, "un:2:fund", TwistData::trivial(), 8, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = GaugeTransformation::random(&p.torus, &p.rep, &mut rng);
        let q = gauge_act(&s, &p);
        let tau = CentralParameter::scalar(&p.rep, 1.0);
        assert!(degree_tau(&q, &tau).abs() < 1e-10);
        assert!(ch2(&q).abs() < 1e-10);
    }

    #[test]
    fn report_scalars_and_gradient_are_gauge_invariant() {
        for (r, tw) in [("u1:1", TwistData::planar(1, 1)), ("un:2:fund", TwistData::planar(1, 0))] {
            let p = rand_pair(4, r, tw, 5, 0.6);
            let tau = CentralParameter::scalar(&p.rep, 2.0);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let s = GaugeTransformation::random(&p.torus, &p.rep, &mut rng);
            let q = gauge_act(&s, &p);
            let (a, b) = (ymh_total(&p, &tau).unwrap(), ymh_total(&q, &tau).unwrap());
            for (u, v) in [(a.ymh, b.ymh), (a.alternate, b.alternate), (a.ch2, b.ch2), (a.deg_tau, b.deg_tau)] {
                assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()), "{r}: {u} {v}");
            }
            let (dp, dq) = (ymh_density(&p, &tau).unwrap(), ymh_density(&q, &tau).unwrap());
            assert!(dp.data.iter().zip(&dq.data).all(|(u, v)| (u - v).norm() < 1e-10));
            for obj in [Objective::Ymh, Objective::Vortex] {
                let gp = gradient(&p, &tau, obj).unwrap();
                let gq = gradient(&q, &tau, obj).unwrap();
                let t = p.torus;
                for x in 0..t.sites() {
                    let rho = p.rep.group_matrix(&s.g[x]).adj();
                    let want = rho.matvec(&gp.phi.data[x * p.dim()..(x + 1) * p.dim()]);
                    for (k, w) in want.iter().enumerate() {
                        assert!((gq.phi.data[x * p.dim() + k] - w).norm() < 1e-8);
                    }
                    for mu in 0..4 {
                        let y = t.shift(x, mu, true);
                        let z = &gp.link_force[x * 4 + mu];
                        let want = s.g[y].adj().mul(z).mul(&s.g[y]);
                        assert!(want.sub(&gq.link_force[x * 4 + mu]).max_abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_defect_is_small_for_smooth_pairs() {
        let p = rand_pair(16, "u1:1", TwistData::trivial(), 3, 0.5);
        let tau = CentralParameter::scalar(&p.rep, 2.0);
        let e = ymh_total(&p, &tau).unwrap();
        assert!(e.defect.abs() < 0.05 * e.ymh, "{e:?}");
    }

    #[test]
    fn minimizer_starting_at_the_trivial_vortex_stops_immediately() {
        let p = Pair::zero(KaehlerTorus::unit(4), rep("u1:1"), TwistData::trivial()).unwrap();
        let tau = CentralParameter::scalar(&p.rep, 0.0);
        let out = minimize(&p, &tau, &MinimizeOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.termination, Termination::Converged);
        assert_eq!(ymh_total(&out.pair, &tau).unwrap().ymh, 0.0);
    }

    #[test]
    fn minimizer_is_monotone_and_reaches_the_flat_vacuum() {
        let p = rand_pair(4, "u1:1", TwistData::trivial(), 9, 0.3);
        let tau = CentralParameter::scalar(&p.rep, 1.0);
        let opts = MinimizeOptions::default();
        let out = minimize(&p, &tau, &opts).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
        }
        let res = crate::fields::vortex_residuals(&out.pair, &tau).unwrap();
        assert!(res.norms.max() < 1e-6);
    }
}
