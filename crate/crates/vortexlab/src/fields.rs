//! The unknowns (A, φ) on the lattice, the gauge action, curvature,
//! covariant derivatives and the residuals of the vortex equations.
//!
//! Links are compact: the connection coefficient A on the link x → x+μ
//! defines U_μ(x) = ω_μ(x)·exp(hA), a map from the frame at x+μ to the frame
//! at x. The phase ω carries the bundle twist. The section is transported by
//! R_μ(x) = ω_V·exp(hρ_*(A)), and D_μφ(x) = (R_μ(x)φ(x+μ) − φ(x))/h.
//!
//! Curvature is the clover average of the four plaquette logarithms around a
//! site, F_μν(x) ≈ (1/4h²)Σ log P, which is gauge covariant and second order
//! accurate at the site.

use crate::algebra::{AlgebraError, CentralParameter, Representation};
use crate::lattice::{DiscreteForm, KaehlerTorus, LatticeError, ValueKind, PLANES};
use crate::linalg::{DMat, Mat, I};
use num_complex::Complex64 as C;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum FieldsError {
    #[error("twist matrix must be antisymmetric")]
    TwistNotAntisymmetric,
    #[error("a nontrivial twist needs a representation on which the centre acts by scalars")]
    TwistNeedsScalarCentre,
    #[error("field shape mismatch: {0}")]
    Shape(String),
    #[error("snapshot manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Vec4 = SmallVec<[C; 4]>;

/// Matrix storage used by the lattice kernels: scalars for one-dimensional
/// U(1) problems, dense matrices otherwise.
pub trait Backend: Mat + 'static {
    fn from_dmat(d: &DMat) -> Self;
    fn to_dmat(&self) -> DMat;
}

impl Backend for C {
    #[inline]
    fn from_dmat(d: &DMat) -> Self {
        d.a[0]
    }
    #[inline]
    fn to_dmat(&self) -> DMat {
        DMat::from_slice(1, &[*self])
    }
}

impl Backend for DMat {
    #[inline]
    fn from_dmat(d: &DMat) -> Self {
        d.clone()
    }
    #[inline]
    fn to_dmat(&self) -> DMat {
        self.clone()
    }
}

/// Constant abelian ('t Hooft) twist: an integer flux m_μν through each
/// coordinate 2-face, realised as phases on the centre of the group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwistData {
    pub m: [[i64; 4]; 4],
}

impl Default for TwistData {
    fn default() -> Self {
        Self::trivial()
    }
}

impl TwistData {
    pub fn trivial() -> Self {
        TwistData { m: [[0; 4]; 4] }
    }

    pub fn new(m: [[i64; 4]; 4]) -> Result<Self, FieldsError> {
        for i in 0..4 {
            for j in 0..4 {
                if m[i][j] != -m[j][i] {
                    return Err(FieldsError::TwistNotAntisymmetric);
                }
            }
        }
        Ok(TwistData { m })
    }

    /// Fluxes a through the (x¹,x²) faces and b through the (x³,x⁴) faces.
    pub fn planar(a: i64, b: i64) -> Self {
        let mut m = [[0; 4]; 4];
        m[0][1] = a;
        m[1][0] = -a;
        m[2][3] = b;
        m[3][2] = -b;
        TwistData { m }
    }

    pub fn is_trivial(&self) -> bool {
        self.m.iter().flatten().all(|&v| v == 0)
    }

    /// First Chern numbers of the central U(1) factor per plane, in the
    /// order of [`PLANES`].
    pub fn chern(&self) -> [i64; 6] {
        std::array::from_fn(|p| {
            let (a, b) = PLANES[p];
            self.m[a][b]
        })
    }

    /// Cup square of the flux class: m₀₁m₂₃ − m₀₂m₁₃ + m₀₃m₁₂.
    pub fn flux_pfaffian(&self) -> i64 {
        let m = &self.m;
        m[0][1] * m[2][3] - m[0][2] * m[1][3] + m[0][3] * m[1][2]
    }

    /// Background angle on the link (x, ν): a uniform field in the bulk,
    /// plus the transition phase on links that wrap around the torus.
    pub fn link_angle(&self, torus: &KaehlerTorus, x: [usize; 4], nu: usize) -> f64 {
        let n = torus.n as f64;
        let mut th = 0.0;
        for mu in 0..nu {
            th -= 2.0 * PI * self.m[mu][nu] as f64 * x[mu] as f64 / (n * n);
        }
        if x[nu] + 1 == torus.n {
            for k in (nu + 1)..4 {
                th += 2.0 * PI * self.m[nu][k] as f64 * x[k] as f64 / n;
            }
        }
        th
    }
}

/// A group element per site.
#[derive(Clone, Debug)]
pub struct GaugeTransformation {
    pub g: Vec<DMat>,
}

impl GaugeTransformation {
    pub fn identity(torus: &KaehlerTorus, n: usize) -> Self {
        GaugeTransformation {
            g: vec![DMat::eye(n); torus.sites()],
        }
    }

    /// s = exp(χ) for a 𝔨-valued 0-form χ.
    pub fn exp(chi: &[DMat]) -> Self {
        GaugeTransformation {
            g: chi.iter().map(|c| c.exp_skew()).collect(),
        }
    }

    pub fn random<R: Rng>(torus: &KaehlerTorus, rep: &Representation, rng: &mut R) -> Self {
        GaugeTransformation {
            g: (0..torus.sites()).map(|_| rep.group.random_group_element(rng)).collect(),
        }
    }

    /// Smooth random gauge transformation exp(χ) with band-limited χ.
    pub fn random_smooth<R: Rng>(torus: &KaehlerTorus, rep: &Representation, rng: &mut R, amp: f64) -> Self {
        let basis = &rep.group.basis;
        let coeffs: Vec<Vec<f64>> = basis.iter().map(|_| crate::lattice::band_limited(torus, rng, 1, 4)).collect();
        let chi: Vec<DMat> = (0..torus.sites())
            .map(|x| {
                let mut m = DMat::zeros(rep.n());
                for (e, c) in basis.iter().zip(&coeffs) {
                    m.add_scaled(e, amp * c[x]);
                }
                m
            })
            .collect();
        Self::exp(&chi)
    }

    /// Pointwise product (self·o)(x) = self(x)·o(x).
    pub fn compose(&self, o: &Self) -> Self {
        GaugeTransformation {
            g: self.g.iter().zip(&o.g).map(|(a, b)| a.mul(b)).collect(),
        }
    }

    pub fn unitarity_defect(&self) -> f64 {
        self.g
            .iter()
            .map(|u| u.adj().mul(u).sub(&DMat::eye(u.n)).max_abs())
            .fold(0.0, f64::max)
    }

    /// max_x |s(x) − 1|.
    pub fn distance_from_identity(&self) -> f64 {
        self.g
            .iter()
            .map(|u| u.sub(&DMat::eye(u.n)).max_abs())
            .fold(0.0, f64::max)
    }
}

/// The unknowns: a 𝔨-valued link field and a V-valued site field.
#[derive(Clone, Debug)]
pub struct Pair {
    pub torus: KaehlerTorus,
    pub rep: Arc<Representation>,
    pub twist: TwistData,
    /// Degree-1 algebra form; each link holds the n×n matrix row-major.
    pub a: DiscreteForm,
    /// Degree-0 vector form of width dim V.
    pub phi: DiscreteForm,
}

impl Pair {
    pub fn zero(torus: KaehlerTorus, rep: Arc<Representation>, twist: TwistData) -> Result<Self, FieldsError> {
        if !twist.is_trivial() && rep.lambda_consistency(7) > 1e-10 {
            return Err(FieldsError::TwistNeedsScalarCentre);
        }
        let n = rep.n();
        let d = rep.dim;
        Ok(Pair {
            torus,
            a: DiscreteForm::zeros(&torus, 1, ValueKind::Algebra, n * n),
            phi: DiscreteForm::zeros(&torus, 0, ValueKind::Vector, d),
            rep,
            twist,
        })
    }

    pub fn from_parts(
        torus: KaehlerTorus,
        rep: Arc<Representation>,
        twist: TwistData,
        a: DiscreteForm,
        phi: DiscreteForm,
    ) -> Result<Self, FieldsError> {
        let mut p = Self::zero(torus, rep, twist)?;
        if a.degree != 1 || a.width != p.a.width || a.data.len() != p.a.data.len() {
            return Err(FieldsError::Shape("connection".into()));
        }
        if phi.degree != 0 || phi.width != p.phi.width || phi.data.len() != p.phi.data.len() {
            return Err(FieldsError::Shape("section".into()));
        }
        p.a = a;
        p.phi = phi;
        Ok(p)
    }

    /// Random band-limited pair: each algebra coordinate of A and each
    /// component of φ is a low-frequency cosine sum; φ is offset by `phi0`.
    pub fn random_smooth<R: Rng>(
        torus: KaehlerTorus,
        rep: Arc<Representation>,
        twist: TwistData,
        rng: &mut R,
        a_amp: f64,
        phi_amp: f64,
        phi0: f64,
    ) -> Result<Self, FieldsError> {
        let mut p = Self::zero(torus, rep, twist)?;
        let basis = p.rep.group.basis.clone();
        for mu in 0..4 {
            for e in &basis {
                let f = crate::lattice::band_limited(&torus, rng, 1, 6);
                for x in 0..torus.sites() {
                    let mut m = p.link(x, mu);
                    m.add_scaled(e, a_amp * f[x]);
                    p.set_link(x, mu, &m);
                }
            }
        }
        for k in 0..p.rep.dim {
            let re = crate::lattice::band_limited(&torus, rng, 1, 6);
            let im = crate::lattice::band_limited(&torus, rng, 1, 6);
            for x in 0..torus.sites() {
                let off = if k == 0 { phi0 } else { 0.0 };
                p.phi.data[x * p.rep.dim + k] = C::new(off + phi_amp * re[x], phi_amp * im[x]);
            }
        }
        Ok(p)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.rep.n()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rep.dim
    }

    pub fn link(&self, x: usize, mu: usize) -> DMat {
        DMat::from_slice(self.n(), self.a.at(x, mu))
    }

    pub fn set_link(&mut self, x: usize, mu: usize, m: &DMat) {
        self.a.at_mut(x, mu).copy_from_slice(&m.a);
    }

    pub fn phi_at(&self, x: usize) -> &[C] {
        let d = self.dim();
        &self.phi.data[x * d..(x + 1) * d]
    }

    /// Largest |A + A†| over links.
    pub fn skew_defect(&self) -> f64 {
        (0..self.torus.sites())
            .flat_map(|x| (0..4).map(move |mu| (x, mu)))
            .map(|(x, mu)| self.link(x, mu).skew_defect())
            .fold(0.0, f64::max)
    }

    pub fn is_scalar(&self) -> bool {
        self.n() == 1 && self.dim() == 1
    }

    /// Real weight w with ρ(e^{θξ}) = e^{iwθ} on V, used for the twist.
    pub fn twist_weight(&self) -> f64 {
        self.rep.center_weight[0].im
    }

    pub fn group_links(&self) -> Vec<DMat> {
        let h = self.torus.h();
        let mut out = Vec::with_capacity(4 * self.torus.sites());
        for x in 0..self.torus.sites() {
            let c = self.torus.coords(x);
            for mu in 0..4 {
                let w = C::from_polar(1.0, self.twist.link_angle(&self.torus, c, mu));
                out.push(self.link(x, mu).scale(h).exp_skew().cscale(w));
            }
        }
        out
    }
}

/// Forward evaluation of every lattice primitive for a pair.
///
/// Layouts: links and derivatives `[site * 4 + μ]`, plaquettes and clover
/// curvature `[site * 6 + plane]`, ∂̄ coefficients `[site * 2 + j]`, vectors
/// flattened with stride dim V.
pub struct FieldState<M: Backend> {
    pub torus: KaehlerTorus,
    pub d: usize,
    pub geo: Arc<LatticeCache>,
    /// hA and hρ_*(A) per link.
    pub ha: Vec<M>,
    pub hra: Vec<M>,
    pub u: Vec<M>,
    pub r: Vec<M>,
    pub plaq: Vec<M>,
    pub logp: Vec<M>,
    pub clover: Vec<M>,
    pub phi: Vec<C>,
    pub dphi: Vec<C>,
    pub cbar: Vec<C>,
    pub mu: Vec<M>,
}

/// Field-independent data of a lattice and twist: neighbour tables and the
/// twist phases on the group and on V, per link.
#[derive(Clone, Debug)]
pub struct LatticeCache {
    pub fwd: Vec<[usize; 4]>,
    pub bwd: Vec<[usize; 4]>,
    pub wu: Vec<C>,
    pub wv: Vec<C>,
}

impl LatticeCache {
    pub fn new(pair: &Pair) -> Self {
        let t = pair.torus;
        let (fwd, bwd) = t.neighbours();
        let wt = pair.twist_weight();
        let mut wu = Vec::with_capacity(4 * t.sites());
        let mut wv = Vec::with_capacity(4 * t.sites());
        for x in 0..t.sites() {
            let c = t.coords(x);
            for mu in 0..4 {
                let th = if pair.twist.is_trivial() { 0.0 } else { pair.twist.link_angle(&t, c, mu) };
                wu.push(C::from_polar(1.0, th));
                wv.push(C::from_polar(1.0, wt * th));
            }
        }
        LatticeCache { fwd, bwd, wu, wv }
    }
}

/// The two complex faces: (x¹,x²) and (x³,x⁴).
pub const FACES: [(usize, usize); 2] = [(0, 1), (2, 3)];

impl<M: Backend> FieldState<M> {
    pub fn new(pair: &Pair) -> Self {
        Self::with_cache(pair, Arc::new(LatticeCache::new(pair)))
    }

    pub fn with_cache(pair: &Pair, geo: Arc<LatticeCache>) -> Self {
        let t = pair.torus;
        let v = t.sites();
        let h = t.h();
        let d = pair.dim();
        let n = pair.n();
        let rep = &pair.rep;
        let mut ha = Vec::with_capacity(4 * v);
        let mut hra = Vec::with_capacity(4 * v);
        let mut u = Vec::with_capacity(4 * v);
        let mut r = Vec::with_capacity(4 * v);
        let scalar_charge = if pair.is_scalar() { rep.charge } else { None };
        for l in 0..4 * v {
            let a = M::from_slice(n, pair.a.at(l / 4, l % 4)).scale(h);
            let ra = match scalar_charge {
                Some(q) => a.scale(q),
                None => M::from_dmat(&rep.push(&a.to_dmat())),
            };
            u.push(a.exp_skew().cscale(geo.wu[l]));
            r.push(ra.exp_skew().cscale(geo.wv[l]));
            ha.push(a);
            hra.push(ra);
        }
        let mut s = FieldState {
            torus: t,
            d,
            geo,
            ha,
            hra,
            u,
            r,
            plaq: Vec::new(),
            logp: Vec::new(),
            clover: Vec::new(),
            phi: pair.phi.data.clone(),
            dphi: Vec::new(),
            cbar: Vec::new(),
            mu: Vec::new(),
        };
        s.compute_plaquettes();
        s.compute_clover();
        s.compute_derivatives();
        s.compute_moment(rep);
        s
    }

    #[inline]
    pub fn link(&self, x: usize, mu: usize) -> &M {
        &self.u[x * 4 + mu]
    }

    fn compute_plaquettes(&mut self) {
        let v = self.torus.sites();
        let mut plaq = Vec::with_capacity(6 * v);
        let mut logp = Vec::with_capacity(6 * v);
        for x in 0..v {
            for &(mu, nu) in PLANES.iter() {
                let xm = self.geo.fwd[x][mu];
                let xn = self.geo.fwd[x][nu];
                let p = self.u[x * 4 + mu]
                    .mul(&self.u[xm * 4 + nu])
                    .mul(&self.u[x * 4 + nu].mul(&self.u[xn * 4 + mu]).adj());
                let l = p.log_unitary().skew();
                plaq.push(p);
                logp.push(l);
            }
        }
        self.plaq = plaq;
        self.logp = logp;
    }

    /// Transport used by the clover term from the corner x−μ−ν to x.
    #[inline]
    pub fn diag_transport(&self, x: usize, mu: usize, nu: usize) -> M {
        let xm = self.geo.bwd[x][mu];
        let xmn = self.geo.bwd[xm][nu];
        let xn = self.geo.bwd[x][nu];
        self.u[xmn * 4 + mu].mul(&self.u[xn * 4 + nu])
    }

    fn compute_clover(&mut self) {
        let v = self.torus.sites();
        let h = self.torus.h();
        let s = 0.25 / (h * h);
        let mut out = Vec::with_capacity(6 * v);
        for x in 0..v {
            for (p, &(mu, nu)) in PLANES.iter().enumerate() {
                let xm = self.geo.bwd[x][mu];
                let xn = self.geo.bwd[x][nu];
                let xmn = self.geo.bwd[xm][nu];
                let a = &self.u[xm * 4 + mu];
                let b = &self.u[xn * 4 + nu];
                let w = self.diag_transport(x, mu, nu);
                let mut f = self.logp[x * 6 + p].clone();
                f = f.add(&a.adj().mul(&self.logp[xm * 6 + p]).mul(a));
                f = f.add(&w.adj().mul(&self.logp[xmn * 6 + p]).mul(&w));
                f = f.add(&b.adj().mul(&self.logp[xn * 6 + p]).mul(b));
                out.push(f.scale(s));
            }
        }
        self.clover = out;
    }

    fn compute_derivatives(&mut self) {
        let v = self.torus.sites();
        let d = self.d;
        let inv_h = 1.0 / self.torus.h();
        let mut dphi = vec![C::new(0.0, 0.0); 4 * v * d];
        let mut tmp: Vec4 = smallvec::smallvec![C::new(0.0, 0.0); d];
        for x in 0..v {
            for mu in 0..4 {
                let y = self.geo.fwd[x][mu];
                self.r[x * 4 + mu].apply(&self.phi[y * d..(y + 1) * d], &mut tmp);
                let o = (x * 4 + mu) * d;
                for k in 0..d {
                    dphi[o + k] = (tmp[k] - self.phi[x * d + k]) * inv_h;
                }
            }
        }
        self.dphi = dphi;
        let mut cbar = vec![C::new(0.0, 0.0); 2 * v * d];
        let mut t1: Vec4 = smallvec::smallvec![C::new(0.0, 0.0); d];
        let mut t2: Vec4 = smallvec::smallvec![C::new(0.0, 0.0); d];
        for x in 0..v {
            for (j, &(a, b)) in FACES.iter().enumerate() {
                let xa = self.geo.fwd[x][a];
                let xb = self.geo.fwd[x][b];
                self.r[x * 4 + b].apply(&self.dphi[(xb * 4 + a) * d..(xb * 4 + a + 1) * d], &mut t1);
                self.r[x * 4 + a].apply(&self.dphi[(xa * 4 + b) * d..(xa * 4 + b + 1) * d], &mut t2);
                let o = (x * 2 + j) * d;
                for k in 0..d {
                    let da = self.dphi[(x * 4 + a) * d + k] + t1[k];
                    let db = self.dphi[(x * 4 + b) * d + k] + t2[k];
                    cbar[o + k] = (da + I * db) * 0.25;
                }
            }
        }
        self.cbar = cbar;
    }

    fn compute_moment(&mut self, rep: &Representation) {
        let d = self.d;
        let scalar = rep.charge.filter(|_| d == 1 && rep.n() == 1);
        self.mu = (0..self.torus.sites())
            .map(|x| {
                let phi = &self.phi[x * d..(x + 1) * d];
                match scalar {
                    Some(q) => M::from_dmat(&DMat::from_slice(1, &[C::new(0.0, q * phi[0].norm_sqr())])),
                    None => M::from_dmat(&moment_of(rep, phi)),
                }
            })
            .collect();
    }

    /// ΛF = F₀₁ + F₂₃ at a site.
    #[inline]
    pub fn lambda_f(&self, x: usize) -> M {
        self.clover[x * 6].add(&self.clover[x * 6 + 5])
    }
}

/// μ(φ) = pull(iφφ†), valid because the algebra basis is orthonormal.
pub fn moment_of(rep: &Representation, phi: &[C]) -> DMat {
    let mut m = DMat::zeros(phi.len());
    m.add_outer(phi, phi, 1.0);
    rep.pull(&m.cscale(I))
}

macro_rules! with_state {
    ($pair:expr, $s:ident => $body:expr) => {
        if $pair.is_scalar() {
            let $s = FieldState::<C>::new($pair);
            $body
        } else {
            let $s = FieldState::<DMat>::new($pair);
            $body
        }
    };
}
pub(crate) use with_state;

fn algebra_form<M: Backend>(t: &KaehlerTorus, degree: usize, n: usize, vals: &[M]) -> DiscreteForm {
    let comps = crate::lattice::binomial4(degree);
    let mut f = DiscreteForm::zeros(t, degree, ValueKind::Algebra, n * n);
    for x in 0..t.sites() {
        for c in 0..comps {
            vals[x * comps + c].write(f.at_mut(x, c));
        }
    }
    f
}

/// Clover curvature as a 𝔨-valued 2-form.
pub fn curvature(pair: &Pair) -> DiscreteForm {
    with_state!(pair, s => algebra_form(&pair.torus, 2, pair.n(), &s.clover))
}

/// Forward plaquette curvature log P/h², based at the lower corner.
pub fn plaquette_curvature(pair: &Pair) -> DiscreteForm {
    let h2 = pair.torus.h().powi(2);
    with_state!(pair, s => {
        let v: Vec<_> = s.logp.iter().map(|l| l.scale(1.0 / h2)).collect();
        algebra_form(&pair.torus, 2, pair.n(), &v)
    })
}

/// D_Aφ as a V-valued 1-form.
pub fn covariant_derivative(pair: &Pair) -> DiscreteForm {
    with_state!(pair, s => DiscreteForm {
        degree: 1,
        kind: ValueKind::Vector,
        width: pair.dim(),
        data: s.dphi,
    })
}

/// Coefficients of ∂̄_Aφ against dz̄¹ and dz̄²: a 0-form of width 2·dim V,
/// lanes [c₁, c₂]. Each is ½(D_a + iD_b) averaged over its face.
pub fn dbar_part(pair: &Pair) -> DiscreteForm {
    with_state!(pair, s => DiscreteForm {
        degree: 0,
        kind: ValueKind::Vector,
        width: 2 * pair.dim(),
        data: s.cbar,
    })
}

/// Apply s: U ↦ s(x)†U s(x+μ), φ ↦ ρ(s)†φ.
pub fn gauge_act(s: &GaugeTransformation, pair: &Pair) -> Pair {
    let t = pair.torus;
    let h = t.h();
    let mut out = pair.clone();
    let rho: Vec<DMat> = s.g.iter().map(|g| pair.rep.group_matrix(g).adj()).collect();
    for x in 0..t.sites() {
        for mu in 0..4 {
            let y = t.shift(x, mu, true);
            let e = pair.link(x, mu).scale(h).exp_skew();
            let a = s.g[x].adj().mul(&e).mul(&s.g[y]).log_unitary().skew().scale(1.0 / h);
            out.set_link(x, mu, &a);
        }
        let v = rho[x].matvec(pair.phi_at(x));
        let d = pair.dim();
        out.phi.data[x * d..(x + 1) * d].copy_from_slice(&v);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualNorms {
    pub r1: f64,
    pub f20: f64,
    pub f02: f64,
    pub dbar: f64,
}

impl ResidualNorms {
    pub fn max(&self) -> f64 {
        self.r1.max(self.f20).max(self.f02).max(self.dbar)
    }

    pub fn is_vortex(&self, eps: f64) -> bool {
        self.max() < eps
    }
}

#[derive(Clone, Debug)]
pub struct VortexResiduals {
    /// ΛF − μ(φ) + τ as a 𝔨-valued 0-form.
    pub r1: DiscreteForm,
    /// F^{2,0} and F^{0,2} as 2-forms.
    pub f20: DiscreteForm,
    pub f02: DiscreteForm,
    /// ∂̄_Aφ coefficients, see [`dbar_part`].
    pub r3: DiscreteForm,
    pub norms: ResidualNorms,
}

pub fn vortex_residuals(pair: &Pair, tau: &CentralParameter) -> Result<VortexResiduals, FieldsError> {
    let t = pair.torus;
    let f = curvature(pair);
    let split = crate::lattice::type_split(&t, &f)?;
    let n = pair.n();
    let tau_m = tau.matrix();
    if tau_m.n != n {
        return Err(FieldsError::Shape("tau".into()));
    }
    let mut r1 = DiscreteForm::zeros(&t, 0, ValueKind::Algebra, n * n);
    for x in 0..t.sites() {
        let lf = DMat::from_slice(n, split.trace.at(x, 0));
        let m = moment_of(&pair.rep, pair.phi_at(x));
        lf.sub(&m).add(tau_m).write(r1.at_mut(x, 0));
    }
    let r3 = dbar_part(pair);
    let cell = t.cell();
    let l2 = |f: &DiscreteForm, w: f64| (w * cell * f.data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
    let norms = ResidualNorms {
        r1: l2(&r1, 1.0),
        f20: l2(&split.f20, 1.0),
        f02: l2(&split.f02, 1.0),
        dbar: l2(&r3, 2.0),
    };
    Ok(VortexResiduals {
        r1,
        f20: split.f20,
        f02: split.f02,
        r3,
        norms,
    })
}

/// Snapshot manifest stored next to the two field dumps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub representation: String,
    pub tau: Vec<f64>,
    pub twist: [[i64; 4]; 4],
    pub n: usize,
    pub l: f64,
    pub connection: String,
    pub section: String,
}

/// Writes `<stem>.json`, `<stem>.a.vlxf` and `<stem>.phi.vlxf` in `dir`.
pub fn save_snapshot(dir: &Path, stem: &str, pair: &Pair, tau: &[f64]) -> Result<PathBuf, FieldsError> {
    std::fs::create_dir_all(dir)?;
    let a_name = format!("{stem}.a.vlxf");
    let p_name = format!("{stem}.phi.vlxf");
    crate::lattice::write_dump(std::io::BufWriter::new(std::fs::File::create(dir.join(&a_name))?), &pair.torus, &pair.a)?;
    crate::lattice::write_dump(std::io::BufWriter::new(std::fs::File::create(dir.join(&p_name))?), &pair.torus, &pair.phi)?;
    let m = SnapshotManifest {
        representation: pair.rep.descriptor.to_string(),
        tau: tau.to_vec(),
        twist: pair.twist.m,
        n: pair.torus.n,
        l: pair.torus.l,
        connection: a_name,
        section: p_name,
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}

pub fn load_snapshot(manifest: &Path) -> Result<(Pair, Vec<f64>), FieldsError> {
    let m: SnapshotManifest = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let rep = Arc::new(Representation::parse(&m.representation)?);
    let twist = TwistData::new(m.twist)?;
    let (t1, a) = crate::lattice::read_dump(std::io::BufReader::new(std::fs::File::open(dir.join(&m.connection))?))?;
    let (t2, phi) = crate::lattice::read_dump(std::io::BufReader::new(std::fs::File::open(dir.join(&m.section))?))?;
    if t1 != t2 || t1.n != m.n || (t1.l - m.l).abs() > 0.0 {
        return Err(FieldsError::Manifest("lattice mismatch between dumps and manifest".into()));
    }
    Ok((Pair::from_parts(t1, rep, twist, a, phi)?, m.tau))
}
