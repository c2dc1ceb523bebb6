//! Energy concentration along sequences of pairs: density measures,
//! concentration points, quantized masses, ideal pairs, and the cutoff
//! extension across a puncture.

use crate::algebra::CentralParameter;
use crate::energy::{ch2, degree_tau, ymh_density, ymh_total, EnergyError};
use crate::fields::{vortex_residuals, FieldsError, Pair};
use crate::gaugefix::{coulomb_gauge, GaugeFixError};
use crate::lattice::KaehlerTorus;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Action quantum 8π².
pub const QUANTUM: f64 = 8.0 * PI * PI;
/// Default concentration threshold ε.
pub const DEFAULT_EPSILON: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum CompactnessError {
    #[error("sequence needs at least {0} frames")]
    TooShort(usize),
    #[error("totals unbounded along the sequence: {0}")]
    Unbounded(String),
    #[error("frames live on different lattices")]
    LatticeMismatch,
    #[error("frame {frame} leaves the sector (deg_τ, Ch₂) = ({deg}, {ch2}): found ({got_deg}, {got_ch2})")]
    SectorMismatch { frame: usize, deg: f64, ch2: i64, got_deg: f64, got_ch2: i64 },
    #[error("frame {frame} is not a vortex: residual {residual:e}")]
    NotAVortex { frame: usize, residual: f64 },
    #[error("mass {mass} is not a positive multiple of 8π² (defect {defect})")]
    Quantization { mass: f64, defect: f64 },
    #[error("annulus too thin: r = {r} needs at least 4h = {min}")]
    AnnulusTooThin { r: f64, min: f64 },
    #[error("radius {r}: the annulus D(4r) leaves the profile domain of radius {extent}")]
    OutsideDomain { r: f64, extent: f64 },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Fields(#[from] FieldsError),
    #[error(transparent)]
    GaugeFix(#[from] GaugeFixError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub site: usize,
    pub mass: f64,
}

/// A density on sites plus point masses.
#[derive(Clone, Debug, Serialize)]
pub struct DensityMeasure {
    #[serde(skip)]
    pub torus: KaehlerTorus,
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl DensityMeasure {
    pub fn smooth_total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.torus.cell()
    }

    pub fn total(&self) -> f64 {
        self.smooth_total() + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Measure of the closed ball of radius r around a site.
    pub fn ball_mass(&self, centre: usize, offsets: &[[isize; 4]]) -> f64 {
        let t = &self.torus;
        let smooth: f64 = offsets.iter().map(|d| self.density[t.shift_by(centre, *d)]).sum::<f64>() * t.cell();
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| {
                let d = t.displacement(t.position(centre), t.position(a.site));
                let r2: f64 = d.iter().map(|v| v * v).sum();
                offsets.iter().any(|o| {
                    let o2: f64 = o.iter().map(|&v| (v as f64 * t.h()).powi(2)).sum();
                    (o2 - r2).abs() < 1e-12
                })
            })
            .map(|a| a.mass)
            .sum();
        smooth + atoms
    }

    /// Adds a mass profile, in place.
    pub fn add_bubble(&mut self, b: &Bubble) {
        let profile = bubble_profile(&self.torus, b);
        for (d, p) in self.density.iter_mut().zip(profile) {
            *d += p;
        }
    }
}

/// Lattice displacements of length ≤ r.
pub fn ball_offsets(torus: &KaehlerTorus, r: f64) -> Vec<[isize; 4]> {
    let h = torus.h();
    let m = ((r / h).floor() as isize).min(torus.n as isize / 2);
    let mut out = Vec::new();
    let range = || -m..=m;
    for a in range() {
        for b in range() {
            for c in range() {
                for d in range() {
                    let r2 = ((a * a + b * b + c * c + d * d) as f64) * h * h;
                    if r2 <= r * r * (1.0 + 1e-12) {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// The action density of a pair, with no atoms.
pub fn density_measure(pair: &Pair, tau: &CentralParameter) -> Result<DensityMeasure, CompactnessError> {
    let d = ymh_density(pair, tau)?;
    Ok(DensityMeasure {
        torus: pair.torus,
        density: d.data.iter().map(|z| z.re).collect(),
        atoms: Vec::new(),
    })
}

/// A synthetic concentrating lump: the instanton action profile
/// 48 s⁴/(d² + s²)⁴ with total lattice mass exactly 8π²·charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub centre: [f64; 4],
    pub width: f64,
    pub charge: i64,
}

pub fn bubble_profile(torus: &KaehlerTorus, b: &Bubble) -> Vec<f64> {
    let s2 = b.width * b.width;
    let raw: Vec<f64> = (0..torus.sites())
        .map(|x| {
            let d2 = torus.distance(torus.position(x), b.centre).powi(2);
            48.0 * s2 * s2 / (d2 + s2).powi(4)
        })
        .collect();
    let total: f64 = raw.iter().sum::<f64>() * torus.cell();
    let scale = QUANTUM * b.charge as f64 / total;
    raw.into_iter().map(|v| v * scale).collect()
}

/// Dyadic radii 2h, 4h, … up to L/4.
pub fn dyadic_radii(torus: &KaehlerTorus) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 2.0 * torus.h();
    while r <= torus.l / 4.0 + 1e-12 {
        out.push(r);
        r *= 2.0;
    }
    if out.is_empty() {
        out.push(torus.l / 4.0);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct Concentration {
    pub site: usize,
    pub position: [f64; 4],
    /// Excess mass over the smooth background.
    pub mass: f64,
    /// Ball mass at the smallest radius, per frame.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub radii: Vec<f64>,
    pub points: Vec<Concentration>,
    /// ⌊C/ε⌋ + 1 with C the largest total along the sequence.
    pub count_bound: usize,
}

fn check_totals(seq: &[DensityMeasure]) -> Result<f64, CompactnessError> {
    let totals: Vec<f64> = seq.iter().map(|m| m.total()).collect();
    if totals.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(CompactnessError::Unbounded(format!("{totals:?}")));
    }
    let first = totals[0].max(QUANTUM);
    let max = totals.iter().cloned().fold(0.0, f64::max);
    if max > 10.0 * first {
        return Err(CompactnessError::Unbounded(format!("total grows from {} to {max}", totals[0])));
    }
    Ok(max)
}

/// Points whose smallest-ball mass stays at least ε in the last frame,
/// with their excess mass over the background; nearby candidates are
/// merged into the heaviest one.
pub fn detect_concentration(seq: &[DensityMeasure], epsilon: f64) -> Result<ConcentrationReport, CompactnessError> {
    if seq.len() < 2 {
        return Err(CompactnessError::TooShort(2));
    }
    let torus = seq[0].torus;
    if seq.iter().any(|m| m.torus != torus) {
        return Err(CompactnessError::LatticeMismatch);
    }
    let c = check_totals(seq)?;
    let radii = dyadic_radii(&torus);
    let small = ball_offsets(&torus, radii[0]);
    let last = seq.last().unwrap();
    let masses: Vec<f64> = crate::par::map(torus.sites(), |x| last.ball_mass(x, &small));
    let mut order: Vec<usize> = (0..torus.sites()).filter(|&x| masses[x] >= epsilon).collect();
    order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]).then(a.cmp(&b)));
    let exclusion = 2.0 * radii[0];
    let mut picked: Vec<usize> = Vec::new();
    for x in order {
        let px = torus.position(x);
        if picked.iter().all(|&y| torus.distance(px, torus.position(y)) > exclusion) {
            picked.push(x);
        }
    }
    let positions: Vec<[f64; 4]> = picked.iter().map(|&x| torus.position(x)).collect();
    let points = picked
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let nearest = positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| torus.distance(positions[i], *p))
                .fold(f64::INFINITY, f64::min);
            let r = radii
                .iter()
                .cloned()
                .filter(|r| 2.0 * r < nearest)
                .fold(radii[0], f64::max);
            Concentration {
                site: x,
                position: positions[i],
                mass: excess_mass(last, x, r),
                history: seq.iter().map(|m| m.ball_mass(x, &small)).collect(),
            }
        })
        .collect();
    Ok(ConcentrationReport {
        epsilon,
        radii,
        points,
        count_bound: (c / epsilon).floor() as usize + 1,
    })
}

/// Ball mass at radius r minus the background, fitted as ρ₀ + c|y|² on
/// the shell between r and 2r and integrated over the ball.
fn excess_mass(m: &DensityMeasure, x: usize, r: f64) -> f64 {
    let t = &m.torus;
    let h = t.h();
    let inner = ball_offsets(t, r);
    let ball = m.ball_mass(x, &inner);
    let r2 = |o: &[isize; 4]| o.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>();
    let shell: Vec<[isize; 4]> = ball_offsets(t, 2.0 * r)
        .into_iter()
        .filter(|o| r2(o) > r * r * (1.0 + 1e-12))
        .collect();
    if shell.len() < 2 {
        return ball;
    }
    let a = nalgebra::DMatrix::from_fn(shell.len(), 2, |i, j| if j == 0 { 1.0 } else { r2(&shell[i]) });
    let b = nalgebra::DVector::from_fn(shell.len(), |i, _| m.density[t.shift_by(x, shell[i])]);
    let Ok(fit) = a.svd(true, true).solve(&b, 1e-12) else {
        return ball;
    };
    let background: f64 = inner.iter().map(|o| fit[0] + fit[1] * r2(o)).sum::<f64>() * t.cell();
    ball - background
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quantum {
    pub mass: f64,
    pub n: i64,
    pub defect: f64,
    /// n ≥ 1 and defect within tolerance.
    pub valid: bool,
}

/// n = round(mass/8π²) with defect |mass − 8π²n|; `tol` is relative to 8π².
pub fn mass_quantization(masses: &[f64], tol: f64) -> Vec<Quantum> {
    masses
        .iter()
        .map(|&mass| {
            let n = (mass / QUANTUM).round() as i64;
            let defect = (mass - QUANTUM * n as f64).abs();
            Quantum {
                mass,
                n,
                defect,
                valid: n >= 1 && defect <= tol * QUANTUM,
            }
        })
        .collect()
}

/// A pair in a sequence together with the lumps it carries below the
/// lattice resolution.
#[derive(Clone, Debug)]
pub struct Frame {
    pub pair: Pair,
    pub bubbles: Vec<Bubble>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdealAtom {
    pub site: usize,
    pub position: [f64; 4],
    pub n: i64,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionLedger {
    /// Total action of the last frame.
    pub sequence_total: f64,
    /// YMH of the limit pair.
    pub limit_total: f64,
    /// Σ 8π² nᵢ.
    pub atoms_total: f64,
    /// |sequence_total − (limit_total + atoms_total)|.
    pub imbalance: f64,
}

/// A limit pair with quantized point masses.
#[derive(Clone, Debug, Serialize)]
pub struct IdealPair {
    #[serde(skip)]
    pub pair: Pair,
    pub atoms: Vec<IdealAtom>,
    pub deg_tau: f64,
    /// Ch₂ of the limit bundle.
    pub ch2_limit: i64,
    /// Ch₂ of the sequence: ch2_limit + Σ nᵢ.
    pub ch2_sector: i64,
    pub ledger: ActionLedger,
}

impl IdealPair {
    /// ν = YMH(limit) + Σ 8π² nᵢ δ_{xᵢ}.
    pub fn measure(&self, tau: &CentralParameter) -> Result<DensityMeasure, CompactnessError> {
        let mut m = density_measure(&self.pair, tau)?;
        m.atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                site: a.site,
                mass: QUANTUM * a.n as f64,
            })
            .collect();
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SequenceOptions {
    pub epsilon: f64,
    /// Residual below which a frame counts as a vortex.
    pub vortex_eps: f64,
    /// Relative quantization and ledger tolerance, in units of 8π².
    pub tol: f64,
    pub coulomb_tol: f64,
    pub coulomb_max_iter: usize,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            epsilon: DEFAULT_EPSILON,
            vortex_eps: 1e-6,
            tol: 0.05,
            coulomb_tol: 1e-10,
            coulomb_max_iter: 200,
        }
    }
}

/// Frames carrying one lump of the given charge at `centre`, one per width.
pub fn bubbling_family(base: &Pair, centre: [f64; 4], widths: &[f64], charge: i64) -> Vec<Frame> {
    widths
        .iter()
        .map(|&width| Frame {
            pair: base.clone(),
            bubbles: vec![Bubble { centre, width, charge }],
        })
        .collect()
}

/// Measures of each frame: the pair's density plus its bubbles.
pub fn frame_measures(seq: &[Frame], tau: &CentralParameter) -> Result<Vec<DensityMeasure>, CompactnessError> {
    seq.iter()
        .map(|f| {
            let mut m = density_measure(&f.pair, tau)?;
            for b in &f.bubbles {
                m.add_bubble(b);
            }
            Ok(m)
        })
        .collect()
}

/// Assembles the ideal pair of a sequence: Coulomb-fixes every frame,
/// detects and quantizes the concentration points, keeps the last fixed
/// pair as the limit and checks the action ledger.
pub fn sequence_limit(seq: &[Frame], tau: &CentralParameter, opts: &SequenceOptions) -> Result<IdealPair, CompactnessError> {
    if seq.is_empty() {
        return Err(CompactnessError::TooShort(1));
    }
    let mut fixed = Vec::with_capacity(seq.len());
    let mut sector: Option<(f64, i64)> = None;
    for (k, f) in seq.iter().enumerate() {
        let res = vortex_residuals(&f.pair, tau)?.norms.max();
        if res >= opts.vortex_eps {
            return Err(CompactnessError::NotAVortex { frame: k, residual: res });
        }
        let deg = degree_tau(&f.pair, tau);
        let c2 = ch2(&f.pair).round() as i64 + f.bubbles.iter().map(|b| b.charge).sum::<i64>();
        match sector {
            None => sector = Some((deg, c2)),
            Some((d0, n0)) => {
                if (deg - d0).abs() > 1e-6 * d0.abs().max(1.0) || c2 != n0 {
                    return Err(CompactnessError::SectorMismatch {
                        frame: k,
                        deg: d0,
                        ch2: n0,
                        got_deg: deg,
                        got_ch2: c2,
                    });
                }
            }
        }
        let c = coulomb_gauge(&f.pair, opts.coulomb_tol, opts.coulomb_max_iter)?;
        fixed.push(Frame {
            pair: c.pair,
            bubbles: f.bubbles.clone(),
        });
    }
    let (deg_tau, ch2_sector) = sector.unwrap();
    let measures = frame_measures(&fixed, tau)?;
    let points = if measures.len() >= 2 {
        detect_concentration(&measures, opts.epsilon)?.points
    } else {
        Vec::new()
    };
    let quanta = mass_quantization(&points.iter().map(|p| p.mass).collect::<Vec<_>>(), opts.tol);
    if let Some(bad) = quanta.iter().find(|q| !q.valid) {
        return Err(CompactnessError::Quantization {
            mass: bad.mass,
            defect: bad.defect,
        });
    }
    let atoms: Vec<IdealAtom> = points
        .iter()
        .zip(&quanta)
        .map(|(p, q)| IdealAtom {
            site: p.site,
            position: p.position,
            n: q.n,
            mass: p.mass,
        })
        .collect();
    let limit = fixed.pop().unwrap().pair;
    let limit_total = ymh_total(&limit, tau)?.ymh;
    let atoms_total = atoms.iter().map(|a| QUANTUM * a.n as f64).sum::<f64>();
    let sequence_total = measures.last().unwrap().total();
    let imbalance = (sequence_total - limit_total - atoms_total).abs();
    if imbalance > opts.tol * QUANTUM {
        return Err(CompactnessError::Quantization {
            mass: sequence_total - limit_total,
            defect: imbalance,
        });
    }
    let n_atoms: i64 = atoms.iter().map(|a| a.n).sum();
    Ok(IdealPair {
        pair: limit,
        atoms,
        deg_tau,
        ch2_limit: ch2_sector - n_atoms,
        ch2_sector,
        ledger: ActionLedger {
            sequence_total,
            limit_total,
            atoms_total,
            imbalance,
        },
    })
}

/// A U(2)-invariant abelian pair on the ball of C²: A = i a(ρ) η with
/// η = x¹dx² − x²dx¹ + x³dx⁴ − x⁴dx³, and φ = f(ρ), sampled at ρᵢ = i h.
///
/// In this sector F^{0,2} = 0, ΛF = i(ρa′ + 4a), |F|² = ρ²a′² + 4ρaa′ + 8a²,
/// |Dφ|² = f′² + ρ²a²f², and the first and third vortex equations read
/// ρa′ + 4a = t − f² and f′ = ρaf.
#[derive(Clone, Debug, Serialize)]
pub struct RadialPair {
    pub h: f64,
    pub a: Vec<f64>,
    pub f: Vec<f64>,
    /// τ = i t.
    pub t: f64,
}

impl RadialPair {
    pub fn extent(&self) -> f64 {
        self.h * (self.a.len() - 1) as f64
    }

    /// Integrates the radial vortex equations from ρ = 0 with φ(0) = f0 by
    /// RK4 with `sub` steps per grid cell.
    pub fn vortex(t: f64, f0: f64, h: f64, points: usize, sub: usize) -> Self {
        let rhs = |r: f64, a: f64, f: f64| -> (f64, f64) {
            let da = if r == 0.0 { 0.0 } else { (t - f * f - 4.0 * a) / r };
            (da, r * a * f)
        };
        let mut a = (t - f0 * f0) / 4.0;
        let mut f = f0;
        let mut out_a = vec![a];
        let mut out_f = vec![f];
        let dt = h / sub as f64;
        let mut r = 0.0;
        for _ in 1..points {
            for _ in 0..sub {
                let (k1a, k1f) = rhs(r, a, f);
                let (k2a, k2f) = rhs(r + 0.5 * dt, a + 0.5 * dt * k1a, f + 0.5 * dt * k1f);
                let (k3a, k3f) = rhs(r + 0.5 * dt, a + 0.5 * dt * k2a, f + 0.5 * dt * k2f);
                let (k4a, k4f) = rhs(r + dt, a + dt * k3a, f + dt * k3f);
                a += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
                f += dt / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
                r += dt;
            }
            out_a.push(a);
            out_f.push(f);
        }
        RadialPair { h, a: out_a, f: out_f, t }
    }

    /// Replaces the profile inside radius r by a singular one.
    pub fn punctured(mut self, r: f64, strength: f64) -> Self {
        for i in 0..self.a.len() {
            let rho = i as f64 * self.h;
            if rho < r {
                let s = strength / (rho.max(0.5 * self.h)).powi(4);
                self.a[i] = s;
                self.f[i] = s.sqrt();
            }
        }
        self
    }

    fn deriv(v: &[f64], h: f64, i: usize) -> f64 {
        let m = v.len() - 1;
        if i == 0 {
            (v[1] - v[0]) / h
        } else if i == m {
            (v[m] - v[m - 1]) / h
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        }
    }

    /// ∫ (|ΛF − iμ + iτ|² + 4|F^{0,2}|² + 4|∂̄φ|²) over ρ ∈ [lo, hi).
    pub fn residual_action(&self, lo: f64, hi: f64) -> f64 {
        self.integrate(lo, hi, |rho, a, da, f, df| {
            let r1 = rho * da + 4.0 * a + f * f - self.t;
            r1 * r1 + 2.0 * (df - rho * a * f).powi(2)
        })
    }

    /// ∫ (|F|² + |μ − τ|² + 2|Dφ|²) over ρ ∈ [lo, hi).
    pub fn action(&self, lo: f64, hi: f64) -> f64 {
        self.integrate(lo, hi, |rho, a, da, f, df| {
            let f2 = rho * rho * da * da + 4.0 * rho * a * da + 8.0 * a * a;
            f2 + (f * f - self.t).powi(2) + 2.0 * (df * df + rho * rho * a * a * f * f)
        })
    }

    /// Midpoint rule in ρ with the measure 2π²ρ³ dρ of R⁴.
    fn integrate(&self, lo: f64, hi: f64, g: impl Fn(f64, f64, f64, f64, f64) -> f64) -> f64 {
        let h = self.h;
        let mut acc = 0.0;
        for i in 0..self.a.len() {
            let rho = i as f64 * h;
            if rho < lo || rho >= hi {
                continue;
            }
            let w = if i == 0 || i == self.a.len() - 1 { 0.5 } else { 1.0 };
            let da = Self::deriv(&self.a, h, i);
            let df = Self::deriv(&self.f, h, i);
            acc += w * 2.0 * PI * PI * rho.powi(3) * g(rho, self.a[i], da, self.f[i], df);
        }
        acc * h
    }
}

/// C² ramp: 0 below 2r, 1 above 3r.
pub fn cutoff(rho: f64, r: f64) -> f64 {
    let u = ((rho - 2.0 * r) / r).clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffReport {
    pub r: f64,
    /// Residual action of (ψ_r A, ψ_r φ) over the ball.
    pub excess: f64,
    /// Part of the excess from D(2r), where the pair vanishes: |τ|² vol(D(2r)).
    pub core: f64,
    /// Action of the original pair on N(r) = D(4r) ∖ D(r).
    pub annulus_action: f64,
}

/// Multiplies the radial pair by the cutoff ψ_r. A radial pair has no dρ
/// component, so it is already in radial gauge and ψ_r A is the cutoff
/// connection itself.
pub fn cutoff_extend(pair: &RadialPair, r: f64) -> Result<(RadialPair, CutoffReport), CompactnessError> {
    if r < 4.0 * pair.h {
        return Err(CompactnessError::AnnulusTooThin { r, min: 4.0 * pair.h });
    }
    if 4.0 * r > pair.extent() + 1e-12 {
        return Err(CompactnessError::OutsideDomain { r, extent: pair.extent() });
    }
    let mut ext = pair.clone();
    for i in 0..ext.a.len() {
        let psi = cutoff(i as f64 * pair.h, r);
        ext.a[i] *= psi;
        ext.f[i] *= psi;
    }
    let report = CutoffReport {
        r,
        excess: ext.residual_action(0.0, pair.extent() + pair.h),
        core: ext.residual_action(0.0, 2.0 * r),
        annulus_action: pair.action(r, 4.0 * r),
    };
    Ok((ext, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Representation;
    use crate::fields::TwistData;
    use std::sync::Arc;

    fn flat_vacuum(n: usize) -> (Pair, CentralParameter) {
        let rep = Arc::new(Representation::parse("u1:1").unwrap());
        let tau = CentralParameter::scalar(&rep, 1.0);
        let mut p = Pair::zero(KaehlerTorus::unit(n), rep, TwistData::trivial()).unwrap();
        let v = (tau.lambda / 1.0).sqrt();
        for z in p.phi.data.iter_mut() {
            *z = num_complex::Complex64::new(v, 0.0);
        }
        (p, tau)
    }

    #[test]
    fn density_of_trivial_pairs() {
        let rep = Arc::new(Representation::parse("u1:1").unwrap());
        let z = Pair::zero(KaehlerTorus::unit(4), rep.clone(), TwistData::trivial()).unwrap();
        let m = density_measure(&z, &CentralParameter::scalar(&rep, 0.0)).unwrap();
        assert!(m.density.iter().all(|&d| d == 0.0));
        let tau = CentralParameter::scalar(&rep, 1.5);
        let m = density_measure(&z, &tau).unwrap();
        assert!(m.density.iter().all(|&d| (d - tau.norm_sqr()).abs() < 1e-12));
        assert!((m.total() - ymh_total(&z, &tau).unwrap().ymh).abs() < 1e-10);
    }

    #[test]
    fn bubble_carries_its_quanta() {
        let t = KaehlerTorus::unit(8);
        let b = Bubble { centre: [0.3, 0.5, 0.1, 0.9], width: 0.15, charge: 2 };
        let p = bubble_profile(&t, &b);
        assert!((p.iter().sum::<f64>() * t.cell() - 2.0 * QUANTUM).abs() < 1e-9);
    }

    #[test]
    fn quantization_examples() {
        let q = mass_quantization(&[QUANTUM, 78.9568, 4.0 * PI * PI, 2.0 * QUANTUM + 1.0], 0.05);
        assert_eq!((q[0].n, q[0].defect, q[0].valid), (1, 0.0, true));
        assert_eq!(q[1].n, 1);
        assert!((q[1].defect - (78.9568 - QUANTUM).abs()).abs() < 1e-12 && q[1].valid);
        assert!(!q[2].valid && (q[2].defect - 4.0 * PI * PI).abs() < 1e-12);
        assert_eq!((q[3].n, q[3].valid), (2, true));
    }

    #[test]
    fn smooth_sequences_do_not_concentrate() {
        let (p, tau) = flat_vacuum(6);
        let m = density_measure(&p, &tau).unwrap();
        let r = detect_concentration(&[m.clone(), m], DEFAULT_EPSILON).unwrap();
        assert!(r.points.is_empty());
        assert!(matches!(
            detect_concentration(&[density_measure(&p, &tau).unwrap()], 1.0),
            Err(CompactnessError::TooShort(2))
        ));
    }

    #[test]
    fn unbounded_totals_are_rejected() {
        let (p, tau) = flat_vacuum(4);
        let m = density_measure(&p, &tau).unwrap();
        let mut big = m.clone();
        big.density.iter_mut().for_each(|d| *d += 1e6);
        assert!(matches!(detect_concentration(&[m, big], 1.0), Err(CompactnessError::Unbounded(_))));
    }

    #[test]
    fn constant_sequence_has_no_atoms() {
        let (p, tau) = flat_vacuum(4);
        let f = Frame { pair: p.clone(), bubbles: vec![] };
        let ideal = sequence_limit(&[f.clone(), f], &tau, &SequenceOptions::default()).unwrap();
        assert!(ideal.atoms.is_empty());
        assert!(ideal.ledger.imbalance < 1e-9);
        assert_eq!(ideal.pair.phi, p.phi);
    }

    #[test]
    fn mixed_sectors_are_rejected() {
        let (p, tau) = flat_vacuum(4);
        let a = Frame { pair: p.clone(), bubbles: vec![] };
        let b = Frame {
            pair: p,
            bubbles: vec![Bubble { centre: [0.5; 4], width: 0.1, charge: 1 }],
        };
        assert!(matches!(
            sequence_limit(&[a, b], &tau, &SequenceOptions::default()),
            Err(CompactnessError::SectorMismatch { .. })
        ));
    }

    #[test]
    fn radial_vortex_solves_its_equations() {
        let p = RadialPair::vortex(6.0, 1.0, 1.0 / 64.0, 65, 16);
        let res = p.residual_action(0.0, 1.0);
        assert!(res < 1e-4 * p.action(0.0, 1.0), "{res}");
    }

    #[test]
    fn cutoff_profile_and_errors() {
        assert_eq!(cutoff(1.9, 1.0), 0.0);
        assert_eq!(cutoff(3.1, 1.0), 1.0);
        assert!((cutoff(2.5, 1.0) - 0.5).abs() < 1e-15);
        let p = RadialPair::vortex(6.0, 1.0, 1.0 / 64.0, 65, 4);
        assert!(matches!(cutoff_extend(&p, 3.0 / 64.0), Err(CompactnessError::AnnulusTooThin { .. })));
        assert!(matches!(cutoff_extend(&p, 0.3), Err(CompactnessError::OutsideDomain { .. })));
        let zero = RadialPair { h: 1.0 / 64.0, a: vec![0.0; 65], f: vec![0.0; 65], t: 0.0 };
        let (ext, rep) = cutoff_extend(&zero, 8.0 / 64.0).unwrap();
        assert_eq!(ext.a, zero.a);
        assert_eq!(rep.excess, 0.0);
    }
}
