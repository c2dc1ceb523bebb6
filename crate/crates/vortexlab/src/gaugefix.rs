//! Coulomb gauge fixing on the torus and the local energy bound it enables.

use crate::algebra::CentralParameter;
use crate::analysis::{sobolev_norm, AnalysisError, SobolevIndex, INFLATION};
use crate::energy::{ymh_total, EnergyError};
use crate::fields::{curvature, gauge_act, GaugeTransformation, Pair};
use crate::lattice::{codifferential, laplace_solve, DiscreteForm, LatticeError};
use crate::linalg::{DMat, Mat};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum GaugeFixError {
    #[error("Coulomb iteration did not reach {tol:e} in {iterations} steps (‖d*A‖ = {residual:e}); curvature too large?")]
    NotConverged { iterations: usize, residual: f64, tol: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Clone, Debug, Serialize)]
pub struct CoulombResult {
    #[serde(skip)]
    pub s: GaugeTransformation,
    #[serde(skip)]
    pub pair: Pair,
    /// ‖d*Ã‖ in L².
    pub dstar_norm: f64,
    pub iterations: usize,
    /// ‖Ã‖_{L²₁}.
    pub a_l21: f64,
    /// ‖F_A‖_{L²}.
    pub f_l2: f64,
    /// ‖Ã‖_{L²₁} / ‖F_A‖_{L²}.
    pub ratio: f64,
}

/// d*A as an algebra-valued 0-form.
pub fn dstar(pair: &Pair) -> Result<DiscreteForm, LatticeError> {
    codifferential(&pair.torus, &pair.a)
}

pub fn dstar_norm(pair: &Pair) -> Result<f64, LatticeError> {
    Ok(dstar(pair)?.norm_l2(&pair.torus))
}

/// Iterates s_k = exp(χ_k) with Δχ_k = d*A_k. Abelian fields reach the
/// gauge in one solve; the composed transformation is returned with the
/// fixed pair, so that `gauge_act(&result.s, pair)` reproduces it.
pub fn coulomb_gauge(pair: &Pair, tol: f64, max_iter: usize) -> Result<CoulombResult, GaugeFixError> {
    let t = pair.torus;
    let n = pair.n();
    let mut s = GaugeTransformation::identity(&t, n);
    let mut cur = pair.clone();
    let mut res = dstar_norm(&cur)?;
    let mut iterations = 0;
    while res >= tol {
        if iterations == max_iter {
            return Err(GaugeFixError::NotConverged { iterations, residual: res, tol });
        }
        let mut rhs = dstar(&cur)?;
        let w = rhs.width;
        let mean = rhs.integrate(&t);
        for (i, z) in rhs.data.iter_mut().enumerate() {
            *z -= mean[i % w] / t.vol();
        }
        let chi = laplace_solve(&t, &rhs)?;
        let step: Vec<DMat> = (0..t.sites()).map(|x| DMat::from_slice(n, chi.at(x, 0)).skew()).collect();
        let sk = GaugeTransformation::exp(&step);
        cur = gauge_act(&sk, &cur);
        s = s.compose(&sk);
        iterations += 1;
        res = dstar_norm(&cur)?;
    }
    let a_l21 = sobolev_norm(&t, &cur.a, SobolevIndex::new(1, 2.0)?)?;
    let f_l2 = curvature(pair).norm_l2(&t);
    Ok(CoulombResult {
        s,
        dstar_norm: res,
        iterations,
        a_l21,
        f_l2,
        ratio: if f_l2 > 0.0 { a_l21 / f_l2 } else { 0.0 },
        pair: cur,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalBoundReport {
    /// ‖A‖_{L²₁} + ‖φ‖_{L⁴}.
    pub lhs: f64,
    /// The action ∫ YMH.
    pub action: f64,
    /// lhs / action, 0 when both vanish.
    pub ratio: f64,
    pub dstar_norm: f64,
    /// Precondition: the pair is in Coulomb gauge to `tol`.
    pub coulomb: bool,
    /// Sampled envelope of the ratio, if supplied.
    pub envelope: Option<f64>,
    /// ratio > envelope × INFLATION.
    pub violated: bool,
}

/// Evaluates both sides of ‖A‖_{L²₁} + ‖φ‖_{L⁴} ≤ C ∫ YMH over the torus.
pub fn local_energy_bound_check(
    pair: &Pair,
    tau: &CentralParameter,
    tol: f64,
    envelope: Option<f64>,
) -> Result<LocalBoundReport, GaugeFixError> {
    let t = &pair.torus;
    let lhs = sobolev_norm(t, &pair.a, SobolevIndex::new(1, 2.0)?)? + sobolev_norm(t, &pair.phi, SobolevIndex::new(0, 4.0)?)?;
    let action = ymh_total(pair, tau)?.ymh;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / action };
    let dn = dstar_norm(pair)?;
    Ok(LocalBoundReport {
        lhs,
        action,
        ratio,
        dstar_norm: dn,
        coulomb: dn < tol,
        envelope,
        violated: envelope.is_some_and(|e| ratio > e * INFLATION),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Representation;
    use crate::energy::ymh_density;
    use crate::fields::TwistData;
    use crate::lattice::KaehlerTorus;
    use num_complex::Complex64 as C;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn rep(s: &str) -> Arc<Representation> {
        Arc::new(Representation::parse(s).unwrap())
    }

    fn max_diff(a: &DiscreteForm, b: &DiscreteForm) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn coulomb_input_is_left_alone() {
        let p = Pair::zero(KaehlerTorus::unit(4), rep("un:2:fund"), TwistData::trivial()).unwrap();
        let r = coulomb_gauge(&p, 1e-10, 10).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.s.distance_from_identity(), 0.0);
        assert_eq!(r.pair.a, p.a);
    }

    #[test]
    fn abelian_pure_gauge_part_is_stripped_in_one_solve() {
        let t = KaehlerTorus::unit(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Pair::random_smooth(t, rep("u1:1"), TwistData::planar(1, 0), &mut rng, 0.6, 0.5, 1.0).unwrap();
        let coulomb = coulomb_gauge(&base, 1e-12, 5).unwrap().pair;
        let g = GaugeTransformation::random_smooth(&t, &coulomb.rep, &mut rng, 0.4);
        let dressed = gauge_act(&g, &coulomb);
        let r = coulomb_gauge(&dressed, 1e-10, 1).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.dstar_norm < 1e-10);
        assert!(max_diff(&r.pair.a, &coulomb.a) < 1e-10);
        let again = coulomb_gauge(&r.pair, 1e-10, 1).unwrap();
        assert!(again.s.distance_from_identity() < 1e-10);
    }

    #[test]
    fn nonabelian_fixing_preserves_the_density() {
        let t = KaehlerTorus::unit(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Pair::random_smooth(t, rep("un:2:fund"), TwistData::trivial(), &mut rng, 0.3, 0.4, 0.7).unwrap();
        let tau = CentralParameter::scalar(&p.rep, 0.5);
        let r = coulomb_gauge(&p, 1e-10, 100).unwrap();
        assert!(r.iterations > 1 && r.dstar_norm < 1e-10);
        assert!(r.s.unitarity_defect() < 1e-12);
        let d0 = ymh_density(&p, &tau).unwrap();
        let d1 = ymh_density(&r.pair, &tau).unwrap();
        assert!(max_diff(&d0, &d1) < 1e-10);
        let replay = gauge_act(&r.s, &p);
        assert!(max_diff(&replay.a, &r.pair.a) < 1e-10);
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let t = KaehlerTorus::unit(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Pair::random_smooth(t, rep("un:2:fund"), TwistData::trivial(), &mut rng, 0.3, 0.4, 0.7).unwrap();
        assert!(matches!(coulomb_gauge(&p, 1e-14, 1), Err(GaugeFixError::NotConverged { .. })));
    }

    #[test]
    fn local_bound_report() {
        let t = KaehlerTorus::unit(4);
        let z = Pair::zero(t, rep("u1:1"), TwistData::trivial()).unwrap();
        let tau0 = CentralParameter::scalar(&z.rep, 0.0);
        let r = local_energy_bound_check(&z, &tau0, 1e-10, Some(1.0)).unwrap();
        assert_eq!((r.lhs, r.action, r.ratio), (0.0, 0.0, 0.0));
        assert!(r.coulomb && !r.violated);

        let mut bent = z.clone();
        for x in 0..t.sites() {
            let c = t.position(x);
            bent.a.at_mut(x, 0)[0] = C::new(0.0, (2.0 * std::f64::consts::PI * (c[0] + c[1])).sin());
        }
        let r = local_energy_bound_check(&bent, &tau0, 1e-10, None).unwrap();
        assert!(!r.coulomb);
        let r = local_energy_bound_check(&bent, &tau0, 1e-10, Some(r.ratio / 2.0)).unwrap();
        assert!(r.violated);
    }
}
