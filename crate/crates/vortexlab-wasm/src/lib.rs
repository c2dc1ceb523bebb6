//! Browser bindings: an incremental vortex solve, synthetic bubble
//! detection, and the sampled bound constant.

use serde_json::json;
use std::sync::Arc;
use vortexlab::algebra::{estimate_bound_constant, verify_bound_constant, CentralParameter, Representation};
use vortexlab::compactness::{bubbling_family, detect_concentration, frame_measures, mass_quantization};
use vortexlab::energy::{seed_pair, solve, vortex_threshold, ymh_total, EnergyError, MinimizeOptions};
use vortexlab::fields::{Pair, TwistData};
use vortexlab::lattice::KaehlerTorus;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// |φ|² on the (x¹, x²) plane through x³ = x⁴ = 0, row-major in x¹.
fn phi_slice(p: &Pair) -> Vec<f64> {
    let t = &p.torus;
    let d = p.dim();
    let mut out = Vec::with_capacity(t.n * t.n);
    for i in 0..t.n {
        for j in 0..t.n {
            let x = t.index([i, j, 0, 0]);
            out.push(p.phi.data[x * d..(x + 1) * d].iter().map(|z| z.norm_sqr()).sum());
        }
    }
    out
}

#[wasm_bindgen]
pub struct VortexSession {
    pair: Pair,
    tau: CentralParameter,
    iterations: usize,
}

#[wasm_bindgen]
impl VortexSession {
    /// U(1) charge one on an n⁴ unit torus, τ = t·i, flux `flux` through the
    /// (x¹, x²) face.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, t: f64, flux: i32, seed: u64) -> Result<VortexSession, JsError> {
        let rep = Arc::new(Representation::parse("u1:1").map_err(js_err)?);
        let tau = CentralParameter::scalar(&rep, t);
        let torus = KaehlerTorus::new(n, 1.0).map_err(js_err)?;
        let pair = seed_pair(torus, rep, TwistData::planar(flux as i64, 0), &tau, seed, 0.01).map_err(js_err)?;
        Ok(VortexSession { pair, tau, iterations: 0 })
    }

    pub fn threshold(&self) -> f64 {
        vortex_threshold(&self.pair, &self.tau)
    }

    /// Runs up to `iters` more descent steps and returns a JSON status.
    pub fn step(&mut self, iters: usize) -> Result<String, JsError> {
        let opts = MinimizeOptions {
            max_iter: iters,
            ..MinimizeOptions::default()
        };
        let (done, label) = match solve(&self.pair, &self.tau, &opts) {
            Ok(s) => {
                self.iterations += s.outcome.iterations;
                self.pair = s.outcome.pair;
                (true, format!("{:?}", s.outcome.termination).to_lowercase())
            }
            Err(EnergyError::NotConverged { best, iterations, .. }) => {
                self.iterations += iterations;
                self.pair = *best;
                (false, "running".to_string())
            }
            Err(e) => return Err(js_err(e)),
        };
        let e = ymh_total(&self.pair, &self.tau).map_err(js_err)?;
        let residual = vortex_residuals_max(&self.pair, &self.tau)?;
        Ok(json!({
            "done": done,
            "status": label,
            "iterations": self.iterations,
            "ymh": e.ymh,
            "deg_tau": e.deg_tau,
            "residual": residual,
            "phi_l2": self.pair.phi.norm_l2(&self.pair.torus),
        })
        .to_string())
    }

    pub fn slice(&self) -> Vec<f64> {
        phi_slice(&self.pair)
    }

    pub fn n(&self) -> usize {
        self.pair.torus.n
    }
}

fn vortex_residuals_max(p: &Pair, tau: &CentralParameter) -> Result<f64, JsError> {
    Ok(vortexlab::fields::vortex_residuals(p, tau).map_err(js_err)?.norms.max())
}

/// Flat vacuum on an n⁴ torus carrying a lump of the given charge that
/// shrinks through `widths`; returns the detected points as JSON.
#[wasm_bindgen]
pub fn detect_bubble(n: usize, charge: i32, x: f64, y: f64, widths: Vec<f64>, epsilon: f64) -> Result<String, JsError> {
    let rep = Arc::new(Representation::parse("u1:1").map_err(js_err)?);
    let tau = CentralParameter::scalar(&rep, 1.0);
    let torus = KaehlerTorus::new(n, 1.0).map_err(js_err)?;
    let base = seed_pair(torus, rep, TwistData::trivial(), &tau, 0, 0.0).map_err(js_err)?;
    let frames = bubbling_family(&base, [x, y, 0.0, 0.0], &widths, charge as i64);
    let measures = frame_measures(&frames, &tau).map_err(js_err)?;
    let report = detect_concentration(&measures, epsilon).map_err(js_err)?;
    let quanta = mass_quantization(&report.points.iter().map(|p| p.mass).collect::<Vec<_>>(), 0.05);
    let last = measures.last().expect("frames");
    let slice: Vec<f64> = (0..n * n).map(|k| last.density[torus.index([k / n, k % n, 0, 0])]).collect();
    Ok(json!({ "report": report, "quanta": quanta, "slice": slice }).to_string())
}

/// Sampled constant of |φ|² ≤ C|μ(φ) − τ| with a fresh-seed check.
#[wasm_bindgen]
pub fn bound_constant(representation: &str, t: f64, samples: usize, seed: u64) -> Result<String, JsError> {
    let rep = Representation::parse(representation).map_err(js_err)?;
    let tau = CentralParameter::scalar(&rep, t);
    let c = estimate_bound_constant(&rep, &tau, samples, seed).map_err(js_err)?;
    let fresh = verify_bound_constant(&rep, &tau, c.value, samples, seed.wrapping_add(1));
    Ok(json!({ "constant": c, "fresh": fresh }).to_string())
}
