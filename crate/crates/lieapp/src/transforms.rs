//! Integration of the flat pencil `d + tη`: the trivialising gauge `T(t)`,
//! Calapso and Darboux transforms, and transport of conserved quantities.
//!
//! Conventions: `T(t)` solves `dT = t·T·η` with `T = I` at the basepoint, so
//! `T(t)p` is constant for every parallel section `p` of `d + tη`.

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{fd4_u, fd4_v, Vec3};
use crate::conserved::{verify_cq, CqReport, PolyCQ, WeingartenTensor};
use crate::error::{LieError, Result};
use crate::gauge::{dual_frame, quad_from_rows, quadratic_differential, sphere_derivatives, trace_form, GaugeOneForm, QuadDiff};
use crate::legendre::{plane_lift, point_lift, space_form_projection, LegendreGrid, LiftedPoint};
use crate::minkowski::{
    exp_skew, metric, null_directions_in, orthogonal_complement, orthogonal_inverse, orthogonality_defect, pair,
    reorthogonalize, Frame, Map6, MinkVector, SkewOperator,
};

/// Polar re-projection kicks in above this orthogonality defect.
pub const REORTH_TOL: f64 = 1e-10;
/// Normalised `|(ŝ, σᵢ)|` below which a Darboux seed is rejected.
pub const REGULARITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sweep {
    /// Basepoint row along u, then every column along v.
    UFirst,
    /// Basepoint column along v, then every row along u (diagnostic).
    ColumnFirst,
}

#[derive(Debug, Clone, Copy)]
pub struct GaugeOptions {
    /// Defaults to the grid centre.
    pub base: Option<(usize, usize)>,
    pub sweep: Sweep,
    /// Multiple of the predicted mean holonomy tolerated before
    /// `NotApproximatelyFlat`; `None` disables the check.
    pub flatness_factor: Option<f64>,
    pub step: Step,
}

/// Edge propagator used by [`integrate_gauge_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Step {
    /// `exp(t·η_e)` with the midpoint edge value: second order.
    Midpoint,
    /// Fourth-order Magnus step from the edge midpoint and the two vertex
    /// values: `Ω = t(h/6)(η₀ + 4η_m + η₁) + (t²h²/12)[η₀, η₁]`.
    Magnus4,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        GaugeOptions { base: None, sweep: Sweep::UFirst, flatness_factor: Some(10.0), step: Step::Midpoint }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolonomyStats {
    pub mean: f64,
    pub max: f64,
    /// `|t|·mean‖η_e‖·h³`, the scale of the holonomy of a closed potential
    /// (edge values carry one power of `h`, so this is `O(h⁴)`).
    pub predicted: f64,
}

/// Trivialising gauge `T(t)` sampled per vertex.
#[derive(Debug, Clone)]
pub struct GaugeField {
    pub nu: usize,
    pub nv: usize,
    pub t: f64,
    pub base: (usize, usize),
    pub sweep: Sweep,
    pub maps: Vec<Map6>,
    pub holonomy: HolonomyStats,
}

impl GaugeField {
    pub fn at(&self, k: usize) -> &Map6 {
        &self.maps[k]
    }

    pub fn inverse_at(&self, k: usize) -> Map6 {
        orthogonal_inverse(&self.maps[k])
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        self.maps.iter().map(orthogonality_defect).fold(0.0, f64::max)
    }

    /// max `|T − T'|` against another field on the same grid.
    pub fn max_difference(&self, other: &GaugeField) -> f64 {
        self.maps.iter().zip(&other.maps).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }
}

struct EdgeMaps {
    u: Vec<Map6>,
    v: Vec<Map6>,
}

fn edge_maps(eta: &GaugeOneForm, t: f64) -> EdgeMaps {
    EdgeMaps {
        u: eta.u_edges.par_iter().map(|w| exp_skew(w, t)).collect(),
        v: eta.v_edges.par_iter().map(|w| exp_skew(w, t)).collect(),
    }
}

fn magnus4_maps(eta: &GaugeOneForm, t: f64) -> EdgeMaps {
    let nv = eta.nv;
    let omega = |mid: &SkewOperator, a: &SkewOperator, b: &SkewOperator, h: f64| {
        let avg = *mid * (2.0 / 3.0) + (*a + *b) * (h / 6.0);
        exp_skew(&(avg + a.bracket(b) * (t * h * h / 12.0)), t)
    };
    EdgeMaps {
        u: eta
            .u_edges
            .par_iter()
            .enumerate()
            .map(|(e, w)| omega(w, &eta.vertex[e][0], &eta.vertex[e + nv][0], eta.hu))
            .collect(),
        v: eta
            .v_edges
            .par_iter()
            .enumerate()
            .map(|(e, w)| {
                let k = (e / (nv - 1)) * nv + e % (nv - 1);
                omega(w, &eta.vertex[k][1], &eta.vertex[k + 1][1], eta.hv)
            })
            .collect(),
    }
}

fn holonomy_from(eta: &GaugeOneForm, e: &EdgeMaps) -> Vec<f64> {
    let (nu, nv) = (eta.nu, eta.nv);
    (0..(nu - 1) * (nv - 1))
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / (nv - 1), c % (nv - 1));
            let e1 = &e.u[i * nv + j];
            let e2 = &e.v[(i + 1) * (nv - 1) + j];
            let e3 = orthogonal_inverse(&e.u[i * nv + j + 1]);
            let e4 = orthogonal_inverse(&e.v[i * (nv - 1) + j]);
            (e1 * e2 * e3 * e4 - Map6::identity()).norm()
        })
        .collect()
}

/// `‖E₁E₂E₃⁻¹E₄⁻¹ − I‖` per plaquette with `Eₖ = exp(t·η_e)` around
/// `(i,j) → (i+1,j) → (i+1,j+1) → (i,j+1)`; `(nu−1) × (nv−1)` values.
pub fn holonomy_residual(eta: &GaugeOneForm, t: f64) -> Vec<f64> {
    if t == 0.0 {
        return vec![0.0; (eta.nu - 1) * (eta.nv - 1)];
    }
    holonomy_from(eta, &edge_maps(eta, t))
}

/// `|t|·mean‖η_e‖·h³` with `h = max(h_u, h_v)`.
pub fn predicted_holonomy(eta: &GaugeOneForm, t: f64) -> f64 {
    let n = (eta.u_edges.len() + eta.v_edges.len()).max(1) as f64;
    let mean = eta.u_edges.iter().chain(&eta.v_edges).map(|w| w.norm()).sum::<f64>() / n;
    let h = eta.hu.max(eta.hv);
    t.abs() * mean * h.powi(3)
}

pub fn integrate_gauge(eta: &GaugeOneForm, t: f64) -> Result<GaugeField> {
    integrate_gauge_with(eta, t, &GaugeOptions::default())
}

/// Propagates `T_B = T_A·exp(t·η_e)` (or a [`Step::Magnus4`] step) along the
/// sweep; columns (or rows) after the first are independent and run in
/// parallel.
pub fn integrate_gauge_with(eta: &GaugeOneForm, t: f64, opts: &GaugeOptions) -> Result<GaugeField> {
    let (nu, nv) = (eta.nu, eta.nv);
    let base = opts.base.unwrap_or((nu / 2, nv / 2));
    if base.0 >= nu || base.1 >= nv {
        return Err(LieError::Config(format!("basepoint {base:?} outside a {nu}x{nv} grid")));
    }
    let mid = edge_maps(eta, t);
    let hol = holonomy_from(eta, &mid);
    let count = hol.len().max(1) as f64;
    let holonomy = HolonomyStats {
        mean: hol.iter().sum::<f64>() / count,
        max: hol.iter().copied().fold(0.0, f64::max),
        predicted: predicted_holonomy(eta, t),
    };
    if let Some(factor) = opts.flatness_factor {
        let threshold = factor * holonomy.predicted;
        if holonomy.mean > threshold {
            return Err(LieError::NotApproximatelyFlat { defect: holonomy.mean, threshold });
        }
    }

    let e = match opts.step {
        Step::Midpoint => mid,
        Step::Magnus4 => magnus4_maps(eta, t),
    };
    let step = |x: &Map6, m: &Map6| {
        let y = x * m;
        if orthogonality_defect(&y) > REORTH_TOL {
            reorthogonalize(&y, REORTH_TOL * 1e-3)
        } else {
            y
        }
    };
    // walk a line from the seed index both ways: forward[k] maps k → k+1
    let walk = |seed: Map6, s: usize, n: usize, forward: &dyn Fn(usize) -> Map6| -> Vec<Map6> {
        let mut out = vec![Map6::identity(); n];
        out[s] = seed;
        for k in s + 1..n {
            out[k] = step(&out[k - 1], &forward(k - 1));
        }
        for k in (0..s).rev() {
            out[k] = step(&out[k + 1], &orthogonal_inverse(&forward(k)));
        }
        out
    };
    let mut maps = vec![Map6::identity(); nu * nv];
    match opts.sweep {
        Sweep::UFirst => {
            let row = walk(Map6::identity(), base.0, nu, &|i| e.u[i * nv + base.1]);
            let cols: Vec<Vec<Map6>> = (0..nu)
                .into_par_iter()
                .map(|i| walk(row[i], base.1, nv, &|j| e.v[i * (nv - 1) + j]))
                .collect();
            for (i, col) in cols.into_iter().enumerate() {
                maps[i * nv..(i + 1) * nv].copy_from_slice(&col);
            }
        }
        Sweep::ColumnFirst => {
            let col = walk(Map6::identity(), base.1, nv, &|j| e.v[base.0 * (nv - 1) + j]);
            let rows: Vec<Vec<Map6>> = (0..nv)
                .into_par_iter()
                .map(|j| walk(col[j], base.0, nu, &|i| e.u[i * nv + j]))
                .collect();
            for (j, row) in rows.into_iter().enumerate() {
                for (i, m) in row.into_iter().enumerate() {
                    maps[i * nv + j] = m;
                }
            }
        }
    }
    Ok(GaugeField { nu, nv, t, base, sweep: opts.sweep, maps, holonomy })
}

/// `p^t(s) = T(t)p(s + t)`, re-expanded in powers of `s`.
pub fn calapso_cq(gauge: &GaugeField, p: &PolyCQ) -> PolyCQ {
    let t = gauge.t;
    let d = p.degree();
    let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let coeffs = (0..=d)
        .map(|j| {
            (0..p.len())
                .map(|k| {
                    let v: MinkVector = (j..=d).map(|n| p.coeffs[n][k] * (binom(n, j) * t.powi((n - j) as i32))).sum();
                    gauge.maps[k] * v
                })
                .collect()
        })
        .collect();
    PolyCQ::new(coeffs)
}

/// `η^t = T η T⁻¹`; edges use `T` at the edge midpoint, `T_A·exp(t η_e/2)`.
pub fn conjugated_potential(eta: &GaugeOneForm, gauge: &GaugeField) -> GaugeOneForm {
    let (nv, t) = (eta.nv, gauge.t);
    let mut out = eta.clone();
    out.lw = None;
    let mid = |a: usize, w: &SkewOperator| gauge.maps[a] * exp_skew(w, 0.5 * t);
    out.u_edges = eta
        .u_edges
        .par_iter()
        .enumerate()
        .map(|(e, w)| w.conjugate(&mid((e / nv) * nv + e % nv, w)))
        .collect();
    out.v_edges = eta
        .v_edges
        .par_iter()
        .enumerate()
        .map(|(e, w)| w.conjugate(&mid((e / (nv - 1)) * nv + e % (nv - 1), w)))
        .collect();
    out.vertex = eta
        .vertex
        .par_iter()
        .zip(&gauge.maps)
        .map(|(w, m)| [w[0].conjugate(m), w[1].conjugate(m)])
        .collect();
    out
}

fn map_point(m: &Map6, p: &LiftedPoint) -> LiftedPoint {
    LiftedPoint {
        f: m * p.f,
        t: m * p.t,
        df: [m * p.df[0], m * p.df[1]],
        dt: [m * p.dt[0], m * p.dt[1]],
        k1: p.k1,
        k2: p.k2,
    }
}

#[derive(Debug, Clone)]
pub struct TransportedCalapsoCq {
    pub cq: PolyCQ,
    pub report: CqReport,
}

#[derive(Debug, Clone)]
pub struct CalapsoResult {
    pub t: f64,
    pub gauge: GaugeField,
    /// `T(t)f` with curvature spheres `T(t)σᵢ`. Derivatives are `T·d𝔣`,
    /// `T·d𝔱`, exact since `η` annihilates f.
    pub lifted: LegendreGrid,
    pub eta: GaugeOneForm,
    pub q: QuadDiff,
    pub q_t: QuadDiff,
    /// `max|q^t − q| / max|q|`
    pub q_deviation: f64,
    pub cqs: Vec<TransportedCalapsoCq>,
}

/// Calapso transform `f^t = T(t)f`, with `T(t)` from fourth-order Magnus
/// steps. The quadratic differential of `η^t` is computed from finite
/// differences of `T(t)σᵢ` and compared to that of `η`.
pub fn calapso_transform(l: &LegendreGrid, eta: &GaugeOneForm, t: f64, cqs: &[PolyCQ]) -> Result<CalapsoResult> {
    // q^t differentiates T(t) numerically, so the path dependence of the
    // midpoint step would show up at O(h²)
    let gauge = integrate_gauge_with(eta, t, &GaugeOptions { step: Step::Magnus4, ..Default::default() })?;
    calapso_from_gauge(l, eta, gauge, cqs)
}

pub fn calapso_from_gauge(l: &LegendreGrid, eta: &GaugeOneForm, gauge: GaugeField, cqs: &[PolyCQ]) -> Result<CalapsoResult> {
    let (nu, nv) = (l.nu(), l.nv());
    let points: Vec<LiftedPoint> = l.points.iter().zip(&gauge.maps).map(|(p, m)| map_point(m, p)).collect();
    let sigma1 = points.iter().map(|p| p.sigma1()).collect();
    let sigma2 = points.iter().map(|p| p.sigma2()).collect();
    let mut grid = l.grid.clone();
    grid.chart = None;
    let lifted = LegendreGrid { grid, points, sigma1, sigma2 };
    let eta_t = conjugated_potential(eta, &gauge);

    let dt = [fd4_u(&gauge.maps, nu, nv, l.grid.hu), fd4_v(&gauge.maps, nu, nv, l.grid.hv)];
    let rows: Vec<Option<[[f64; 2]; 2]>> = (0..l.len())
        .into_par_iter()
        .map(|k| {
            if l.masked(k) {
                return Ok(None);
            }
            let m = &gauge.maps[k];
            let p = &l.points[k];
            let rho = dual_frame(&l.sigma1[k], &l.sigma2[k], k)?;
            let ds = sphere_derivatives(p);
            let sig = [l.sigma1[k], l.sigma2[k]];
            let mut dst = [[MinkVector::zeros(); 2]; 2];
            for i in 0..2 {
                for y in 0..2 {
                    dst[i][y] = dt[y][k] * sig[i] + m * ds[i][y];
                }
            }
            Ok(Some(trace_form(&eta_t.vertex[k], &dst, &[m * rho[0], m * rho[1]])))
        })
        .collect::<Result<_>>()?;
    let q_t = quad_from_rows(l, rows);
    let q = quadratic_differential(l, eta)?;
    let q_deviation = q_t.max_deviation(&q) / q.scale().max(1e-300);
    let cqs = cqs
        .iter()
        .map(|p| {
            let cq = calapso_cq(&gauge, p);
            let report = verify_cq(&lifted, &eta_t, &cq);
            TransportedCalapsoCq { cq, report }
        })
        .collect();
    Ok(CalapsoResult { t: gauge.t, gauge, lifted, eta: eta_t, q, q_t, q_deviation, cqs })
}

/// Euclidean point and normal of an isotropic plane after normalising to
/// the space form `(𝔮∞, 𝔭)`; `None` where the projection degenerates.
pub fn euclidean_reprojection(a: &MinkVector, b: &MinkVector) -> Option<(Vec3, Vec3)> {
    let (f, t) = space_form_projection((a, b), &Frame::q_inf(), &Frame::p()).ok()?;
    Some((Frame::euclidean_part(&f), Frame::euclidean_part(&t)))
}

/// A Darboux transform `f̂ = s₀ ⊕ ŝ` of `f`.
///
/// Darboux transforms form a 5-parameter family: the spectral parameter
/// `m ≠ 0` and the seed line `L̂`, a point of the 4-dimensional projective
/// lightcone. The parallel null line of `d + mη` is `ŝ = T(m)⁻¹L̂`.
#[derive(Debug, Clone)]
pub struct DarbouxResult {
    pub m: f64,
    pub seed: MinkVector,
    pub s_hat: Vec<MinkVector>,
    /// `f ∩ ŝ^⊥`
    pub s0: Vec<MinkVector>,
    /// min over unmasked vertices of `|(ŝ, σᵢ)| / (|ŝ||σᵢ|)`.
    pub margin: f64,
    /// max normalised `|(s₀,s₀)|, |(ŝ,ŝ)|, |(s₀,ŝ)|`.
    pub isotropy: f64,
    /// max `|(ŝ, c)| / (|ŝ||c|)` over the imposed constraints (0 if none).
    pub constraint_residual: f64,
}

impl DarbouxResult {
    pub fn plane(&self, k: usize) -> (MinkVector, MinkVector) {
        (self.s0[k], self.s_hat[k])
    }
}

#[derive(Debug, Clone, Default)]
pub struct DarbouxOptions {
    /// Per-vertex vectors `c` that `ŝ` must be orthogonal to; `ŝ` is projected
    /// onto their orthogonal complement and returned to the lightcone.
    pub constraints: Vec<Vec<MinkVector>>,
    /// Overrides [`REGULARITY_TOL`].
    pub regularity_tol: Option<f64>,
}

pub fn darboux_transform(l: &LegendreGrid, eta: &GaugeOneForm, m: f64, seed: &MinkVector) -> Result<DarbouxResult> {
    let gauge = darboux_gauge(eta, m)?;
    darboux_from_gauge(l, &gauge, seed, &DarbouxOptions::default())
}

/// `T(m)` for a Darboux transform; rejects `m = 0`.
pub fn darboux_gauge(eta: &GaugeOneForm, m: f64) -> Result<GaugeField> {
    if m == 0.0 || !m.is_finite() {
        return Err(LieError::Config("Darboux parameter m must be a nonzero real".into()));
    }
    integrate_gauge(eta, m)
}

/// Returns `x + εw` null, `w = P(Gx)` projected by `project`, with the small
/// root of `(w,w)ε² + 2(x,w)ε + (x,x) = 0`.
fn restore_null(x: &MinkVector, project: impl Fn(&MinkVector) -> MinkVector) -> MinkVector {
    let n = pair(x, x);
    if n == 0.0 {
        return *x;
    }
    let w = project(&(metric() * x));
    let (a, b) = (pair(&w, &w), pair(x, &w));
    let disc = (b * b - a * n).max(0.0);
    let eps = -n / (b + b.signum() * disc.sqrt());
    x + w * eps
}

/// Orthogonal projector onto `span(cs)^⊥`.
fn complement_projector(cs: &[MinkVector]) -> Result<impl Fn(&MinkVector) -> MinkVector> {
    let k = cs.len();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| pair(&cs[i], &cs[j]));
    let inv = gram.try_inverse().ok_or(LieError::DegeneratePair)?;
    let cs = cs.to_vec();
    Ok(move |x: &MinkVector| {
        let b = nalgebra::DVector::from_iterator(k, cs.iter().map(|c| pair(x, c)));
        let alpha = &inv * b;
        cs.iter().zip(alpha.iter()).fold(*x, |acc, (c, a)| acc - c * *a)
    })
}

pub fn darboux_from_gauge(
    l: &LegendreGrid,
    gauge: &GaugeField,
    seed: &MinkVector,
    opts: &DarbouxOptions,
) -> Result<DarbouxResult> {
    let sn = seed.norm();
    if sn == 0.0 || pair(seed, seed).abs() > 1e-9 * sn * sn {
        return Err(LieError::Config("Darboux seed must be a nonzero null vector".into()));
    }
    let n = l.len();
    let s_hat: Vec<MinkVector> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut s = gauge.inverse_at(k) * seed;
            if !opts.constraints.is_empty() {
                let cs: Vec<MinkVector> = opts.constraints.iter().map(|c| c[k]).collect();
                let proj = complement_projector(&cs)?;
                s = proj(&s);
                s = restore_null(&s, &proj);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut s0 = Vec::with_capacity(n);
    let mut margin = f64::INFINITY;
    let mut isotropy = 0.0f64;
    for (k, (p, sh)) in l.points.iter().zip(&s_hat).enumerate() {
        let (af, at) = (pair(sh, &p.f), pair(sh, &p.t));
        let scale = sh.norm() * p.f.norm().max(p.t.norm());
        if af.abs().max(at.abs()) <= 1e-12 * scale {
            return Err(LieError::SingularIntersection { vertex: k });
        }
        let v = p.f * at - p.t * af;
        if !l.masked(k) {
            for s in [&l.sigma1[k], &l.sigma2[k]] {
                margin = margin.min(pair(sh, s).abs() / (sh.norm() * s.norm()));
            }
        }
        let (nv, nh) = (v.norm(), sh.norm());
        isotropy = isotropy
            .max(pair(&v, &v).abs() / (nv * nv))
            .max(pair(sh, sh).abs() / (nh * nh))
            .max(pair(&v, sh).abs() / (nv * nh));
        s0.push(v);
    }
    let tol = opts.regularity_tol.unwrap_or(REGULARITY_TOL);
    if margin < tol {
        return Err(LieError::RegularityViolation { margin });
    }
    let constraint_residual = opts
        .constraints
        .iter()
        .flat_map(|c| c.iter().zip(&s_hat).map(|(c, s)| pair(c, s).abs() / (c.norm() * s.norm()).max(1e-300)))
        .fold(0.0, f64::max);
    Ok(DarbouxResult { m: gauge.t, seed: *seed, s_hat, s0, margin, isotropy, constraint_residual })
}

/// Conserved quantity carried to a Darboux transform.
#[derive(Debug, Clone)]
pub struct TransportedCq {
    pub cq: PolyCQ,
    /// `(p(m), ŝ) = 0`: the degree-preserving branch was taken.
    pub constrained: bool,
    /// max relative remainder discarded when dividing by `1 − t/m`.
    pub remainder: f64,
    /// the line `s ≤ f` used by the Γ-transformation
    pub s: Vec<MinkVector>,
}

/// Relative threshold on `(p(m), ŝ)` selecting the constrained branch.
pub const CONSTRAINED_TOL: f64 = 1e-9;

// scalar polynomial times vector polynomial
fn poly_mul(a: &[f64], v: &[MinkVector]) -> Vec<MinkVector> {
    let mut out = vec![MinkVector::zeros(); a.len() + v.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, w) in v.iter().enumerate() {
            out[i + j] += w * *x;
        }
    }
    out
}

/// `p̂(t) = (1−t/m)·Γ^ŝ_s(1−t/m)p(t)`, where `Γ^ŝ_s(λ)` scales the
/// `s`-component by `1/λ` and the `ŝ`-component by `λ`. When `(p(m), ŝ) = 0`
/// the s-component divides exactly and `Γ^ŝ_s(1−t/m)p(t)` is returned, of
/// the same degree and norm polynomial as `p`.
///
/// `s` is the line of f Euclidean-orthogonal to `s₀`.
pub fn darboux_cq_transport(res: &DarbouxResult, l: &LegendreGrid, p: &PolyCQ) -> TransportedCq {
    let m = res.m;
    let n = p.len();
    let pm = p.eval_field(m);
    let constrained = pm
        .iter()
        .zip(&res.s_hat)
        .all(|(a, s)| pair(a, s).abs() <= CONSTRAINED_TOL * (a.norm() * s.norm()).max(1e-300));
    let d = p.degree();
    let mut remainder = 0.0f64;
    let mut s_line = Vec::with_capacity(n);
    let mut per_vertex: Vec<Vec<MinkVector>> = Vec::with_capacity(n);
    let lam = [1.0, -1.0 / m];
    for k in 0..n {
        let pt = &l.points[k];
        let s0 = res.s0[k];
        let sigma = pt.f * s0.dot(&pt.t) - pt.t * s0.dot(&pt.f);
        let sh = res.s_hat[k];
        let dd = pair(&sigma, &sh);
        let coeffs: Vec<MinkVector> = p.coeffs.iter().map(|c| c[k]).collect();
        let a_s: Vec<f64> = coeffs.iter().map(|c| pair(c, &sh) / dd).collect();
        let a_h: Vec<f64> = coeffs.iter().map(|c| pair(c, &sigma) / dd).collect();
        let perp: Vec<MinkVector> =
            coeffs.iter().zip(a_s.iter().zip(&a_h)).map(|(c, (x, y))| c - sigma * *x - sh * *y).collect();
        let sig_part: Vec<MinkVector> = a_s.iter().map(|x| sigma * *x).collect();
        let hat_part: Vec<MinkVector> = a_h.iter().map(|y| sh * *y).collect();
        let total = if constrained {
            // a_s(t) = (t − m)Q(t) + R and 1/(1 − t/m) = −m/(t − m)
            let mut q = vec![0.0; d.max(1)];
            let mut carry = 0.0;
            for i in (1..=d).rev() {
                carry = a_s[i] + carry * m;
                q[i - 1] = carry;
            }
            let r = a_s[0] + carry * m;
            let sc = a_s.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
            remainder = remainder.max(r.abs() / sc);
            let div: Vec<MinkVector> = q.iter().map(|x| sigma * (-m * x)).collect();
            add_polys(&[div, poly_mul(&lam, &hat_part), perp])
        } else {
            let lam2 = [1.0, -2.0 / m, 1.0 / (m * m)];
            add_polys(&[sig_part, poly_mul(&lam2, &hat_part), poly_mul(&lam, &perp)])
        };
        s_line.push(sigma);
        per_vertex.push(total);
    }
    let deg = per_vertex.iter().map(|c| c.len()).max().unwrap_or(1);
    let coeffs = (0..deg)
        .map(|i| per_vertex.iter().map(|c| c.get(i).copied().unwrap_or_else(MinkVector::zeros)).collect())
        .collect();
    let cq = PolyCQ::new(coeffs).trimmed(1e-12 * p.scale().max(1e-300));
    TransportedCq { cq, constrained, remainder, s: s_line }
}

fn add_polys(ps: &[Vec<MinkVector>]) -> Vec<MinkVector> {
    let len = ps.iter().map(|p| p.len()).max().unwrap_or(0);
    (0..len).map(|i| ps.iter().filter_map(|p| p.get(i)).sum()).collect()
}

/// Seed lines `L̂ ⊥ span(p(m), q(m))` read at the gauge basepoint.
pub fn lw_seed(p: &PolyCQ, q: &PolyCQ, m: f64, base: usize, angles: [f64; 2]) -> Result<MinkVector> {
    let (pm, qm) = (p.eval(base, m), q.eval(base, m));
    let cross = pm.norm_squared() * qm.norm_squared() - pm.dot(&qm).powi(2);
    if cross <= 1e-20 * pm.norm_squared() * qm.norm_squared() {
        return Err(LieError::DependentQuantities);
    }
    null_directions_in(&orthogonal_complement(&[pm, qm]), angles)
}

/// Re-projected Darboux transform with its linear Weingarten residuals.
#[derive(Debug, Clone)]
pub struct LwDarboux {
    pub result: DarbouxResult,
    pub angles: [f64; 2],
    pub abc: [f64; 3],
    pub x: Vec<Vec3>,
    pub n: Vec<Vec3>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// vertices excluded from the residuals: singular projection, stencil
    /// neighbours of those, front singularities and umbilics of `f̂`.
    pub mask: Vec<bool>,
    /// max `|a K̂ + 2b Ĥ + c|` over live vertices.
    pub lw_residual: f64,
    /// max `|W(σ̂₁, σ̂₂)| / (max|W|·|σ̂₁||σ̂₂|)`, invariant under rescaling the
    /// sphere lifts and bounded where `f̂` runs far from the origin.
    pub w_residual: f64,
    pub pair: (TransportedCq, TransportedCq),
}

impl LwDarboux {
    pub fn live_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

/// Darboux transform preserving `aK + 2bH + c = 0`: the seed is taken in
/// `span(p(m), q(m))^⊥`, and `ŝ` is held orthogonal to `p(m)`, `q(m)` at
/// every vertex. Seeds form a 2-sphere per `m`: with `m` this is the
/// 3-parameter family.
pub fn lw_preserving_darboux(
    l: &LegendreGrid,
    eta: &GaugeOneForm,
    pq: (&PolyCQ, &PolyCQ),
    abc: [f64; 3],
    m: f64,
    angles: [f64; 2],
) -> Result<LwDarboux> {
    let gauge = darboux_gauge(eta, m)?;
    let (p, q) = pq;
    let base = l.idx(gauge.base.0, gauge.base.1);
    let seed = lw_seed(p, q, m, base, angles)?;
    let opts = DarbouxOptions { constraints: vec![p.eval_field(m), q.eval_field(m)], regularity_tol: None };
    let result = darboux_from_gauge(l, &gauge, &seed, &opts)?;
    let pair = (darboux_cq_transport(&result, l, p), darboux_cq_transport(&result, l, q));

    let (nu, nv) = (l.nu(), l.nv());
    let proj: Vec<Option<(Vec3, Vec3)>> = (0..l.len())
        .into_par_iter()
        .map(|k| euclidean_reprojection(&result.s0[k], &result.s_hat[k]))
        .collect();
    let bad: Vec<bool> = proj.iter().map(|p| p.is_none()).collect();
    let x: Vec<Vec3> = proj.iter().map(|p| p.map_or(Vec3::zeros(), |v| v.0)).collect();
    let nn: Vec<Vec3> = proj.iter().map(|p| p.map_or(Vec3::zeros(), |v| v.1)).collect();
    let (hu, hv) = (l.grid.hu, l.grid.hv);
    let (xu, xv) = (fd4_u(&x, nu, nv, hu), fd4_v(&x, nu, nv, hv));
    let (nu_, nv_) = (fd4_u(&nn, nu, nv, hu), fd4_v(&nn, nu, nv, hv));
    let curv = |dx: &Vec3, dn: &Vec3| -dn.dot(dx) / dx.norm_squared();
    let k1: Vec<f64> = (0..l.len()).map(|k| curv(&xu[k], &nu_[k])).collect();
    let k2: Vec<f64> = (0..l.len()).map(|k| curv(&xv[k], &nv_[k])).collect();

    let speed: Vec<f64> = xu.iter().zip(&xv).map(|(a, b)| a.norm().min(b.norm())).collect();
    let mut sorted = speed.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut mask = vec![false; l.len()];
    for i in 0..nu {
        for j in 0..nv {
            let k = i * nv + j;
            let near_bad = (i.saturating_sub(2)..=(i + 2).min(nu - 1))
                .any(|a| (j.saturating_sub(2)..=(j + 2).min(nv - 1)).any(|b| bad[a * nv + b]));
            let kmax = k1[k].abs().max(k2[k].abs());
            mask[k] = near_bad
                || l.masked(k)
                || speed[k] <= 1e-6 * median
                || (k1[k] - k2[k]).abs() <= 1e-6 * kmax;
        }
    }
    let [a, b, c] = abc;
    let w = WeingartenTensor::from_abc(abc, Frame::q_inf(), Frame::p());
    let wscale = w.w.matrix().amax().max(1e-300);
    let mut lw_residual = 0.0f64;
    let mut w_residual = 0.0f64;
    for k in (0..l.len()).filter(|&k| !mask[k]) {
        lw_residual = lw_residual.max((a * k1[k] * k2[k] + b * (k1[k] + k2[k]) + c).abs());
        let f = point_lift(&x[k]);
        let t = plane_lift(&x[k], &nn[k]);
        let (s1, s2) = (t + f * k1[k], t + f * k2[k]);
        w_residual = w_residual.max(w.w.eval(&s1, &s2).abs() / (wscale * s1.norm() * s2.norm()));
    }
    Ok(LwDarboux { result, angles, abc, x, n: nn, k1, k2, mask, lw_residual, w_residual, pair })
}

/// Null vector `n ⊥ σ₁(k)` with `(n, σ₂(k)) ≠ 0`, carried by `T(m)(k)`:
/// a seed whose transform touches the first curvature sphere at vertex `k`.
pub fn tangent_seed(l: &LegendreGrid, gauge: &GaugeField, k: usize) -> Result<MinkVector> {
    let rho = dual_frame(&l.sigma1[k], &l.sigma2[k], k)?;
    let basis = orthogonal_complement(&[l.sigma1[k], rho[0]]);
    let n = null_directions_in(&basis, [0.3, 0.2])?;
    Ok(gauge.maps[k] * n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog, sample, Params};
    use crate::conserved::{lw_conserved_pair, norm_polynomial};
    use crate::gauge::middle_potential_lw;
    use crate::legendre::lift_euclidean;

    fn lifted(name: &str, n: usize) -> LegendreGrid {
        lift_euclidean(&sample(&catalog(name, &Params::new()).unwrap(), n, n).unwrap()).unwrap()
    }

    fn catenoid(n: usize) -> (LegendreGrid, GaugeOneForm) {
        let l = lifted("catenoid", n);
        let eta = middle_potential_lw(&l, 0.0, 1.0, 0.0).unwrap();
        (l, eta)
    }

    #[test]
    fn zero_parameter_gauge_is_identity() {
        let (_, eta) = catenoid(12);
        let g = integrate_gauge(&eta, 0.0).unwrap();
        assert!(g.maps.iter().all(|m| *m == Map6::identity()));
        assert!(holonomy_residual(&eta, 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gauge_is_orthogonal_and_pinned() {
        let (l, eta) = catenoid(24);
        let g = integrate_gauge(&eta, 0.5).unwrap();
        assert!(g.max_orthogonality_defect() < 1e-9);
        assert_eq!(*g.at(l.idx(12, 12)), Map6::identity());
    }

    #[test]
    fn gauge_makes_conserved_quantities_constant() {
        let mut spread = Vec::new();
        for n in [16, 32, 64] {
            let (l, eta) = catenoid(n);
            let (p, _) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
            let g = integrate_gauge(&eta, 0.5).unwrap();
            let v: Vec<MinkVector> = (0..l.len()).map(|k| g.maps[k] * p.eval(k, 0.5)).collect();
            let base = v[l.idx(n / 2, n / 2)];
            spread.push(v.iter().map(|x| (x - base).amax()).fold(0.0, f64::max));
        }
        assert!(spread[1] < spread[0] / 3.0 && spread[2] < spread[1] / 3.0, "{spread:?}");
    }

    #[test]
    fn magnus_steps_agree_to_fourth_order() {
        let mut diff = Vec::new();
        for n in [16, 32, 64] {
            let (_, eta) = catenoid(n);
            let opts = GaugeOptions { step: Step::Magnus4, ..Default::default() };
            let a = integrate_gauge_with(&eta, 0.5, &opts).unwrap();
            let b = integrate_gauge_with(&eta, 0.5, &GaugeOptions { sweep: Sweep::ColumnFirst, ..opts }).unwrap();
            diff.push(a.max_difference(&b));
        }
        assert!(diff[1] < diff[0] / 12.0 && diff[2] < diff[1] / 12.0, "{diff:?}");
    }

    #[test]
    fn sweeps_agree_to_second_order() {
        let mut diff = Vec::new();
        for n in [16, 32, 64] {
            let (_, eta) = catenoid(n);
            let a = integrate_gauge(&eta, 0.5).unwrap();
            let opts = GaugeOptions { sweep: Sweep::ColumnFirst, ..Default::default() };
            let b = integrate_gauge_with(&eta, 0.5, &opts).unwrap();
            diff.push(a.max_difference(&b));
        }
        assert!(diff[1] < diff[0] / 3.0 && diff[2] < diff[1] / 3.0, "{diff:?}");
    }

    #[test]
    fn perturbed_potential_is_not_flat() {
        let l = lifted("catenoid", 64);
        let eta = middle_potential_lw(&l, 0.0, 1.0, 0.3).unwrap();
        assert!(matches!(integrate_gauge(&eta, 0.5), Err(LieError::NotApproximatelyFlat { .. })));
    }

    #[test]
    fn calapso_at_zero_is_identity() {
        let (l, eta) = catenoid(16);
        let (p, q) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let r = calapso_transform(&l, &eta, 0.0, &[p.clone(), q]).unwrap();
        assert_eq!(r.q_deviation, 0.0);
        assert_eq!(r.cqs[0].cq, p);
        assert_eq!(r.lifted.points, l.points);
    }

    #[test]
    fn calapso_preserves_quadratic_differential() {
        let (l, eta) = catenoid(64);
        let (p, q) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let r = calapso_transform(&l, &eta, 0.3, &[p, q]).unwrap();
        assert!(r.q_deviation <= 1e-4, "{}", r.q_deviation);
        for c in &r.cqs {
            assert!(c.report.dp0 < 1e-3 && c.report.worst() < 1e-2, "{:?}", c.report);
        }
    }

    #[test]
    fn darboux_plane_is_isotropic() {
        let c = catalog("catenoid", &Params::new()).unwrap().with_domain([-0.5, 0.5], [0.0, std::f64::consts::FRAC_PI_2]);
        let l = lift_euclidean(&sample(&c, 33, 33).unwrap()).unwrap();
        let eta = middle_potential_lw(&l, 0.0, 1.0, 0.0).unwrap();
        let (p, q) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let seed = lw_seed(&p, &q, 0.4, l.idx(16, 16), [2.5, 5.0]).unwrap();
        let r = darboux_transform(&l, &eta, 0.4, &seed).unwrap();
        assert!(r.isotropy <= 1e-8, "{}", r.isotropy);
        assert!(r.margin > REGULARITY_TOL);
    }

    #[test]
    fn seed_touching_a_curvature_sphere_is_rejected() {
        let (l, eta) = catenoid(16);
        let g = darboux_gauge(&eta, 0.5).unwrap();
        let seed = tangent_seed(&l, &g, l.idx(3, 5)).unwrap();
        let err = darboux_from_gauge(&l, &g, &seed, &DarbouxOptions::default()).unwrap_err();
        assert!(matches!(err, LieError::RegularityViolation { .. }), "{err:?}");
        assert!(darboux_gauge(&eta, 0.0).is_err());
    }

    #[test]
    fn cq_transport_degrees_and_norms() {
        let (l, eta) = catenoid(32);
        let (p, q) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let m = 0.5;
        let g = darboux_gauge(&eta, m).unwrap();
        let base = l.idx(16, 16);
        let seed = null_directions_in(&orthogonal_complement(&[Frame::e(1)]), [0.4, 0.9]).unwrap();
        let free = darboux_from_gauge(&l, &g, &seed, &DarbouxOptions::default()).unwrap();
        let t = darboux_cq_transport(&free, &l, &p);
        assert!(!t.constrained);
        assert_eq!(t.cq.degree(), 2);
        for k in [0, base, l.len() - 1] {
            assert!((t.cq.eval(k, 0.0) - p.eval(k, 0.0)).amax() < 1e-12);
        }

        let seed = lw_seed(&p, &q, m, base, [0.4, 0.9]).unwrap();
        let opts = DarbouxOptions { constraints: vec![p.eval_field(m)], regularity_tol: None };
        let con = darboux_from_gauge(&l, &g, &seed, &opts).unwrap();
        let t = darboux_cq_transport(&con, &l, &p);
        assert!(t.constrained && t.remainder < 1e-8, "{}", t.remainder);
        assert_eq!(t.cq.degree(), 1);
        let (a, b) = (norm_polynomial(&p), norm_polynomial(&t.cq));
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).abs() < 1e-8, "{a:?} {b:?}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(16))]
        #[test]
        fn calapso_cq_keeps_shifted_norm(t in -0.8f64..0.8, s in -1.0f64..1.0) {
            let (l, eta) = catenoid(12);
            let (p, _) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
            let pt = calapso_cq(&integrate_gauge(&eta, t).unwrap(), &p);
            for k in [0, 40, l.len() - 1] {
                let (a, b) = (pt.eval(k, s), p.eval(k, s + t));
                proptest::prop_assert!((pair(&a, &a) - pair(&b, &b)).abs() <= 1e-10 * (1.0 + b.norm_squared()));
            }
        }
    }

    #[test]
    fn calapso_cq_has_shifted_constant_term() {
        let (l, eta) = catenoid(16);
        let (p, _) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let g = integrate_gauge(&eta, 0.25).unwrap();
        let pt = calapso_cq(&g, &p);
        for k in 0..l.len() {
            assert!((pt.coeffs[0][k] - g.maps[k] * p.eval(k, 0.25)).amax() < 1e-14);
            assert!((pt.eval(k, 0.5) - g.maps[k] * p.eval(k, 0.75)).amax() < 1e-13);
        }
    }

    #[test]
    fn lw_preserving_transform_of_minimal_patch_is_minimal() {
        let c = catalog("catenoid", &Params::new()).unwrap().with_domain([-0.5, 0.5], [0.0, std::f64::consts::FRAC_PI_2]);
        let l = lift_euclidean(&sample(&c, 65, 65).unwrap()).unwrap();
        let eta = middle_potential_lw(&l, 0.0, 1.0, 0.0).unwrap();
        let (p, q) = lw_conserved_pair(&l, 0.0, 1.0, 0.0);
        let r = lw_preserving_darboux(&l, &eta, (&p, &q), [0.0, 1.0, 0.0], 0.4, [2.0, 4.0]).unwrap();
        assert!(r.lw_residual < 1e-4 && r.w_residual < 1e-4, "{} {}", r.lw_residual, r.w_residual);
        assert!(r.result.constraint_residual < 1e-12);
        assert_eq!((r.pair.0.cq.degree(), r.pair.1.cq.degree()), (1, 1));
        assert!(r.pair.0.constrained && r.pair.1.constrained);
    }
}
