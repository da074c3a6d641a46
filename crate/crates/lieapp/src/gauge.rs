//! Discrete `f∧f^⊥`-valued 1-forms on the curvature-line grid.
//!
//! A [`GaugeOneForm`] stores edge-integrated values: the u-edge from `(i, j)`
//! to `(i+1, j)` carries `h_u·η(∂_u)` evaluated at the edge midpoint, and
//! likewise for v-edges. Plaquette sums of these values give `∮η`, an
//! `O(h⁴)` approximation of `dη(∂_u, ∂_v)·h_u h_v` per cell.

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{fd_u, fd_v, SampledGrid, Vec3};
use crate::error::{LieError, Result};
use crate::legendre::{LegendreGrid, LiftedPoint};
use crate::minkowski::{pair, wedge, Frame, MinkVector, SkewOperator};

#[derive(Debug, Clone)]
pub struct GaugeOneForm {
    pub nu: usize,
    pub nv: usize,
    pub hu: f64,
    pub hv: f64,
    /// `(nu−1) × nv` values, index `i * nv + j`.
    pub u_edges: Vec<SkewOperator>,
    /// `nu × (nv−1)` values, index `i * (nv−1) + j`.
    pub v_edges: Vec<SkewOperator>,
    /// Pointwise `[η(∂_u), η(∂_v)]` at each vertex.
    pub vertex: Vec<[SkewOperator; 2]>,
    /// `(a, b, c)` when built as a linear Weingarten middle potential.
    pub lw: Option<[f64; 3]>,
}

impl GaugeOneForm {
    pub fn zero(nu: usize, nv: usize, hu: f64, hv: f64) -> Self {
        GaugeOneForm {
            nu,
            nv,
            hu,
            hv,
            u_edges: vec![SkewOperator::zero(); (nu - 1) * nv],
            v_edges: vec![SkewOperator::zero(); nu * (nv - 1)],
            vertex: vec![[SkewOperator::zero(); 2]; nu * nv],
            lw: None,
        }
    }

    pub fn u_edge(&self, i: usize, j: usize) -> &SkewOperator {
        &self.u_edges[i * self.nv + j]
    }

    pub fn v_edge(&self, i: usize, j: usize) -> &SkewOperator {
        &self.v_edges[i * (self.nv - 1) + j]
    }

    /// Integrated value along the edge between adjacent vertices `a → b`.
    pub fn edge(&self, a: (usize, usize), b: (usize, usize)) -> SkewOperator {
        match (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize) {
            (1, 0) => *self.u_edge(a.0, a.1),
            (-1, 0) => -*self.u_edge(b.0, b.1),
            (0, 1) => *self.v_edge(a.0, a.1),
            (0, -1) => -*self.v_edge(b.0, b.1),
            _ => panic!("vertices {a:?} and {b:?} are not adjacent"),
        }
    }

    /// Visits every edge as `(a, b, value)` with flat vertex indices.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &SkewOperator)> + '_ {
        let nv = self.nv;
        let us = self.u_edges.iter().enumerate().map(move |(e, w)| {
            let (i, j) = (e / nv, e % nv);
            (i * nv + j, (i + 1) * nv + j, w)
        });
        let vs = self.v_edges.iter().enumerate().map(move |(e, w)| {
            let (i, j) = (e / (nv - 1), e % (nv - 1));
            (i * nv + j, i * nv + j + 1, w)
        });
        us.chain(vs)
    }

    /// Edge step length for the edge `a → b`.
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        if b.abs_diff(a) == 1 {
            self.hv
        } else {
            self.hu
        }
    }
}

/// `c 𝔣∧d𝔣 − b(𝔣∧d𝔱 + 𝔱∧d𝔣) + a 𝔱∧d𝔱` applied to `∂_dir`.
pub fn lw_potential_at(p: &LiftedPoint, dir: usize, abc: [f64; 3]) -> SkewOperator {
    let [a, b, c] = abc;
    let (df, dt) = (&p.df[dir], &p.dt[dir]);
    wedge(&p.f, df) * c - (wedge(&p.f, dt) + wedge(&p.t, df)) * b + wedge(&p.t, dt) * a
}

/// The middle potential of a linear Weingarten surface `aK + 2bH + c = 0`.
pub fn middle_potential_lw(l: &LegendreGrid, a: f64, b: f64, c: f64) -> Result<GaugeOneForm> {
    if a == 0.0 && b == 0.0 && c == 0.0 {
        return Err(LieError::AllZeroCoefficients);
    }
    let abc = [a, b, c];
    let (nu, nv) = (l.nu(), l.nv());
    let (hu, hv) = (l.grid.hu, l.grid.hv);
    let u_edges = (0..(nu - 1) * nv)
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e / nv, e % nv);
            let m = l.midpoint(l.idx(i, j), l.idx(i + 1, j));
            lw_potential_at(&m, 0, abc) * hu
        })
        .collect();
    let v_edges = (0..nu * (nv - 1))
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e / (nv - 1), e % (nv - 1));
            let m = l.midpoint(l.idx(i, j), l.idx(i, j + 1));
            lw_potential_at(&m, 1, abc) * hv
        })
        .collect();
    let vertex = l
        .points
        .par_iter()
        .map(|p| [lw_potential_at(p, 0, abc), lw_potential_at(p, 1, abc)])
        .collect();
    Ok(GaugeOneForm { nu, nv, hu, hv, u_edges, v_edges, vertex, lw: Some(abc) })
}

/// Largest `|(η v, w)|` for `v, w ∈ {𝔣, 𝔱}` over all vertices, relative to
/// `|η|`. Zero for forms with values in `f∧f^⊥`.
pub fn annihilation_residual(l: &LegendreGrid, eta: &GaugeOneForm) -> f64 {
    let scale = eta.vertex.iter().flatten().map(|op| op.amax()).fold(0.0, f64::max).max(1e-300);
    let mut worst = 0.0f64;
    for (p, w) in l.points.iter().zip(&eta.vertex) {
        for op in w {
            let s = scale * p.f.amax().max(p.t.amax()).powi(2);
            for v in [&p.f, &p.t] {
                let ev = op.apply(v);
                worst = worst.max(pair(&ev, &p.f).abs() / s).max(pair(&ev, &p.t).abs() / s);
            }
        }
    }
    worst
}

/// Oriented plaquette sums `U(i,j) + V(i+1,j) − U(i,j+1) − V(i,j)`,
/// `(nu−1) × (nv−1)` values.
pub fn exterior_derivative(eta: &GaugeOneForm) -> Vec<SkewOperator> {
    let (nu, nv) = (eta.nu, eta.nv);
    (0..(nu - 1) * (nv - 1))
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / (nv - 1), c % (nv - 1));
            *eta.u_edge(i, j) + *eta.v_edge(i + 1, j) - *eta.u_edge(i, j + 1) - *eta.v_edge(i, j)
        })
        .collect()
}

/// `true` for plaquettes with an umbilic corner.
pub fn plaquette_mask(grid: &SampledGrid) -> Vec<bool> {
    let (nu, nv) = (grid.nu, grid.nv);
    (0..(nu - 1) * (nv - 1))
        .map(|c| {
            let (i, j) = (c / (nv - 1), c % (nv - 1));
            [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
                .iter()
                .any(|&(a, b)| grid.umbilic[grid.idx(a, b)])
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosednessReport {
    /// max Frobenius norm of the plaquette sums.
    pub max_raw: f64,
    /// `max_raw / (h_u h_v)`, an approximation of `max |dη(∂_u, ∂_v)|`.
    pub max_normalized: f64,
    pub mean_normalized: f64,
}

pub fn closedness(eta: &GaugeOneForm, grid: &SampledGrid) -> ClosednessReport {
    let d = exterior_derivative(eta);
    let mask = plaquette_mask(grid);
    let area = eta.hu * eta.hv;
    let (mut max_raw, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for (p, &m) in d.iter().zip(&mask) {
        if m {
            continue;
        }
        let n = p.norm();
        max_raw = max_raw.max(n);
        sum += n;
        count += 1;
    }
    ClosednessReport {
        max_raw,
        max_normalized: max_raw / area,
        mean_normalized: sum / count.max(1) as f64 / area,
    }
}

/// `max ‖2 𝔣_u∧𝔣_v‖` over plaquette centres: the normalised plaquette value
/// produced by a unit change of `aK + 2bH + c`.
pub fn closedness_oracle_scale(l: &LegendreGrid) -> f64 {
    let (nu, nv) = (l.nu(), l.nv());
    let mask = plaquette_mask(&l.grid);
    (0..(nu - 1) * (nv - 1))
        .filter(|&c| !mask[c])
        .map(|c| {
            let (i, j) = (c / (nv - 1), c % (nv - 1));
            let u = l.grid.u(i) + 0.5 * l.grid.hu;
            let v = l.grid.v(j) + 0.5 * l.grid.hv;
            let df = match l.eval_at(u, v) {
                Some(p) => p.df,
                None => {
                    let ks = [l.idx(i, j), l.idx(i + 1, j), l.idx(i, j + 1), l.idx(i + 1, j + 1)];
                    let avg = |d: usize| ks.iter().map(|&k| l.points[k].df[d]).sum::<MinkVector>() * 0.25;
                    [avg(0), avg(1)]
                }
            };
            (wedge(&df[0], &df[1]) * 2.0).norm()
        })
        .fold(0.0, f64::max)
}

/// Extracts `λ` with `τ = λ 𝔣∧𝔱`, or fails when `τ ∉ ∧²f`.
pub fn wedge_f_coefficient(p: &LiftedPoint, tau: &SkewOperator, vertex: usize) -> Result<f64> {
    // 𝔣∧𝔱 (𝔮∞) = −𝔱 and (−𝔱, 𝔭) = 1
    let lambda = pair(&tau.apply(&Frame::q_inf()), &Frame::p());
    let base = wedge(&p.f, &p.t);
    let scale = tau.amax().max(base.amax() * lambda.abs()).max(1e-300);
    if (*tau - base * lambda).amax() > 1e-9 * scale {
        return Err(LieError::TauNotInWedgeF { vertex });
    }
    Ok(lambda)
}

/// `η̃ = η − dτ` for `τ = λ 𝔣∧𝔱`. Edge values subtract the exact difference
/// `τ(b) − τ(a)`; vertex values subtract `dλ 𝔣∧𝔱 + λ(d𝔣∧𝔱 + 𝔣∧d𝔱)` with a
/// finite-difference `dλ`.
pub fn gauge_shift(l: &LegendreGrid, eta: &GaugeOneForm, tau: &[SkewOperator]) -> Result<GaugeOneForm> {
    assert_eq!(tau.len(), l.len(), "one gauge value per vertex");
    let lambda: Vec<f64> = l
        .points
        .iter()
        .zip(tau)
        .enumerate()
        .map(|(k, (p, t))| wedge_f_coefficient(p, t, k))
        .collect::<Result<_>>()?;
    let (nu, nv) = (eta.nu, eta.nv);
    let dl = [fd_u(&lambda, nu, nv, eta.hu), fd_v(&lambda, nu, nv, eta.hv)];
    let mut out = eta.clone();
    out.lw = None;
    for (e, w) in out.u_edges.iter_mut().enumerate() {
        let (i, j) = (e / nv, e % nv);
        *w = *w - (tau[(i + 1) * nv + j] - tau[i * nv + j]);
    }
    for (e, w) in out.v_edges.iter_mut().enumerate() {
        let (i, j) = (e / (nv - 1), e % (nv - 1));
        *w = *w - (tau[i * nv + j + 1] - tau[i * nv + j]);
    }
    for (k, (w, p)) in out.vertex.iter_mut().zip(&l.points).enumerate() {
        for d in 0..2 {
            let dtau = wedge(&p.f, &p.t) * dl[d][k]
                + (wedge(&p.df[d], &p.t) + wedge(&p.f, &p.dt[d])) * lambda[k];
            w[d] = w[d] - dtau;
        }
    }
    Ok(out)
}

/// Per-vertex components of the quadratic differential.
#[derive(Debug, Clone, Serialize)]
pub struct QuadDiff {
    pub nu: usize,
    pub nv: usize,
    pub hu: f64,
    pub hv: f64,
    pub uu: Vec<f64>,
    pub uv: Vec<f64>,
    pub vv: Vec<f64>,
    /// `true` where the value is undefined (umbilic vertices); stored as 0.
    pub mask: Vec<bool>,
}

impl QuadDiff {
    /// max over unmasked vertices of `max(|q_uu|, |q_uv|, |q_vv|)`.
    pub fn scale(&self) -> f64 {
        self.live()
            .map(|k| self.uu[k].abs().max(self.uv[k].abs()).max(self.vv[k].abs()))
            .fold(0.0, f64::max)
    }

    pub fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.uu.len()).filter(|&k| !self.mask[k])
    }

    /// max `|q − other|` over jointly unmasked vertices.
    pub fn max_deviation(&self, other: &QuadDiff) -> f64 {
        self.live()
            .filter(|&k| !other.mask[k])
            .map(|k| {
                (self.uu[k] - other.uu[k])
                    .abs()
                    .max((self.uv[k] - other.uv[k]).abs())
                    .max((self.vv[k] - other.vv[k]).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn max_uv(&self) -> f64 {
        self.live().map(|k| self.uv[k].abs()).fold(0.0, f64::max)
    }
}

/// Dual frame `ρᵢ ∈ span(𝔮∞, 𝔭)` with `(σᵢ, ρⱼ) = δᵢⱼ`.
pub fn dual_frame(s1: &MinkVector, s2: &MinkVector, vertex: usize) -> Result<[MinkVector; 2]> {
    let (qi, pp) = (Frame::q_inf(), Frame::p());
    let m = [[pair(s1, &qi), pair(s1, &pp)], [pair(s2, &qi), pair(s2, &pp)]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = (m[0][0].abs() + m[0][1].abs()) * (m[1][0].abs() + m[1][1].abs());
    if det.abs() <= 1e-12 * scale.max(1e-300) {
        return Err(LieError::FrameDegenerate { vertex });
    }
    // columns of M⁻¹ give the coefficients of ρ₁, ρ₂
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    Ok([qi * inv[0][0] + pp * inv[1][0], qi * inv[0][1] + pp * inv[1][1]])
}

/// `q(X, Y) = Σᵢ (η(X) d_Yσᵢ, ρᵢ)` given the sphere lifts, their derivatives
/// and the dual frame. `d_Yσᵢ` only matters modulo f since `η` kills f.
pub fn trace_form(
    eta: &[SkewOperator; 2],
    dsigma: &[[MinkVector; 2]; 2],
    rho: &[MinkVector; 2],
) -> [[f64; 2]; 2] {
    let mut q = [[0.0; 2]; 2];
    for (x, qx) in q.iter_mut().enumerate() {
        for (y, qxy) in qx.iter_mut().enumerate() {
            *qxy = (0..2).map(|i| pair(&eta[x].apply(&dsigma[i][y]), &rho[i])).sum();
        }
    }
    q
}

/// `d_Y σᵢ` modulo f: `d_Y𝔱 + κᵢ d_Y𝔣`; `dsigma[i][y]`.
pub fn sphere_derivatives(p: &LiftedPoint) -> [[MinkVector; 2]; 2] {
    let d = |k: f64, y: usize| p.dt[y] + p.df[y] * k;
    [[d(p.k1, 0), d(p.k1, 1)], [d(p.k2, 0), d(p.k2, 1)]]
}

/// `q(X, Y) = tr(σ ↦ η(X) d_Yσ : f → f)` at every unmasked vertex.
pub fn quadratic_differential(l: &LegendreGrid, eta: &GaugeOneForm) -> Result<QuadDiff> {
    let n = l.len();
    let rows: Vec<Option<[[f64; 2]; 2]>> = (0..n)
        .into_par_iter()
        .map(|k| {
            if l.masked(k) {
                return Ok(None);
            }
            let rho = dual_frame(&l.sigma1[k], &l.sigma2[k], k)?;
            Ok(Some(trace_form(&eta.vertex[k], &sphere_derivatives(&l.points[k]), &rho)))
        })
        .collect::<Result<_>>()?;
    Ok(quad_from_rows(l, rows))
}

pub(crate) fn quad_from_rows(l: &LegendreGrid, rows: Vec<Option<[[f64; 2]; 2]>>) -> QuadDiff {
    let mut q = QuadDiff {
        nu: l.nu(),
        nv: l.nv(),
        hu: l.grid.hu,
        hv: l.grid.hv,
        uu: vec![0.0; rows.len()],
        uv: vec![0.0; rows.len()],
        vv: vec![0.0; rows.len()],
        mask: vec![true; rows.len()],
    };
    for (k, r) in rows.into_iter().enumerate() {
        if let Some(m) = r {
            q.uu[k] = m[0][0];
            q.uv[k] = 0.5 * (m[0][1] + m[1][0]);
            q.vv[k] = m[1][1];
            q.mask[k] = false;
        }
    }
    q
}

/// Closed form `−c(d𝔣,d𝔣) + 2b(d𝔣,d𝔱) − a(d𝔱,d𝔱)` of the linear Weingarten
/// quadratic differential.
pub fn lw_quadratic_formula(l: &LegendreGrid, abc: [f64; 3]) -> QuadDiff {
    let [a, b, c] = abc;
    let rows = (0..l.len())
        .map(|k| {
            if l.masked(k) {
                return None;
            }
            let p = &l.points[k];
            let mut m = [[0.0; 2]; 2];
            for (x, row) in m.iter_mut().enumerate() {
                for (y, v) in row.iter_mut().enumerate() {
                    let ff = pair(&p.df[x], &p.df[y]);
                    let ft = 0.5 * (pair(&p.df[x], &p.dt[y]) + pair(&p.dt[x], &p.df[y]));
                    let tt = pair(&p.dt[x], &p.dt[y]);
                    *v = -c * ff + 2.0 * b * ft - a * tt;
                }
            }
            Some(m)
        })
        .collect();
    quad_from_rows(l, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparabilityReport {
    /// max `|∂_v q_uu| / scale`
    pub dv_quu: f64,
    /// max `|∂_u q_vv| / scale`
    pub du_qvv: f64,
    /// max `|q_uv| / scale`
    pub quv: f64,
    pub scale: f64,
}

impl SeparabilityReport {
    pub fn worst(&self) -> f64 {
        self.dv_quu.max(self.du_qvv)
    }
}

/// Tests `q_uu = U(u)²`-type separation: `q_uu` independent of v and `q_vv`
/// independent of u, by second-order differences.
pub fn separability_check(q: &QuadDiff) -> SeparabilityReport {
    let scale = q.scale().max(1e-300);
    let dv = fd_v(&q.uu, q.nu, q.nv, q.hv);
    let du = fd_u(&q.vv, q.nu, q.nv, q.hu);
    // a difference stencil touching a masked vertex is unreliable
    let near_mask = |k: usize| {
        let (i, j) = (k / q.nv, k % q.nv);
        let lo_i = i.saturating_sub(2);
        let lo_j = j.saturating_sub(2);
        (lo_i..=(i + 2).min(q.nu - 1)).any(|a| (lo_j..=(j + 2).min(q.nv - 1)).any(|b| q.mask[a * q.nv + b]))
    };
    let live: Vec<usize> = (0..q.uu.len()).filter(|&k| !near_mask(k)).collect();
    SeparabilityReport {
        dv_quu: live.iter().map(|&k| dv[k].abs()).fold(0.0, f64::max) / scale,
        du_qvv: live.iter().map(|&k| du[k].abs()).fold(0.0, f64::max) / scale,
        quv: q.max_uv() / scale,
        scale,
    }
}

/// Sign of `b² − ac`: `1` real isothermic congruences, `0` tubular,
/// `−1` complex conjugate.
pub fn discriminant_sign(abc: [f64; 3]) -> i32 {
    let [a, b, c] = abc;
    let d = b * b - a * c;
    let tol = 1e-12 * (b * b + (a * c).abs()).max(1e-300);
    if d > tol {
        1
    } else if d < -tol {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct Associates {
    /// `x^D = c x − b n`
    pub x_dual: Vec<Vec3>,
    /// `x̂ = a n − b x`
    pub x_hat: Vec<Vec3>,
    pub kappa_dual: Vec<[f64; 2]>,
    pub kappa_hat: Vec<[f64; 2]>,
    /// `1/(κ₁κ₂^D) + 1/(κ₂κ₁^D) − 1/κ̂₁ − 1/κ̂₂` per vertex.
    pub residual: Vec<f64>,
    /// `1/(κ₁κ₂^D) + 1/(κ₂κ₁^D)`, equal to `(2c + 2bH)/K`.
    pub dual_sum: Vec<f64>,
    /// `1/κ̂₁ + 1/κ̂₂`.
    pub hat_sum: Vec<f64>,
}

impl Associates {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Combescure associates of a linear Weingarten surface and the residual of
/// their curvature relation.
pub fn combescure_associates(grid: &SampledGrid, a: f64, b: f64, c: f64) -> Result<Associates> {
    let n = grid.len();
    let mut out = Associates {
        x_dual: Vec::with_capacity(n),
        x_hat: Vec::with_capacity(n),
        kappa_dual: Vec::with_capacity(n),
        kappa_hat: Vec::with_capacity(n),
        residual: Vec::with_capacity(n),
        dual_sum: Vec::with_capacity(n),
        hat_sum: Vec::with_capacity(n),
    };
    let scale = a.abs().max(b.abs()).max(c.abs());
    for k in 0..n {
        let (x, nn) = (grid.x[k], grid.n[k]);
        let ks = [grid.k1[k], grid.k2[k]];
        let kmag = ks[0].abs().max(ks[1].abs()).max(1.0);
        let tiny = 1e-12 * scale * kmag;
        let den_d = ks.map(|kk| c + b * kk);
        let den_h = ks.map(|kk| a * kk + b);
        if ks.iter().any(|kk| kk.abs() <= 1e-12 * kmag)
            || den_d.iter().chain(&den_h).any(|d| d.abs() <= tiny)
        {
            return Err(LieError::AssociateSingular { vertex: k });
        }
        let kd = [ks[0] / den_d[0], ks[1] / den_d[1]];
        let kh = [-ks[0] / den_h[0], -ks[1] / den_h[1]];
        // 1/(κ₁κ₂^D) = (c + bκ₂)/(κ₁κ₂)
        let kk = ks[0] * ks[1];
        let dual_sum = den_d[1] / kk + den_d[0] / kk;
        let hat_sum = 1.0 / kh[0] + 1.0 / kh[1];
        out.x_dual.push(x * c - nn * b);
        out.x_hat.push(nn * a - x * b);
        out.kappa_dual.push(kd);
        out.kappa_hat.push(kh);
        out.residual.push(dual_sum - hat_sum);
        out.dual_sum.push(dual_sum);
        out.hat_sum.push(hat_sum);
    }
    Ok(out)
}
