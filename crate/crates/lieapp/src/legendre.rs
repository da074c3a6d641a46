//! Legendre lifts of sampled surfaces into the lightcone model.

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{ChartPoint, Partials, SampledGrid, Vec3};
use crate::error::{LieError, Result};
use crate::minkowski::{pair, wedge, Frame, MinkVector};

/// Contact element at one parameter point with its analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedPoint {
    pub f: MinkVector,
    pub t: MinkVector,
    /// `[∂_u 𝔣, ∂_v 𝔣]`
    pub df: [MinkVector; 2],
    /// `[∂_u 𝔱, ∂_v 𝔱]`
    pub dt: [MinkVector; 2],
    pub k1: f64,
    pub k2: f64,
}

impl LiftedPoint {
    pub fn sigma1(&self) -> MinkVector {
        self.t + self.f * self.k1
    }

    pub fn sigma2(&self) -> MinkVector {
        self.t + self.f * self.k2
    }

    pub fn kappa(&self, dir: usize) -> f64 {
        if dir == 0 {
            self.k1
        } else {
            self.k2
        }
    }
}

/// `x ↦ x + 𝔮₀ + ½|x|²𝔮∞`.
pub fn point_lift(x: &Vec3) -> MinkVector {
    Frame::embed(x) + Frame::q0() + Frame::q_inf() * (0.5 * x.norm_squared())
}

/// `n ↦ n + (n,x)𝔮∞ + 𝔭`.
pub fn plane_lift(x: &Vec3, n: &Vec3) -> MinkVector {
    Frame::embed(n) + Frame::q_inf() * n.dot(x) + Frame::p()
}

#[allow(clippy::too_many_arguments)]
pub fn lift_point(
    x: &Vec3,
    n: &Vec3,
    xu: &Vec3,
    xv: &Vec3,
    nu: &Vec3,
    nv: &Vec3,
    k1: f64,
    k2: f64,
) -> LiftedPoint {
    let qi = Frame::q_inf();
    let dlift = |dx: &Vec3| Frame::embed(dx) + qi * dx.dot(x);
    LiftedPoint {
        f: point_lift(x),
        t: plane_lift(x, n),
        df: [dlift(xu), dlift(xv)],
        dt: [dlift(nu), dlift(nv)],
        k1,
        k2,
    }
}

pub fn lift_chart_point(p: &ChartPoint) -> LiftedPoint {
    lift_point(&p.x, &p.n, &p.xu, &p.xv, &p.nu, &p.nv, p.k1, p.k2)
}

/// Sampled Legendre map with curvature sphere lifts `σᵢ = 𝔱 + κᵢ𝔣`.
#[derive(Debug, Clone)]
pub struct LegendreGrid {
    pub grid: SampledGrid,
    pub points: Vec<LiftedPoint>,
    pub sigma1: Vec<MinkVector>,
    pub sigma2: Vec<MinkVector>,
}

impl LegendreGrid {
    pub fn nu(&self) -> usize {
        self.grid.nu
    }

    pub fn nv(&self) -> usize {
        self.grid.nv
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        self.grid.idx(i, j)
    }

    pub fn masked(&self, k: usize) -> bool {
        self.grid.umbilic[k]
    }

    /// Lifted point at an arbitrary parameter, available for analytic grids.
    pub fn eval_at(&self, u: f64, v: f64) -> Option<LiftedPoint> {
        self.grid.chart.as_ref().map(|c| lift_chart_point(&c.eval(u, v)))
    }

    /// Lift at the midpoint of the edge `a → b` (`a`, `b` flat indices):
    /// analytic when possible, else the average of the endpoint lifts.
    pub fn midpoint(&self, a: usize, b: usize) -> LiftedPoint {
        let (ia, ja) = (a / self.nv(), a % self.nv());
        let (ib, jb) = (b / self.nv(), b % self.nv());
        let u = 0.5 * (self.grid.u(ia) + self.grid.u(ib));
        let v = 0.5 * (self.grid.v(ja) + self.grid.v(jb));
        if let Some(p) = self.eval_at(u, v) {
            return p;
        }
        let (pa, pb) = (&self.points[a], &self.points[b]);
        LiftedPoint {
            f: (pa.f + pb.f) * 0.5,
            t: (pa.t + pb.t) * 0.5,
            df: [(pa.df[0] + pb.df[0]) * 0.5, (pa.df[1] + pb.df[1]) * 0.5],
            dt: [(pa.dt[0] + pb.dt[0]) * 0.5, (pa.dt[1] + pb.dt[1]) * 0.5],
            k1: 0.5 * (pa.k1 + pb.k1),
            k2: 0.5 * (pa.k2 + pb.k2),
        }
    }
}

/// Lifts a Euclidean grid with `𝔮∞ = e5 − e4`, `𝔭 = e6`, and checks the
/// Legendre invariants.
pub fn lift_euclidean(grid: &SampledGrid) -> Result<LegendreGrid> {
    let Partials { xu, xv, nu, nv } = grid.partials_or_fd();
    let points: Vec<LiftedPoint> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            lift_point(&grid.x[k], &grid.n[k], &xu[k], &xv[k], &nu[k], &nv[k], grid.k1[k], grid.k2[k])
        })
        .collect();
    let sigma1 = points.iter().map(|p| p.sigma1()).collect();
    let sigma2 = points.iter().map(|p| p.sigma2()).collect();
    let l = LegendreGrid { grid: grid.clone(), points, sigma1, sigma2 };
    let r = check_legendre(&l);
    let tol_iso = 1e-10 * (1.0 + r.scale);
    if r.isotropy > tol_iso || r.normalization > tol_iso || r.contact > 1e-9 * (1.0 + r.scale) {
        return Err(LieError::GeometryError(format!(
            "lift violates Legendre invariants: isotropy {:.2e}, normalisation {:.2e}, contact {:.2e}",
            r.isotropy, r.normalization, r.contact
        )));
    }
    Ok(l)
}

/// Normalises an isotropic plane to a point sphere map and tangent plane
/// congruence for the space form `(𝔮, 𝔭)`: `𝔣' = −τ𝔭/(τ𝔭,𝔮)`,
/// `𝔱' = −τ𝔮/(τ𝔮,𝔭)` with `τ = a∧b`.
pub fn space_form_projection(
    plane: (&MinkVector, &MinkVector),
    q: &MinkVector,
    p: &MinkVector,
) -> Result<(MinkVector, MinkVector)> {
    let tau = wedge(plane.0, plane.1);
    let tp = tau.apply(p);
    let tq = tau.apply(q);
    let scale = plane.0.norm() * plane.1.norm() * q.norm().max(1.0) * p.norm().max(1.0);
    let dp = pair(&tp, q);
    let dq = pair(&tq, p);
    if dp.abs() <= 1e-12 * scale || dq.abs() <= 1e-12 * scale {
        return Err(LieError::ProjectionSingular);
    }
    Ok((tp * (-1.0 / dp), tq * (-1.0 / dq)))
}

/// Component of `w` transverse to `f = span(𝔣, 𝔱)`, using the dual pair
/// `(𝔮∞, 𝔭)` of the Euclidean normalisation.
pub fn transverse_part(w: &MinkVector, p: &LiftedPoint) -> MinkVector {
    let along = p.f * (-pair(w, &Frame::q_inf())) + p.t * (-pair(w, &Frame::p()));
    w - along
}

/// Maximum residuals of the Legendre structure over unmasked vertices.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LegendreReport {
    pub isotropy: f64,
    pub normalization: f64,
    pub contact: f64,
    pub curvature_sphere: f64,
    pub sphere_nullity: f64,
    /// min over the grid of `√|det Gram(𝔣_u, 𝔣_v)|`.
    pub immersion: f64,
    /// max `|μ − κ₁|` where `d_u(𝔱 + μ𝔣) ∈ f` is solved by least squares.
    pub curvature_recovery: f64,
    pub umbilic_count: usize,
    pub vertices: usize,
    /// Typical size of the lifted fields, for relative thresholds.
    pub scale: f64,
}

pub fn check_legendre(l: &LegendreGrid) -> LegendreReport {
    let q_inf = Frame::q_inf();
    let pp = Frame::p();
    let mut r = LegendreReport {
        immersion: f64::INFINITY,
        vertices: l.len(),
        ..Default::default()
    };
    for (k, p) in l.points.iter().enumerate() {
        r.scale = r.scale.max(p.f.amax()).max(p.t.amax());
        r.isotropy = r
            .isotropy
            .max(pair(&p.f, &p.f).abs())
            .max(pair(&p.t, &p.t).abs())
            .max(pair(&p.f, &p.t).abs());
        r.normalization = r
            .normalization
            .max((pair(&p.f, &q_inf) + 1.0).abs())
            .max(pair(&p.f, &pp).abs())
            .max((pair(&p.t, &pp) + 1.0).abs())
            .max(pair(&p.t, &q_inf).abs());
        for d in 0..2 {
            r.contact = r
                .contact
                .max(pair(&p.df[d], &p.t).abs())
                .max(pair(&p.dt[d], &p.f).abs());
        }
        let (s1, s2) = (l.sigma1[k], l.sigma2[k]);
        r.sphere_nullity = r
            .sphere_nullity
            .max(pair(&s1, &s1).abs())
            .max(pair(&s2, &s2).abs())
            .max(pair(&s1, &s2).abs());
        let guu = pair(&p.df[0], &p.df[0]);
        let gvv = pair(&p.df[1], &p.df[1]);
        let guv = pair(&p.df[0], &p.df[1]);
        r.immersion = r.immersion.min((guu * gvv - guv * guv).abs().sqrt());
        if l.masked(k) {
            r.umbilic_count += 1;
            continue;
        }
        // κᵢ derivatives only add multiples of 𝔣, which lie in f
        let w1 = transverse_part(&(p.dt[0] + p.df[0] * p.k1), p);
        let w2 = transverse_part(&(p.dt[1] + p.df[1] * p.k2), p);
        r.curvature_sphere = r.curvature_sphere.max(w1.amax()).max(w2.amax());
        let a = transverse_part(&p.df[0], p);
        let b = transverse_part(&p.dt[0], p);
        let mu = -a.dot(&b) / a.norm_squared();
        r.curvature_recovery = r.curvature_recovery.max((mu - p.k1).abs());
    }
    r
}
