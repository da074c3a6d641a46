//! Analytic test surfaces in curvature-line coordinates.
//!
//! Every chart orients its normal as `n = x_u × x_v / |x_u × x_v|` and its
//! principal curvatures follow `dn = -κ dx` along each coordinate direction.
//! The linear Weingarten coefficients `(a, b, c)` with `aK + 2bH + c = 0`
//! depend on that orientation and are documented per chart:
//!
//! | chart              | κ₁ (u)                 | κ₂ (v)               | (a, b, c)       |
//! |--------------------|------------------------|----------------------|-----------------|
//! | catenoid           | −1/cosh²u              | 1/cosh²u             | (0, 1, 0)       |
//! | torus(R, r)        | 1/r                    | cos u/(R + r cos u)  | (r², −r, 1)     |
//! | cylinder(r)        | −1/r                   | 0                    | (r², r, 1)      |
//! | pseudosphere       | −1/sinh u              | sinh u               | (1, 0, 1)       |
//! | unduloid(H, neck)  | 2H − κ₂                | see profile          | (0, 1, −2H)     |
//! | sphere(r)          | 1/r                    | 1/r                  | umbilic         |

use nalgebra::Vector3;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{LieError, Result};

pub type Vec3 = Vector3<f64>;

/// Surface parameters keyed by name, e.g. `{"R": 2, "r": 1}`.
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceKind {
    Catenoid,
    Torus { big_r: f64, r: f64 },
    Cylinder { r: f64 },
    Pseudosphere,
    Unduloid { h: f64, neck: f64 },
    Sphere { r: f64 },
}

/// Value of a chart and its first derivatives at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub x: Vec3,
    pub n: Vec3,
    pub xu: Vec3,
    pub xv: Vec3,
    pub nu: Vec3,
    pub nv: Vec3,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceChart {
    pub name: String,
    pub kind: SurfaceKind,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
}

/// Profile curve `(r, z)` of a surface of revolution with two derivatives.
struct Profile {
    r: f64,
    z: f64,
    dr: f64,
    dz: f64,
    ddr: f64,
    ddz: f64,
}

fn revolve(p: Profile, v: f64) -> ChartPoint {
    let (s, c) = v.sin_cos();
    let w = p.dr.hypot(p.dz);
    let dw = (p.dr * p.ddr + p.dz * p.ddz) / w;
    let x = Vec3::new(p.r * c, p.r * s, p.z);
    let xu = Vec3::new(p.dr * c, p.dr * s, p.dz);
    let xv = Vec3::new(-p.r * s, p.r * c, 0.0);
    let a = -p.dz / w;
    let b = p.dr / w;
    let da = -p.ddz / w + p.dz * dw / (w * w);
    let db = p.ddr / w - p.dr * dw / (w * w);
    let n = Vec3::new(a * c, a * s, b);
    let nu = Vec3::new(da * c, da * s, db);
    let nv = Vec3::new(-a * s, a * c, 0.0);
    let k1 = (p.dr * p.ddz - p.dz * p.ddr) / (w * w * w);
    let k2 = p.dz / (p.r * w);
    ChartPoint { x, n, xu, xv, nu, nv, k1, k2 }
}

// 8-point Gauss–Legendre rule on [-1, 1]
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let panels = ((b - a).abs() / 0.05).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            sum += w * (f(mid - 0.5 * h * x) + f(mid + 0.5 * h * x));
        }
    }
    0.5 * h * sum
}

/// Delaunay unduloid in arc length `s`: `r = √D/(2H)` with
/// `D = 1 + B² + 2B sin(2Hs)` and `B = 1 − 2H·neck`.
fn unduloid_profile(h: f64, neck: f64, s: f64) -> Profile {
    let bb = 1.0 - 2.0 * h * neck;
    let dz_at = |s: f64| {
        let th = 2.0 * h * s;
        let d = 1.0 + bb * bb + 2.0 * bb * th.sin();
        (1.0 + bb * th.sin()) / d.sqrt()
    };
    let th = 2.0 * h * s;
    let (sn, cs) = th.sin_cos();
    let d = 1.0 + bb * bb + 2.0 * bb * sn;
    let sd = d.sqrt();
    let d32 = d * sd;
    Profile {
        r: sd / (2.0 * h),
        z: gauss_legendre(dz_at, 0.0, s),
        dr: bb * cs / sd,
        dz: (1.0 + bb * sn) / sd,
        ddr: -2.0 * h * bb * sn / sd - 2.0 * h * bb * bb * cs * cs / d32,
        ddz: 2.0 * h * bb * cs / sd - 2.0 * h * bb * cs * (1.0 + bb * sn) / d32,
    }
}

fn param(params: &Params, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        Some(v) if v.is_finite() => Ok(*v),
        Some(v) => Err(LieError::BadParams(format!("{key} = {v} is not finite"))),
        None => Ok(default),
    }
}

/// Looks up a catalog surface. Unknown parameter keys are rejected.
pub fn catalog(name: &str, params: &Params) -> Result<SurfaceChart> {
    let allowed: &[&str] = match name {
        "catenoid" | "pseudosphere" => &[],
        "torus" => &["R", "r"],
        "cylinder" | "sphere" => &["r"],
        "unduloid" => &["H", "neck"],
        _ => return Err(LieError::UnknownSurface(name.to_string())),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(LieError::BadParams(format!("`{k}` is not a parameter of {name}")));
    }
    let (kind, u_range, v_range) = match name {
        "catenoid" => (SurfaceKind::Catenoid, [-1.0, 1.0], [0.0, PI]),
        "torus" => {
            let big_r = param(params, "R", 2.0)?;
            let r = param(params, "r", 1.0)?;
            if !(r > 0.0 && r < big_r) {
                return Err(LieError::BadParams(format!("torus needs 0 < r < R, got R={big_r}, r={r}")));
            }
            (SurfaceKind::Torus { big_r, r }, [-PI, PI], [0.0, PI])
        }
        "cylinder" => {
            let r = param(params, "r", 1.0)?;
            if r <= 0.0 {
                return Err(LieError::BadParams(format!("cylinder needs r > 0, got {r}")));
            }
            (SurfaceKind::Cylinder { r }, [0.0, PI], [-1.0, 1.0])
        }
        "pseudosphere" => (SurfaceKind::Pseudosphere, [0.3, 2.0], [0.0, PI]),
        "unduloid" => {
            let h = param(params, "H", 0.5)?;
            let neck = param(params, "neck", 0.5)?;
            if !(h > 0.0 && neck > 0.0 && 2.0 * h * neck < 1.0) {
                return Err(LieError::BadParams(format!(
                    "unduloid needs H > 0 and 0 < neck < 1/(2H), got H={h}, neck={neck}"
                )));
            }
            (SurfaceKind::Unduloid { h, neck }, [0.0, PI / h], [0.0, PI])
        }
        "sphere" => {
            let r = param(params, "r", 1.0)?;
            if r <= 0.0 {
                return Err(LieError::BadParams(format!("sphere needs r > 0, got {r}")));
            }
            (SurfaceKind::Sphere { r }, [-1.0, 1.0], [0.0, PI])
        }
        _ => unreachable!(),
    };
    Ok(SurfaceChart { name: name.to_string(), kind, u_range, v_range })
}

impl SurfaceChart {
    /// Restricts or moves the parameter rectangle.
    pub fn with_domain(mut self, u_range: [f64; 2], v_range: [f64; 2]) -> Self {
        self.u_range = u_range;
        self.v_range = v_range;
        self
    }

    pub fn eval(&self, u: f64, v: f64) -> ChartPoint {
        match self.kind {
            SurfaceKind::Catenoid => {
                let (ch, sh) = (u.cosh(), u.sinh());
                revolve(Profile { r: ch, z: u, dr: sh, dz: 1.0, ddr: ch, ddz: 0.0 }, v)
            }
            SurfaceKind::Torus { big_r, r } => {
                let (s, c) = u.sin_cos();
                revolve(
                    Profile {
                        r: big_r + r * c,
                        z: r * s,
                        dr: -r * s,
                        dz: r * c,
                        ddr: -r * c,
                        ddz: -r * s,
                    },
                    v,
                )
            }
            SurfaceKind::Pseudosphere => {
                let (sech, th) = (1.0 / u.cosh(), u.tanh());
                revolve(
                    Profile {
                        r: sech,
                        z: u - th,
                        dr: -sech * th,
                        dz: th * th,
                        ddr: sech * (th * th - sech * sech),
                        ddz: 2.0 * th * sech * sech,
                    },
                    v,
                )
            }
            SurfaceKind::Unduloid { h, neck } => revolve(unduloid_profile(h, neck, u), v),
            SurfaceKind::Sphere { r } => {
                let (s, c) = u.sin_cos();
                revolve(
                    Profile { r: r * c, z: r * s, dr: -r * s, dz: r * c, ddr: -r * c, ddz: -r * s },
                    v,
                )
            }
            SurfaceKind::Cylinder { r } => {
                // explicit chart: angle along u, height along v, outward normal
                let (s, c) = u.sin_cos();
                ChartPoint {
                    x: Vec3::new(r * c, r * s, v),
                    n: Vec3::new(c, s, 0.0),
                    xu: Vec3::new(-r * s, r * c, 0.0),
                    xv: Vec3::new(0.0, 0.0, 1.0),
                    nu: Vec3::new(-s, c, 0.0),
                    nv: Vec3::zeros(),
                    k1: -1.0 / r,
                    k2: 0.0,
                }
            }
        }
    }

    /// The `(a, b, c)` of this chart's linear Weingarten relation, if any.
    pub fn lw_triple(&self) -> Option<[f64; 3]> {
        match self.kind {
            SurfaceKind::Catenoid => Some([0.0, 1.0, 0.0]),
            SurfaceKind::Torus { r, .. } => Some([r * r, -r, 1.0]),
            SurfaceKind::Cylinder { r } => Some([r * r, r, 1.0]),
            SurfaceKind::Pseudosphere => Some([1.0, 0.0, 1.0]),
            SurfaceKind::Unduloid { h, .. } => Some([0.0, 1.0, -2.0 * h]),
            SurfaceKind::Sphere { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    File,
}

/// Analytic first derivatives sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub xu: Vec<Vec3>,
    pub xv: Vec<Vec3>,
    pub nu: Vec<Vec3>,
    pub nv: Vec<Vec3>,
}

/// Fields sampled on an `nu × nv` grid; vertex `(i, j)` is stored at
/// `i * nv + j` with `i` running along u.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGrid {
    pub nu: usize,
    pub nv: usize,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub hu: f64,
    pub hv: f64,
    pub x: Vec<Vec3>,
    pub n: Vec<Vec3>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub partials: Option<Partials>,
    /// `true` where `|κ₁ − κ₂| ≤ ε_umb`.
    pub umbilic: Vec<bool>,
    pub provenance: Provenance,
    /// The generating chart for analytic grids; used for midpoint evaluation.
    pub chart: Option<SurfaceChart>,
}

/// Relative umbilic threshold: `ε_umb = UMBILIC_REL · max|κ|`.
pub const UMBILIC_REL: f64 = 1e-6;

pub fn umbilic_mask(k1: &[f64], k2: &[f64]) -> Vec<bool> {
    let kmax = k1.iter().chain(k2).fold(0.0f64, |m, k| m.max(k.abs()));
    let eps = UMBILIC_REL * kmax;
    k1.iter().zip(k2).map(|(a, b)| (a - b).abs() <= eps).collect()
}

impl SampledGrid {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self, i: usize) -> f64 {
        self.u_range[0] + i as f64 * self.hu
    }

    pub fn v(&self, j: usize) -> f64 {
        self.v_range[0] + j as f64 * self.hv
    }

    pub fn umbilic_free(&self) -> bool {
        !self.umbilic.iter().any(|&m| m)
    }

    /// Builds a grid from raw fields, computing step sizes and the mask.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fields(
        nu: usize,
        nv: usize,
        u_range: [f64; 2],
        v_range: [f64; 2],
        x: Vec<Vec3>,
        n: Vec<Vec3>,
        k1: Vec<f64>,
        k2: Vec<f64>,
        partials: Option<Partials>,
        provenance: Provenance,
    ) -> Result<Self> {
        if nu < 8 || nv < 8 {
            return Err(LieError::GridTooSmall { nu, nv });
        }
        let umbilic = umbilic_mask(&k1, &k2);
        if umbilic.iter().all(|&m| m) {
            return Err(LieError::UmbilicEverywhere);
        }
        Ok(SampledGrid {
            nu,
            nv,
            u_range,
            v_range,
            hu: (u_range[1] - u_range[0]) / (nu - 1) as f64,
            hv: (v_range[1] - v_range[0]) / (nv - 1) as f64,
            x,
            n,
            k1,
            k2,
            partials,
            umbilic,
            provenance,
            chart: None,
        })
    }

    /// Partials at every vertex: analytic when stored, otherwise second-order
    /// finite differences of `x` and `n`.
    pub fn partials_or_fd(&self) -> Partials {
        if let Some(p) = &self.partials {
            return p.clone();
        }
        Partials {
            xu: fd_u(&self.x, self.nu, self.nv, self.hu),
            xv: fd_v(&self.x, self.nu, self.nv, self.hv),
            nu: fd_u(&self.n, self.nu, self.nv, self.hu),
            nv: fd_v(&self.n, self.nu, self.nv, self.hv),
        }
    }
}

/// Second-order derivative along u (central inside, one-sided at the ends).
pub fn fd_u<T>(f: &[T], nu: usize, nv: usize, h: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let at = |i: usize, j: usize| f[i * nv + j];
    let mut out = Vec::with_capacity(f.len());
    for i in 0..nu {
        for j in 0..nv {
            out.push(fd_1d(|k| at(k, j), i, nu, h));
        }
    }
    out
}

/// Second-order derivative along v.
pub fn fd_v<T>(f: &[T], nu: usize, nv: usize, h: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let at = |i: usize, j: usize| f[i * nv + j];
    let mut out = Vec::with_capacity(f.len());
    for i in 0..nu {
        for j in 0..nv {
            out.push(fd_1d(|k| at(i, k), j, nv, h));
        }
    }
    out
}

pub(crate) fn fd_1d<T>(g: impl Fn(usize) -> T, k: usize, n: usize, h: f64) -> T
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    if k == 0 {
        (g(1) * 4.0 - g(0) * 3.0 - g(2)) * (0.5 / h)
    } else if k == n - 1 {
        (g(n - 1) * 3.0 - g(n - 2) * 4.0 + g(n - 3)) * (0.5 / h)
    } else {
        (g(k + 1) - g(k - 1)) * (0.5 / h)
    }
}

/// Fourth-order derivative along u; needs `nu ≥ 5`.
pub fn fd4_u<T>(f: &[T], nu: usize, nv: usize, h: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut out = Vec::with_capacity(f.len());
    for i in 0..nu {
        for j in 0..nv {
            out.push(fd4_1d(|k| f[k * nv + j], i, nu, h));
        }
    }
    out
}

/// Fourth-order derivative along v; needs `nv ≥ 5`.
pub fn fd4_v<T>(f: &[T], nu: usize, nv: usize, h: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut out = Vec::with_capacity(f.len());
    for i in 0..nu {
        for j in 0..nv {
            out.push(fd4_1d(|k| f[i * nv + k], j, nv, h));
        }
    }
    out
}

pub(crate) fn fd4_1d<T>(g: impl Fn(usize) -> T, k: usize, n: usize, h: f64) -> T
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let s = 1.0 / (12.0 * h);
    // one-sided stencils mirror at the far end
    let fwd = |g: &dyn Fn(usize) -> T, k: usize| -> T {
        if k == 0 {
            g(1) * 48.0 + g(3) * 16.0 - (g(0) * 25.0 + g(2) * 36.0 + g(4) * 3.0)
        } else {
            g(2) * 18.0 + g(4) - (g(0) * 3.0 + g(1) * 10.0 + g(3) * 6.0)
        }
    };
    if k < 2 {
        fwd(&g, k) * s
    } else if k + 2 >= n {
        let r = |m: usize| g(n - 1 - m);
        fwd(&r, n - 1 - k) * (-s)
    } else {
        (g(k + 1) * 8.0 + g(k - 2) - (g(k + 2) + g(k - 1) * 8.0)) * s
    }
}

/// Samples `chart` on an `nu × nv` grid including the domain corners.
pub fn sample(chart: &SurfaceChart, nu: usize, nv: usize) -> Result<SampledGrid> {
    if nu < 8 || nv < 8 {
        return Err(LieError::GridTooSmall { nu, nv });
    }
    let hu = (chart.u_range[1] - chart.u_range[0]) / (nu - 1) as f64;
    let hv = (chart.v_range[1] - chart.v_range[0]) / (nv - 1) as f64;
    let rows: Vec<Vec<ChartPoint>> = (0..nu)
        .into_par_iter()
        .map(|i| {
            let u = chart.u_range[0] + i as f64 * hu;
            (0..nv).map(|j| chart.eval(u, chart.v_range[0] + j as f64 * hv)).collect()
        })
        .collect();
    let pts: Vec<ChartPoint> = rows.into_iter().flatten().collect();
    let mut grid = SampledGrid::from_fields(
        nu,
        nv,
        chart.u_range,
        chart.v_range,
        pts.iter().map(|p| p.x).collect(),
        pts.iter().map(|p| p.n).collect(),
        pts.iter().map(|p| p.k1).collect(),
        pts.iter().map(|p| p.k2).collect(),
        Some(Partials {
            xu: pts.iter().map(|p| p.xu).collect(),
            xv: pts.iter().map(|p| p.xv).collect(),
            nu: pts.iter().map(|p| p.nu).collect(),
            nv: pts.iter().map(|p| p.nv).collect(),
        }),
        Provenance::Analytic,
    )?;
    grid.chart = Some(chart.clone());
    Ok(grid)
}

/// Per-vertex structural residuals of a sampled grid.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ChartCheck {
    pub unit_normal: f64,
    pub normal_tangency: f64,
    pub rodrigues: f64,
    /// Flat indices of vertices whose Rodrigues residual exceeds the threshold.
    pub violations: Vec<usize>,
}

/// Checks `|n| = 1`, `n ⊥ x_u, x_v` and `n_i + κ_i x_i = 0` at every vertex.
pub fn check_chart(grid: &SampledGrid, rodrigues_tol: f64) -> ChartCheck {
    let p = grid.partials_or_fd();
    let mut out = ChartCheck::default();
    for k in 0..grid.len() {
        let n = grid.n[k];
        out.unit_normal = out.unit_normal.max((n.norm() - 1.0).abs());
        out.normal_tangency = out
            .normal_tangency
            .max(n.dot(&p.xu[k]).abs())
            .max(n.dot(&p.xv[k]).abs());
        let r = (p.nu[k] + p.xu[k] * grid.k1[k])
            .norm()
            .max((p.nv[k] + p.xv[k] * grid.k2[k]).norm());
        out.rodrigues = out.rodrigues.max(r);
        if r > rodrigues_tol {
            out.violations.push(k);
        }
    }
    out
}
