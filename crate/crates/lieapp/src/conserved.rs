//! Polynomial conserved quantities of the pencil `d + tη`.

use nalgebra::{Matrix2, Matrix6};
use serde::Serialize;

use crate::error::{LieError, Result};
use crate::gauge::{discriminant_sign, GaugeOneForm};
use crate::legendre::LegendreGrid;
use crate::minkowski::{pair, sym, Frame, MinkVector, SkewOperator, SymTensor};

/// `p(t) = p₀ + t p₁ + … + t^d p_d`, each coefficient sampled per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCQ {
    pub coeffs: Vec<Vec<MinkVector>>,
}

impl PolyCQ {
    pub fn new(coeffs: Vec<Vec<MinkVector>>) -> Self {
        assert!(!coeffs.is_empty(), "a conserved quantity needs p0");
        let n = coeffs[0].len();
        assert!(coeffs.iter().all(|c| c.len() == n), "coefficient fields must share the grid");
        PolyCQ { coeffs }
    }

    /// A spatially constant vector repeated on `n` vertices.
    pub fn constant(v: MinkVector, n: usize) -> Self {
        PolyCQ { coeffs: vec![vec![v; n]] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, k: usize, t: f64) -> MinkVector {
        self.coeffs.iter().rev().fold(MinkVector::zeros(), |acc, c| acc * t + c[k])
    }

    pub fn eval_field(&self, t: f64) -> Vec<MinkVector> {
        (0..self.len()).map(|k| self.eval(k, t)).collect()
    }

    /// `max |p_k|` over all coefficients and vertices.
    pub fn scale(&self) -> f64 {
        self.coeffs.iter().flatten().fold(0.0, |m, v| m.max(v.amax()))
    }

    pub fn add(&self, other: &PolyCQ) -> PolyCQ {
        let d = self.coeffs.len().max(other.coeffs.len());
        let n = self.len();
        let get = |p: &PolyCQ, i: usize, k: usize| p.coeffs.get(i).map_or(MinkVector::zeros(), |c| c[k]);
        PolyCQ {
            coeffs: (0..d).map(|i| (0..n).map(|k| get(self, i, k) + get(other, i, k)).collect()).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> PolyCQ {
        PolyCQ { coeffs: self.coeffs.iter().map(|c| c.iter().map(|v| v * s).collect()).collect() }
    }

    /// Drops trailing coefficients with `max |p_k| ≤ tol`.
    pub fn trimmed(mut self, tol: f64) -> PolyCQ {
        while self.coeffs.len() > 1 && self.coeffs.last().unwrap().iter().all(|v| v.amax() <= tol) {
            self.coeffs.pop();
        }
        self
    }
}

/// Residuals of the conserved-quantity equations, all relative to the field
/// scale `max|p_k|` and per unit edge length.
#[derive(Debug, Clone, Serialize)]
pub struct CqReport {
    pub degree: usize,
    /// max `|p₀(v) − p₀(v₀)|`
    pub dp0: f64,
    /// `k = 1..d`: max over edges of `|Δp_k + η_e p̄_{k−1}| / h`
    pub coefficient: Vec<f64>,
    /// max over edges of `|η_e p̄_d| / h`
    pub top_edge: f64,
    /// max over vertices of `|η(∂) p_d|`
    pub top_vertex: f64,
    /// max `|(p_d, 𝔣)|, |(p_d, 𝔱)|`: `p_d` must lie in f when `d ≥ 1`
    pub top_in_f: f64,
    pub scale: f64,
}

impl CqReport {
    /// Largest discretisation-level residual (excluding `dp0`).
    pub fn worst(&self) -> f64 {
        self.coefficient.iter().copied().fold(self.top_edge, f64::max)
    }

    pub fn max_all(&self) -> f64 {
        self.worst().max(self.dp0).max(self.top_vertex).max(self.top_in_f)
    }
}

/// Checks `dp₀ = 0`, `dp_k + η p_{k−1} = 0` and `η p_d = 0` edgewise.
pub fn verify_cq(l: &LegendreGrid, eta: &GaugeOneForm, p: &PolyCQ) -> CqReport {
    let scale = p.scale().max(1e-300);
    let d = p.degree();
    let p0 = &p.coeffs[0];
    let dp0 = p0.iter().map(|v| (v - p0[0]).amax()).fold(0.0, f64::max) / scale;
    let mut coefficient = vec![0.0f64; d];
    let mut top_edge = 0.0f64;
    for (a, b, w) in eta.edges() {
        let h = eta.edge_length(a, b);
        for k in 1..=d {
            let avg = (p.coeffs[k - 1][a] + p.coeffs[k - 1][b]) * 0.5;
            let r = p.coeffs[k][b] - p.coeffs[k][a] + w.apply(&avg);
            coefficient[k - 1] = coefficient[k - 1].max(r.amax() / h / scale);
        }
        let avg = (p.coeffs[d][a] + p.coeffs[d][b]) * 0.5;
        top_edge = top_edge.max(w.apply(&avg).amax() / h / scale);
    }
    let mut top_vertex = 0.0f64;
    let mut top_in_f = 0.0f64;
    for (k, pt) in l.points.iter().enumerate() {
        let pd = p.coeffs[d][k];
        for w in &eta.vertex[k] {
            top_vertex = top_vertex.max(w.apply(&pd).amax() / scale);
        }
        if d == 0 {
            // a constant quantity in f would force f to be totally umbilic
            continue;
        }
        let fs = pt.f.amax().max(pt.t.amax());
        top_in_f = top_in_f.max(pair(&pd, &pt.f).abs().max(pair(&pd, &pt.t).abs()) / (scale * fs));
    }
    CqReport { degree: d, dp0, coefficient, top_edge, top_vertex, top_in_f, scale }
}

/// The conserved pair of a linear Weingarten surface:
/// `p(t) = 𝔭 + t(−b𝔣 + a𝔱)`, `q(t) = 𝔮∞ + t(c𝔣 − b𝔱)`.
pub fn lw_conserved_pair(l: &LegendreGrid, a: f64, b: f64, c: f64) -> (PolyCQ, PolyCQ) {
    let n = l.len();
    let p1 = l.points.iter().map(|pt| pt.f * (-b) + pt.t * a).collect();
    let q1 = l.points.iter().map(|pt| pt.f * c - pt.t * b).collect();
    (
        PolyCQ::new(vec![vec![Frame::p(); n], p1]),
        PolyCQ::new(vec![vec![Frame::q_inf(); n], q1]),
    )
}

/// `c·p + b·q = c𝔭 + b𝔮∞`, constant exactly when `b² = ac`.
pub fn tubular_combination(p: &PolyCQ, q: &PolyCQ, a: f64, b: f64, c: f64) -> PolyCQ {
    let _ = a;
    let s = p.scale().max(q.scale());
    p.scaled(c).add(&q.scaled(b)).trimmed(1e-12 * s * b.abs().max(c.abs()))
}

/// Coefficients of `(p(t), p(t))` and their spatial spread.
#[derive(Debug, Clone, Serialize)]
pub struct NormPolynomial {
    /// Mean over vertices of the coefficient of `t^k`, `k = 0..=2d`.
    pub coeffs: Vec<f64>,
    /// max over vertices of `|c_k(v) − mean|`, per coefficient.
    pub deviation: Vec<f64>,
}

impl NormPolynomial {
    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

pub fn norm_polynomial(p: &PolyCQ) -> NormPolynomial {
    let d = p.degree();
    let n = p.len();
    let per_vertex: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut c = vec![0.0; 2 * d + 1];
            for i in 0..=d {
                for j in 0..=d {
                    c[i + j] += pair(&p.coeffs[i][v], &p.coeffs[j][v]);
                }
            }
            c
        })
        .collect();
    let coeffs: Vec<f64> = (0..=2 * d)
        .map(|k| per_vertex.iter().map(|c| c[k]).sum::<f64>() / n as f64)
        .collect();
    let deviation = (0..=2 * d)
        .map(|k| per_vertex.iter().map(|c| (c[k] - coeffs[k]).abs()).fold(0.0, f64::max))
        .collect();
    NormPolynomial { coeffs, deviation }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Type1Class {
    Isothermic,
    Guichard,
    LIsothermic,
    DegenerateConstantTerm,
    NotType1,
}

impl Type1Class {
    pub fn as_str(&self) -> &'static str {
        match self {
            Type1Class::Isothermic => "isothermic",
            Type1Class::Guichard => "guichard",
            Type1Class::LIsothermic => "l_isothermic",
            Type1Class::DegenerateConstantTerm => "degenerate_constant_term",
            Type1Class::NotType1 => "not_type1",
        }
    }
}

/// Relative tolerance for deciding that a norm coefficient vanishes.
pub const NORM_ZERO_TOL: f64 = 1e-8;

fn norm_zero_tol(p: &PolyCQ) -> f64 {
    NORM_ZERO_TOL * p.scale().powi(2).max(1.0)
}

/// Branches on the norm polynomial of a linear conserved quantity.
pub fn classify_type1(p: &PolyCQ) -> Type1Class {
    if p.degree() != 1 {
        return Type1Class::NotType1;
    }
    let np = norm_polynomial(p);
    let tol = norm_zero_tol(p);
    let zero = |k: usize| np.coeffs.get(k).is_none_or(|c| c.abs() <= tol);
    if !zero(2) {
        return Type1Class::NotType1;
    }
    match (zero(0), zero(1)) {
        (false, true) => Type1Class::Isothermic,
        (false, false) => Type1Class::Guichard,
        (true, true) => Type1Class::LIsothermic,
        (true, false) => Type1Class::DegenerateConstantTerm,
    }
}

/// Classification of a linear Weingarten surface through its conserved pair.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum LwClass {
    /// `b² = ac`: `c𝔭 + b𝔮∞` is a constant conserved quantity.
    Tubular { constant_cq: [f64; 6] },
    NonTubular { p: Type1Class, q: Type1Class },
}

pub fn classify_lw(l: &LegendreGrid, a: f64, b: f64, c: f64) -> LwClass {
    let (p, q) = lw_conserved_pair(l, a, b, c);
    if discriminant_sign([a, b, c]) == 0 {
        let k = tubular_combination(&p, &q, a, b, c);
        let v = k.coeffs[0][0];
        return LwClass::Tubular { constant_cq: [v[0], v[1], v[2], v[3], v[4], v[5]] };
    }
    LwClass::NonTubular { p: classify_type1(&p), q: classify_type1(&q) }
}

/// `g₀` and `g∞` on the basis `(p, q)` of linear conserved quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PencilMetrics {
    pub g0: [[f64; 2]; 2],
    pub g_inf: [[f64; 2]; 2],
    /// `det g∞ = −4(b² − ac)` for the linear Weingarten pair.
    pub det_inf: f64,
}

impl PencilMetrics {
    pub fn g_t(&self, t: f64) -> [[f64; 2]; 2] {
        let mut g = self.g0;
        for (row, inf) in g.iter_mut().zip(&self.g_inf) {
            for (x, y) in row.iter_mut().zip(inf) {
                *x += t * y;
            }
        }
        g
    }

    /// `(a, b, c) = (−½g∞(p,p), ½g∞(p,q), −½g∞(q,q))`.
    pub fn lw_coefficients(&self) -> [f64; 3] {
        [-0.5 * self.g_inf[0][0], 0.5 * self.g_inf[0][1], -0.5 * self.g_inf[1][1]]
    }
}

/// Builds `g₀` and `g∞` from linear conserved quantities, read at vertex 0
/// (both metrics are constant on the grid).
pub fn pencil_metrics(p: &PolyCQ, q: &PolyCQ) -> Result<PencilMetrics> {
    if p.degree() != 1 || q.degree() != 1 {
        return Err(LieError::DependentQuantities);
    }
    let (p0, p1) = (p.coeffs[0][0], p.coeffs[1][0]);
    let (q0, q1) = (q.coeffs[0][0], q.coeffs[1][0]);
    // independence of p and q is that of their constant terms
    let cross = p0.norm_squared() * q0.norm_squared() - p0.dot(&q0).powi(2);
    if cross <= 1e-20 * p0.norm_squared() * q0.norm_squared() {
        return Err(LieError::DependentQuantities);
    }
    let g0 = [[pair(&p0, &p0), pair(&p0, &q0)], [pair(&q0, &p0), pair(&q0, &q0)]];
    let gpq = pair(&p0, &q1) + pair(&q0, &p1);
    let g_inf = [[2.0 * pair(&p0, &p1), gpq], [gpq, 2.0 * pair(&q0, &q1)]];
    let det_inf = g_inf[0][0] * g_inf[1][1] - g_inf[0][1] * g_inf[1][0];
    Ok(PencilMetrics { g0, g_inf, det_inf })
}

/// max over vertices and the given `t` of `|g_t(α, β) − (α(t), β(t))|`.
pub fn pencil_reproduction(m: &PencilMetrics, p: &PolyCQ, q: &PolyCQ, ts: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for &t in ts {
        let g = m.g_t(t);
        for k in 0..p.len() {
            let (a, b) = (p.eval(k, t), q.eval(k, t));
            worst = worst
                .max((g[0][0] - pair(&a, &a)).abs())
                .max((g[0][1] - pair(&a, &b)).abs())
                .max((g[1][1] - pair(&b, &b)).abs());
        }
    }
    worst
}

/// The linear Weingarten tensor `W = a 𝔮⊙𝔮 + 2b 𝔮⊙𝔭 + c 𝔭⊙𝔭`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeingartenTensor {
    pub w: SymTensor,
    pub abc: [f64; 3],
    /// `b² − ac`
    pub discriminant: f64,
    /// `max |W_pencil − W_abc|`, relative to `|W|`.
    pub crosscheck: f64,
    pub q: MinkVector,
    pub p: MinkVector,
}

impl WeingartenTensor {
    pub fn from_abc(abc: [f64; 3], q: MinkVector, p: MinkVector) -> Self {
        let [a, b, c] = abc;
        WeingartenTensor {
            w: weingarten_abc(abc, &q, &p),
            abc,
            discriminant: b * b - a * c,
            crosscheck: 0.0,
            q,
            p,
        }
    }

    /// `|W(v, w)|` relative to the sum of the magnitudes of its terms, a
    /// scale-free residual for `W(σ₁, σ₂) = 0`.
    pub fn normalized_residual(&self, v: &MinkVector, w: &MinkVector) -> f64 {
        let [a, b, c] = self.abc;
        let (qv, qw, pv, pw) = (pair(&self.q, v), pair(&self.q, w), pair(&self.p, v), pair(&self.p, w));
        let terms = [a * qv * qw, b * qv * pw, b * qw * pv, c * pv * pw];
        let sum: f64 = terms.iter().sum();
        let mag: f64 = terms.iter().map(|x| x.abs()).sum();
        if mag == 0.0 {
            0.0
        } else {
            sum.abs() / mag
        }
    }
}

fn weingarten_abc(abc: [f64; 3], q: &MinkVector, p: &MinkVector) -> SymTensor {
    let [a, b, c] = abc;
    sym(q, q).scale(a) + sym(q, p).scale(2.0 * b) + sym(p, p).scale(c)
}

/// `W = −(Δ/2)·φ₀(φ∞⁻¹ g∞)` with `Δ = det g∞`, cross-checked against the
/// coefficient expansion. `p0`, `q0` are the constant terms `p(0)`, `q(0)`.
pub fn weingarten_from_pencil(m: &PencilMetrics, p0: &MinkVector, q0: &MinkVector) -> Result<WeingartenTensor> {
    let g = Matrix2::new(m.g_inf[0][0], m.g_inf[0][1], m.g_inf[1][0], m.g_inf[1][1]);
    let scale = g.amax();
    if scale == 0.0 || m.det_inf.abs() <= 1e-12 * scale * scale {
        return Err(LieError::DegenerateGInfinity);
    }
    let inv = g.try_inverse().ok_or(LieError::DegenerateGInfinity)?;
    let basis = [p0, q0];
    let mut phi = Matrix6::zeros();
    for i in 0..2 {
        for j in 0..2 {
            phi += sym(basis[i], basis[j]).matrix() * inv[(i, j)];
        }
    }
    let w = SymTensor::from_matrix(phi * (-0.5 * m.det_inf)).expect("symmetric by construction");
    let abc = m.lw_coefficients();
    let expansion = weingarten_abc(abc, q0, p0);
    let crosscheck = (w.matrix() - expansion.matrix()).amax() / expansion.matrix().amax().max(1e-300);
    let [a, b, c] = abc;
    Ok(WeingartenTensor { w, abc, discriminant: b * b - a * c, crosscheck, q: *q0, p: *p0 })
}

/// Flat-front parameter: `t₀` with `g₀ = −t₀ g∞`, if it exists.
pub fn flat_front_detect(m: &PencilMetrics) -> Option<f64> {
    let f = |g: &[[f64; 2]; 2], h: &[[f64; 2]; 2]| (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| g[i][j] * h[i][j]).sum::<f64>();
    let gg = f(&m.g_inf, &m.g_inf);
    if gg == 0.0 {
        return None;
    }
    let t0 = -f(&m.g0, &m.g_inf) / gg;
    let res = m.g_t(t0);
    let r = f(&res, &res).sqrt();
    let s = f(&m.g0, &m.g0).sqrt().max(1e-300);
    (r <= 1e-8 * s && t0.abs() > 1e-12).then_some(t0)
}

/// Real parameters `m ≠ 0` where `p(m)` is null.
#[derive(Debug, Clone)]
pub struct ComplementaryRoots {
    /// `(p(t), p(t)) ≡ 0`: every `m` qualifies.
    pub all_parameters: bool,
    pub roots: Vec<(f64, Vec<MinkVector>)>,
}

pub fn complementary_roots(p: &PolyCQ) -> ComplementaryRoots {
    let np = norm_polynomial(p);
    let tol = norm_zero_tol(p);
    let mut c = np.coeffs.clone();
    for x in c.iter_mut() {
        if x.abs() <= tol {
            *x = 0.0;
        }
    }
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    if c.iter().all(|&x| x == 0.0) {
        return ComplementaryRoots { all_parameters: true, roots: vec![] };
    }
    let mut ms = match c.len() {
        2 => vec![-c[0] / c[1]],
        3 => {
            let (a, b, cc) = (c[2], c[1], c[0]);
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                vec![]
            } else {
                let sq = disc.sqrt();
                let qq = -0.5 * (b + b.signum() * sq);
                let mut r = vec![];
                if qq != 0.0 {
                    r.push(cc / qq);
                    r.push(qq / a);
                } else {
                    r.push(0.0);
                }
                r
            }
        }
        // degree ≥ 1 conserved quantities of higher order need a general solver
        _ => vec![],
    };
    ms.retain(|m| m.abs() > 1e-12);
    ms.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    ComplementaryRoots {
        all_parameters: false,
        roots: ms.into_iter().map(|m| (m, p.eval_field(m))).collect(),
    }
}

/// `p̃(t) = exp(tτ)p(t) = p(t) + tτp(t)` for `τ ∈ ∧²f` (so `τ² = 0`). The
/// returned flag reports a drop in degree.
pub fn gauge_transform_cq(p: &PolyCQ, tau: &[SkewOperator]) -> (PolyCQ, bool) {
    let d = p.degree();
    let n = p.len();
    let mut coeffs = Vec::with_capacity(d + 2);
    coeffs.push(p.coeffs[0].clone());
    for k in 1..=d + 1 {
        coeffs.push(
            (0..n)
                .map(|v| {
                    let base = p.coeffs.get(k).map_or(MinkVector::zeros(), |c| c[v]);
                    base + tau[v].apply(&p.coeffs[k - 1][v])
                })
                .collect(),
        );
    }
    let s = p.scale().max(1e-300);
    let out = PolyCQ { coeffs }.trimmed(1e-12 * s);
    let dropped = out.degree() < d;
    (out, dropped)
}
