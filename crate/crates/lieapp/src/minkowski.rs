//! Linear algebra of R^{4,2}.
//!
//! The pairing is `G = diag(1, 1, 1, 1, -1, -1)` in the fixed frame `e1..e6`.
//! Skew operators are stored as the full 6x6 endomorphism `M` with
//! `Mᵀ G + G M = 0`; exponentials and adjoint actions are then plain matrix
//! products.

use nalgebra::{DMatrix, Matrix6, SymmetricEigen, Vector3, Vector6};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{LieError, Result};

pub type MinkVector = Vector6<f64>;
pub type Map6 = Matrix6<f64>;

pub const SIGNATURE: [f64; 6] = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0];

/// Structural tolerance for skewness and symmetry checks.
pub const STRUCT_TOL: f64 = 1e-12;

pub fn metric() -> Map6 {
    Map6::from_diagonal(&Vector6::from(SIGNATURE))
}

/// Lower the index: `v ↦ G v`.
#[inline]
pub fn lower(v: &MinkVector) -> MinkVector {
    MinkVector::new(v[0], v[1], v[2], v[3], -v[4], -v[5])
}

#[inline]
pub fn pair(v: &MinkVector, w: &MinkVector) -> f64 {
    v[0] * w[0] + v[1] * w[1] + v[2] * w[2] + v[3] * w[3] - v[4] * w[4] - v[5] * w[5]
}

#[inline]
pub fn norm2(v: &MinkVector) -> f64 {
    pair(v, v)
}

/// The fixed frame and its distinguished vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Frame;

impl Frame {
    pub fn e(i: usize) -> MinkVector {
        assert!((1..=6).contains(&i), "frame index is 1-based");
        let mut v = MinkVector::zeros();
        v[i - 1] = 1.0;
        v
    }

    /// Point at the origin: `(e4 + e5)/2`.
    pub fn q0() -> MinkVector {
        MinkVector::new(0.0, 0.0, 0.0, 0.5, 0.5, 0.0)
    }

    /// Point at infinity / Euclidean space form vector: `e5 - e4`.
    pub fn q_inf() -> MinkVector {
        MinkVector::new(0.0, 0.0, 0.0, -1.0, 1.0, 0.0)
    }

    /// Point sphere complex `e6`.
    pub fn p() -> MinkVector {
        Self::e(6)
    }

    pub fn embed(x: &Vector3<f64>) -> MinkVector {
        MinkVector::new(x[0], x[1], x[2], 0.0, 0.0, 0.0)
    }

    pub fn euclidean_part(v: &MinkVector) -> Vector3<f64> {
        Vector3::new(v[0], v[1], v[2])
    }
}

/// Element of o(4,2) acting on column vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewOperator(Map6);

impl SkewOperator {
    pub fn zero() -> Self {
        SkewOperator(Map6::zeros())
    }

    /// Wraps `m` after checking metric skewness to [`STRUCT_TOL`] (relative).
    pub fn from_matrix(m: Map6) -> Option<Self> {
        let s = SkewOperator(m);
        let scale = m.amax().max(1.0);
        (s.skew_defect() <= STRUCT_TOL * scale).then_some(s)
    }

    pub fn matrix(&self) -> &Map6 {
        &self.0
    }

    pub fn apply(&self, v: &MinkVector) -> MinkVector {
        self.0 * v
    }

    /// `max |Mᵀ G + G M|`.
    pub fn skew_defect(&self) -> f64 {
        let g = metric();
        (self.0.transpose() * g + g * self.0).amax()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn amax(&self) -> f64 {
        self.0.amax()
    }

    /// `A τ A⁻¹` for an orthogonal `A`.
    pub fn conjugate(&self, a: &Map6) -> Self {
        SkewOperator(a * self.0 * orthogonal_inverse(a))
    }

    pub fn scale(&self, s: f64) -> Self {
        SkewOperator(self.0 * s)
    }

    /// Commutator `[A, B]`, again in o(4,2).
    pub fn bracket(&self, other: &Self) -> Self {
        SkewOperator(self.0 * other.0 - other.0 * self.0)
    }
}

impl Add for SkewOperator {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        SkewOperator(self.0 + rhs.0)
    }
}

impl Sub for SkewOperator {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        SkewOperator(self.0 - rhs.0)
    }
}

impl Neg for SkewOperator {
    type Output = Self;
    fn neg(self) -> Self {
        SkewOperator(-self.0)
    }
}

impl Mul<f64> for SkewOperator {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        SkewOperator(self.0 * s)
    }
}

/// Symmetric bilinear form `W(v, w) = vᵀ S w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor(Map6);

impl SymTensor {
    pub fn zero() -> Self {
        SymTensor(Map6::zeros())
    }

    pub fn from_matrix(m: Map6) -> Option<Self> {
        let scale = m.amax().max(1.0);
        ((m - m.transpose()).amax() <= STRUCT_TOL * scale).then_some(SymTensor(m))
    }

    pub fn matrix(&self) -> &Map6 {
        &self.0
    }

    pub fn eval(&self, v: &MinkVector, w: &MinkVector) -> f64 {
        v.dot(&(self.0 * w))
    }

    pub fn scale(&self, s: f64) -> Self {
        SymTensor(self.0 * s)
    }
}

impl Add for SymTensor {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        SymTensor(self.0 + rhs.0)
    }
}

/// `a∧b`, acting by `c ↦ (a,c) b − (b,c) a`.
pub fn wedge(a: &MinkVector, b: &MinkVector) -> SkewOperator {
    let la = lower(a);
    let lb = lower(b);
    SkewOperator(b * la.transpose() - a * lb.transpose())
}

/// `a⊙b (v, w) = ½((a,v)(b,w) + (a,w)(b,v))`.
pub fn sym(a: &MinkVector, b: &MinkVector) -> SymTensor {
    let la = lower(a);
    let lb = lower(b);
    SymTensor(0.5 * (la * lb.transpose() + lb * la.transpose()))
}

/// `G Aᵀ G`, the inverse of an O(4,2) element.
pub fn orthogonal_inverse(a: &Map6) -> Map6 {
    let g = metric();
    g * a.transpose() * g
}

/// `max |Aᵀ G A − G|`.
pub fn orthogonality_defect(a: &Map6) -> f64 {
    let g = metric();
    (a.transpose() * g * a - g).amax()
}

/// Γ-transformation of the pair of null lines `L`, `L̂`: scales `L̂` by `t`,
/// `L` by `1/t`, and fixes `(L ⊕ L̂)^⊥`.
pub fn gamma_transform(l: &MinkVector, lhat: &MinkVector, t: f64) -> Result<Map6> {
    let d = pair(l, lhat);
    let scale = (l.norm() * lhat.norm()).max(f64::MIN_POSITIVE);
    if d.abs() <= 1e-14 * scale || t == 0.0 {
        return Err(LieError::DegeneratePair);
    }
    let ll = lower(l);
    let llh = lower(lhat);
    // u ↦ (u,L̂)/(L,L̂) L is the projection onto L along (L̂)^⊥.
    let proj_l = l * llh.transpose() / d;
    let proj_lhat = lhat * ll.transpose() / d;
    Ok(Map6::identity() + proj_l * (1.0 / t - 1.0) + proj_lhat * (t - 1.0))
}

/// `exp(scale·τ)` by scaling and squaring with a degree-12 Taylor core.
///
/// Nilpotent generators (`τ² ≈ 0`, e.g. `τ ∈ ∧²f` for an isotropic plane)
/// take the exact shortcut `I + scale·τ`.
pub fn exp_skew(tau: &SkewOperator, scale: f64) -> Map6 {
    let a = tau.0 * scale;
    let na = a.amax();
    if na == 0.0 {
        return Map6::identity();
    }
    if (a * a).amax() < 1e-14 {
        return Map6::identity() + a;
    }
    // ∞-norm bound for the scaling step
    let inf_norm = (0..6)
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut s = inf_norm;
    while s > 0.25 {
        s *= 0.5;
        squarings += 1;
    }
    let b = a / 2f64.powi(squarings as i32);
    let mut term = Map6::identity();
    let mut sum = Map6::identity();
    for k in 1..=12 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// One Newton step toward O(4,2): `X ← ½(X + G X⁻ᵀ G)`, repeated until the
/// defect drops below `tol` (at most a few iterations).
pub fn reorthogonalize(x: &Map6, tol: f64) -> Map6 {
    let g = metric();
    let mut y = *x;
    for _ in 0..4 {
        if orthogonality_defect(&y) <= tol {
            break;
        }
        let Some(inv) = y.try_inverse() else { break };
        y = 0.5 * (y + g * inv.transpose() * g);
    }
    y
}

/// A null vector in the span of `basis`, selected by two angles.
///
/// The induced Gram matrix is diagonalised into G-orthonormal positive
/// directions `P_i` and negative directions `N_j`; the result is
/// `P(θ) + N(φ)` with `P(θ)`, `N(φ)` unit spheres in each part, normalised
/// to Euclidean length 1. With one positive direction, `θ` only selects the
/// sign. `φ` parametrises the negative circle when the positive part does
/// not already use it. Eigenvector signs are fixed so that the largest
/// component is positive, making the parametrisation deterministic.
pub fn null_directions_in(basis: &[MinkVector], angles: [f64; 2]) -> Result<MinkVector> {
    let k = basis.len();
    if k == 0 {
        return Err(LieError::NoNullVectors);
    }
    let gram = DMatrix::from_fn(k, k, |i, j| pair(&basis[i], &basis[j]));
    let eig = SymmetricEigen::new(gram);
    let lam_max = eig.eigenvalues.amax();
    if lam_max == 0.0 {
        // totally isotropic span: every vector is null
        let v = basis.iter().find(|b| b.norm() > 0.0).ok_or(LieError::NoNullVectors)?;
        return Ok(v / v.norm());
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut kernel = Vec::new();
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        let mut c = eig.eigenvectors.column(idx).into_owned();
        let imax = c.iamax();
        if c[imax] < 0.0 {
            c = -c;
        }
        let mut v = MinkVector::zeros();
        for (i, b) in basis.iter().enumerate() {
            v += b * c[i];
        }
        if lam.abs() <= 1e-12 * lam_max {
            kernel.push(v);
        } else if lam > 0.0 {
            pos.push(v / lam.sqrt());
        } else {
            neg.push(v / (-lam).sqrt());
        }
    }
    // stable order: by eigenvalue magnitude is arbitrary, sort by position in
    // the frame instead so that e.g. span(e1, e5) behaves predictably
    let order = |v: &MinkVector| v.iamax();
    pos.sort_by_key(order);
    neg.sort_by_key(order);

    if pos.is_empty() || neg.is_empty() {
        return match kernel.first() {
            Some(v) => Ok(v / v.norm()),
            None => Err(LieError::NoNullVectors),
        };
    }
    let [theta, phi] = angles;
    let (p, uses_second) = match pos.len() {
        1 => (pos[0] * theta.cos().signum(), false),
        2 => (pos[0] * theta.cos() + pos[1] * theta.sin(), false),
        _ => (
            pos[0] * theta.cos()
                + pos[1] * (theta.sin() * phi.cos())
                + pos[2] * (theta.sin() * phi.sin()),
            true,
        ),
    };
    let n = if neg.len() >= 2 && !uses_second {
        neg[0] * phi.cos() + neg[1] * phi.sin()
    } else {
        neg[0]
    };
    let v = p + n;
    Ok(v / v.norm())
}

/// Basis of `span(vs)^⊥` (orthogonal for the pairing), from the kernel of
/// the lowered constraint rows.
pub fn orthogonal_complement(vs: &[MinkVector]) -> Vec<MinkVector> {
    let mut a = Map6::zeros();
    for (r, v) in vs.iter().take(6).enumerate() {
        a.set_row(r, &lower(v).transpose());
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(f64::MIN_POSITIVE);
    (0..6)
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= tol)
        .map(|i| vt.row(i).transpose())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn independent(a: &MinkVector, b: &MinkVector) -> bool {
        let g = a.norm_squared() * b.norm_squared() - a.dot(b).powi(2);
        g > 1e-3 * a.norm_squared() * b.norm_squared()
    }

    fn vec6() -> impl Strategy<Value = MinkVector> {
        proptest::array::uniform6(-2.0f64..2.0).prop_map(MinkVector::from)
    }

    fn skew_small() -> impl Strategy<Value = SkewOperator> {
        (vec6(), vec6(), vec6(), vec6()).prop_map(|(a, b, c, d)| {
            let t = wedge(&a, &b) + wedge(&c, &d);
            let n = t.norm();
            if n > 1.0 {
                t.scale(1.0 / n)
            } else {
                t
            }
        })
    }

    #[test]
    fn frame_pairings() {
        assert_eq!(pair(&Frame::e(1), &Frame::e(1)), 1.0);
        assert_eq!(pair(&Frame::e(5), &Frame::e(5)), -1.0);
        assert_eq!(pair(&Frame::q0(), &Frame::q_inf()), -1.0);
        assert_eq!(norm2(&Frame::q0()), 0.0);
        assert_eq!(norm2(&Frame::q_inf()), 0.0);
        assert_eq!(norm2(&Frame::p()), -1.0);
        assert_eq!(pair(&Frame::p(), &Frame::q0()), 0.0);
        assert_eq!(pair(&Frame::p(), &Frame::q_inf()), 0.0);
    }

    #[test]
    fn wedge_action() {
        let w = wedge(&Frame::e(1), &Frame::e(2));
        assert_eq!(w.apply(&Frame::e(1)), Frame::e(2));
        assert_eq!(w.apply(&Frame::e(2)), -Frame::e(1));
        let a = MinkVector::new(1.0, -2.0, 0.5, 3.0, 1.0, -1.0);
        assert_eq!(wedge(&a, &a), SkewOperator::zero());
        // (e5,e5) = -1: e5∧e1 (e5) = (e5,e5) e1 - (e1,e5) e5 = -e1
        let w = wedge(&Frame::e(5), &Frame::e(1));
        assert_eq!(w.apply(&Frame::e(5)), -Frame::e(1));
    }

    #[test]
    fn sym_values() {
        let e1 = Frame::e(1);
        assert_eq!(sym(&e1, &e1).eval(&e1, &e1), 1.0);
        let a = MinkVector::new(1.0, 0.0, 2.0, -1.0, 0.5, 3.0);
        let b = MinkVector::new(0.0, 1.0, -1.0, 2.0, 1.0, 0.0);
        assert_eq!(sym(&a, &b), sym(&b, &a));
        let v = Frame::q0() + Frame::e(2);
        let w = Frame::p() - Frame::e(3);
        let expect = 0.5 * (pair(&a, &v) * pair(&b, &w) + pair(&a, &w) * pair(&b, &v));
        assert_abs_diff_eq!(sym(&a, &b).eval(&v, &w), expect, epsilon = 1e-14);
    }

    #[test]
    fn gamma_basics() {
        let l = Frame::q0();
        let lh = Frame::q_inf();
        let id = gamma_transform(&l, &lh, 1.0).unwrap();
        assert_abs_diff_eq!(id, Map6::identity(), epsilon = 1e-15);
        let g = gamma_transform(&l, &lh, 3.0).unwrap();
        assert_abs_diff_eq!(g * lh, lh * 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g * l, l / 3.0, epsilon = 1e-14);
        for i in [1, 2, 3, 6] {
            assert_abs_diff_eq!(g * Frame::e(i), Frame::e(i), epsilon = 1e-15);
        }
        let inv = gamma_transform(&l, &lh, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(g * inv, Map6::identity(), epsilon = 1e-13);
        assert!(orthogonality_defect(&g) < 1e-12);
        assert_eq!(
            gamma_transform(&l, &Frame::q0(), 2.0),
            Err(LieError::DegeneratePair)
        );
    }

    #[test]
    fn exp_identity_and_nilpotent() {
        assert_eq!(exp_skew(&SkewOperator::zero(), 2.0), Map6::identity());
        // lifted contact element at x = (1, 2, 0), n = e3
        let x = Vector3::new(1.0, 2.0, 0.0);
        let n = Vector3::new(0.0, 0.0, 1.0);
        let f = Frame::embed(&x) + Frame::q0() + Frame::q_inf() * (0.5 * x.norm_squared());
        let t = Frame::embed(&n) + Frame::q_inf() * n.dot(&x) + Frame::p();
        let tau = wedge(&f, &t).scale(0.7);
        assert!((tau.matrix() * tau.matrix()).amax() < 1e-14);
        assert_eq!(exp_skew(&tau, 1.0), Map6::identity() + tau.matrix());
    }

    #[test]
    fn exp_matches_pade() {
        let tau = wedge(
            &MinkVector::new(1.0, 0.3, -0.2, 0.5, 0.7, 0.1),
            &MinkVector::new(0.2, -1.0, 0.4, 0.3, -0.5, 0.9),
        ) + wedge(&Frame::e(3), &Frame::e(6)).scale(2.5);
        let ours = exp_skew(&tau, 1.3);
        let reference = (tau.matrix() * 1.3).exp();
        assert_abs_diff_eq!(ours, reference, epsilon = 1e-11 * reference.amax());
        assert!(orthogonality_defect(&ours) < 1e-10);
    }

    #[test]
    fn reorthogonalize_recovers() {
        let tau = wedge(&Frame::e(1), &Frame::e(5)) + wedge(&Frame::e(2), &Frame::e(4));
        let r = exp_skew(&tau, 0.8);
        let perturbed = r + Map6::from_fn(|i, j| 1e-7 * ((i * 7 + j * 3) % 5) as f64);
        assert!(orthogonality_defect(&perturbed) > 1e-8);
        let fixed = reorthogonalize(&perturbed, 1e-12);
        assert!(orthogonality_defect(&fixed) < 1e-12);
        assert!((fixed - r).amax() < 1e-6);
    }

    #[test]
    fn null_direction_examples() {
        let e = Frame::e;
        for ang in [0.0, 0.4, 2.0, 3.5] {
            let v = null_directions_in(&[e(4), e(5)], [ang, 0.3]).unwrap();
            assert!(norm2(&v).abs() < 1e-14);
            assert!(v[0] == 0.0 && v[5] == 0.0);
            assert_abs_diff_eq!(v[3].abs(), v[4].abs(), epsilon = 1e-14);
        }
        assert_eq!(
            null_directions_in(&[e(1), e(2)], [0.0, 0.0]),
            Err(LieError::NoNullVectors)
        );
        let v = null_directions_in(&[e(1), e(5)], [0.0, 0.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(v, MinkVector::new(s, 0.0, 0.0, 0.0, s, 0.0), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn wedge_is_antisymmetric_and_skew(a in vec6(), b in vec6(), c in vec6(), d in vec6()) {
            let w = wedge(&a, &b);
            let lhs = w.apply(&c) + wedge(&b, &a).apply(&c);
            prop_assert!(lhs.amax() < 1e-12);
            prop_assert!((pair(&w.apply(&c), &d) + pair(&c, &w.apply(&d))).abs() < 1e-12);
            let expect = b * pair(&a, &c) - a * pair(&b, &c);
            prop_assert!((w.apply(&c) - expect).amax() < 1e-12);
            prop_assert!(SkewOperator::from_matrix(*w.matrix()).is_some());
        }

        #[test]
        fn gamma_preserves_pairing(
            l in vec6(), lh in vec6(), u in vec6(), w in vec6(), t in 0.2f64..5.0
        ) {
            // project the seeds onto the lightcone by flipping the timelike part
            let null = |v: MinkVector| {
                let sp = (v[0]*v[0] + v[1]*v[1] + v[2]*v[2] + v[3]*v[3]).sqrt();
                let tp = (v[4]*v[4] + v[5]*v[5]).sqrt();
                let mut n = v;
                for i in 4..6 { n[i] *= sp / tp.max(1e-9); }
                n
            };
            let (l, lh) = (null(l), null(lh));
            prop_assume!(pair(&l, &lh).abs() > 1e-2);
            let g = gamma_transform(&l, &lh, t).unwrap();
            prop_assert!((pair(&(g * u), &(g * w)) - pair(&u, &w)).abs() < 1e-10 * (1.0 + u.norm() * w.norm()) * (t + 1.0 / t));
            let back = gamma_transform(&l, &lh, 1.0 / t).unwrap() * g * u;
            prop_assert!((back - u).amax() < 1e-9 * (1.0 + u.amax()) * (t + 1.0 / t));
        }

        #[test]
        fn exp_is_one_parameter_group(tau in skew_small(), s in -1.0f64..1.0, t in -1.0f64..1.0) {
            let lhs = exp_skew(&tau, s) * exp_skew(&tau, t);
            let rhs = exp_skew(&tau, s + t);
            prop_assert!((lhs - rhs).amax() < 1e-9);
            prop_assert!(orthogonality_defect(&exp_skew(&tau, 1.0)) < 1e-10);
        }

        #[test]
        fn null_direction_is_null_and_in_span(
            a in vec6(), th in 0.0f64..6.3, ph in 0.0f64..6.3
        ) {
            // span(a, e5, e1, e6) always carries mixed signature
            let basis = [a, Frame::e(5), Frame::e(1), Frame::e(6)];
            let v = null_directions_in(&basis, [th, ph]).unwrap();
            prop_assert!(norm2(&v).abs() < 1e-10);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn complement_is_orthogonal_with_right_dimension(a in vec6(), b in vec6()) {
            prop_assume!(independent(&a, &b));
            let c = orthogonal_complement(&[a, b]);
            prop_assert_eq!(c.len(), 4);
            for v in &c {
                prop_assert!(pair(v, &a).abs() < 1e-10 * a.norm());
                prop_assert!(pair(v, &b).abs() < 1e-10 * b.norm());
            }
        }
    }
}
