//! Closed-form algebra and geometry of the Heisenberg group ℍ ≅ ℝ³ and its
//! Lie algebra 𝔥.
//!
//! Group law: `(v₁, z₁)·(v₂, z₂) = (v₁ + v₂, z₁ + z₂ + ½ω(v₁, v₂))` with the
//! symplectic form `ω(v₁, v₂) = x₁y₂ − x₂y₁`.
//!
//! Left translation follows the convention `L_k(g) = k⁻¹g` throughout, so the
//! left Maurer-Cartan form at `k` is the differential of `g ↦ k⁻¹g`.

use serde::{Deserialize, Serialize};
use std::ops::Mul;

/// Standard symplectic form on ℝ².
#[inline]
pub fn omega(p: [f64; 2], q: [f64; 2]) -> f64 {
    p[0] * q[1] - q[0] * p[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupElement {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlgebraVector {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// A tangent vector `v ∈ T_gℍ` in the coordinate frame ∂x, ∂y, ∂z.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    pub base: GroupElement,
    pub v: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn planar(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn multiply(&self, other: &GroupElement) -> GroupElement {
        multiply(*self, *other)
    }

    #[inline]
    pub fn inverse(&self) -> GroupElement {
        inverse(*self)
    }

    /// Homogeneous quasi-norm `N(x, y, z) = (x² + y² + |z|)^{1/2}`.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z.abs()
    }

    /// Anisotropic dilation `δ_λ(x, y, z) = (λx, λy, λ²z)`.
    pub fn dilate(&self, lambda: f64) -> GroupElement {
        GroupElement::new(lambda * self.x, lambda * self.y, lambda * lambda * self.z)
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;

    fn mul(self, rhs: GroupElement) -> GroupElement {
        multiply(self, rhs)
    }
}

impl AlgebraVector {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    #[inline]
    pub fn horizontal(&self) -> [f64; 2] {
        [self.a, self.b]
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

impl TangentVector {
    pub fn new(base: GroupElement, v: [f64; 3]) -> Self {
        Self { base, v }
    }

    #[inline]
    fn planar(&self) -> [f64; 2] {
        [self.v[0], self.v[1]]
    }
}

#[inline]
pub fn multiply(g1: GroupElement, g2: GroupElement) -> GroupElement {
    GroupElement { x: g1.x + g2.x, y: g1.y + g2.y, z: g1.z + g2.z + 0.5 * omega(g1.planar(), g2.planar()) }
}

#[inline]
pub fn inverse(g: GroupElement) -> GroupElement {
    GroupElement::new(-g.x, -g.y, -g.z)
}

/// Differential of left (`g ↦ k⁻¹g`) or right (`g ↦ gk`) multiplication by `k`.
///
/// Both differentials share the same coordinate formula
/// `(v₁, v₂, v₃ + ½ω(v, k))`; they differ only in the base point of the
/// result.
pub fn translate_differential(side: Side, k: GroupElement, v: TangentVector) -> TangentVector {
    let base = match side {
        Side::Left => multiply(inverse(k), v.base),
        Side::Right => multiply(v.base, k),
    };
    let p = v.planar();
    TangentVector { base, v: [p[0], p[1], v.v[2] + 0.5 * omega(p, k.planar())] }
}

/// Adjoint representation `Ad_k(a, b, c) = (a, b, c + ω(a, k))`.
pub fn adjoint(k: GroupElement, h: AlgebraVector) -> AlgebraVector {
    AlgebraVector::new(h.a, h.b, h.c + omega(h.horizontal(), k.planar()))
}

pub fn bracket(h1: AlgebraVector, h2: AlgebraVector) -> AlgebraVector {
    AlgebraVector::new(0.0, 0.0, omega(h1.horizontal(), h2.horizontal()))
}

/// Value at `g` of the left-invariant field generated by `h`:
/// `(a, b, c + ½ω(x, a))`.
pub fn left_invariant_field(h: AlgebraVector, g: GroupElement) -> TangentVector {
    TangentVector { base: g, v: [h.a, h.b, h.c + 0.5 * omega(g.planar(), h.horizontal())] }
}

/// Integral curve of the left-invariant field `h̃` through `g`, evaluated at
/// `t`. This is `g·(th)`, whose vertical part is `z + ct + (t/2)ω(𝐱, 𝐚)`.
pub fn integral_curve(h: AlgebraVector, g: GroupElement, t: f64) -> GroupElement {
    GroupElement::new(g.x + h.a * t, g.y + h.b * t, g.z + h.c * t + 0.5 * t * omega(g.planar(), h.horizontal()))
}

/// The exponential map is the coordinate identity on ℍ.
pub fn exp_map(h: AlgebraVector) -> GroupElement {
    GroupElement::new(h.a, h.b, h.c)
}

/// Left or right Maurer-Cartan form at `k` applied to `v`.
pub fn maurer_cartan(side: Side, k: GroupElement, v: TangentVector) -> AlgebraVector {
    let p = v.planar();
    let twist = 0.5 * omega(p, k.planar());
    match side {
        Side::Left => AlgebraVector::new(p[0], p[1], v.v[2] + twist),
        Side::Right => AlgebraVector::new(p[0], p[1], v.v[2] - twist),
    }
}

/// Left-invariant homogeneous quasi-distance `N(g₁⁻¹g₂)`.
pub fn homogeneous_distance(g1: GroupElement, g2: GroupElement) -> f64 {
    multiply(inverse(g1), g2).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(x: f64, y: f64, z: f64) -> GroupElement {
        GroupElement::new(x, y, z)
    }

    #[test]
    fn multiply_examples() {
        assert_eq!(g(0., 0., 0.) * g(3., -1., 2.), g(3., -1., 2.));
        assert_eq!(g(1., 0., 0.) * g(0., 1., 0.), g(1., 1., 0.5));
        assert_eq!(g(1., 2., 3.) * g(-1., -2., -3.), GroupElement::IDENTITY);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(GroupElement::IDENTITY), GroupElement::IDENTITY);
        assert_eq!(inverse(g(1., 2., 3.)), g(-1., -2., -3.));
    }

    #[test]
    fn translate_differential_examples() {
        let base = g(0.3, -0.7, 1.1);
        let v = TangentVector::new(base, [0.0, 1.0, 0.0]);
        for side in [Side::Left, Side::Right] {
            let same = translate_differential(side, GroupElement::IDENTITY, v);
            assert_eq!(same.v, v.v);
            let moved = translate_differential(side, g(2., 0., 0.), v);
            assert_eq!(moved.v, [0.0, 1.0, -1.0]);
        }
        let left = translate_differential(Side::Left, g(2., 0., 0.), v);
        let right = translate_differential(Side::Right, g(2., 0., 0.), v);
        assert_eq!(left.base, inverse(g(2., 0., 0.)) * base);
        assert_eq!(right.base, base * g(2., 0., 0.));
    }

    #[test]
    fn adjoint_examples() {
        let h = AlgebraVector::new(0.0, 1.0, 0.0);
        assert_eq!(adjoint(GroupElement::IDENTITY, h), h);
        assert_eq!(adjoint(g(1., 0., 0.), h), AlgebraVector::new(0., 1., -1.));
    }

    #[test]
    fn bracket_examples() {
        let x = AlgebraVector::new(1., 0., 0.);
        let y = AlgebraVector::new(0., 1., 0.);
        assert_eq!(bracket(x, y), AlgebraVector::new(0., 0., 1.));
        let h = AlgebraVector::new(0.4, -2.0, 1.5);
        assert_eq!(bracket(h, h), AlgebraVector::default());
        assert_eq!(bracket(bracket(x, y), h), AlgebraVector::default());
    }

    #[test]
    fn frame_matches_coordinate_fields() {
        let (x, y, z) = (1.7, -0.4, 2.2);
        let p = g(x, y, z);
        // X = ∂x − ½y∂z, Y = ∂y + ½x∂z, Z = ∂z
        assert_eq!(left_invariant_field(AlgebraVector::new(1., 0., 0.), p).v, [1., 0., -0.5 * y]);
        assert_eq!(left_invariant_field(AlgebraVector::new(0., 1., 0.), p).v, [0., 1., 0.5 * x]);
        assert_eq!(left_invariant_field(AlgebraVector::new(0., 0., 1.), p).v, [0., 0., 1.]);
        let h = AlgebraVector::new(0.2, 0.3, 0.4);
        assert_eq!(left_invariant_field(h, GroupElement::IDENTITY).v, [0.2, 0.3, 0.4]);
    }

    #[test]
    fn integral_curve_examples() {
        let h = AlgebraVector::new(1.5, -2.0, 0.25);
        let t = 0.7;
        let c = integral_curve(h, GroupElement::IDENTITY, t);
        assert_eq!(c, g(1.5 * t, -2.0 * t, 0.25 * t));
        let start = g(0.1, 0.2, 0.3);
        assert_eq!(integral_curve(h, start, 0.0), start);
    }

    #[test]
    fn integral_curve_derivative_matches_field() {
        // centered differences, O(Δt²) truncation
        let h = AlgebraVector::new(0.8, -1.3, 0.6);
        let start = g(-0.5, 1.2, 0.9);
        let t = 0.37;
        for &dt in &[1e-2, 1e-3] {
            let p = integral_curve(h, start, t + dt);
            let m = integral_curve(h, start, t - dt);
            let fd = [(p.x - m.x) / (2. * dt), (p.y - m.y) / (2. * dt), (p.z - m.z) / (2. * dt)];
            let field = left_invariant_field(h, integral_curve(h, start, t)).v;
            for i in 0..3 {
                assert!((fd[i] - field[i]).abs() < 10.0 * dt * dt, "{fd:?} vs {field:?}");
            }
        }
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_map(AlgebraVector::default()), GroupElement::IDENTITY);
        assert_eq!(exp_map(AlgebraVector::new(1., 2., 3.)), g(1., 2., 3.));
    }

    #[test]
    fn maurer_cartan_examples() {
        let v = TangentVector::new(g(0.5, 0.5, 0.5), [1., 0., 0.]);
        for side in [Side::Left, Side::Right] {
            assert_eq!(maurer_cartan(side, GroupElement::IDENTITY, v), AlgebraVector::new(1., 0., 0.));
        }
        assert_eq!(maurer_cartan(Side::Left, g(0., 1., 0.), v), AlgebraVector::new(1., 0., 0.5));
        assert_eq!(maurer_cartan(Side::Right, g(0., 1., 0.), v), AlgebraVector::new(1., 0., -0.5));
    }

    #[test]
    fn homogeneous_distance_examples() {
        let p = g(0.3, 0.1, -2.0);
        assert_eq!(homogeneous_distance(p, p), 0.0);
        assert_eq!(homogeneous_distance(GroupElement::IDENTITY, g(3., 4., 0.)), 5.0);
        assert_eq!(homogeneous_distance(GroupElement::IDENTITY, g(0., 0., 4.)), 2.0);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -10.0..10.0f64
    }

    fn element() -> impl Strategy<Value = GroupElement> {
        (coord(), coord(), coord()).prop_map(|(x, y, z)| g(x, y, z))
    }

    fn algebra() -> impl Strategy<Value = AlgebraVector> {
        (coord(), coord(), coord()).prop_map(|(a, b, c)| AlgebraVector::new(a, b, c))
    }

    proptest! {
        #[test]
        fn inverse_is_involution(p in element()) {
            prop_assert_eq!(inverse(inverse(p)), p);
            let e = p * inverse(p);
            prop_assert!(e.norm_sq() < 1e-12);
        }

        #[test]
        fn left_and_right_differentials_agree(k in element(), base in element(), v in (coord(), coord(), coord())) {
            let tv = TangentVector::new(base, [v.0, v.1, v.2]);
            prop_assert_eq!(
                translate_differential(Side::Left, k, tv).v,
                translate_differential(Side::Right, k, tv).v
            );
        }

        #[test]
        fn adjoint_round_trip(k in element(), h in algebra()) {
            let back = adjoint(k, adjoint(inverse(k), h));
            prop_assert!((back.c - h.c).abs() < 1e-10);
            prop_assert_eq!((back.a, back.b), (h.a, h.b));
        }

        #[test]
        fn integral_curve_flow(h in algebra(), start in element(), t in -3.0..3.0f64, s in -3.0..3.0f64) {
            let direct = integral_curve(h, start, t + s);
            let composed = integral_curve(h, integral_curve(h, start, t), s);
            prop_assert!((direct.x - composed.x).abs() < 1e-12 * (1.0 + direct.x.abs()));
            prop_assert!((direct.y - composed.y).abs() < 1e-12 * (1.0 + direct.y.abs()));
            prop_assert!((direct.z - composed.z).abs() < 1e-12 * (1.0 + direct.z.abs()) * 10.0);
        }

        #[test]
        fn exp_is_time_one_flow(h in algebra()) {
            prop_assert_eq!(exp_map(h), integral_curve(h, GroupElement::IDENTITY, 1.0));
        }

        #[test]
        fn maurer_cartan_relation(k in element(), base in element(), v in (coord(), coord(), coord())) {
            let tv = TangentVector::new(base, [v.0, v.1, v.2]);
            let right = maurer_cartan(Side::Right, k, tv);
            let via_left = adjoint(inverse(k), maurer_cartan(Side::Left, k, tv));
            prop_assert!((right.c - via_left.c).abs() < 1e-10);
        }

        #[test]
        fn distance_symmetric(a in element(), b in element()) {
            let d1 = homogeneous_distance(a, b);
            let d2 = homogeneous_distance(b, a);
            prop_assert!((d1 - d2).abs() < 1e-10);
        }
    }
}
