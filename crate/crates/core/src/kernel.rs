//! The interaction kernel `|z|^-(1+2s)` and every integral built on it.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::domain::{Element, Interval, Mesh, RegionKind, ValidatedRegion};
use crate::quadrature::{End, Quadrature, QuadratureError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel evaluated at zero separation")]
    Singularity,
    #[error("fractional order s = {0} must lie in (0, 1)")]
    Domain(f64),
    #[error("point {0} lies on the closure of the Dirichlet region")]
    Contact(f64),
    #[error("element pair ({0}, {1}) lies in Ωᶜ × Ωᶜ and is excluded from the energy")]
    Admissibility(usize, usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Off,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub s: f64,
    pub normalization: Normalization,
    /// Value of C_{1,s}; meaningful only when normalization is on.
    pub c_ns: f64,
}

impl KernelParams {
    pub fn new(s: f64, normalization: Normalization) -> Result<Self, KernelError> {
        let c_ns = normalization_constant(s)?;
        Ok(Self {
            s,
            normalization,
            c_ns,
        })
    }

    /// Multiplier applied to the bare kernel.
    pub fn scale(&self) -> f64 {
        match self.normalization {
            Normalization::Off => 1.0,
            Normalization::On => self.c_ns,
        }
    }

    /// Exponent `1 + 2s` of the 1D kernel.
    pub fn exponent(&self) -> f64 {
        1.0 + 2.0 * self.s
    }

    fn bare(&self, z: f64) -> f64 {
        z.abs().powf(-self.exponent())
    }
}

pub fn kernel_eval(z: f64, params: &KernelParams) -> Result<f64, KernelError> {
    if z == 0.0 {
        return Err(KernelError::Singularity);
    }
    Ok(params.scale() * params.bare(z))
}

/// C_{1,s} = s 4^s Γ(1/2 + s) / (√π Γ(1 − s)), the constant making the
/// singular integral agree with the Fourier symbol |ξ|^{2s}.
pub fn normalization_constant(s: f64) -> Result<f64, KernelError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(KernelError::Domain(s));
    }
    Ok(s * 4f64.powf(s) * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s)))
}

/// κ_𝒟(x) = ∫_𝒟 K(x − y) dy in closed form, summed over the Dirichlet components.
pub fn kappa_tail(
    x: f64,
    region: &ValidatedRegion,
    params: &KernelParams,
) -> Result<f64, KernelError> {
    let two_s = 2.0 * params.s;
    let mut acc = 0.0;
    for d in region.dirichlet() {
        if d.contains_closed(x) {
            return Err(KernelError::Contact(x));
        }
        let (near, far) = if d.left > x {
            (d.left - x, d.right - x)
        } else {
            (x - d.right, x - d.left)
        };
        acc += (near.powf(-two_s) - far.powf(-two_s)) / two_s;
    }
    Ok(params.scale() * acc)
}

/// How two integration segments sit relative to each other.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairGeometry {
    Identical,
    /// First segment ends where the second starts.
    Touching,
    /// Second segment ends where the first starts.
    TouchingReversed,
    Separated,
}

fn classify(a: (f64, f64), b: (f64, f64)) -> PairGeometry {
    if a == b {
        PairGeometry::Identical
    } else if a.1 == b.0 {
        PairGeometry::Touching
    } else if b.1 == a.0 {
        PairGeometry::TouchingReversed
    } else {
        PairGeometry::Separated
    }
}

/// ∬_{A×B} f(x, y) K(x − y) dx dy for segments `A`, `B` that coincide, touch, or
/// are disjoint, where `f` vanishes to second order wherever x = y in A×B.
/// Returns the bare (unnormalized) kernel integral.
pub fn singular_pair_integral<const N: usize>(
    seg_a: (f64, f64),
    seg_b: (f64, f64),
    s: f64,
    quad: &Quadrature,
    f: &impl Fn(f64, f64) -> [f64; N],
) -> Result<[f64; N], QuadratureError> {
    let p = 1.0 + 2.0 * s;
    match classify(seg_a, seg_b) {
        PairGeometry::Identical => {
            // x − y = ±t; the inner x-integral of a polynomial is exact.
            let (a, b) = seg_a;
            let g = |t: f64| {
                let (inner, _) = quad.gauss(a, b - t, &|x| {
                    let mut v = f(x + t, x);
                    let w = f(x, x + t);
                    for (vi, wi) in v.iter_mut().zip(w) {
                        *vi += wi;
                    }
                    v
                });
                let k = t.powf(-p);
                inner.map(|v| v * k)
            };
            quad.toward_singular(0.0, b - a, End::Left, 1.0 - 2.0 * s, &g)
        }
        PairGeometry::Touching => touching(seg_a, seg_b, s, quad, f),
        PairGeometry::TouchingReversed => touching(seg_b, seg_a, s, quad, &|x, y| f(y, x)),
        PairGeometry::Separated => quad.adaptive2(seg_a, seg_b, &|x, y| {
            f(x, y).map(|v| v * (x - y).abs().powf(-p))
        }),
    }
}

/// Left segment `[c − h1, c]`, right segment `[c, c + h2]`; Duffy split at the
/// shared corner so the kernel singularity factors out as ρ^-(1+2s).
fn touching<const N: usize>(
    left: (f64, f64),
    right: (f64, f64),
    s: f64,
    quad: &Quadrature,
    f: &impl Fn(f64, f64) -> [f64; N],
) -> Result<[f64; N], QuadratureError> {
    let c = left.1;
    let h1 = c - left.0;
    let h2 = right.1 - c;
    let p = 1.0 + 2.0 * s;
    let g = |rho: f64| {
        let (inner, _) = quad.gauss(0.0, 1.0, &|w| {
            let mut v = f(c - h1 * rho, c + h2 * rho * w);
            let k1 = (rho * (h1 + h2 * w)).powf(-p);
            let u = f(c - h1 * rho * w, c + h2 * rho);
            let k2 = (rho * (h1 * w + h2)).powf(-p);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi = *vi * k1 + ui * k2;
            }
            v
        });
        let jac = h1 * h2 * rho;
        inner.map(|v| v * jac)
    };
    quad.toward_singular(0.0, 1.0, End::Left, 2.0 - 2.0 * s, &g)
}

/// Local Gagliardo matrix of an element pair over the hats of the union of
/// their nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMatrix {
    pub nodes: [usize; 4],
    pub len: usize,
    /// Row-major `len × len` block stored in a 4×4 array.
    pub values: [f64; 16],
}

impl PairMatrix {
    pub fn entry(&self, node_a: usize, node_b: usize) -> f64 {
        let pos = |n| self.nodes[..self.len].iter().position(|&m| m == n);
        match (pos(node_a), pos(node_b)) {
            (Some(i), Some(j)) => self.values[4 * i + j],
            _ => 0.0,
        }
    }
}

/// ∬_{E×F} (φ_a(x) − φ_a(y))(φ_b(x) − φ_b(y)) K(x − y) for every pair of hats
/// living on E or F. No admissibility check; see [`gagliardo_pair_integral`].
pub fn element_pair_matrix(
    elem_a: &Element,
    elem_b: &Element,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<PairMatrix, QuadratureError> {
    // Canonical order keeps swapped calls bitwise identical.
    let (ea, eb) = if elem_a.index <= elem_b.index {
        (elem_a, elem_b)
    } else {
        (elem_b, elem_a)
    };
    let mut nodes = [usize::MAX; 4];
    let mut len = 0;
    for n in ea.nodes.iter().chain(&eb.nodes) {
        if !nodes[..len].contains(n) {
            nodes[len] = *n;
            len += 1;
        }
    }
    let f = |x: f64, y: f64| {
        let mut d = [0.0; 4];
        for k in 0..len {
            d[k] = ea.hat(nodes[k], x) - eb.hat(nodes[k], y);
        }
        let mut out = [0.0; 16];
        for i in 0..len {
            for j in 0..len {
                out[4 * i + j] = d[i] * d[j];
            }
        }
        out
    };
    let raw = singular_pair_integral((ea.left, ea.right), (eb.left, eb.right), params.s, quad, &f)?;
    let scale = params.scale();
    Ok(PairMatrix {
        nodes,
        len,
        values: raw.map(|v| v * scale),
    })
}

/// Single entry of the element-pair Gagliardo integral for the hats of global
/// nodes `shape_a` and `shape_b`. Pairs with both elements outside Ω are not
/// part of the energy.
pub fn gagliardo_pair_integral(
    elem_a: &Element,
    elem_b: &Element,
    shape_a: usize,
    shape_b: usize,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, KernelError> {
    if elem_a.region != RegionKind::Omega && elem_b.region != RegionKind::Omega {
        return Err(KernelError::Admissibility(elem_a.index, elem_b.index));
    }
    Ok(element_pair_matrix(elem_a, elem_b, params, quad)?.entry(shape_a, shape_b))
}

/// A real function on the line used by the pointwise operators.
pub trait ScalarFunction: Sync {
    fn value(&self, x: f64) -> f64;

    /// Closed interval outside of which the function vanishes, if any.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<F: Fn(f64) -> f64 + Sync> ScalarFunction for F {
    fn value(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Wraps a function with a declared compact support.
pub struct Supported<F> {
    pub f: F,
    pub support: (f64, f64),
}

impl<F: Fn(f64) -> f64 + Sync> ScalarFunction for Supported<F> {
    fn value(&self, x: f64) -> f64 {
        let (a, b) = self.support;
        if x < a || x > b {
            0.0
        } else {
            (self.f)(x)
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        Some(self.support)
    }
}

const MAX_SHELLS: usize = 400;

/// (−Δ)^s u(x) through the symmetrized principal value
/// ∫_0^∞ (2u(x) − u(x+z) − u(x−z)) z^-(1+2s) dz.
///
/// Beyond the outer radius only the `2u(x)` term survives and is added in
/// closed form. For functions without declared support the radius doubles
/// until that tail bound falls below a tenth of the tolerance.
pub fn fractional_laplacian_pointwise(
    u: &dyn ScalarFunction,
    x: f64,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, KernelError> {
    let s = params.s;
    let p = params.exponent();
    let ux = u.value(x);
    let g = |z: f64| [(2.0 * ux - u.value(x + z) - u.value(x - z)) * z.powf(-p)];
    let tail = |r: f64| ux * r.powf(-2.0 * s) / s;

    let total = match u.support() {
        Some((a, b)) => {
            let r_out = (x - a).abs().max((b - x).abs());
            if r_out == 0.0 {
                return Ok(0.0);
            }
            let mut breaks: Vec<f64> = [(x - a).abs(), (b - x).abs()]
                .into_iter()
                .filter(|&d| d > 0.0 && d < r_out)
                .collect();
            breaks.push(r_out);
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let inside = x > a && x < b;
            let mut acc = if inside {
                quad.toward_singular(0.0, breaks[0], End::Left, 1.0 - 2.0 * s, &g)?[0]
            } else {
                // x outside the open support: no cancellation at z = 0.
                quad.adaptive(0.0, breaks[0], &g)?[0]
            };
            for w in breaks.windows(2) {
                acc += quad.adaptive(w[0], w[1], &g)?[0];
            }
            acc + tail(r_out)
        }
        None => {
            let mut r = 1.0;
            let mut acc = quad.toward_singular(0.0, r, End::Left, 1.0 - 2.0 * s, &g)?[0];
            let mut shells = 0;
            loop {
                let shell = quad.adaptive(r, 2.0 * r, &g)?[0];
                acc += shell;
                r *= 2.0;
                shells += 1;
                let m = ux.abs().max(u.value(x + r).abs()).max(u.value(x - r).abs());
                let bound = 2.0 * m * r.powf(-2.0 * s) / s;
                let scale = (acc + tail(r)).abs().max(ux.abs());
                if bound <= 0.1 * quad.rel_tol() * scale || (m == 0.0 && shell == 0.0) {
                    break;
                }
                if shells >= MAX_SHELLS {
                    return Err(QuadratureError::Tolerance {
                        a: 0.0,
                        b: r,
                        rel_tol: quad.rel_tol(),
                        max_depth: MAX_SHELLS,
                    }
                    .into());
                }
            }
            acc + tail(r)
        }
    };
    Ok(params.scale() * total)
}

/// ∫ over `seg` of `(ux − u(y)) K(x − y) dy` for `x` outside the segment,
/// grading the panels toward the end nearest `x`.
fn neumann_segment(
    seg: (f64, f64),
    x: f64,
    ux: f64,
    u: &impl Fn(f64) -> f64,
    p: f64,
    quad: &Quadrature,
) -> Result<f64, QuadratureError> {
    let (a, b) = seg;
    let g = |y: f64| [(ux - u(y)) * (x - y).abs().powf(-p)];
    let (dist, end) = if x >= b {
        (x - b, End::Right)
    } else {
        (a - x, End::Left)
    };
    let v = if dist < b - a {
        quad.graded(a, b, end, dist, &g)?
    } else {
        quad.adaptive(a, b, &g)?
    };
    Ok(v[0])
}

/// 𝒩_s u(x) = ∫_Ω (u(x) − u(y)) K(x − y) dy for the P1 function with the given
/// DOF values, at a point `x` of 𝒩.
pub fn nonlocal_neumann(
    dofs: &[f64],
    x: f64,
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, KernelError> {
    let nodal = mesh.expand(dofs);
    nonlocal_neumann_nodal(&nodal, x, mesh, params, quad)
}

/// As [`nonlocal_neumann`], taking values at every mesh node.
pub fn nonlocal_neumann_nodal(
    nodal: &[f64],
    x: f64,
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, KernelError> {
    let ux = mesh.interpolate(nodal, x);
    let p = params.exponent();
    let mut acc = 0.0;
    for e in mesh.elements_in(RegionKind::Omega) {
        if e.left <= x && x <= e.right {
            return Err(KernelError::Singularity);
        }
        let (va, vb) = (nodal[e.nodes[0]], nodal[e.nodes[1]]);
        let len = e.length();
        let u = |y: f64| va + (vb - va) * (y - e.left) / len;
        acc += neumann_segment((e.left, e.right), x, ux, &u, p, quad)?;
    }
    Ok(params.scale() * acc)
}

/// 𝒩_s u(x) for a smooth function `u` defined on the whole line.
pub fn nonlocal_neumann_fn(
    u: &dyn ScalarFunction,
    x: f64,
    omega: &[Interval],
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, KernelError> {
    let ux = u.value(x);
    let p = params.exponent();
    let mut acc = 0.0;
    for iv in omega {
        if iv.contains_closed(x) {
            return Err(KernelError::Singularity);
        }
        acc += neumann_segment((iv.left, iv.right), x, ux, &|y| u.value(y), p, quad)?;
    }
    Ok(params.scale() * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, validate_region, RegionSpec};
    use crate::quadrature::QuadratureConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad() -> Quadrature {
        Quadrature::new(QuadratureConfig::default()).unwrap()
    }

    fn off(s: f64) -> KernelParams {
        KernelParams::new(s, Normalization::Off).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(1.0, &off(0.3)).unwrap(), 1.0);
        assert_relative_eq!(
            kernel_eval(0.5, &off(0.5)).unwrap(),
            4.0,
            max_relative = 1e-15
        );
        assert_eq!(kernel_eval(0.0, &off(0.4)), Err(KernelError::Singularity));
    }

    #[test]
    fn normalization_constant_values() {
        assert_relative_eq!(
            normalization_constant(0.5).unwrap(),
            1.0 / std::f64::consts::PI,
            max_relative = 1e-12
        );
        // C_{1,s} ~ 2(1 − s) as s → 1.
        let c = normalization_constant(0.999).unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert_relative_eq!(c, 2.0 * 0.001, max_relative = 2e-2);
        assert_eq!(normalization_constant(1.2), Err(KernelError::Domain(1.2)));
        assert_eq!(normalization_constant(0.0), Err(KernelError::Domain(0.0)));
    }

    #[test]
    fn kappa_closed_forms() {
        let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[], 0.5)).unwrap();
        let p = off(0.5);
        assert_relative_eq!(kappa_tail(0.5, &r, &p).unwrap(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(
            kappa_tail(0.25, &r, &p).unwrap(),
            4.0 + 4.0 / 3.0,
            max_relative = 1e-14
        );
        let r2 = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[(1.0, 2.0)], 0.5)).unwrap();
        assert_relative_eq!(
            kappa_tail(0.5, &r2, &p).unwrap(),
            2.0 + 2.0 / 3.0,
            max_relative = 1e-14
        );
        assert_eq!(kappa_tail(0.0, &r, &p), Err(KernelError::Contact(0.0)));
    }

    #[test]
    fn kappa_is_additive_over_components() {
        // 𝒟 = (−∞,0) ∪ (1,2) ∪ (3,∞); compare with the single-ray pieces.
        let p = off(0.3);
        let full = validate_region(&RegionSpec::new(&[(0.0, 1.0), (2.0, 3.0)], &[], 0.3)).unwrap();
        let x: f64 = 0.4;
        let two_s: f64 = 0.6;
        let ray_left = x.powf(-two_s) / two_s;
        let gap = ((1.0 - x).powf(-two_s) - (2.0 - x).powf(-two_s)) / two_s;
        let ray_right = (3.0 - x).powf(-two_s) / two_s;
        assert_eq!(
            kappa_tail(x, &full, &p).unwrap(),
            ray_left + gap + ray_right
        );
    }

    #[test]
    fn identical_pair_closed_form() {
        // For hats on the same element the integrand is slope² |x−y|^{1−2s}.
        let q = quad();
        for &s in &[0.25, 0.5, 0.75] {
            let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[], s)).unwrap();
            let m = build_mesh(&r, 0.1).unwrap();
            let e = &m.elements()[3];
            let h = e.length();
            let v = gagliardo_pair_integral(e, e, e.nodes[0], e.nodes[0], &off(s), &q).unwrap();
            let pw = 1.0 - 2.0 * s;
            let exact = 2.0 * h.powf(pw + 2.0) / ((pw + 1.0) * (pw + 2.0)) / (h * h);
            assert_relative_eq!(v, exact, max_relative = 1e-8);
            let off_diag =
                gagliardo_pair_integral(e, e, e.nodes[0], e.nodes[1], &off(s), &q).unwrap();
            assert_relative_eq!(off_diag, -exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn separated_pair_is_stable_in_order() {
        let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[], 0.5)).unwrap();
        let m = build_mesh(&r, 0.1).unwrap();
        let (e0, e5) = (&m.elements()[0], &m.elements()[5]);
        let q8 = quad();
        let q16 = Quadrature::new(QuadratureConfig {
            gauss_order: 16,
            ..QuadratureConfig::default()
        })
        .unwrap();
        for (a, b) in [
            (e0.nodes[1], e5.nodes[0]),
            (e0.nodes[1], e0.nodes[1]),
            (e5.nodes[1], e5.nodes[0]),
        ] {
            let v8 = gagliardo_pair_integral(e0, e5, a, b, &off(0.5), &q8).unwrap();
            let v16 = gagliardo_pair_integral(e0, e5, a, b, &off(0.5), &q16).unwrap();
            assert!((v8 - v16).abs() <= 1e-10 * v16.abs(), "{v8} vs {v16}");
        }
    }

    #[test]
    fn neumann_pairs_are_inadmissible() {
        let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[(1.0, 1.5)], 0.5)).unwrap();
        let m = build_mesh(&r, 0.25).unwrap();
        let n: Vec<_> = m.elements_in(RegionKind::Neumann).collect();
        let err =
            gagliardo_pair_integral(n[0], n[1], n[0].nodes[1], n[0].nodes[1], &off(0.5), &quad());
        assert!(matches!(err, Err(KernelError::Admissibility(..))));
    }

    #[test]
    fn fractional_laplacian_of_gaussian() {
        // (−Δ)^{1/2} e^{−x²} at 0 = C_{1,1/2} · 2∫_0^∞ (1 − e^{−z²}) z^{−2} dz = (1/π) · 2√π.
        let p = KernelParams::new(0.5, Normalization::On).unwrap();
        let v = fractional_laplacian_pointwise(&|x: f64| (-x * x).exp(), 0.0, &p, &quad()).unwrap();
        assert_relative_eq!(v, 2.0 / std::f64::consts::PI.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn fractional_laplacian_of_constants() {
        let q = quad();
        assert_eq!(
            fractional_laplacian_pointwise(&|_x: f64| 0.0, 0.3, &off(0.4), &q).unwrap(),
            0.0
        );
        let v = fractional_laplacian_pointwise(&|_x: f64| 3.0, 0.3, &off(0.5), &q).unwrap();
        assert!(v.abs() < 1e-7, "{v}");
    }

    #[test]
    fn neumann_of_function_vanishing_on_omega() {
        // u = hat at x inside 𝒩, zero on Ω: 𝒩_s u(x) = u(x) ∫_Ω K.
        let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[(1.0, 1.5)], 0.5)).unwrap();
        let m = build_mesh(&r, 0.125).unwrap();
        let node = m.nodes().iter().position(|&p| p == 1.25).unwrap();
        let mut dofs = vec![0.0; m.n_dofs()];
        dofs[m.dof(node).unwrap()] = 1.0;
        let v = nonlocal_neumann(&dofs, 1.25, &m, &off(0.5), &quad()).unwrap();
        // ∫_0^1 (1.25 − y)^{−2} dy = 1/0.25 − 1/1.25
        assert_relative_eq!(v, 4.0 - 0.8, max_relative = 1e-8);
        let zero = nonlocal_neumann(&vec![0.0; m.n_dofs()], 1.3, &m, &off(0.5), &quad()).unwrap();
        assert_eq!(zero, 0.0);
    }

    proptest! {
        #[test]
        fn kernel_is_even(z in 1e-6f64..1e3, s in 0.01f64..0.99) {
            let p = off(s);
            prop_assert_eq!(kernel_eval(z, &p).unwrap(), kernel_eval(-z, &p).unwrap());
        }

        #[test]
        fn pair_integral_swap_symmetry(i in 0usize..8, j in 0usize..8, a in 0usize..3, b in 0usize..3, s in 0.1f64..0.9) {
            let r = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[(1.0, 1.5)], s)).unwrap();
            let m = build_mesh(&r, 0.125).unwrap();
            let (ei, ej) = (&m.elements()[i], &m.elements()[j]);
            let nodes = [ei.nodes[0], ei.nodes[1], ej.nodes[a % 2]];
            let (na, nb) = (nodes[a], nodes[b]);
            let q = quad();
            let v1 = gagliardo_pair_integral(ei, ej, na, nb, &off(s), &q).unwrap();
            let v2 = gagliardo_pair_integral(ej, ei, nb, na, &off(s), &q).unwrap();
            prop_assert_eq!(v1, v2);
            if na == nb && ei.nodes.contains(&na) {
                let d = gagliardo_pair_integral(ei, ei, na, na, &off(s), &q).unwrap();
                prop_assert!(d > 0.0);
            }
        }
    }
}
