//! Gauss-Legendre panel quadrature with adaptive bisection and dyadic
//! refinement toward endpoint singularities.
//!
//! Integrands return fixed-size arrays so a whole local element matrix can be
//! integrated in one pass. All drivers visit panels in a fixed order, so results
//! are bitwise reproducible.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature config: {0}")]
    Config(String),
    #[error("tolerance {rel_tol:e} not reached on [{a}, {b}] within depth {max_depth}")]
    Tolerance {
        a: f64,
        b: f64,
        rel_tol: f64,
        max_depth: usize,
    },
}

/// Bisection depth after which a stalled error estimate is treated as roundoff.
const NOISE_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub gauss_order: usize,
    pub rel_tol: f64,
    pub max_depth: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            gauss_order: 8,
            rel_tol: 1e-8,
            max_depth: 30,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.gauss_order < 2 {
            return Err(QuadratureError::Config(format!(
                "gauss_order = {} must be at least 2",
                self.gauss_order
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(QuadratureError::Config(format!(
                "rel_tol = {} must lie in (0, 1)",
                self.rel_tol
            )));
        }
        if self.max_depth < 1 {
            return Err(QuadratureError::Config(
                "max_depth must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which end of a segment carries the singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Left,
    Right,
}

fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn add<const N: usize>(acc: &mut [f64; N], v: &[f64; N], w: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
}

/// A validated config together with its reference Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct Quadrature {
    config: QuadratureConfig,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(config: QuadratureConfig) -> Result<Self, QuadratureError> {
        config.validate()?;
        let order = NonZeroUsize::new(config.gauss_order).expect("validated order");
        let rule = GaussLegendre::new(order);
        let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Ok(Self {
            config,
            nodes,
            weights,
        })
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    pub fn rel_tol(&self) -> f64 {
        self.config.rel_tol
    }

    /// Same rule with a different tolerance.
    pub fn with_rel_tol(&self, rel_tol: f64) -> Result<Self, QuadratureError> {
        Self::new(QuadratureConfig {
            rel_tol,
            ..self.config
        })
    }

    fn tolerance_error(&self, a: f64, b: f64) -> QuadratureError {
        QuadratureError::Tolerance {
            a,
            b,
            rel_tol: self.config.rel_tol,
            max_depth: self.config.max_depth,
        }
    }

    /// Fixed Gauss rule on `[a, b]`. Returns the integral and ∫‖f‖ as a magnitude.
    pub fn gauss<const N: usize>(
        &self,
        a: f64,
        b: f64,
        f: &impl Fn(f64) -> [f64; N],
    ) -> ([f64; N], f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = [0.0; N];
        let mut mag = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * t);
            add(&mut acc, &v, w * half);
            mag += w * half.abs() * norm(&v);
        }
        (acc, mag)
    }

    /// Tensor Gauss rule on `[xa, xb] × [ya, yb]`.
    pub fn gauss2<const N: usize>(
        &self,
        (xa, xb): (f64, f64),
        (ya, yb): (f64, f64),
        f: &impl Fn(f64, f64) -> [f64; N],
    ) -> ([f64; N], f64) {
        let (hx, mx) = (0.5 * (xb - xa), 0.5 * (xa + xb));
        let (hy, my) = (0.5 * (yb - ya), 0.5 * (ya + yb));
        let mut acc = [0.0; N];
        let mut mag = 0.0;
        for (tx, wx) in self.nodes.iter().zip(&self.weights) {
            let x = mx + hx * tx;
            for (ty, wy) in self.nodes.iter().zip(&self.weights) {
                let v = f(x, my + hy * ty);
                let w = wx * wy * hx * hy;
                add(&mut acc, &v, w);
                mag += w.abs() * norm(&v);
            }
        }
        (acc, mag)
    }

    /// Adaptive bisection on `[a, b]` for an integrand smooth on the segment.
    pub fn adaptive<const N: usize>(
        &self,
        a: f64,
        b: f64,
        f: &impl Fn(f64) -> [f64; N],
    ) -> Result<[f64; N], QuadratureError> {
        let whole = self.gauss(a, b, f);
        // A panel is also accepted once its error is within its share of the
        // tolerance on the whole segment; otherwise rounding noise in a
        // locally tiny integrand forces bisection to the depth limit.
        let density = self.config.rel_tol * whole.1 / (b - a);
        self.adaptive_rec(a, b, whole, density, f, f64::INFINITY, 0)
    }

    fn adaptive_rec<const N: usize>(
        &self,
        a: f64,
        b: f64,
        whole: ([f64; N], f64),
        density: f64,
        f: &impl Fn(f64) -> [f64; N],
        parent_err: f64,
        depth: usize,
    ) -> Result<[f64; N], QuadratureError> {
        let m = 0.5 * (a + b);
        let left = self.gauss(a, m, f);
        let right = self.gauss(m, b, f);
        let mut sum = left.0;
        add(&mut sum, &right.0, 1.0);
        let mut diff = sum;
        add(&mut diff, &whole.0, -1.0);
        let err = norm(&diff);
        if err <= self.config.rel_tol * (left.1 + right.1) || err <= density * (b - a) {
            return Ok(sum);
        }
        // On a smooth integrand the estimate drops by orders of magnitude per
        // halving. Deep panels where it no longer does are limited by rounding
        // in the integrand itself (e.g. cancellation in u(x) − u(y) for y near
        // x); further bisection cannot help.
        if depth >= NOISE_DEPTH && err > 0.25 * parent_err {
            log::debug!("roundoff-limited panel [{a:e}, {b:e}], error estimate {err:e}");
            return Ok(sum);
        }
        if depth + 1 >= self.config.max_depth {
            return Err(self.tolerance_error(a, b));
        }
        let mut out = self.adaptive_rec(a, m, left, density, f, err, depth + 1)?;
        let r = self.adaptive_rec(m, b, right, density, f, err, depth + 1)?;
        add(&mut out, &r, 1.0);
        Ok(out)
    }

    /// Adaptive 2x2 subdivision on a rectangle, for integrands smooth on it.
    pub fn adaptive2<const N: usize>(
        &self,
        xr: (f64, f64),
        yr: (f64, f64),
        f: &impl Fn(f64, f64) -> [f64; N],
    ) -> Result<[f64; N], QuadratureError> {
        let whole = self.gauss2(xr, yr, f);
        let density = self.config.rel_tol * whole.1 / ((xr.1 - xr.0) * (yr.1 - yr.0));
        self.adaptive2_rec(xr, yr, whole, density, f, 0)
    }

    fn adaptive2_rec<const N: usize>(
        &self,
        (xa, xb): (f64, f64),
        (ya, yb): (f64, f64),
        whole: ([f64; N], f64),
        density: f64,
        f: &impl Fn(f64, f64) -> [f64; N],
        depth: usize,
    ) -> Result<[f64; N], QuadratureError> {
        let xm = 0.5 * (xa + xb);
        let ym = 0.5 * (ya + yb);
        let quads = [
            ((xa, xm), (ya, ym)),
            ((xm, xb), (ya, ym)),
            ((xa, xm), (ym, yb)),
            ((xm, xb), (ym, yb)),
        ];
        let parts = quads.map(|(x, y)| self.gauss2(x, y, f));
        let mut sum = [0.0; N];
        let mut mag = 0.0;
        for p in &parts {
            add(&mut sum, &p.0, 1.0);
            mag += p.1;
        }
        let mut diff = sum;
        add(&mut diff, &whole.0, -1.0);
        let err = norm(&diff);
        if err <= self.config.rel_tol * mag || err <= density * (xb - xa) * (yb - ya) {
            return Ok(sum);
        }
        if depth + 1 >= self.config.max_depth {
            return Err(self.tolerance_error(xa, xb));
        }
        let mut out = [0.0; N];
        for ((x, y), p) in quads.into_iter().zip(parts) {
            let r = self.adaptive2_rec(x, y, p, density, f, depth + 1)?;
            add(&mut out, &r, 1.0);
        }
        Ok(out)
    }

    /// Integrate over `[a, b]` with an integrable singularity at one end.
    ///
    /// Dyadic panels shrink toward the singular end. Near it the integrand is
    /// assumed to behave like `d^exponent` times a smooth function of the
    /// distance `d`, so the partial sums converge geometrically with ratio
    /// `2^-(exponent + 1)`; that leading term is removed by Richardson
    /// extrapolation, and refinement stops once the extrapolated value settles.
    pub fn toward_singular<const N: usize>(
        &self,
        a: f64,
        b: f64,
        end: End,
        exponent: f64,
        f: &impl Fn(f64) -> [f64; N],
    ) -> Result<[f64; N], QuadratureError> {
        debug_assert!(exponent > -1.0);
        let len = b - a;
        let ratio = 0.5f64.powf(exponent + 1.0);
        let panel = |k: i32| -> (f64, f64) {
            // distance range [len 2^-(k+1), len 2^-k] from the singular end
            let near = len * 0.5f64.powi(k + 1);
            let far = len * 0.5f64.powi(k);
            match end {
                End::Left => (a + near, a + far),
                End::Right => (b - far, b - near),
            }
        };
        let mut sum = [0.0; N];
        let mut mag = 0.0;
        let mut prev_sum: Option<[f64; N]> = None;
        let mut prev_extrap: Option<[f64; N]> = None;
        for k in 0..self.config.max_depth as i32 {
            let (pa, pb) = panel(k);
            let (v, m) = self.gauss(pa, pb, f);
            add(&mut sum, &v, 1.0);
            mag += m;
            if let Some(ps) = prev_sum {
                let mut extrap = sum;
                add(&mut extrap, &ps, -ratio);
                for e in extrap.iter_mut() {
                    *e /= 1.0 - ratio;
                }
                if let Some(pe) = prev_extrap {
                    let mut d = extrap;
                    add(&mut d, &pe, -1.0);
                    if norm(&d) <= self.config.rel_tol * mag {
                        return Ok(extrap);
                    }
                }
                prev_extrap = Some(extrap);
            }
            prev_sum = Some(sum);
        }
        Err(self.tolerance_error(a, b))
    }

    /// Integrate over `[a, b]` where the integrand varies on the scale
    /// `min_width` near one end (a nearby but external singularity). Panels are
    /// graded dyadically toward that end down to `min_width`; each panel is
    /// integrated adaptively.
    pub fn graded<const N: usize>(
        &self,
        a: f64,
        b: f64,
        end: End,
        min_width: f64,
        f: &impl Fn(f64) -> [f64; N],
    ) -> Result<[f64; N], QuadratureError> {
        let mut out = [0.0; N];
        let (mut lo, mut hi) = (a, b);
        while hi - lo > 2.0 * min_width {
            let m = 0.5 * (lo + hi);
            let (pa, pb) = match end {
                End::Left => (m, hi),
                End::Right => (lo, m),
            };
            let v = self.adaptive(pa, pb, f)?;
            add(&mut out, &v, 1.0);
            match end {
                End::Left => hi = m,
                End::Right => lo = m,
            }
        }
        let v = self.adaptive(lo, hi, f)?;
        add(&mut out, &v, 1.0);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Quadrature {
        Quadrature::new(QuadratureConfig::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = |c: QuadratureConfig| Quadrature::new(c).is_err();
        let d = QuadratureConfig::default();
        assert!(bad(QuadratureConfig {
            gauss_order: 1,
            ..d
        }));
        assert!(bad(QuadratureConfig { rel_tol: 0.0, ..d }));
        assert!(bad(QuadratureConfig { rel_tol: 1.0, ..d }));
        assert!(bad(QuadratureConfig { max_depth: 0, ..d }));
    }

    #[test]
    fn gauss_is_exact_for_polynomials() {
        let q = quad();
        let (v, _) = q.gauss(0.0, 2.0, &|x| [x.powi(15)]);
        assert!((v[0] - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn adaptive_smooth() {
        let q = quad();
        let v = q.adaptive(0.0, 10.0, &|x| [x.sin()]).unwrap();
        assert!((v[0] - (1.0 - 10f64.cos())).abs() < 1e-10);
    }

    #[test]
    fn singular_endpoint_power() {
        let q = quad();
        for &p in &[-0.5, 0.0, 0.5, 1.5] {
            let v = q
                .toward_singular(0.0, 1.0, End::Left, p, &|x| [x.powf(p) * (1.0 + x)])
                .unwrap();
            let exact = 1.0 / (p + 1.0) + 1.0 / (p + 2.0);
            assert!(
                (v[0] - exact).abs() < 1e-8 * exact,
                "p={p}: {} vs {exact}",
                v[0]
            );
            let w = q
                .toward_singular(2.0, 3.0, End::Right, p, &|x| [(3.0 - x).powf(p)])
                .unwrap();
            assert!((w[0] - 1.0 / (p + 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn depth_exhaustion_is_reported() {
        let q = Quadrature::new(QuadratureConfig {
            max_depth: 3,
            ..QuadratureConfig::default()
        })
        .unwrap();
        // log singularity is not of the assumed power form and needs depth.
        let r = q.toward_singular(0.0, 1.0, End::Left, -0.9, &|x| [x.powf(-0.9) * x.ln()]);
        assert!(matches!(r, Err(QuadratureError::Tolerance { .. })));
    }

    #[test]
    fn graded_near_singularity() {
        let q = quad();
        let d = 1e-4;
        // ∫_0^1 (x + d)^-1.5 dx
        let v = q
            .graded(0.0, 1.0, End::Left, d, &|x| [(x + d).powf(-1.5)])
            .unwrap();
        let exact = 2.0 * (d.powf(-0.5) - (1.0 + d).powf(-0.5));
        assert!((v[0] - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn tensor_adaptive() {
        let q = quad();
        let v = q
            .adaptive2((0.0, 1.0), (2.0, 3.0), &|x, y| [1.0 / (y - x)])
            .unwrap();
        // ∫_0^1∫_2^3 dy dx/(y-x) = 3 ln 3 - 4 ln 2
        let exact = 3.0 * 3f64.ln() - 4.0 * 2f64.ln();
        assert!((v[0] - exact).abs() < 1e-10);
    }
}
