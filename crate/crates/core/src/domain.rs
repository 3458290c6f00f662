//! Region geometry and the P1 mesh.
//!
//! A region is given by the open interval unions Ω (where the equation holds) and
//! 𝒩 (where the nonlocal Neumann condition holds). Everything else on the real
//! line is the Dirichlet region 𝒟, where functions vanish. The boundary taxonomy
//! of the mesh follows from these three sets:
//!
//! * nodes strictly inside Ω or 𝒩 carry a degree of freedom,
//! * contact points ∂Ω ∩ 𝒩̄ carry a degree of freedom (the classical Neumann
//!   condition there is natural in the weak form),
//! * nodes in the closure of 𝒟 are clamped to zero and carry none.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("interval ({0}, {1}) is empty or reversed; expected left < right")]
    BadInterval(f64, f64),
    #[error("interval ({0}, {1}) has a non-finite endpoint; Ω ∪ 𝒩 must be bounded")]
    Unbounded(f64, f64),
    #[error("Ω and 𝒩 overlap on ({0}, {1})")]
    Overlap(f64, f64),
    #[error("Ω is empty")]
    EmptyOmega,
    #[error("fractional order s = {0} must lie in (0, 1)")]
    BadOrder(f64),
    #[error("target_h = {0} must be positive and finite")]
    BadSpacing(f64),
    #[error("target_h = {target_h} exceeds the shortest interval length {shortest}")]
    Resolution { target_h: f64, shortest: f64 },
}

/// An open interval `(left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    pub fn contains(&self, x: f64) -> bool {
        self.left < x && x < self.right
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.left <= x && x <= self.right
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

/// User-facing region description, not yet validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub omega: Vec<Interval>,
    #[serde(default)]
    pub neumann: Vec<Interval>,
    pub s: f64,
}

impl RegionSpec {
    pub fn new(omega: &[(f64, f64)], neumann: &[(f64, f64)], s: f64) -> Self {
        let iv = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| Interval::new(a, b)).collect();
        Self {
            omega: iv(omega),
            neumann: iv(neumann),
            s,
        }
    }
}

/// Connected component of the Dirichlet region. Rays use infinite endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletComponent {
    pub left: f64,
    pub right: f64,
}

impl DirichletComponent {
    pub fn is_bounded(&self) -> bool {
        self.left.is_finite() && self.right.is_finite()
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.left <= x && x <= self.right
    }
}

/// A region with sorted, merged interval lists and the derived Dirichlet
/// components and contact points.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRegion {
    omega: Vec<Interval>,
    neumann: Vec<Interval>,
    s: f64,
    dirichlet: Vec<DirichletComponent>,
    contact_points: Vec<f64>,
}

impl ValidatedRegion {
    pub fn omega(&self) -> &[Interval] {
        &self.omega
    }

    pub fn neumann(&self) -> &[Interval] {
        &self.neumann
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Components of 𝒟 in ascending order; the first and last are rays.
    pub fn dirichlet(&self) -> &[DirichletComponent] {
        &self.dirichlet
    }

    /// Points of ∂Ω ∩ 𝒩̄, ascending.
    pub fn contact_points(&self) -> &[f64] {
        &self.contact_points
    }

    pub fn omega_measure(&self) -> f64 {
        self.omega.iter().map(Interval::length).sum()
    }

    pub fn neumann_measure(&self) -> f64 {
        self.neumann.iter().map(Interval::length).sum()
    }

    pub fn is_omega_connected(&self) -> bool {
        self.omega.len() == 1
    }

    pub fn in_omega(&self, x: f64) -> bool {
        self.omega.iter().any(|iv| iv.contains(x))
    }

    pub fn in_neumann(&self, x: f64) -> bool {
        self.neumann.iter().any(|iv| iv.contains(x))
    }

    pub fn in_dirichlet_closure(&self, x: f64) -> bool {
        self.dirichlet.iter().any(|d| d.contains_closed(x))
    }

    /// Distance from `x` to the closure of 𝒟.
    pub fn dirichlet_distance(&self, x: f64) -> f64 {
        self.dirichlet
            .iter()
            .map(|d| {
                if x < d.left {
                    d.left - x
                } else if x > d.right {
                    x - d.right
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Closed hull `[min, max]` of Ω ∪ 𝒩.
    pub fn hull(&self) -> (f64, f64) {
        let lo = self
            .omega
            .iter()
            .chain(&self.neumann)
            .map(|iv| iv.left)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .omega
            .iter()
            .chain(&self.neumann)
            .map(|iv| iv.right)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Back to a plain spec. Validating the result reproduces `self`.
    pub fn to_spec(&self) -> RegionSpec {
        RegionSpec {
            omega: self.omega.clone(),
            neumann: self.neumann.clone(),
            s: self.s,
        }
    }
}

fn normalize(list: &[Interval]) -> Result<Vec<Interval>, DomainError> {
    for iv in list {
        if !iv.left.is_finite() || !iv.right.is_finite() {
            return Err(DomainError::Unbounded(iv.left, iv.right));
        }
        if iv.left >= iv.right {
            return Err(DomainError::BadInterval(iv.left, iv.right));
        }
    }
    let mut sorted = list.to_vec();
    sorted.sort_by(|a, b| a.left.total_cmp(&b.left));
    let mut merged: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match merged.last_mut() {
            Some(last) if iv.left <= last.right => last.right = last.right.max(iv.right),
            _ => merged.push(iv),
        }
    }
    Ok(merged)
}

/// Normalize and validate a region.
pub fn validate_region(spec: &RegionSpec) -> Result<ValidatedRegion, DomainError> {
    if !(spec.s > 0.0 && spec.s < 1.0) {
        return Err(DomainError::BadOrder(spec.s));
    }
    let omega = normalize(&spec.omega)?;
    if omega.is_empty() {
        return Err(DomainError::EmptyOmega);
    }
    let neumann = normalize(&spec.neumann)?;

    for o in &omega {
        for n in &neumann {
            let lo = o.left.max(n.left);
            let hi = o.right.min(n.right);
            if hi > lo {
                return Err(DomainError::Overlap(lo, hi));
            }
        }
    }

    let mut contact_points = Vec::new();
    for o in &omega {
        for end in [o.left, o.right] {
            if neumann.iter().any(|n| n.contains_closed(end)) {
                contact_points.push(end);
            }
        }
    }
    contact_points.sort_by(f64::total_cmp);
    contact_points.dedup();

    // Closure of Ω ∪ 𝒩 as merged closed pieces; 𝒟 is what lies between them.
    let mut all: Vec<Interval> = omega.iter().chain(&neumann).copied().collect();
    all.sort_by(|a, b| a.left.total_cmp(&b.left));
    let mut pieces: Vec<Interval> = Vec::new();
    for iv in all {
        match pieces.last_mut() {
            Some(last) if iv.left <= last.right => last.right = last.right.max(iv.right),
            _ => pieces.push(iv),
        }
    }
    let mut dirichlet = Vec::with_capacity(pieces.len() + 1);
    let mut left = f64::NEG_INFINITY;
    for p in &pieces {
        dirichlet.push(DirichletComponent {
            left,
            right: p.left,
        });
        left = p.right;
    }
    dirichlet.push(DirichletComponent {
        left,
        right: f64::INFINITY,
    });

    Ok(ValidatedRegion {
        omega,
        neumann,
        s: spec.s,
        dirichlet,
        contact_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRole {
    OmegaInterior,
    NeumannExterior,
    ContactBoundary,
    DirichletClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    Omega,
    Neumann,
    Dirichlet,
}

/// A P1 element between consecutive nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub index: usize,
    /// Global node indices `[left, right]`.
    pub nodes: [usize; 2],
    pub left: f64,
    pub right: f64,
    pub region: RegionKind,
}

impl Element {
    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    /// Value at `x` of the hat function of global node `node`, restricted to this
    /// element. Zero if `node` is not one of the element's nodes.
    pub fn hat(&self, node: usize, x: f64) -> f64 {
        if node == self.nodes[0] {
            (self.right - x) / self.length()
        } else if node == self.nodes[1] {
            (x - self.left) / self.length()
        } else {
            0.0
        }
    }

    /// Derivative of the hat of `node` on this element.
    pub fn hat_slope(&self, node: usize) -> f64 {
        if node == self.nodes[0] {
            -1.0 / self.length()
        } else if node == self.nodes[1] {
            1.0 / self.length()
        } else {
            0.0
        }
    }

    /// Shared node with `other`, if the two elements touch.
    pub fn shared_node(&self, other: &Element) -> Option<usize> {
        if self.nodes[1] == other.nodes[0] {
            Some(self.nodes[1])
        } else if self.nodes[0] == other.nodes[1] {
            Some(self.nodes[0])
        } else {
            None
        }
    }
}

/// Uniform-per-interval P1 mesh over the hull of U.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<f64>,
    elements: Vec<Element>,
    roles: Vec<NodeRole>,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    h: f64,
    region: ValidatedRegion,
}

impl Mesh {
    pub fn region(&self) -> &ValidatedRegion {
        &self.region
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    pub fn n_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    /// Largest element length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn elements_in(&self, kind: RegionKind) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(move |e| e.region == kind)
    }

    /// DOF coordinates in DOF order.
    pub fn dof_coordinates(&self) -> Vec<f64> {
        self.node_of_dof.iter().map(|&n| self.nodes[n]).collect()
    }

    /// Nodal values over every node, with clamped nodes set to zero.
    pub fn expand(&self, dofs: &[f64]) -> Vec<f64> {
        self.dof_of_node
            .iter()
            .map(|d| d.map_or(0.0, |i| dofs[i]))
            .collect()
    }

    /// Evaluate the P1 interpolant of nodal `values` at `x` (zero outside the hull).
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.nodes.len();
        if x < self.nodes[0] || x > self.nodes[n - 1] {
            return 0.0;
        }
        let i = match self.nodes.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return values[i],
            Err(i) => i,
        };
        let (a, b) = (self.nodes[i - 1], self.nodes[i]);
        let t = (x - a) / (b - a);
        (1.0 - t) * values[i - 1] + t * values[i]
    }
}

/// Build the mesh: each interval of Ω, 𝒩 and each bounded 𝒟 gap inside the
/// hull is split uniformly with spacing `L / ceil(L / target_h)`.
pub fn build_mesh(region: &ValidatedRegion, target_h: f64) -> Result<Mesh, DomainError> {
    if !(target_h > 0.0 && target_h.is_finite()) {
        return Err(DomainError::BadSpacing(target_h));
    }
    let shortest = region
        .omega
        .iter()
        .chain(&region.neumann)
        .map(Interval::length)
        .fold(f64::INFINITY, f64::min);
    if target_h > shortest {
        return Err(DomainError::Resolution { target_h, shortest });
    }

    let mut pieces: Vec<(Interval, RegionKind)> = region
        .omega
        .iter()
        .map(|&iv| (iv, RegionKind::Omega))
        .chain(region.neumann.iter().map(|&iv| (iv, RegionKind::Neumann)))
        .chain(
            region
                .dirichlet
                .iter()
                .filter(|d| d.is_bounded())
                .map(|d| (Interval::new(d.left, d.right), RegionKind::Dirichlet)),
        )
        .collect();
    pieces.sort_by(|a, b| a.0.left.total_cmp(&b.0.left));

    let mut nodes = vec![pieces[0].0.left];
    let mut elements = Vec::new();
    let mut h_max: f64 = 0.0;
    for (iv, kind) in &pieces {
        let n_el = (iv.length() / target_h).ceil().max(1.0) as usize;
        let step = iv.length() / n_el as f64;
        h_max = h_max.max(step);
        for k in 1..=n_el {
            // Snap the last node onto the interval endpoint exactly.
            let x = if k == n_el {
                iv.right
            } else {
                iv.left + step * k as f64
            };
            let left_node = nodes.len() - 1;
            nodes.push(x);
            elements.push(Element {
                index: elements.len(),
                nodes: [left_node, left_node + 1],
                left: nodes[left_node],
                right: x,
                region: *kind,
            });
        }
    }

    let roles: Vec<NodeRole> = nodes
        .iter()
        .map(|&x| {
            if region.in_dirichlet_closure(x) {
                NodeRole::DirichletClamped
            } else if region.in_omega(x) {
                NodeRole::OmegaInterior
            } else if region.in_neumann(x) {
                NodeRole::NeumannExterior
            } else {
                NodeRole::ContactBoundary
            }
        })
        .collect();

    let mut dof_of_node = Vec::with_capacity(nodes.len());
    let mut node_of_dof = Vec::new();
    for (i, role) in roles.iter().enumerate() {
        if *role == NodeRole::DirichletClamped {
            dof_of_node.push(None);
        } else {
            dof_of_node.push(Some(node_of_dof.len()));
            node_of_dof.push(i);
        }
    }

    Ok(Mesh {
        nodes,
        elements,
        roles,
        dof_of_node,
        node_of_dof,
        h: h_max,
        region: region.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(omega: &[(f64, f64)], neumann: &[(f64, f64)]) -> ValidatedRegion {
        validate_region(&RegionSpec::new(omega, neumann, 0.5)).unwrap()
    }

    #[test]
    fn adjacent_neumann_region() {
        let r = region(&[(0.0, 1.0)], &[(1.0, 1.5)]);
        assert_eq!(r.contact_points(), &[1.0]);
        let d = r.dirichlet();
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].left, d[0].right), (f64::NEG_INFINITY, 0.0));
        assert_eq!((d[1].left, d[1].right), (1.5, f64::INFINITY));
    }

    #[test]
    fn disconnected_omega() {
        let r = region(&[(2.0, 3.0), (0.0, 1.0)], &[]);
        assert!(r.contact_points().is_empty());
        let d: Vec<_> = r.dirichlet().iter().map(|c| (c.left, c.right)).collect();
        assert_eq!(
            d,
            vec![(f64::NEG_INFINITY, 0.0), (1.0, 2.0), (3.0, f64::INFINITY)]
        );
        assert!(!r.is_omega_connected());
    }

    #[test]
    fn overlap_rejected() {
        let err = validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[(0.5, 2.0)], 0.5));
        assert!(matches!(err, Err(DomainError::Overlap(..))));
    }

    #[test]
    fn bad_inputs_rejected() {
        assert_eq!(
            validate_region(&RegionSpec::new(&[], &[(0.0, 1.0)], 0.5)),
            Err(DomainError::EmptyOmega)
        );
        assert_eq!(
            validate_region(&RegionSpec::new(&[(0.0, 1.0)], &[], 1.0)),
            Err(DomainError::BadOrder(1.0))
        );
        assert!(matches!(
            validate_region(&RegionSpec::new(&[(1.0, 0.0)], &[], 0.5)),
            Err(DomainError::BadInterval(..))
        ));
        assert!(matches!(
            validate_region(&RegionSpec::new(&[(0.0, f64::INFINITY)], &[], 0.5)),
            Err(DomainError::Unbounded(..))
        ));
    }

    #[test]
    fn touching_intervals_merge() {
        let r = region(&[(0.0, 0.5), (0.5, 1.0)], &[(1.0, 1.2), (1.2, 1.5)]);
        assert_eq!(r.omega(), &[Interval::new(0.0, 1.0)]);
        assert_eq!(r.neumann(), &[Interval::new(1.0, 1.5)]);
    }

    #[test]
    fn contact_on_both_sides() {
        let r = region(&[(0.0, 1.0)], &[(-0.5, 0.0), (1.0, 1.5)]);
        assert_eq!(r.contact_points(), &[0.0, 1.0]);
        assert_eq!(r.dirichlet().len(), 2);
    }

    #[test]
    fn dirichlet_only_mesh() {
        let r = region(&[(0.0, 1.0)], &[]);
        let m = build_mesh(&r, 0.25).unwrap();
        assert_eq!(m.nodes().len(), 5);
        assert_eq!(m.roles()[0], NodeRole::DirichletClamped);
        assert_eq!(m.roles()[4], NodeRole::DirichletClamped);
        assert_eq!(m.n_dofs(), 3);
        assert_eq!(m.h(), 0.25);
    }

    #[test]
    fn contact_node_carries_dof() {
        let r = region(&[(0.0, 1.0)], &[(1.0, 1.5)]);
        let m = build_mesh(&r, 0.25).unwrap();
        let at = |x: f64| m.nodes().iter().position(|&p| p == x).unwrap();
        assert_eq!(m.roles()[at(1.0)], NodeRole::ContactBoundary);
        assert!(m.dof(at(1.0)).is_some());
        assert_eq!(m.roles()[at(1.5)], NodeRole::DirichletClamped);
        assert_eq!(m.roles()[at(1.25)], NodeRole::NeumannExterior);
        assert_eq!(m.n_dofs(), 5);
    }

    #[test]
    fn coarse_spacing_rejected() {
        let r = region(&[(0.0, 1.0)], &[(1.0, 1.5)]);
        assert!(matches!(
            build_mesh(&r, 2.0),
            Err(DomainError::Resolution { .. })
        ));
    }

    #[test]
    fn dirichlet_gap_is_meshed_without_dofs() {
        let r = region(&[(0.0, 1.0), (2.0, 3.0)], &[]);
        let m = build_mesh(&r, 0.5).unwrap();
        assert_eq!(m.elements_in(RegionKind::Dirichlet).count(), 2);
        assert_eq!(m.n_dofs(), 2);
    }

    #[test]
    fn interpolate_and_expand() {
        let r = region(&[(0.0, 1.0)], &[]);
        let m = build_mesh(&r, 0.25).unwrap();
        let vals = m.expand(&[1.0, 2.0, 3.0]);
        assert_eq!(vals, vec![0.0, 1.0, 2.0, 3.0, 0.0]);
        assert!((m.interpolate(&vals, 0.375) - 1.5).abs() < 1e-15);
        assert_eq!(m.interpolate(&vals, 2.0), 0.0);
    }

    fn arb_region() -> impl Strategy<Value = RegionSpec> {
        (
            proptest::collection::vec((0.05f64..0.6, 0.05f64..0.4), 1..4),
            proptest::collection::vec(any::<bool>(), 4),
            0.05f64..0.95,
        )
            .prop_map(|(parts, flags, s)| {
                // Consecutive pieces with gaps; each piece goes to Ω or 𝒩.
                let mut x = 0.0;
                let mut omega = Vec::new();
                let mut neumann = Vec::new();
                for (i, (len, gap)) in parts.into_iter().enumerate() {
                    let iv = Interval::new(x, x + len);
                    if i == 0 || flags[i] {
                        omega.push(iv);
                    } else {
                        neumann.push(iv);
                    }
                    x += len + if flags[(i + 1) % 4] { 0.0 } else { gap };
                }
                RegionSpec { omega, neumann, s }
            })
    }

    proptest! {
        #[test]
        fn revalidation_is_idempotent(spec in arb_region()) {
            let r = validate_region(&spec).unwrap();
            let again = validate_region(&r.to_spec()).unwrap();
            prop_assert_eq!(r, again);
        }

        #[test]
        fn element_measures_match_region(spec in arb_region(), h in 0.01f64..0.05) {
            let r = validate_region(&spec).unwrap();
            let m = build_mesh(&r, h).unwrap();
            let om: f64 = m.elements_in(RegionKind::Omega).map(Element::length).sum();
            let nm: f64 = m.elements_in(RegionKind::Neumann).map(Element::length).sum();
            prop_assert!((om - r.omega_measure()).abs() < 1e-12);
            prop_assert!((nm - r.neumann_measure()).abs() < 1e-12);
            // Every interval endpoint is a node.
            for iv in r.omega().iter().chain(r.neumann()) {
                prop_assert!(m.nodes().contains(&iv.left));
                prop_assert!(m.nodes().contains(&iv.right));
            }
            // DOF count = non-clamped nodes, and contact nodes are exactly ∂Ω ∩ 𝒩̄.
            let contact: Vec<f64> = m.nodes().iter().zip(m.roles())
                .filter(|(_, r)| **r == NodeRole::ContactBoundary)
                .map(|(x, _)| *x).collect();
            prop_assert_eq!(contact, r.contact_points().to_vec());
            let free = m.roles().iter().filter(|r| **r != NodeRole::DirichletClamped).count();
            prop_assert_eq!(free, m.n_dofs());
        }

        #[test]
        fn halving_spacing_doubles_dofs(spec in arb_region(), h in 0.01f64..0.05) {
            let r = validate_region(&spec).unwrap();
            let coarse = build_mesh(&r, h).unwrap().n_dofs();
            let fine = build_mesh(&r, h / 2.0).unwrap().n_dofs();
            // Each interval gains at least as many nodes as it had elements.
            let pieces = r.omega().len() + r.neumann().len();
            prop_assert!(fine + 2 * pieces >= 2 * coarse);
        }
    }
}
