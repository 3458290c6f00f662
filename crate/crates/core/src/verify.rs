//! Named numerical checks on a computed spectrum, and the report they produce.
//!
//! Every check belongs to a fixed registry and has a designated [`Fault`] that
//! corrupts its input so the check can be shown to fail.

use std::cell::RefCell;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble_forms, AssemblyError, Forms, Toggles};
use crate::domain::{build_mesh, DomainError, Mesh, NodeRole, RegionKind, ValidatedRegion};
use crate::kernel::{
    fractional_laplacian_pointwise, kappa_tail, nonlocal_neumann_fn, nonlocal_neumann_nodal,
    singular_pair_integral, KernelError, KernelParams, Supported,
};
use crate::quadrature::{End, Quadrature, QuadratureError};
use crate::solve::{
    cluster_sizes, max_over_span, solve_dense, SolveError, Spectrum, StiffnessSolver,
    CLUSTER_REL_GAP,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("spectra were computed from different forms")]
    Mismatch,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Check names, in report order.
pub const REGISTRY: [&str; 16] = [
    "lambda1_positive",
    "ordering",
    "lambda1_simple",
    "finite_multiplicity",
    "eigen_count",
    "residuals",
    "b_orthonormality",
    "a_orthogonality",
    "cross_method",
    "max_over_span",
    "parseval",
    "x_norm_expansion",
    "poincare",
    "clamped_zero",
    "weak_neumann_decrease",
    "ibp_identity",
];

/// Deliberate corruption of a check's input. Each variant is named after the
/// check it is designed to break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    Lambda1Positive,
    Ordering,
    Lambda1Simple,
    FiniteMultiplicity,
    EigenCount,
    Residuals,
    BOrthonormality,
    AOrthogonality,
    CrossMethod,
    MaxOverSpan,
    Parseval,
    XNormExpansion,
    Poincare,
    ClampedZero,
    WeakNeumannDecrease,
    IbpIdentity,
}

impl Fault {
    pub const ALL: [Fault; 16] = [
        Fault::Lambda1Positive,
        Fault::Ordering,
        Fault::Lambda1Simple,
        Fault::FiniteMultiplicity,
        Fault::EigenCount,
        Fault::Residuals,
        Fault::BOrthonormality,
        Fault::AOrthogonality,
        Fault::CrossMethod,
        Fault::MaxOverSpan,
        Fault::Parseval,
        Fault::XNormExpansion,
        Fault::Poincare,
        Fault::ClampedZero,
        Fault::WeakNeumannDecrease,
        Fault::IbpIdentity,
    ];

    pub fn check_name(self) -> &'static str {
        REGISTRY[Self::ALL.iter().position(|f| *f == self).unwrap()]
    }

    pub fn from_name(name: &str) -> Option<Fault> {
        let i = REGISTRY.iter().position(|n| *n == name)?;
        Some(Self::ALL[i])
    }
}

/// Corrupt the spectra for the spectral faults. Boundary and IBP faults are
/// applied inside [`verify_boundary`] and [`verify_ibp`]; here they do nothing.
pub fn corrupt_spectra(fault: Fault, forms: &Forms, dense: &mut Spectrum, minmax: &mut Spectrum) {
    let n = dense.len();
    match fault {
        Fault::Lambda1Positive => dense.lambdas[0] = -dense.lambdas[0],
        Fault::Ordering if n >= 2 => dense.lambdas.swap(0, 1),
        Fault::Lambda1Simple if n >= 2 => dense.lambdas[1] = dense.lambdas[0],
        Fault::FiniteMultiplicity => {
            let l1 = dense.lambdas[0];
            dense.lambdas.iter_mut().for_each(|l| *l = l1);
            dense.lambdas.push(l1);
            let v = dense.vectors.clone();
            dense.vectors = v.clone().insert_column(n, 0.0);
            dense.vectors.set_column(n, &v.column(n - 1));
            dense.residual_norms.push(dense.residual_norms[n - 1]);
        }
        Fault::EigenCount | Fault::Parseval => {
            dense.lambdas.pop();
            dense.residual_norms.pop();
            dense.vectors = dense.vectors.clone().remove_column(n - 1);
        }
        Fault::Residuals if n >= 3 => dense.lambdas[2] *= 1.0 + 1e-4,
        Fault::BOrthonormality | Fault::AOrthogonality | Fault::XNormExpansion if n >= 2 => {
            let e1 = dense.vectors.column(0).into_owned();
            let mut c = dense.vectors.column_mut(1);
            c.axpy(1e-4, &e1, 1.0);
        }
        Fault::CrossMethod if minmax.len() >= 2 => minmax.lambdas[1] *= 1.0 + 1e-4,
        Fault::MaxOverSpan if n >= 4 => {
            let e4 = dense.vectors.column(3).into_owned();
            let mut e3 = dense.vectors.column(2).into_owned();
            e3.axpy(0.1, &e4, 1.0);
            let norm = forms.mass(&e3).sqrt();
            dense.vectors.set_column(2, &(e3 / norm));
        }
        Fault::Poincare => dense.lambdas[0] *= 2.0,
        _ => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">")]
    Above,
}

impl Comparison {
    fn holds(self, measured: f64, tolerance: f64) -> bool {
        match self {
            Comparison::AtMost => measured <= tolerance,
            Comparison::Below => measured < tolerance,
            Comparison::Above => measured > tolerance,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::AtMost => "<=",
            Comparison::Below => "<",
            Comparison::Above => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub comparison: Comparison,
    pub tolerance: f64,
    pub passed: bool,
    pub context: String,
}

impl Check {
    pub fn new(
        name: &str,
        measured: f64,
        comparison: Comparison,
        tolerance: f64,
        context: impl Into<String>,
    ) -> Self {
        debug_assert!(REGISTRY.contains(&name), "{name} not in registry");
        Self {
            name: name.to_string(),
            measured,
            comparison,
            tolerance,
            passed: comparison.holds(measured, tolerance),
            context: context.into(),
        }
    }
}

/// A reported quantity with no pass/fail verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: String,
    pub value: f64,
    pub context: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub h: f64,
    pub dofs: usize,
    pub b_rank: usize,
}

impl MeshSummary {
    pub fn new(mesh: &Mesh, forms: &Forms) -> Self {
        Self {
            h: mesh.h(),
            dofs: forms.n_dofs(),
            b_rank: forms.b_rank,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub observations: Vec<Observation>,
    pub config_echo: Option<serde_json::Value>,
    pub mesh_summary: Option<MeshSummary>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    fn observe(&mut self, name: impl Into<String>, value: f64, context: impl Into<String>) {
        self.observations.push(Observation {
            name: name.into(),
            value,
            context: context.into(),
        });
    }

    /// Append another report's checks and observations, keeping registry order.
    pub fn merge(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.observations.extend(other.observations);
        let rank = |c: &Check| {
            REGISTRY
                .iter()
                .position(|n| *n == c.name)
                .unwrap_or(usize::MAX)
        };
        self.checks.sort_by_key(rank);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.mesh_summary {
            let _ = writeln!(
                out,
                "mesh: h = {:.6e}, dofs = {}, b_rank = {}",
                m.h, m.dofs, m.b_rank
            );
        }
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<width$}  {:>14.6e} {:>2} {:<10.3e}  {}  {}",
                c.name,
                c.measured,
                c.comparison.symbol(),
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" },
                c.context,
            );
        }
        if !self.observations.is_empty() {
            out.push_str("observations:\n");
            let width = self
                .observations
                .iter()
                .map(|o| o.name.len())
                .max()
                .unwrap_or(0);
            for o in &self.observations {
                let _ = writeln!(
                    out,
                    "  {:<width$}  {:>14.6e}  {}",
                    o.name, o.value, o.context
                );
            }
        }
        let failed = self.failed();
        if failed.is_empty() {
            let _ = writeln!(out, "all {} checks passed", self.checks.len());
        } else {
            let _ = writeln!(
                out,
                "{} of {} checks failed: {}",
                failed.len(),
                self.checks.len(),
                failed.join(", ")
            );
        }
        out
    }
}

/// Default pass thresholds for the registry checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual `‖Ae − λBe‖ / (‖Ae‖ + λ‖Be‖)`.
    pub residual: f64,
    /// B-Gram defect and scaled A off-diagonals.
    pub orthogonality: f64,
    pub cross_method: f64,
    pub span: f64,
    pub parseval: f64,
    pub x_norm: f64,
    pub poincare: f64,
    /// Smallest relative gap (λ₂ − λ₁)/λ₁ accepted as simple.
    pub gap: f64,
    pub ibp: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            orthogonality: 1e-8,
            cross_method: 1e-6,
            span: 1e-10,
            parseval: 1e-8,
            x_norm: 1e-8,
            poincare: 1e-12,
            gap: CLUSTER_REL_GAP,
            ibp: 1e-4,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 9] = [
        "residual",
        "orthogonality",
        "cross_method",
        "span",
        "parseval",
        "x_norm",
        "poincare",
        "gap",
        "ibp",
    ];

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(format!(
                "tolerance {name} must be a nonnegative number, got {value}"
            ));
        }
        let slot = match name {
            "residual" => &mut self.residual,
            "orthogonality" => &mut self.orthogonality,
            "cross_method" => &mut self.cross_method,
            "span" => &mut self.span,
            "parseval" => &mut self.parseval,
            "x_norm" => &mut self.x_norm,
            "poincare" => &mut self.poincare,
            "gap" => &mut self.gap,
            "ibp" => &mut self.ibp,
            _ => {
                return Err(format!(
                    "unknown tolerance {name}; expected one of {}",
                    Self::NAMES.join(", ")
                ))
            }
        };
        *slot = value;
        Ok(())
    }
}

const SAMPLE_SEED: u64 = 0x9e37_79b9;
const PARSEVAL_SAMPLES: usize = 20;
const X_NORM_SAMPLES: usize = 3;
pub const POINCARE_SAMPLES: usize = 100;

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Remove the B-kernel component of `f` A-orthogonally, and zero decoupled DOFs.
fn remove_kernel(forms: &Forms, kernel: &DMatrix<f64>, f: &mut DVector<f64>) {
    for d in forms.decoupled_dofs() {
        f[d] = 0.0;
    }
    if kernel.ncols() == 0 {
        return;
    }
    let af = &forms.a_matrix * &*f;
    let coeffs = kernel.transpose() * af;
    *f -= kernel * coeffs;
}

/// Spectral part of the registry.
pub fn verify_spectrum(
    forms: &Forms,
    dense: &Spectrum,
    minmax: &Spectrum,
    tol: &Tolerances,
) -> Result<Report, VerifyError> {
    let id = forms.fingerprint();
    if dense.forms_id != id || minmax.forms_id != id {
        return Err(VerifyError::Mismatch);
    }
    if dense.is_empty() {
        return Err(VerifyError::Precondition("dense spectrum is empty".into()));
    }
    let mut r = Report::default();
    let lam = &dense.lambdas;
    let n = lam.len();
    let e = &dense.vectors;

    r.checks.push(Check::new(
        "lambda1_positive",
        lam[0],
        Comparison::Above,
        0.0,
        format!("lambda1 = {:.12e}", lam[0]),
    ));

    let (worst, at) = lam
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            (
                (w[0] - w[1]).max(0.0) / w[1].abs().max(f64::MIN_POSITIVE),
                i,
            )
        })
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    r.checks.push(Check::new(
        "ordering",
        worst,
        Comparison::AtMost,
        0.0,
        if worst > 0.0 {
            format!("lambda{} > lambda{}", at + 1, at + 2)
        } else {
            format!("{n} eigenvalues nondecreasing")
        },
    ));

    let gap = if n >= 2 {
        (lam[1] - lam[0]) / lam[0].abs()
    } else {
        f64::INFINITY
    };
    r.checks.push(Check::new(
        "lambda1_simple",
        gap,
        Comparison::Above,
        tol.gap,
        "relative gap (lambda2 - lambda1)/lambda1",
    ));
    r.observe("relative_gap", gap, "(lambda2 - lambda1)/lambda1");

    let clusters = cluster_sizes(lam, CLUSTER_REL_GAP);
    let largest = clusters.iter().copied().max().unwrap_or(0);
    r.checks.push(Check::new(
        "finite_multiplicity",
        largest as f64,
        Comparison::AtMost,
        dense.b_rank as f64,
        format!(
            "largest cluster {largest}, first cluster {}",
            clusters.first().copied().unwrap_or(0)
        ),
    ));

    let count_defect = (n as f64 - dense.b_rank as f64)
        .abs()
        .max((dense.finite_count as f64 - dense.b_rank as f64).abs());
    r.checks.push(Check::new(
        "eigen_count",
        count_defect,
        Comparison::AtMost,
        0.0,
        format!(
            "{n} finite eigenpairs, b_rank {}, {} infinite",
            dense.b_rank,
            dense.infinite_count()
        ),
    ));

    let ae = &forms.a_matrix * e;
    let be = &forms.b_matrix * e;
    let rel_res = |a: &DVector<f64>, b: &DVector<f64>, l: f64| {
        let num = (a - b * l).norm();
        let den = a.norm() + l.abs() * b.norm();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    };
    let mut worst_res = (0.0, String::new());
    for i in 0..n {
        let v = rel_res(
            &ae.column(i).into_owned(),
            &be.column(i).into_owned(),
            lam[i],
        );
        if !(v <= worst_res.0) {
            worst_res = (v, format!("dense pair {}", i + 1));
        }
    }
    for i in 0..minmax.len() {
        let x = minmax.vector(i);
        let v = rel_res(
            &(&forms.a_matrix * &x),
            &(&forms.b_matrix * &x),
            minmax.lambdas[i],
        );
        if !(v <= worst_res.0) {
            worst_res = (v, format!("min-max pair {}", i + 1));
        }
    }
    r.checks.push(Check::new(
        "residuals",
        worst_res.0,
        Comparison::AtMost,
        tol.residual,
        format!("worst relative residual at {}", worst_res.1),
    ));

    let gram_b = e.transpose() * &be;
    let b_defect = (gram_b - DMatrix::identity(n, n)).amax();
    r.checks.push(Check::new(
        "b_orthonormality",
        b_defect,
        Comparison::AtMost,
        tol.orthogonality,
        "max |E^T B E - I|",
    ));

    let gram_a = e.transpose() * &ae;
    let mut a_defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let scale = (lam[i].abs() * lam[j].abs()).sqrt();
                a_defect = a_defect.max(gram_a[(i, j)].abs() / scale);
            }
        }
    }
    r.checks.push(Check::new(
        "a_orthogonality",
        a_defect,
        Comparison::AtMost,
        tol.orthogonality,
        "max |e_i^T A e_j| / sqrt(lambda_i lambda_j), i != j",
    ));

    let m = minmax.len().min(n);
    let mut cross: f64 = if m == 0 { f64::NAN } else { 0.0 };
    for i in 0..m {
        cross = cross.max((lam[i] - minmax.lambdas[i]).abs() / lam[i].abs());
    }
    r.checks.push(Check::new(
        "cross_method",
        cross,
        Comparison::AtMost,
        tol.cross_method,
        format!("first {m} eigenvalues, dense vs min-max"),
    ));

    let k_span = minmax.len().clamp(1, n);
    let mut span_defect: f64 = 0.0;
    for k in 1..=k_span {
        let top = max_over_span(forms, dense, k)?;
        span_defect = span_defect.max((top - lam[k - 1]).abs() / lam[k - 1].abs());
    }
    r.checks.push(Check::new(
        "max_over_span",
        span_defect,
        Comparison::AtMost,
        tol.span,
        format!("k = 1..{k_span}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let mut parseval: f64 = 0.0;
    let mut parseval_energy: f64 = 0.0;
    for _ in 0..PARSEVAL_SAMPLES {
        let mut f = random_vector(&mut rng, forms.n_dofs());
        remove_kernel(forms, &dense.kernel_basis, &mut f);
        let coeffs = be.transpose() * &f;
        let d = &f - e * coeffs;
        parseval = parseval.max((forms.mass(&d) / forms.mass(&f)).max(0.0).sqrt());
        parseval_energy =
            parseval_energy.max((forms.energy(&d) / forms.energy(&f)).max(0.0).sqrt());
    }
    r.checks.push(Check::new(
        "parseval",
        parseval,
        Comparison::AtMost,
        tol.parseval,
        format!(
            "{PARSEVAL_SAMPLES} random vectors, relative B-norm defect using {n} pairs (energy-norm defect {parseval_energy:.3e})"
        ),
    ));

    // η(f − f_j)² = η(f)² − Σ_{i≤j} ⟨f, M_i⟩² with M_i = e_i/√λ_i.
    // The first sample is rough; the others are one inverse-iteration step
    // A⁻¹Br, which weights the low modes and is A-orthogonal to the B-kernel.
    let stiffness = StiffnessSolver::new(forms)?;
    let mut xnorm: f64 = 0.0;
    for sample in 0..X_NORM_SAMPLES {
        let mut f = random_vector(&mut rng, forms.n_dofs());
        if sample == 0 {
            remove_kernel(forms, &dense.kernel_basis, &mut f);
        } else {
            f = stiffness.solve(&(&forms.b_matrix * f));
        }
        let af = &forms.a_matrix * &f;
        let eta2 = f.dot(&af);
        let mut g = f.clone();
        let mut ag = af.clone();
        let mut rhs = eta2;
        for i in 0..n {
            let s = lam[i].abs().sqrt();
            let c = e.column(i).dot(&af) / s;
            g.axpy(-c / s, &e.column(i), 1.0);
            ag.axpy(-c / s, &ae.column(i), 1.0);
            rhs -= c * c;
            xnorm = xnorm.max((g.dot(&ag) - rhs).abs() / eta2);
        }
    }
    r.checks.push(Check::new(
        "x_norm_expansion",
        xnorm,
        Comparison::AtMost,
        tol.x_norm,
        format!("{X_NORM_SAMPLES} random vectors (1 rough, {} smooth), all partial sums, relative to eta(f)^2", X_NORM_SAMPLES - 1),
    ));

    let p = estimate_poincare(forms, dense)?;
    r.checks.push(Check::new(
        "poincare",
        p.max_excess,
        Comparison::AtMost,
        tol.poincare,
        format!(
            "{}/{} samples satisfy u^T B u <= C u^T A u + eps with C = 1/lambda1, u^T A u = 1",
            p.samples - p.violations(tol.poincare),
            p.samples
        ),
    ));
    r.observe("poincare_constant", p.constant, "C = 1/lambda1");

    let omega_dofs: Vec<usize> = (0..forms.n_dofs())
        .filter(|&i| forms.omega_support[i])
        .collect();
    let negative = omega_dofs.iter().filter(|&&i| e[(i, 0)] < 0.0).count();
    r.observe(
        "e1_sign_change_fraction",
        negative as f64 / omega_dofs.len().max(1) as f64,
        "fraction of Omega-supported DOFs where e1 < 0 after sign normalization",
    );
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareEstimate {
    /// C = 1/λ₁.
    pub constant: f64,
    pub samples: usize,
    /// `uᵀBu − C` per sample, with `u` scaled so that `uᵀAu = 1`.
    pub excess: Vec<f64>,
    pub max_excess: f64,
}

impl PoincareEstimate {
    pub fn violations(&self, eps: f64) -> usize {
        self.excess.iter().filter(|&&x| !(x <= eps)).count()
    }
}

/// Optimal discrete Poincaré constant and a sampling cross-check. Half the
/// samples are uniform random vectors; the other half are small random
/// perturbations of e₁, where the inequality is nearly tight.
pub fn estimate_poincare(forms: &Forms, dense: &Spectrum) -> Result<PoincareEstimate, VerifyError> {
    if dense.is_empty() {
        return Err(VerifyError::Precondition("spectrum is empty".into()));
    }
    let constant = 1.0 / dense.lambdas[0];
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ 0xface);
    let e1 = dense.vector(0);
    let mut excess = Vec::with_capacity(POINCARE_SAMPLES);
    for i in 0..POINCARE_SAMPLES {
        let r = random_vector(&mut rng, forms.n_dofs());
        let u = if i % 2 == 0 {
            r
        } else {
            let scale = 1e-3 * e1.norm() / r.norm();
            &e1 + r * scale
        };
        let energy = forms.energy(&u);
        excess.push(forms.mass(&u) / energy - constant);
    }
    let max_excess = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PoincareEstimate {
        constant,
        samples: POINCARE_SAMPLES,
        excess,
        max_excess,
    })
}

/// One mesh level of a refinement sequence with its spectrum.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLevel<'a> {
    pub mesh: &'a Mesh,
    pub spectrum: &'a Spectrum,
}

/// Number of eigenfunctions whose boundary behaviour is reported.
pub const BOUNDARY_MODES: usize = 3;

/// Bump ψ = 16((x − c)(d − x))²/L⁴ on an 𝒩 component (c, d).
fn neumann_bump(c: f64, d: f64, x: f64) -> f64 {
    let l = d - c;
    let g = (x - c) * (d - x);
    16.0 * g * g / (l * l * l * l)
}

/// Quadrature pair for nested integrals: the inner integrand must be resolved
/// well below the outer tolerance or adaptive refinement chases its noise.
fn nested(quad: &Quadrature) -> Result<(Quadrature, Quadrature), QuadratureError> {
    let rel = quad.rel_tol();
    Ok((
        quad.with_rel_tol(rel.max(1e-8))?,
        quad.with_rel_tol((rel * 1e-2).max(1e-10))?,
    ))
}

/// Integrate `f` over `[a, b]`, grading toward the ends listed in `singular`
/// with the given exponent.
fn integrate_panel(
    quad: &Quadrature,
    a: f64,
    b: f64,
    singular: (bool, bool),
    exponent: f64,
    f: &impl Fn(f64) -> [f64; 1],
) -> Result<f64, QuadratureError> {
    Ok(match singular {
        (false, false) => quad.adaptive(a, b, f)?[0],
        (true, false) => quad.toward_singular(a, b, End::Left, exponent, f)?[0],
        (false, true) => quad.toward_singular(a, b, End::Right, exponent, f)?[0],
        (true, true) => {
            let m = 0.5 * (a + b);
            quad.toward_singular(a, m, End::Left, exponent, f)?[0]
                + quad.toward_singular(m, b, End::Right, exponent, f)?[0]
        }
    })
}

/// Weak residual Σ_components ∫_𝒩 ψ 𝒩_s(u) dx of the P1 function with the
/// given nodal values.
pub fn weak_neumann_residual(
    mesh: &Mesh,
    nodal: &[f64],
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<f64, VerifyError> {
    let region = mesh.region();
    let (outer, inner) = nested(quad)?;
    let contacts = region.contact_points();
    let err: RefCell<Option<KernelError>> = RefCell::new(None);
    let mut total = 0.0;
    for comp in region.neumann() {
        let (c, d) = (comp.left, comp.right);
        for el in mesh.elements_in(RegionKind::Neumann) {
            if el.left < c || el.right > d {
                continue;
            }
            let f = |x: f64| match nonlocal_neumann_nodal(nodal, x, mesh, params, &inner) {
                Ok(v) => [neumann_bump(c, d, x) * v],
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    [f64::NAN]
                }
            };
            let sing = (contacts.contains(&el.left), contacts.contains(&el.right));
            let v = integrate_panel(&outer, el.left, el.right, sing, 3.0 - 2.0 * params.s, &f);
            if let Some(e) = err.borrow_mut().take() {
                return Err(e.into());
            }
            total += v?;
        }
    }
    Ok(total)
}

/// Boundary part of the registry, over a refinement sequence (coarsest
/// first). Clamped values are checked on every level; the weak Neumann
/// residual of e₁ must strictly decrease from level to level. The Neumann
/// check needs the nonlocal term, since without it the condition on 𝒩 is not
/// part of the problem.
pub fn verify_boundary(
    levels: &[BoundaryLevel<'_>],
    params: &KernelParams,
    quad: &Quadrature,
    toggles: Toggles,
    fault: Option<Fault>,
) -> Result<Report, VerifyError> {
    if levels.is_empty() {
        return Err(VerifyError::Precondition("no mesh levels given".into()));
    }
    let mut r = Report::default();

    let mut clamped_max: f64 = 0.0;
    let mut clamped_count = 0;
    let mut nodal_levels = Vec::with_capacity(levels.len());
    for lvl in levels {
        let modes = lvl.spectrum.len().min(BOUNDARY_MODES);
        let mut nodal: Vec<Vec<f64>> = (0..modes)
            .map(|i| lvl.mesh.expand(lvl.spectrum.vectors.column(i).as_slice()))
            .collect();
        if fault == Some(Fault::ClampedZero) {
            if let Some(node) = lvl
                .mesh
                .roles()
                .iter()
                .position(|r| *r == NodeRole::DirichletClamped)
            {
                nodal[0][node] = 1e-3;
            }
        }
        for (node, role) in lvl.mesh.roles().iter().enumerate() {
            if *role == NodeRole::DirichletClamped {
                clamped_count += 1;
                for v in &nodal {
                    clamped_max = clamped_max.max(v[node].abs());
                }
            }
        }
        nodal_levels.push(nodal);
    }
    r.checks.push(Check::new(
        "clamped_zero",
        clamped_max,
        Comparison::AtMost,
        0.0,
        format!(
            "max |e| over {clamped_count} clamped nodes, first {BOUNDARY_MODES} modes, {} levels",
            levels.len()
        ),
    ));

    let region = levels[0].mesh.region();
    if region.neumann().is_empty() {
        return Ok(r);
    }

    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
    for (lvl, nodal) in levels.iter().zip(&nodal_levels) {
        let mut row = Vec::with_capacity(nodal.len());
        for (i, v) in nodal.iter().enumerate() {
            let res = weak_neumann_residual(lvl.mesh, v, params, quad)?.abs();
            r.observe(
                format!("weak_neumann_residual[e{},h={:.6e}]", i + 1, lvl.mesh.h()),
                res,
                "|int_N psi N_s(e) dx|",
            );
            row.push(res);
        }
        for &c in region.contact_points() {
            let nu = if region.in_omega(c - 1e-12 * (1.0 + c.abs())) {
                1.0
            } else {
                -1.0
            };
            let nodes = lvl.mesh.nodes();
            let Ok(k) = nodes.binary_search_by(|p| p.total_cmp(&c)) else {
                continue;
            };
            let inner = if nu > 0.0 {
                k.checked_sub(1)
            } else {
                Some(k + 1).filter(|&j| j < nodes.len())
            };
            let Some(j) = inner else { continue };
            for (i, v) in nodal.iter().enumerate() {
                let dq = nu * (v[k] - v[j]) / (nodes[k] - nodes[j]).abs();
                r.observe(
                    format!(
                        "contact_derivative[e{},x={c},h={:.6e}]",
                        i + 1,
                        lvl.mesh.h()
                    ),
                    dq,
                    "one-sided difference quotient of e along the outward normal of Omega",
                );
            }
        }
        residuals.push(row);
    }
    if fault == Some(Fault::WeakNeumannDecrease) && residuals.len() >= 2 {
        let last = residuals.len() - 1;
        residuals.swap(0, last);
    }

    if toggles.nonlocal && residuals.len() >= 2 && residuals.iter().all(|row| !row.is_empty()) {
        let e1: Vec<f64> = residuals.iter().map(|row| row[0]).collect();
        let worst = e1
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(
                f64::NEG_INFINITY,
                |a, b| if b.is_nan() || b > a { b } else { a },
            );
        let ratios: Vec<String> = e1
            .windows(2)
            .map(|w| format!("{:.3}", w[1] / w[0]))
            .collect();
        r.checks.push(Check::new(
            "weak_neumann_decrease",
            worst,
            Comparison::Below,
            1.0,
            format!("e1 residual ratios under refinement: {}", ratios.join(", ")),
        ));
    }
    Ok(r)
}

/// Polynomial bump `A (1 + t (x − a)) g(x)⁴` with `g = (x − a)(b − x)/m²`,
/// `m = (b − a)/2`, supported on `[a, b]` and C³ on the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub left: f64,
    pub right: f64,
    pub amplitude: f64,
    pub tilt: f64,
}

impl Bump {
    pub fn new(left: f64, right: f64, amplitude: f64, tilt: f64) -> Self {
        Self {
            left,
            right,
            amplitude,
            tilt,
        }
    }

    fn parts(&self, x: f64) -> Option<(f64, f64, f64, f64, f64)> {
        if x <= self.left || x >= self.right {
            return None;
        }
        let m = 0.5 * (self.right - self.left);
        let m2 = m * m;
        let g = (x - self.left) * (self.right - x) / m2;
        let g1 = (self.left + self.right - 2.0 * x) / m2;
        let g2 = -2.0 / m2;
        let p = 1.0 + self.tilt * (x - self.left);
        Some((g, g1, g2, p, self.tilt))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.parts(x)
            .map_or(0.0, |(g, _, _, p, _)| self.amplitude * p * g.powi(4))
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.parts(x).map_or(0.0, |(g, g1, _, p, p1)| {
            self.amplitude * (p1 * g.powi(4) + p * 4.0 * g.powi(3) * g1)
        })
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.parts(x).map_or(0.0, |(g, g1, g2, p, p1)| {
            let w1 = 4.0 * g.powi(3) * g1;
            let w2 = 12.0 * g * g * g1 * g1 + 4.0 * g.powi(3) * g2;
            self.amplitude * (2.0 * p1 * w1 + p * w2)
        })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.left, self.right)
    }

    fn overlaps(&self, a: f64, b: f64) -> bool {
        self.amplitude != 0.0 && a < self.right && b > self.left
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpPair {
    pub name: String,
    pub u: Bump,
    pub v: Bump,
}

/// Both sides of the integration-by-parts identity for one pair:
///
/// ```text
/// ∫_Ω v(−u'') + 2∫_Ω v (−Δ)^s u = ∫_Ω u'v' + Q(u, v) − Σ_c v(c) u'(c) ν_c − 2∫_𝒩 v 𝒩_s u
/// ```
///
/// The pointwise operators are one-sided principal values, so the energy
/// `Q` counts every unordered pair twice; hence the factor 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpTerms {
    pub name: String,
    pub local_lhs: f64,
    pub operator_lhs: f64,
    pub local_rhs: f64,
    pub energy: f64,
    pub boundary: f64,
    pub neumann: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// |lhs − rhs| relative to the largest term.
    pub defect: f64,
}

/// Ratio between the nonlocal energy and the one-sided pointwise operators.
pub const FORM_OPERATOR_RATIO: f64 = 2.0;

/// Three pairs: two inside the first Ω component and, when Ω touches 𝒩, one
/// straddling the first contact point. Supports stay in the closure of Ω ∪ 𝒩.
pub fn default_ibp_pairs(region: &ValidatedRegion) -> Vec<IbpPair> {
    let o = region.omega()[0];
    let (a, l) = (o.left, o.length());
    let mut pairs = vec![
        IbpPair {
            name: "interior".into(),
            u: Bump::new(a + 0.2 * l, a + 0.8 * l, 1.0, 0.0),
            v: Bump::new(a + 0.1 * l, a + 0.7 * l, 1.0, 0.5 / l),
        },
        IbpPair {
            name: "interior_offset".into(),
            u: Bump::new(a + 0.05 * l, a + 0.55 * l, 1.0, 1.0 / l),
            v: Bump::new(a + 0.3 * l, a + 0.95 * l, 0.5, -0.5 / l),
        },
    ];
    if let Some(&c) = region.contact_points().first() {
        let omega_side = region
            .omega()
            .iter()
            .find(|iv| iv.contains_closed(c))
            .unwrap();
        let neumann_side = region
            .neumann()
            .iter()
            .find(|iv| iv.contains_closed(c))
            .unwrap();
        let lo = omega_side.length();
        let ln = neumann_side.length();
        // Orient so `into_omega` points from c into Ω.
        let into_omega = if omega_side.left < c { -1.0 } else { 1.0 };
        let end = |t_omega: f64, t_neumann: f64| {
            let x1 = c + into_omega * t_omega * lo;
            let x2 = c - into_omega * t_neumann * ln;
            (x1.min(x2), x1.max(x2))
        };
        let (ua, ub) = end(0.5, 0.5);
        let (va, vb) = end(0.3, 0.7);
        pairs.push(IbpPair {
            name: "contact".into(),
            u: Bump::new(ua, ub, 1.0, 0.3 / lo),
            v: Bump::new(va, vb, 1.0, 0.0),
        });
    } else {
        pairs.push(IbpPair {
            name: "interior_narrow".into(),
            u: Bump::new(a + 0.4 * l, a + 0.9 * l, 1.0, 0.0),
            v: Bump::new(a + 0.35 * l, a + 0.6 * l, 2.0, 0.0),
        });
    }
    pairs
}

/// Integration panels covering one set of intervals, with the bump support
/// ends as extra breakpoints.
fn panels(intervals: &[crate::domain::Interval], pair: &IbpPair, width: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for iv in intervals {
        let mut cuts = vec![iv.left, iv.right];
        for x in [pair.u.left, pair.u.right, pair.v.left, pair.v.right] {
            if x > iv.left && x < iv.right {
                cuts.push(x);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for w in cuts.windows(2) {
            let m = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
            for i in 0..m {
                let a = w[0] + (w[1] - w[0]) * i as f64 / m as f64;
                let b = if i + 1 == m {
                    w[1]
                } else {
                    w[0] + (w[1] - w[0]) * (i + 1) as f64 / m as f64
                };
                out.push((a, b));
            }
        }
    }
    out
}

/// Evaluate every term of the identity for one pair by direct quadrature.
pub fn ibp_terms(
    region: &ValidatedRegion,
    pair: &IbpPair,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<IbpTerms, VerifyError> {
    let (outer, inner) = nested(quad)?;
    let (u, v) = (&pair.u, &pair.v);
    let hull = region.hull();
    let width = ((hull.1 - hull.0) / 32.0).min(0.0625);
    let omega_panels = panels(region.omega(), pair, width);
    let neumann_panels = panels(region.neumann(), pair, width);
    let touches = |(a, b): (f64, f64), bump: &Bump| bump.overlaps(a, b);

    let mut local_lhs = 0.0;
    let mut local_rhs = 0.0;
    for &(a, b) in &omega_panels {
        if !touches((a, b), v) {
            continue;
        }
        local_lhs += outer.adaptive(a, b, &|x| [-v.value(x) * u.d2(x)])?[0];
        if touches((a, b), u) {
            local_rhs += outer.adaptive(a, b, &|x| [u.d1(x) * v.d1(x)])?[0];
        }
    }

    let mut boundary = 0.0;
    for &c in region.contact_points() {
        let nu = if region.in_omega(c - 1e-12 * (1.0 + c.abs())) {
            1.0
        } else {
            -1.0
        };
        boundary += v.value(c) * u.d1(c) * nu;
    }

    let su = Supported {
        f: |x: f64| u.value(x),
        support: u.support(),
    };
    let err: RefCell<Option<KernelError>> = RefCell::new(None);
    let record = |r: Result<f64, KernelError>| match r {
        Ok(x) => x,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let take_err = || err.borrow_mut().take();

    let mut operator_lhs = 0.0;
    for &(a, b) in &omega_panels {
        if !touches((a, b), v) {
            continue;
        }
        let f =
            |x: f64| [v.value(x) * record(fractional_laplacian_pointwise(&su, x, params, &inner))];
        let val = outer.adaptive(a, b, &f);
        if let Some(e) = take_err() {
            return Err(e.into());
        }
        operator_lhs += val?[0];
    }

    let contacts = region.contact_points();
    let mut neumann = 0.0;
    for &(a, b) in &neumann_panels {
        if !touches((a, b), v) {
            continue;
        }
        let f = |x: f64| {
            [v.value(x) * record(nonlocal_neumann_fn(&su, x, region.omega(), params, &inner))]
        };
        let sing = (contacts.contains(&a), contacts.contains(&b));
        let val = integrate_panel(&outer, a, b, sing, 1.0 - 2.0 * params.s, &f);
        if let Some(e) = take_err() {
            return Err(e.into());
        }
        neumann += val?;
    }

    // Q(u, v): ordered Ω×Ω pairs, both orders of Ω×𝒩, and the 𝒟 tail.
    let g = |x: f64, y: f64| [(u.value(x) - u.value(y)) * (v.value(x) - v.value(y))];
    let live = |p: (f64, f64), q: (f64, f64)| {
        (touches(p, u) || touches(q, u)) && (touches(p, v) || touches(q, v))
    };
    let mut energy = 0.0;
    for (i, &p) in omega_panels.iter().enumerate() {
        for &q in &omega_panels[i..] {
            if live(p, q) {
                let w = if p == q { 1.0 } else { 2.0 };
                energy += w * singular_pair_integral(p, q, params.s, &outer, &g)?[0];
            }
        }
        for &q in &neumann_panels {
            if live(p, q) {
                energy += 2.0 * singular_pair_integral(p, q, params.s, &outer, &g)?[0];
            }
        }
    }
    energy *= params.scale();
    for &(a, b) in &omega_panels {
        if touches((a, b), u) && touches((a, b), v) {
            let f = |x: f64| [u.value(x) * v.value(x) * record(kappa_tail(x, region, params))];
            let val = outer.adaptive(a, b, &f);
            if let Some(e) = take_err() {
                return Err(e.into());
            }
            energy += 2.0 * val?[0];
        }
    }

    let lhs = local_lhs + FORM_OPERATOR_RATIO * operator_lhs;
    let rhs = local_rhs + energy - boundary - FORM_OPERATOR_RATIO * neumann;
    let scale = [
        local_lhs,
        FORM_OPERATOR_RATIO * operator_lhs,
        local_rhs,
        energy,
        boundary,
        FORM_OPERATOR_RATIO * neumann,
    ]
    .iter()
    .fold(0.0_f64, |m, t| m.max(t.abs()));
    let defect = if scale > 0.0 {
        (lhs - rhs).abs() / scale
    } else {
        (lhs - rhs).abs()
    };
    Ok(IbpTerms {
        name: pair.name.clone(),
        local_lhs,
        operator_lhs,
        local_rhs,
        energy,
        boundary,
        neumann,
        lhs,
        rhs,
        defect,
    })
}

/// Integration-by-parts part of the registry, on the default pairs.
pub fn verify_ibp(
    region: &ValidatedRegion,
    params: &KernelParams,
    quad: &Quadrature,
    tol: &Tolerances,
    fault: Option<Fault>,
) -> Result<(Report, Vec<IbpTerms>), VerifyError> {
    let mut terms = Vec::new();
    for pair in default_ibp_pairs(region) {
        let mut t = ibp_terms(region, &pair, params, quad)?;
        if fault == Some(Fault::IbpIdentity) {
            // Pair the energy with the pointwise operator at ratio one.
            t.lhs = t.local_lhs + t.operator_lhs;
            let scale = [
                t.local_lhs,
                t.operator_lhs,
                t.local_rhs,
                t.energy,
                t.boundary,
                2.0 * t.neumann,
            ]
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()));
            t.defect = (t.lhs - t.rhs).abs() / scale;
        }
        terms.push(t);
    }
    let mut r = Report::default();
    let worst = terms.iter().fold(0.0_f64, |m, t| m.max(t.defect));
    let detail: Vec<String> = terms
        .iter()
        .map(|t| format!("{} {:.2e}", t.name, t.defect))
        .collect();
    r.checks.push(Check::new(
        "ibp_identity",
        worst,
        Comparison::AtMost,
        tol.ibp,
        format!("relative defect per pair: {}", detail.join(", ")),
    ));
    for t in &terms {
        r.observe(
            format!("ibp_lhs[{}]", t.name),
            t.lhs,
            "int v(-u'') + 2 int v (-Delta)^s u",
        );
        r.observe(
            format!("ibp_rhs[{}]", t.name),
            t.rhs,
            "int u'v' + Q(u,v) - boundary - 2 int_N v N_s u",
        );
    }
    Ok((r, terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dofs: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Self-convergence rates `log(|δ_{i-1}|/|δ_i|)/log(h_{i-1}/h_i)` from
    /// successive differences; `rates[i][k]` is defined for i ≥ 2 (NaN before).
    pub rates: Vec<Vec<f64>>,
    /// Rates against a known limit, when one is supplied; defined for i ≥ 1.
    pub reference_rates: Option<Vec<Vec<f64>>>,
    /// Richardson-extrapolated limit per eigenvalue from the last three rows.
    pub limits: Vec<f64>,
}

/// Eigenvalues on a sequence of decreasing mesh sizes.
pub fn convergence_study(
    region: &ValidatedRegion,
    params: &KernelParams,
    quad: &Quadrature,
    toggles: Toggles,
    h_list: &[f64],
    k: usize,
    reference: Option<&[f64]>,
) -> Result<ConvergenceTable, VerifyError> {
    if h_list.len() < 3 {
        return Err(VerifyError::Precondition(format!(
            "convergence study needs at least 3 mesh sizes, got {}",
            h_list.len()
        )));
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(VerifyError::Precondition(
            "mesh sizes must be strictly decreasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let mesh = build_mesh(region, h)?;
        let forms = assemble_forms(&mesh, params, quad, toggles)?;
        let sp = solve_dense(&forms, k.min(forms.b_rank))?;
        rows.push(ConvergenceRow {
            h: mesh.h(),
            dofs: forms.n_dofs(),
            lambdas: sp.lambdas,
        });
    }
    let k = rows.iter().map(|r| r.lambdas.len()).min().unwrap_or(0);
    let n = rows.len();
    let mut rates = vec![vec![f64::NAN; k]; n];
    for i in 2..n {
        for j in 0..k {
            let d0 = rows[i - 1].lambdas[j] - rows[i - 2].lambdas[j];
            let d1 = rows[i].lambdas[j] - rows[i - 1].lambdas[j];
            rates[i][j] = (d0 / d1).abs().ln() / (rows[i - 1].h / rows[i].h).ln();
        }
    }
    let reference_rates = reference.map(|exact| {
        let mut out = vec![vec![f64::NAN; k]; n];
        for i in 1..n {
            for j in 0..k.min(exact.len()) {
                let e0 = rows[i - 1].lambdas[j] - exact[j];
                let e1 = rows[i].lambdas[j] - exact[j];
                out[i][j] = (e0 / e1).abs().ln() / (rows[i - 1].h / rows[i].h).ln();
            }
        }
        out
    });
    let limits = (0..k)
        .map(|j| {
            let p = if rates[n - 1][j].is_finite() && rates[n - 1][j] > 0.0 {
                rates[n - 1][j]
            } else {
                2.0
            };
            let ratio = (rows[n - 2].h / rows[n - 1].h).powf(p);
            let (a, b) = (rows[n - 2].lambdas[j], rows[n - 1].lambdas[j]);
            b + (b - a) / (ratio - 1.0)
        })
        .collect();
    Ok(ConvergenceTable {
        rows,
        rates,
        reference_rates,
        limits,
    })
}
