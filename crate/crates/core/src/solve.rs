//! Spectrum of the pencil `A e = λ B e`, computed two independent ways.
//!
//! `B` is only semidefinite: hats strictly inside 𝒩 carry no Ω-mass. Those
//! directions have infinite eigenvalue and are reported separately.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::Forms;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("requested {k} eigenpairs but B has rank {b_rank}")]
    Rank { k: usize, b_rank: usize },
    #[error("stiffness matrix is not positive definite")]
    Factorization,
    #[error("eigenpair {index} did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence {
        index: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("vector has zero Ω-mass")]
    Degenerate,
    #[error("spectra were computed from different forms")]
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Dense,
    MinMax,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Ascending finite eigenvalues.
    pub lambdas: Vec<f64>,
    /// B-orthonormal eigenvectors, one column per eigenvalue.
    pub vectors: DMatrix<f64>,
    /// `‖A e − λ B e‖₂` per pair.
    pub residual_norms: Vec<f64>,
    pub b_rank: usize,
    pub method: Method,
    /// Number of finite eigenvalues the method found (dense: all of them).
    pub finite_count: usize,
    /// A-orthonormal basis of the B-kernel (dense only; empty otherwise).
    pub kernel_basis: DMatrix<f64>,
    /// [`Forms::fingerprint`] of the forms this spectrum was computed from.
    pub forms_id: u64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// Number of infinite-eigenvalue directions.
    pub fn infinite_count(&self) -> usize {
        self.kernel_basis.ncols()
    }

    /// Recompute residual norms against `forms`, e.g. after editing pairs.
    pub fn refresh_residuals(&mut self, forms: &Forms) {
        self.residual_norms = (0..self.len())
            .map(|i| residual(forms, &self.vector(i), self.lambdas[i]).0)
            .collect();
    }
}

/// Absolute and relative residual `‖Ae − λBe‖`.
pub fn residual(forms: &Forms, e: &DVector<f64>, lambda: f64) -> (f64, f64) {
    let ae = &forms.a_matrix * e;
    let be = &forms.b_matrix * e;
    let r = (&ae - &be * lambda).norm();
    let scale = ae.norm() + lambda.abs() * be.norm();
    (r, if scale > 0.0 { r / scale } else { r })
}

/// Flip `e` so its Ω-integral is positive (largest entry positive if that vanishes).
fn normalize_sign(forms: &Forms, e: &mut DVector<f64>) {
    let ones = DVector::from_element(e.len(), 1.0);
    let integral = ones.dot(&(&forms.b_matrix * &*e));
    let sign = if integral.abs() > 1e-12 * e.amax() {
        integral.signum()
    } else {
        let i = e.iamax();
        e[i].signum()
    };
    if sign < 0.0 {
        e.neg_mut();
    }
}

/// Solves `A x = r` on the coupled DOFs; decoupled DOFs (see
/// [`Forms::decoupled_dofs`]) come back as zero.
pub struct StiffnessSolver {
    chol: Cholesky<f64, Dyn>,
    /// Coupled DOFs, or `None` when every DOF is coupled.
    coupled: Option<Vec<usize>>,
    n: usize,
}

impl StiffnessSolver {
    pub fn new(forms: &Forms) -> Result<Self, SolveError> {
        let coupled = coupled_dofs(forms);
        let a = match &coupled {
            Some(c) => forms.a_matrix.select_rows(c).select_columns(c),
            None => forms.a_matrix.clone(),
        };
        Ok(Self {
            chol: a.cholesky().ok_or(SolveError::Factorization)?,
            coupled,
            n: forms.n_dofs(),
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.coupled {
            None => self.chol.solve(rhs),
            Some(c) => {
                let x = self.chol.solve(&rhs.select_rows(c));
                let mut out = DVector::zeros(self.n);
                for (i, &d) in c.iter().enumerate() {
                    out[d] = x[i];
                }
                out
            }
        }
    }
}

fn coupled_dofs(forms: &Forms) -> Option<Vec<usize>> {
    let decoupled = forms.decoupled_dofs();
    if decoupled.is_empty() {
        return None;
    }
    Some(
        (0..forms.n_dofs())
            .filter(|d| decoupled.binary_search(d).is_err())
            .collect(),
    )
}

/// Rows of `m` placed at `dofs` in an `n`-row matrix of zeros.
fn embed(m: &DMatrix<f64>, dofs: &[usize], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, m.ncols());
    for (i, &d) in dofs.iter().enumerate() {
        out.set_row(d, &m.row(i));
    }
    out
}

/// Dense solve: with `A = L Lᵀ`, the symmetric matrix `C = L⁻¹ B L⁻ᵀ` has
/// eigenvalues `μ = 1/λ` for the finite part and `μ ≈ 0` on the B-kernel.
pub fn solve_dense(forms: &Forms, k: usize) -> Result<Spectrum, SolveError> {
    if k > forms.b_rank {
        return Err(SolveError::Rank {
            k,
            b_rank: forms.b_rank,
        });
    }
    if let Some(coupled) = coupled_dofs(forms) {
        let mut sp = solve_dense(&forms.restrict(&coupled), k)?;
        sp.vectors = embed(&sp.vectors, &coupled, forms.n_dofs());
        sp.kernel_basis = embed(&sp.kernel_basis, &coupled, forms.n_dofs());
        sp.forms_id = forms.fingerprint();
        return Ok(sp);
    }
    let chol = forms
        .a_matrix
        .clone()
        .cholesky()
        .ok_or(SolveError::Factorization)?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&forms.b_matrix)
        .ok_or(SolveError::Factorization)?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(SolveError::Factorization)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mu_max = eig.eigenvalues.max();
    let cutoff = f64::EPSILON.sqrt() * mu_max;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lt = l.transpose();
    let back = |y: DVector<f64>| lt.solve_upper_triangular(&y).expect("nonsingular factor");

    let n = forms.n_dofs();
    let finite: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();
    let infinite: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] <= cutoff)
        .collect();

    let mut lambdas = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(n, k.min(finite.len()));
    let mut residual_norms = Vec::with_capacity(k);
    for (col, &i) in finite.iter().take(k).enumerate() {
        let mu = eig.eigenvalues[i];
        let mut e = back(eig.eigenvectors.column(i).into_owned()) / mu.sqrt();
        normalize_sign(forms, &mut e);
        let lambda = 1.0 / mu;
        residual_norms.push(residual(forms, &e, lambda).0);
        lambdas.push(lambda);
        vectors.set_column(col, &e);
    }
    let mut kernel_basis = DMatrix::zeros(n, infinite.len());
    for (col, &i) in infinite.iter().enumerate() {
        kernel_basis.set_column(col, &back(eig.eigenvectors.column(i).into_owned()));
    }

    Ok(Spectrum {
        lambdas,
        vectors,
        residual_norms,
        b_rank: forms.b_rank,
        method: Method::Dense,
        finite_count: finite.len(),
        kernel_basis,
        forms_id: forms.fingerprint(),
    })
}

/// Inner product used to deflate converged eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deflation {
    /// Energy inner product; the constraint set is {u : ⟨u, e_j⟩_A = 0, j ≤ k}.
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinMaxOptions {
    /// Relative change of the Rayleigh quotient between sweeps.
    pub rayleigh_tol: f64,
    /// Relative residual `‖Ae − λBe‖ / (‖Ae‖ + λ‖Be‖)`.
    pub residual_tol: f64,
    pub max_iter: usize,
    pub deflation: Deflation,
    pub seed: u64,
}

impl Default for MinMaxOptions {
    fn default() -> Self {
        Self {
            rayleigh_tol: 1e-14,
            residual_tol: 1e-9,
            max_iter: 200_000,
            deflation: Deflation::A,
            seed: 0x5eed,
        }
    }
}

const STALL_SWEEPS: usize = 50;

/// Min–max recursion: each λ_{j+1} minimizes the Rayleigh quotient over the
/// complement of the eigenvectors found so far, by inverse iteration on the
/// pencil restricted to that complement.
pub fn solve_minmax(forms: &Forms, k: usize, opts: &MinMaxOptions) -> Result<Spectrum, SolveError> {
    if k > forms.b_rank {
        return Err(SolveError::Rank {
            k,
            b_rank: forms.b_rank,
        });
    }
    let solver = StiffnessSolver::new(forms)?;
    let n = forms.n_dofs();
    let a = &forms.a_matrix;
    let b = &forms.b_matrix;

    let mut found: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut lambdas = Vec::with_capacity(k);
    let mut residual_norms = Vec::with_capacity(k);

    let deflate = |x: &mut DVector<f64>, found: &[DVector<f64>], lambdas: &[f64]| {
        // Two passes of classical Gram-Schmidt.
        for _ in 0..2 {
            for (e, &lam) in found.iter().zip(lambdas) {
                let c = match opts.deflation {
                    Deflation::A => e.dot(&(a * &*x)) / lam,
                    Deflation::B => e.dot(&(b * &*x)),
                };
                x.axpy(-c, e, 1.0);
            }
        }
    };

    for j in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(j as u64));
        let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        deflate(&mut x, &found, &lambdas);

        let mut rho_prev = f64::INFINITY;
        let mut converged = None;
        let mut last_res = f64::INFINITY;
        let mut steady = 0;
        for it in 1..=opts.max_iter {
            let mut y = solver.solve(&(b * &x));
            deflate(&mut y, &found, &lambdas);
            let mass = y.dot(&(b * &y));
            if !(mass > 0.0) {
                return Err(SolveError::Degenerate);
            }
            x = y / mass.sqrt();
            let rho = x.dot(&(a * &x));
            let (_, rel) = residual(forms, &x, rho);
            last_res = rel;
            let settled = (rho - rho_prev).abs() <= opts.rayleigh_tol * rho;
            steady = if settled { steady + 1 } else { 0 };
            // Rounding in the deflation can floor the residual slightly above
            // the target; accept once the quotient has stopped moving.
            let stalled = steady >= STALL_SWEEPS && rel <= 10.0 * opts.residual_tol;
            if (settled && rel <= opts.residual_tol) || stalled {
                converged = Some(rho);
                break;
            }
            rho_prev = rho;
            if it == opts.max_iter {
                break;
            }
        }
        let Some(lambda) = converged else {
            return Err(SolveError::Convergence {
                index: j + 1,
                iterations: opts.max_iter,
                residual: last_res,
            });
        };
        normalize_sign(forms, &mut x);
        residual_norms.push(residual(forms, &x, lambda).0);
        lambdas.push(lambda);
        found.push(x);
    }

    let mut vectors = DMatrix::zeros(n, k);
    for (i, e) in found.iter().enumerate() {
        vectors.set_column(i, e);
    }
    Ok(Spectrum {
        lambdas,
        vectors,
        residual_norms,
        b_rank: forms.b_rank,
        method: Method::MinMax,
        finite_count: k,
        kernel_basis: DMatrix::zeros(n, 0),
        forms_id: forms.fingerprint(),
    })
}

/// Energy over Ω-mass.
pub fn rayleigh_quotient(forms: &Forms, u: &DVector<f64>) -> Result<f64, SolveError> {
    let mass = forms.mass(u);
    let floor = f64::EPSILON * forms.b_matrix.amax() * u.norm_squared();
    if mass <= floor {
        return Err(SolveError::Degenerate);
    }
    Ok(forms.energy(u) / mass)
}

/// Largest Rayleigh quotient over the span of the given columns, via the
/// restricted pencil `(Eᵀ A E, Eᵀ B E)`.
pub fn max_over_columns(forms: &Forms, basis: &DMatrix<f64>) -> Result<f64, SolveError> {
    let ar = basis.transpose() * &forms.a_matrix * basis;
    let br = basis.transpose() * &forms.b_matrix * basis;
    let br = (&br + br.transpose()) * 0.5;
    let chol = br.cholesky().ok_or(SolveError::Degenerate)?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&ar)
        .ok_or(SolveError::Degenerate)?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(SolveError::Degenerate)?;
    let m = (&m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(m).eigenvalues.max())
}

/// λ_k as the maximum of the Rayleigh quotient over span{e_1, …, e_k}.
pub fn max_over_span(forms: &Forms, spectrum: &Spectrum, k: usize) -> Result<f64, SolveError> {
    if k == 0 || k > spectrum.len() {
        return Err(SolveError::Rank {
            k,
            b_rank: spectrum.len(),
        });
    }
    max_over_columns(forms, &spectrum.vectors.columns(0, k).into_owned())
}

/// Sizes of runs of eigenvalues whose consecutive relative gaps are below `rel_gap`.
pub fn cluster_sizes(lambdas: &[f64], rel_gap: f64) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut run = 0;
    for (i, &l) in lambdas.iter().enumerate() {
        if i > 0 && (l - lambdas[i - 1]).abs() > rel_gap * lambdas[i - 1].abs() {
            sizes.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        sizes.push(run);
    }
    sizes
}

/// Relative tolerance for clustering eigenvalues into multiplets.
pub const CLUSTER_REL_GAP: f64 = 1e-6;
