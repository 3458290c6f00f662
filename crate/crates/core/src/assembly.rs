//! Stiffness and mass forms of the weak eigenproblem.
//!
//! The energy of a P1 function is
//! `∫_Ω |u'|² + ∬_Q (u(x) − u(y))² K(x − y)` with `Q = ℝ² ∖ (Ωᶜ × Ωᶜ)` over
//! ordered pairs. Using symmetry of the kernel and `u ≡ 0` on 𝒟,
//!
//! ```text
//! ∬_Q = ∬_{Ω×Ω} + 2 ∬_{Ω×𝒩} + 2 ∫_Ω u² κ_𝒟
//! ```
//!
//! so 𝒟 is never meshed and 𝒩 × 𝒩 pairs never appear.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Element, Mesh, NodeRole, RegionKind};
use crate::kernel::{element_pair_matrix, kappa_tail, KernelError, KernelParams};
use crate::quadrature::{End, Quadrature, QuadratureError};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("quadrature failed on element pair ({elem_a}, {elem_b}): {source}")]
    Quadrature {
        elem_a: usize,
        elem_b: usize,
        #[source]
        source: QuadratureError,
    },
    #[error("tail potential failed on element {elem}: {source}")]
    Tail {
        elem: usize,
        #[source]
        source: KernelError,
    },
    #[error("both the local and the nonlocal term are switched off")]
    Toggle,
}

/// Which terms of the operator enter the stiffness form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub local: bool,
    pub nonlocal: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::BOTH
    }
}

impl Toggles {
    pub const BOTH: Self = Self {
        local: true,
        nonlocal: true,
    };
    pub const LOCAL_ONLY: Self = Self {
        local: true,
        nonlocal: false,
    };
    pub const NONLOCAL_ONLY: Self = Self {
        local: false,
        nonlocal: true,
    };
}

/// The assembled pencil `(A, B)` over the DOFs of a mesh.
#[derive(Debug, Clone)]
pub struct Forms {
    pub a_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub b_rank: usize,
    /// Mesh node index of each DOF.
    pub dof_nodes: Vec<usize>,
    /// Coordinate of each DOF.
    pub dof_coords: Vec<f64>,
    /// Whether each DOF's hat carries Ω-mass.
    pub omega_support: Vec<bool>,
}

impl Forms {
    pub fn n_dofs(&self) -> usize {
        self.dof_nodes.len()
    }

    /// Number of DOFs without Ω-mass; these span the kernel of `B`.
    pub fn b_kernel_dim(&self) -> usize {
        self.n_dofs() - self.b_rank
    }

    /// DOFs whose stiffness and mass rows both vanish. With only the local
    /// term and 𝒩 present, hats inside 𝒩 carry neither energy nor Ω-mass and
    /// the pencil says nothing about them.
    pub fn decoupled_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs())
            .filter(|&d| {
                self.a_matrix.row(d).iter().all(|&v| v == 0.0)
                    && self.b_matrix.row(d).iter().all(|&v| v == 0.0)
            })
            .collect()
    }

    /// The forms on a subset of DOFs, in the given order.
    pub fn restrict(&self, dofs: &[usize]) -> Forms {
        Forms {
            a_matrix: self.a_matrix.select_rows(dofs).select_columns(dofs),
            b_matrix: self.b_matrix.select_rows(dofs).select_columns(dofs),
            b_rank: dofs.iter().filter(|&&d| self.omega_support[d]).count(),
            dof_nodes: dofs.iter().map(|&d| self.dof_nodes[d]).collect(),
            dof_coords: dofs.iter().map(|&d| self.dof_coords[d]).collect(),
            omega_support: dofs.iter().map(|&d| self.omega_support[d]).collect(),
        }
    }

    /// Content hash of both matrices, used to tie spectra to their forms.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n_dofs().hash(&mut h);
        for v in self.a_matrix.iter().chain(self.b_matrix.iter()) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn energy(&self, u: &nalgebra::DVector<f64>) -> f64 {
        u.dot(&(&self.a_matrix * u))
    }

    pub fn mass(&self, u: &nalgebra::DVector<f64>) -> f64 {
        u.dot(&(&self.b_matrix * u))
    }

    /// Write `a.mtx` and `b.mtx` into `dir`.
    pub fn write_matrix_market(&self, dir: &Path) -> io::Result<()> {
        write_matrix_market(&dir.join("a.mtx"), &self.a_matrix)?;
        write_matrix_market(&dir.join("b.mtx"), &self.b_matrix)
    }
}

/// Coordinate-format Matrix Market dump of the nonzero entries.
pub fn write_matrix_market(path: &Path, m: &DMatrix<f64>) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
    }
    out.flush()
}

/// Add `w * block` onto the DOF rows/columns of `nodes`.
fn scatter(
    m: &mut DMatrix<f64>,
    mesh: &Mesh,
    nodes: &[usize],
    block: &[f64],
    stride: usize,
    w: f64,
) {
    for (i, &ni) in nodes.iter().enumerate() {
        let Some(di) = mesh.dof(ni) else { continue };
        for (j, &nj) in nodes.iter().enumerate() {
            let Some(dj) = mesh.dof(nj) else { continue };
            m[(di, dj)] += w * block[stride * i + j];
        }
    }
}

pub fn assemble_local_stiffness(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.n_dofs();
    let mut a = DMatrix::zeros(n, n);
    for e in mesh.elements_in(RegionKind::Omega) {
        let k = 1.0 / e.length();
        scatter(&mut a, mesh, &e.nodes, &[k, -k, -k, k], 2, 1.0);
    }
    a
}

pub fn assemble_mass(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.n_dofs();
    let mut b = DMatrix::zeros(n, n);
    for e in mesh.elements_in(RegionKind::Omega) {
        let h = e.length();
        let (d, o) = (h / 3.0, h / 6.0);
        scatter(&mut b, mesh, &e.nodes, &[d, o, o, d], 2, 1.0);
    }
    b
}

/// `∫_E φ_a φ_b κ_𝒟` for the two hats of `elem` (2×2, row-major).
fn tail_block(
    elem: &Element,
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<[f64; 4], KernelError> {
    let region = mesh.region();
    let roles = mesh.roles();
    let left_clamped = roles[elem.nodes[0]] == NodeRole::DirichletClamped;
    let right_clamped = roles[elem.nodes[1]] == NodeRole::DirichletClamped;
    // κ is evaluated inside the open element only, so it never hits 𝒟.
    let f = |x: f64| {
        let k = kappa_tail(x, region, params).unwrap_or(f64::NAN);
        let p0 = if left_clamped {
            0.0
        } else {
            elem.hat(elem.nodes[0], x)
        };
        let p1 = if right_clamped {
            0.0
        } else {
            elem.hat(elem.nodes[1], x)
        };
        [p0 * p0 * k, p0 * p1 * k, p1 * p0 * k, p1 * p1 * k]
    };
    // Hats of free nodes vanish linearly at a clamped end where κ ~ d^{-2s}.
    let exponent = 2.0 - 2.0 * params.s;
    let (a, b) = (elem.left, elem.right);
    let v = match (left_clamped, right_clamped) {
        (true, true) => return Ok([0.0; 4]),
        (true, false) => quad.toward_singular(a, b, End::Left, exponent, &f)?,
        (false, true) => quad.toward_singular(a, b, End::Right, exponent, &f)?,
        (false, false) => quad.adaptive(a, b, &f)?,
    };
    if v.iter().any(|x| x.is_nan()) {
        return Err(KernelError::Contact(elem.left));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Pair(usize, usize, f64),
    Tail(usize),
}

fn assemble_tasks(
    mesh: &Mesh,
    tasks: &[Task],
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<DMatrix<f64>, AssemblyError> {
    let elements = mesh.elements();
    enum Block {
        Pair(crate::kernel::PairMatrix, f64),
        Tail([usize; 2], [f64; 4]),
    }
    // Blocks are computed in parallel and merged in task order.
    let blocks: Vec<Block> = tasks
        .par_iter()
        .map(|t| match *t {
            Task::Pair(i, j, w) => element_pair_matrix(&elements[i], &elements[j], params, quad)
                .map(|m| Block::Pair(m, w))
                .map_err(|source| AssemblyError::Quadrature {
                    elem_a: i,
                    elem_b: j,
                    source,
                }),
            Task::Tail(i) => tail_block(&elements[i], mesh, params, quad)
                .map(|b| Block::Tail(elements[i].nodes, b))
                .map_err(|source| AssemblyError::Tail { elem: i, source }),
        })
        .collect::<Result<_, _>>()?;

    let n = mesh.n_dofs();
    let mut a = DMatrix::zeros(n, n);
    for b in &blocks {
        match b {
            Block::Pair(m, w) => scatter(&mut a, mesh, &m.nodes[..m.len], &m.values, 4, *w),
            Block::Tail(nodes, v) => scatter(&mut a, mesh, nodes, v, 2, 2.0),
        }
    }
    Ok(a)
}

fn pair_tasks(mesh: &Mesh, include_neumann_pairs: bool) -> Vec<Task> {
    let omega: Vec<usize> = mesh
        .elements_in(RegionKind::Omega)
        .map(|e| e.index)
        .collect();
    let neumann: Vec<usize> = mesh
        .elements_in(RegionKind::Neumann)
        .map(|e| e.index)
        .collect();
    let mut tasks = Vec::new();
    for (k, &i) in omega.iter().enumerate() {
        for &j in &omega[k..] {
            tasks.push(Task::Pair(i, j, if i == j { 1.0 } else { 2.0 }));
        }
        for &j in &neumann {
            tasks.push(Task::Pair(i, j, 2.0));
        }
    }
    if include_neumann_pairs {
        for (k, &i) in neumann.iter().enumerate() {
            for &j in &neumann[k..] {
                tasks.push(Task::Pair(i, j, if i == j { 1.0 } else { 2.0 }));
            }
        }
    }
    tasks
}

/// Nonlocal part of the stiffness: the Gagliardo energy over Q.
pub fn assemble_nonlocal_stiffness(
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<DMatrix<f64>, AssemblyError> {
    let mut tasks = pair_tasks(mesh, false);
    tasks.extend(
        mesh.elements_in(RegionKind::Omega)
            .map(|e| Task::Tail(e.index)),
    );
    assemble_tasks(mesh, &tasks, params, quad)
}

/// Gagliardo energy over all of ℝ², i.e. including 𝒩 × 𝒩 and 𝒩 × 𝒟. This is
/// not the energy of the problem; it exists to compare against.
pub fn assemble_full_plane_stiffness(
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
) -> Result<DMatrix<f64>, AssemblyError> {
    let mut tasks = pair_tasks(mesh, true);
    tasks.extend(
        mesh.elements()
            .iter()
            .filter(|e| e.region != RegionKind::Dirichlet)
            .map(|e| Task::Tail(e.index)),
    );
    assemble_tasks(mesh, &tasks, params, quad)
}

/// Relative asymmetry above which assembly is considered suspect.
pub const ASYMMETRY_WARN: f64 = 1e-12;

pub fn assemble_forms(
    mesh: &Mesh,
    params: &KernelParams,
    quad: &Quadrature,
    toggles: Toggles,
) -> Result<Forms, AssemblyError> {
    if !toggles.local && !toggles.nonlocal {
        return Err(AssemblyError::Toggle);
    }
    let n = mesh.n_dofs();
    let mut a = DMatrix::zeros(n, n);
    if toggles.local {
        a += assemble_local_stiffness(mesh);
    }
    if toggles.nonlocal {
        a += assemble_nonlocal_stiffness(mesh, params, quad)?;
    }
    let asym = (&a - a.transpose()).amax();
    if asym > ASYMMETRY_WARN * a.amax() {
        log::warn!(
            "stiffness asymmetry {asym:e} relative to max entry {:e}",
            a.amax()
        );
    }
    let a = (&a + a.transpose()) * 0.5;
    let b = assemble_mass(mesh);

    let dof_nodes: Vec<usize> = (0..n).map(|d| mesh.node_of_dof(d)).collect();
    let mut omega_support = vec![false; n];
    for e in mesh.elements_in(RegionKind::Omega) {
        for node in e.nodes {
            if let Some(d) = mesh.dof(node) {
                omega_support[d] = true;
            }
        }
    }
    let b_rank = omega_support.iter().filter(|x| **x).count();
    Ok(Forms {
        a_matrix: a,
        b_matrix: b,
        b_rank,
        dof_coords: mesh.dof_coordinates(),
        dof_nodes,
        omega_support,
    })
}
