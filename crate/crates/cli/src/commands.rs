use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mixnl::domain::Mesh;
use mixnl::solve::{solve_minmax, MinMaxOptions};
use mixnl::verify::{
    convergence_study, corrupt_spectra, verify_boundary, verify_ibp, verify_spectrum,
    BoundaryLevel, ConvergenceTable, Fault, MeshSummary, BOUNDARY_MODES,
};
use mixnl::{
    assemble_forms, build_mesh, solve_dense, validate_region, Forms, KernelParams, Quadrature,
    Spectrum, Toggles, ValidatedRegion,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ChecksFailed,
}

struct Setup {
    region: ValidatedRegion,
    params: KernelParams,
    quad: Quadrature,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    cfg.validate()?;
    let region =
        validate_region(&cfg.region).map_err(|e| CliError::Config(format!("region: {e}")))?;
    let params = cfg.kernel_params()?;
    let quad = Quadrature::new(cfg.quadrature)
        .map_err(|e| CliError::Config(format!("quadrature: {e}")))?;
    Ok(Setup {
        region,
        params,
        quad,
    })
}

fn mesh_and_forms(st: &Setup, h: f64, toggles: Toggles) -> Result<(Mesh, Forms), CliError> {
    let mesh = build_mesh(&st.region, h).map_err(|e| CliError::Config(format!("target_h: {e}")))?;
    let forms = assemble_forms(&mesh, &st.params, &st.quad, toggles)
        .map_err(|e| CliError::Solver(format!("assembly: {e}")))?;
    Ok((mesh, forms))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("output_dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn meta(
    cfg: &RunConfig,
    command: &str,
    mesh: &Mesh,
    forms: &Forms,
    timings: serde_json::Value,
) -> String {
    to_json(&json!({
        "command": command,
        "config": cfg,
        "h": mesh.h(),
        "dofs": forms.n_dofs(),
        "b_rank": forms.b_rank,
        "b_kernel_dim": forms.b_kernel_dim(),
        "timings": timings,
    }))
}

fn eigenvalues_csv(sp: &Spectrum) -> String {
    let mut s = String::from("k,lambda,residual\n");
    for (i, (l, r)) in sp.lambdas.iter().zip(&sp.residual_norms).enumerate() {
        let _ = writeln!(s, "{},{:.17e},{:.17e}", i + 1, l, r);
    }
    s
}

/// Nodal values over every mesh node, clamped nodes included.
fn eigenvectors_csv(mesh: &Mesh, sp: &Spectrum) -> String {
    let mut s = String::from("x");
    for i in 0..sp.len() {
        let _ = write!(s, ",e{}", i + 1);
    }
    s.push('\n');
    let cols: Vec<Vec<f64>> = (0..sp.len())
        .map(|i| mesh.expand(sp.vectors.column(i).as_slice()))
        .collect();
    for (n, x) in mesh.nodes().iter().enumerate() {
        let _ = write!(s, "{x:.17e}");
        for c in &cols {
            let _ = write!(s, ",{:.17e}", c[n]);
        }
        s.push('\n');
    }
    s
}

fn solver_err(stage: &str) -> impl Fn(mixnl::solve::SolveError) -> CliError + '_ {
    move |e| CliError::Solver(format!("{stage}: {e}"))
}

pub fn cmd_solve(cfg: &RunConfig, dump_matrices: bool) -> Result<Outcome, CliError> {
    let st = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let t0 = Instant::now();
    let (mesh, forms) = mesh_and_forms(&st, cfg.target_h, cfg.toggles)?;
    let t_asm = t0.elapsed().as_secs_f64();
    info!("assembled {} DOFs, b_rank {}", forms.n_dofs(), forms.b_rank);
    let t1 = Instant::now();
    let sp = solve_dense(&forms, cfg.k).map_err(solver_err("dense solve"))?;
    let t_solve = t1.elapsed().as_secs_f64();

    write(&dir, "eigenvalues.csv", &eigenvalues_csv(&sp))?;
    write(&dir, "eigenvectors.csv", &eigenvectors_csv(&mesh, &sp))?;
    if dump_matrices {
        forms
            .write_matrix_market(&dir)
            .map_err(|e| CliError::Config(format!("cannot write matrices: {e}")))?;
    }
    write(
        &dir,
        "run_meta.json",
        &meta(
            cfg,
            "solve",
            &mesh,
            &forms,
            json!({"assembly_s": t_asm, "solve_s": t_solve}),
        ),
    )?;
    Ok(Outcome::Pass)
}

/// λ₁ of −u'' on a single interval of length L with Dirichlet ends is (π/L)².
fn closed_form_reference(cfg: &RunConfig, region: &ValidatedRegion, k: usize) -> Option<Vec<f64>> {
    let local_only = cfg.toggles.local && !cfg.toggles.nonlocal;
    if !local_only || !region.neumann().is_empty() || region.omega().len() != 1 {
        return None;
    }
    let l = region.omega()[0].length();
    Some(
        (1..=k)
            .map(|j| (j as f64 * std::f64::consts::PI / l).powi(2))
            .collect(),
    )
}

pub fn cmd_verify(cfg: &RunConfig, fault: Option<Fault>) -> Result<Outcome, CliError> {
    let st = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let t0 = Instant::now();
    let (mesh, forms) = mesh_and_forms(&st, cfg.target_h, cfg.toggles)?;
    if cfg.k > forms.b_rank {
        return Err(CliError::Solver(format!(
            "requested {} eigenpairs but B has rank {}",
            cfg.k, forms.b_rank
        )));
    }
    let dense = solve_dense(&forms, forms.b_rank).map_err(solver_err("dense solve"))?;
    let minmax = solve_minmax(&forms, cfg.k, &MinMaxOptions::default())
        .map_err(solver_err("min-max solve"))?;
    let (mut d, mut m) = (dense.clone(), minmax.clone());
    if let Some(f) = fault {
        info!("injecting fault {}", f.check_name());
        corrupt_spectra(f, &forms, &mut d, &mut m);
    }
    let verr = |e: mixnl::verify::VerifyError| CliError::Solver(format!("verify: {e}"));
    let mut report = verify_spectrum(&forms, &d, &m, &cfg.tolerances).map_err(verr)?;

    let (fine_mesh, fine_forms) = mesh_and_forms(&st, 0.5 * cfg.target_h, cfg.toggles)?;
    let fine = solve_dense(&fine_forms, BOUNDARY_MODES.min(fine_forms.b_rank))
        .map_err(solver_err("refined solve"))?;
    let levels = [
        BoundaryLevel {
            mesh: &mesh,
            spectrum: &dense,
        },
        BoundaryLevel {
            mesh: &fine_mesh,
            spectrum: &fine,
        },
    ];
    report.merge(verify_boundary(&levels, &st.params, &st.quad, cfg.toggles, fault).map_err(verr)?);
    let (ibp, _) =
        verify_ibp(&st.region, &st.params, &st.quad, &cfg.tolerances, fault).map_err(verr)?;
    report.merge(ibp);

    if let Some(exact) = closed_form_reference(cfg, &st.region, 1) {
        let l1 = dense.lambdas[0];
        report.observations.push(mixnl::verify::Observation {
            name: "lambda1_vs_closed_form".into(),
            value: (l1 - exact[0]) / exact[0],
            context: format!(
                "lambda1 = {l1:.12e}, (pi/L)^2 = {:.12e}, relative difference",
                exact[0]
            ),
        });
    }
    report.config_echo = Some(serde_json::to_value(cfg).expect("serializable"));
    report.mesh_summary = Some(MeshSummary::new(&mesh, &forms));
    let elapsed = t0.elapsed().as_secs_f64();

    write(&dir, "report.json", &report.to_json())?;
    write(&dir, "report.txt", &report.to_text())?;
    write(
        &dir,
        "run_meta.json",
        &meta(cfg, "verify", &mesh, &forms, json!({"total_s": elapsed})),
    )?;
    print!("{}", report.to_text());
    Ok(if report.all_passed() {
        Outcome::Pass
    } else {
        Outcome::ChecksFailed
    })
}

fn convergence_csv(t: &ConvergenceTable) -> String {
    let k = t.limits.len();
    let mut s = String::from("h,dofs");
    for j in 1..=k {
        let _ = write!(s, ",lambda_{j}");
    }
    for j in 1..=k {
        let _ = write!(s, ",rate_{j}");
    }
    if t.reference_rates.is_some() {
        for j in 1..=k {
            let _ = write!(s, ",reference_rate_{j}");
        }
    }
    s.push('\n');
    for (i, row) in t.rows.iter().enumerate() {
        let _ = write!(s, "{:.17e},{}", row.h, row.dofs);
        for l in &row.lambdas[..k] {
            let _ = write!(s, ",{l:.17e}");
        }
        for r in &t.rates[i] {
            let _ = write!(s, ",{r:.17e}");
        }
        if let Some(rr) = &t.reference_rates {
            for r in &rr[i] {
                let _ = write!(s, ",{r:.17e}");
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_converge(cfg: &RunConfig, h_list: &[f64]) -> Result<Outcome, CliError> {
    if h_list.len() < 3 {
        return Err(CliError::Config(format!(
            "h_list needs at least 3 entries, got {}",
            h_list.len()
        )));
    }
    if !h_list.windows(2).all(|w| w[1] < w[0]) {
        return Err(CliError::Config(
            "h_list must be strictly decreasing".into(),
        ));
    }
    let st = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let reference = closed_form_reference(cfg, &st.region, cfg.k);
    let t = convergence_study(
        &st.region,
        &st.params,
        &st.quad,
        cfg.toggles,
        h_list,
        cfg.k,
        reference.as_deref(),
    )
    .map_err(|e| match e {
        mixnl::verify::VerifyError::Domain(d) => CliError::Config(format!("h_list: {d}")),
        other => CliError::Solver(format!("convergence study: {other}")),
    })?;
    write(&dir, "convergence.csv", &convergence_csv(&t))?;
    let mut lim = String::from("k,limit\n");
    for (j, l) in t.limits.iter().enumerate() {
        let _ = writeln!(lim, "{},{:.17e}", j + 1, l);
    }
    write(&dir, "convergence_limits.csv", &lim)?;
    write(
        &dir,
        "run_meta.json",
        &to_json(&json!({"command": "converge", "config": cfg, "h_list": h_list})),
    )?;
    Ok(Outcome::Pass)
}

pub fn cmd_ibp(cfg: &RunConfig, fault: Option<Fault>) -> Result<Outcome, CliError> {
    let st = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let (report, terms) = verify_ibp(&st.region, &st.params, &st.quad, &cfg.tolerances, fault)
        .map_err(|e| CliError::Solver(format!("ibp: {e}")))?;
    let check = report.check("ibp_identity").expect("ibp check present");
    write(
        &dir,
        "ibp.json",
        &to_json(&json!({"check": check, "pairs": terms, "config": cfg})),
    )?;
    print!("{}", report.to_text());
    Ok(if report.all_passed() {
        Outcome::Pass
    } else {
        Outcome::ChecksFailed
    })
}
