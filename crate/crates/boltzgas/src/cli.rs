//! Command implementations behind the `boltzgas` binary: admissibility
//! checks, the small-data threshold, and full solver runs with artifact
//! output.
//!
//! Exit codes: 0 success, 1 threshold/verdict failure, 2 configuration
//! error, 3 convergence failure.

use crate::collision::{envelope_constant, AngularQuadrature, CollisionOperator};
use crate::diagnostics::{
    conservation_audit, density_decay, test_function_family, vanishing_check, weak_residual,
    RunReport,
};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::{beginning_envelope, ks_iterate, mild_residual, KsSettings, TimeMesh};
use std::io::Write;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Overrides passed on the command line on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub override_threshold: bool,
    pub workers: Option<usize>,
}

fn effective_workers(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::thread::available_parallelism().ok().map(|p| p.get()))
        .unwrap_or(1)
        .max(1)
}

/// `check`: admissibility report for the scenario's restitution model.
/// Exit 0 only when every check passes.
pub fn cmd_check(scenario: &Scenario, out: &mut impl Write) -> Result<i32> {
    let report = scenario
        .restitution
        .check_assumptions(scenario.beta, scenario.dimension);
    write!(out, "{}", report.render())?;
    if report.all_passed() {
        match envelope_constant(
            scenario.alpha,
            scenario.beta,
            &scenario.restitution,
            scenario.dimension,
        ) {
            Ok(c) => {
                writeln!(
                    out,
                    "constants: C_n = {:.12e}, phi_sup = {:.12e}, k = {:.12e}",
                    c.c_n, c.phi_sup, c.k_alpha_beta
                )?;
                Ok(EXIT_OK)
            }
            Err(e) => {
                writeln!(out, "envelope constant unavailable: {e}")?;
                Ok(EXIT_VERDICT)
            }
        }
    } else {
        Ok(EXIT_VERDICT)
    }
}

/// `threshold`: print the envelope constant, the admissible maximum, the
/// measured initial norm and the verdict. Exit 1 when the datum is too
/// large (unless overridden).
pub fn cmd_threshold(scenario: &Scenario, out: &mut impl Write) -> Result<i32> {
    match scenario.dimension {
        2 => threshold_impl::<2>(scenario, out),
        3 => threshold_impl::<3>(scenario, out),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

fn threshold_impl<const N: usize>(scenario: &Scenario, out: &mut impl Write) -> Result<i32> {
    let grid = scenario.build_grid::<N>()?;
    let f0 = scenario.initial_field(&grid);
    let consts = envelope_constant(scenario.alpha, scenario.beta, &scenario.restitution, N)?;
    let k = consts.k_alpha_beta;
    let threshold = 1.0 / (4.0 * k);
    let norm = f0.maxwellian_norm(scenario.alpha, scenario.beta);
    writeln!(out, "k_alpha_beta        = {k:.12e}")?;
    writeln!(out, "phi_sup             = {:.12e}", consts.phi_sup)?;
    writeln!(out, "threshold 1/(4k)    = {threshold:.12e}")?;
    writeln!(out, "measured ||f0||     = {norm:.12e}")?;
    match beginning_envelope(&f0, scenario.alpha, scenario.beta, &scenario.restitution) {
        Ok(b) => {
            writeln!(out, "envelope amplitude C = {:.12e}", b.c)?;
            let residual = b.initial_norm + k * b.c * b.c - b.c;
            writeln!(out, "fixed-point residual = {residual:.3e}")?;
            writeln!(out, "verdict: pass")?;
            Ok(EXIT_OK)
        }
        Err(Error::ThresholdExceeded { norm, max_norm }) => {
            writeln!(
                out,
                "verdict: fail (norm {norm:.6e} exceeds admissible {max_norm:.6e})"
            )?;
            Ok(EXIT_VERDICT)
        }
        Err(e) => Err(e),
    }
}

/// `run`: full monotone-iteration run with artifacts written to `out_dir`:
/// `report.txt`, `gap_table.csv`, `moments.csv`, `density.csv`,
/// `weak_residual.csv`, and `snapshot_*.csv`.
pub fn cmd_run(
    scenario: &Scenario,
    out_dir: &Path,
    overrides: &RunOverrides,
    log: &mut impl Write,
) -> Result<i32> {
    match scenario.dimension {
        2 => run_impl::<2>(scenario, out_dir, overrides, log),
        3 => run_impl::<3>(scenario, out_dir, overrides, log),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

fn run_impl<const N: usize>(
    scenario: &Scenario,
    out_dir: &Path,
    overrides: &RunOverrides,
    log: &mut impl Write,
) -> Result<i32> {
    std::fs::create_dir_all(out_dir)?;
    let grid = scenario.build_grid::<N>()?;
    let f0 = scenario.initial_field(&grid);
    f0.validate()?;
    let mesh = TimeMesh::new(scenario.time.horizon, scenario.time.steps)?;
    let quad = AngularQuadrature::<N>::new(scenario.angular_order)?;
    let op = CollisionOperator::new(&grid, &scenario.restitution, quad, false)?;
    let settings = KsSettings {
        tol: overrides.tol.unwrap_or(scenario.iteration.tol),
        max_iter: overrides.max_iter.unwrap_or(scenario.iteration.max_iter),
        override_threshold: overrides.override_threshold || scenario.override_threshold,
        workers: effective_workers(overrides.workers),
        ..Default::default()
    };

    let outcome = match ks_iterate(&f0, scenario.alpha, scenario.beta, &op, &mesh, &settings) {
        Ok(o) => o,
        Err(Error::ThresholdExceeded { norm, max_norm }) => {
            writeln!(
                log,
                "threshold rejection: ||f0|| = {norm:.6e} > 1/(4k) = {max_norm:.6e}"
            )?;
            return Ok(EXIT_VERDICT);
        }
        Err(e) => return Err(e),
    };

    // Gap table goes out even for non-converged runs.
    let mut gap_csv = String::from("iteration,max_gap,source_norm");
    for k in 0..mesh.node_count() {
        gap_csv.push_str(&format!(",gap_t{k}"));
    }
    gap_csv.push('\n');
    for row in &outcome.state.gap_history {
        gap_csv.push_str(&format!("{},{:.17e},{:.17e}", row.iteration, row.max_gap, row.source_norm));
        for g in &row.node_gaps {
            gap_csv.push_str(&format!(",{g:.17e}"));
        }
        gap_csv.push('\n');
    }
    std::fs::write(out_dir.join("gap_table.csv"), gap_csv)?;

    if !outcome.state.converged {
        writeln!(
            log,
            "no convergence after {} iterations (last gap {:.6e}); gap table written",
            outcome.state.iterations,
            outcome
                .state
                .gap_history
                .last()
                .map(|r| r.max_gap)
                .unwrap_or(f64::NAN)
        )?;
        return Ok(EXIT_NO_CONVERGENCE);
    }

    // Diagnostics on the converged midpoint solution.
    let v_ref = 1.0 / scenario.beta.sqrt();
    let audit = conservation_audit(&outcome.solution, &scenario.restitution, v_ref);
    let residuals = mild_residual(&outcome.solution, &f0, &op, &mesh, settings.workers);
    let worst_residual = residuals.iter().cloned().fold(0.0, f64::max);
    let weak = weak_residual(
        &outcome.solution,
        &op,
        &mesh,
        &test_function_family(),
        settings.workers,
    );
    let envelope = outcome.state.envelope;
    let env_certified = outcome
        .solution
        .iter()
        .all(|f| f.bounded_by(&envelope, 1e-9));
    let density: Vec<(f64, f64)> = outcome
        .solution
        .iter()
        .map(|f| {
            let sup = f
                .spatial_density()
                .into_iter()
                .fold(0.0f64, f64::max);
            (f.time(), sup)
        })
        .collect();
    let decay = density_decay(&envelope, &grid);
    let vanishing = vanishing_check(&envelope, &grid);
    let diag = op.stencil_diagnostics();

    let mut verdicts: Vec<(String, bool, String)> = Vec::new();
    verdicts.push((
        "converged".into(),
        true,
        format!(
            "{} iterations, final gap {:.3e}",
            outcome.state.iterations,
            outcome.state.gap_history.last().map(|r| r.max_gap).unwrap_or(0.0)
        ),
    ));
    verdicts.push((
        "beginning condition".into(),
        outcome.state.beginning_margin >= 0.0,
        format!("margin {:.3e} of C", outcome.state.beginning_margin),
    ));
    verdicts.push((
        "mass drift < 1e-3".into(),
        audit.mass_drift < 1e-3,
        format!("{:.3e}", audit.mass_drift),
    ));
    verdicts.push((
        "momentum drift < 1e-3".into(),
        audit.momentum_drift < 1e-3,
        format!("{:.3e}", audit.momentum_drift),
    ));
    verdicts.push((
        if audit.elastic {
            "energy constant (elastic)".into()
        } else {
            "energy non-increasing".into()
        },
        audit.energy_ok,
        format!(
            "drift {:.3e}, worst step +{:.3e}",
            audit.energy_drift, audit.max_energy_step_increase
        ),
    ));
    verdicts.push((
        "mild residual".into(),
        worst_residual <= 10.0 * settings.tol + 1e-6,
        format!("max {worst_residual:.3e}"),
    ));
    verdicts.push((
        "envelope certificate".into(),
        env_certified,
        format!("c = {:.6e}", envelope.c),
    ));
    verdicts.push((
        "quadrature weight accounting".into(),
        !diag.flagged(),
        format!(
            "clipped {:.3e} of {:.3e}",
            diag.clipped_weight, diag.total_weight
        ),
    ));

    let report = RunReport {
        audit,
        density,
        decay,
        weak_residuals: weak,
        envelope,
        envelope_certified: env_certified,
        vanishing,
        verdicts,
    };

    let mut f = std::fs::File::create(out_dir.join("moments.csv"))?;
    report.write_moments_csv(&mut f)?;
    let mut f = std::fs::File::create(out_dir.join("density.csv"))?;
    report.write_density_csv(&mut f)?;
    let mut f = std::fs::File::create(out_dir.join("weak_residual.csv"))?;
    report.write_weak_residual_csv(&mut f)?;

    for (i, t) in scenario.snapshot_times.iter().enumerate() {
        let k = ((t / mesh.dt()).round() as usize).min(mesh.steps());
        let path = out_dir.join(format!("snapshot_{i}_t{:.4}.csv", mesh.node(k)));
        let mut f = std::fs::File::create(path)?;
        outcome.solution[k].write_csv(&mut f)?;
    }

    // Text report with the paper-facing constants echoed for audit.
    let state = &outcome.state;
    let mut text = String::new();
    text.push_str(&format!(
        "scenario: n = {}, grid {}^n x {}^n, alpha = {}, beta = {}\n",
        N, scenario.grid.x_cells, scenario.grid.xi_cells, scenario.alpha, scenario.beta
    ));
    text.push_str(&format!("restitution: {:?}\n", scenario.restitution));
    text.push_str(&format!(
        "constants: C_n = {:.12e}, phi_sup = {:.12e}, k = {:.12e}\n",
        state.constants.c_n, state.constants.phi_sup, state.constants.k_alpha_beta
    ));
    text.push_str(&format!(
        "threshold 1/(4k) = {:.12e}, ||f0|| = {:.12e}, C = {:.12e}, certified = {}\n",
        state.threshold, state.initial_norm, envelope.c, state.certified
    ));
    text.push_str(&format!(
        "source-norm budget k C^2 = {:.6e}; measured per iteration in gap_table.csv\n",
        state.source_norm_budget
    ));
    text.push_str(&report.render());
    std::fs::write(out_dir.join("report.txt"), &text)?;
    write!(log, "{text}")?;

    let all_pass = report.verdicts.iter().all(|(_, ok, _)| *ok);
    Ok(if all_pass { EXIT_OK } else { EXIT_VERDICT })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::restitution::RestitutionModel;
    use crate::scenario::{GridSpec, InitialSpec, IterationSpec, TimeSpec};

    fn tiny_scenario(amplitude_factor: f64, model: RestitutionModel) -> Scenario {
        let k = envelope_constant(1.0, 1.0, &model, 2).unwrap().k_alpha_beta;
        Scenario {
            dimension: 2,
            grid: GridSpec {
                x_extent: 5.3,
                xi_extent: 5.3,
                x_cells: 8,
                xi_cells: 8,
            },
            alpha: 1.0,
            beta: 1.0,
            initial: InitialSpec::Maxwellian {
                amplitude: amplitude_factor / (4.0 * k),
            },
            restitution: model,
            time: TimeSpec {
                horizon: 1.0,
                steps: 16,
            },
            iteration: IterationSpec {
                tol: 1e-6,
                max_iter: 30,
            },
            angular_order: 12,
            override_threshold: false,
            snapshot_times: vec![0.0, 1.0],
        }
    }

    #[test]
    fn threshold_accepts_small_and_rejects_large() {
        let mut out = Vec::new();
        let code = cmd_threshold(&tiny_scenario(0.5, RestitutionModel::Elastic), &mut out).unwrap();
        assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&out));
        let mut out = Vec::new();
        let code = cmd_threshold(&tiny_scenario(2.0, RestitutionModel::Elastic), &mut out).unwrap();
        assert_eq!(code, EXIT_VERDICT, "{}", String::from_utf8_lossy(&out));
        assert!(String::from_utf8_lossy(&out).contains("verdict: fail"));
    }

    #[test]
    fn check_passes_for_reference_models() {
        let mut out = Vec::new();
        let code = cmd_check(&tiny_scenario(0.5, RestitutionModel::Viscoelastic { a: 0.5 }), &mut out)
            .unwrap();
        assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&out));
        let text = String::from_utf8_lossy(&out);
        assert!(text.contains("phi_sup"), "{text}");
    }

    #[test]
    fn check_fails_for_inadmissible_model() {
        let model = RestitutionModel::PiecewiseElastic {
            z0: 2.0,
            inner: Box::new(RestitutionModel::Constant { e0: 0.5 }),
        };
        let mut out = Vec::new();
        let code = cmd_check(&tiny_scenario(0.5, model), &mut out).unwrap();
        assert_eq!(code, EXIT_VERDICT);
    }

    #[test]
    fn run_produces_artifacts_and_exit_codes() {
        let dir = std::env::temp_dir().join(format!("boltzgas-test-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let mut log = Vec::new();
        let code = cmd_run(
            &tiny_scenario(0.5, RestitutionModel::Constant { e0: 0.5 }),
            &dir,
            &RunOverrides {
                workers: Some(1),
                ..Default::default()
            },
            &mut log,
        )
        .unwrap();
        assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&log));
        for name in [
            "report.txt",
            "gap_table.csv",
            "moments.csv",
            "density.csv",
            "weak_residual.csv",
        ] {
            assert!(dir.join(name).exists(), "missing artifact {name}");
        }
        // Forced non-convergence path.
        let mut log = Vec::new();
        let code = cmd_run(
            &tiny_scenario(0.5, RestitutionModel::Constant { e0: 0.5 }),
            &dir,
            &RunOverrides {
                max_iter: Some(1),
                workers: Some(1),
                ..Default::default()
            },
            &mut log,
        )
        .unwrap();
        assert_eq!(code, EXIT_NO_CONVERGENCE);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
