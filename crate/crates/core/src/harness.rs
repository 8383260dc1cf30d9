//! Experiment harnesses: self-convergence rate studies on nested refinements
//! and blow-up runs with moment tracking.

use crate::diagnostics::{self, ClassifyThresholds, DiagnosticsRecord, Verdict};
use crate::error::{Error, Result};
use crate::fem;
use crate::field::NodalField;
use crate::mesh::{build_uniform_rect_mesh, Mesh};
use crate::scheme::{NewtonOptions, Params, Scheme, SchemeState, StepStatus};

/// Initial datum for a run.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    Constant(f64),
    /// Gaussian bump rescaled so the discrete mass (u_h^0, 1)_h equals `mass`.
    Gaussian {
        center: [f64; 2],
        width: f64,
        mass: f64,
    },
}

impl InitialCondition {
    pub fn sample(&self, mesh: &Mesh) -> Result<NodalField> {
        match self {
            InitialCondition::Constant(c) => {
                if !(*c > 0.0) {
                    return Err(Error::Config(format!(
                        "constant initial datum must be positive, got {c}"
                    )));
                }
                NodalField::constant(mesh, *c)
            }
            InitialCondition::Gaussian {
                center,
                width,
                mass,
            } => {
                if !(*width > 0.0) || !(*mass > 0.0) {
                    return Err(Error::Config(format!(
                        "gaussian initial datum needs width > 0 and mass > 0, got width={width}, mass={mass}"
                    )));
                }
                let [cx, cy] = *center;
                let w2 = 2.0 * width * width;
                let raw = fem::interpolate(mesh, |x, y| {
                    (-((x - cx).powi(2) + (y - cy).powi(2)) / w2).exp()
                })?;
                let m0 = fem::discrete_mass(mesh, &raw)?;
                if !(m0 > 0.0) {
                    return Err(Error::Config(
                        "gaussian initial datum has vanishing discrete mass".into(),
                    ));
                }
                let scale = mass / m0;
                NodalField::new(mesh, raw.values().iter().map(|v| v * scale).collect())
            }
        }
    }
}

/// Everything needed to set up one simulation except the time step, which the
/// studies derive per level.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub params: Params,
    pub initial: InitialCondition,
    pub newton: NewtonOptions,
}

impl SimulationSetup {
    pub fn build(&self) -> Result<(Scheme, SchemeState)> {
        let mesh = build_uniform_rect_mesh(self.x_range, self.y_range, self.nx, self.ny)?;
        let mut scheme = Scheme::new(mesh, self.params)?;
        scheme.newton = self.newton;
        let u0 = self.initial.sample(scheme.mesh())?;
        let state = scheme.initialize_from_field(u0)?;
        Ok((scheme, state))
    }
}

/// One level of a convergence study.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub err_u_l2h: f64,
    pub err_v_h1: f64,
    /// log2 error ratio against the previous level; None on the first row or
    /// when the errors sit at roundoff scale.
    pub rate_u: Option<f64>,
    pub rate_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

/// Self-convergence study: run on meshes h, h/2, ..., with tau proportional
/// to h per level, measure against one extra refinement as reference.
///
/// Per level the step count is ceil(T / (coupling * dx)), so tau = T / steps
/// halves (up to rounding) together with the grid spacing and every level
/// lands exactly on the final time. Coarse solutions transfer to the
/// reference mesh by exact vertex injection (the meshes are nested).
pub fn convergence_study(
    setup: &SimulationSetup,
    levels: usize,
    coupling: f64,
    final_time: f64,
) -> Result<RateTable> {
    if levels < 2 {
        return Err(Error::Config(format!(
            "convergence study needs at least 2 levels, got {levels}"
        )));
    }
    if !(coupling > 0.0) || !(final_time > 0.0) {
        return Err(Error::Config(format!(
            "convergence study needs coupling > 0 and final_time > 0, got {coupling}, {final_time}"
        )));
    }

    struct LevelResult {
        mesh: Mesh,
        u: NodalField,
        v: NodalField,
        h: f64,
        tau: f64,
    }

    let width = setup.x_range.1 - setup.x_range.0;
    let mut results: Vec<LevelResult> = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let factor = 1usize << level;
        let mut level_setup = setup.clone();
        level_setup.nx = setup.nx * factor;
        level_setup.ny = setup.ny * factor;
        let dx = width / level_setup.nx as f64;
        let steps = (final_time / (coupling * dx)).ceil().max(1.0) as usize;
        level_setup.params.tau = final_time / steps as f64;

        let (scheme, state) = level_setup.build()?;
        let out = scheme.advance(state, steps, None, |_| {})?;
        if out.status == StepStatus::NewtonFailed {
            return Err(Error::Config(format!(
                "convergence study aborted: Newton failed on level {level} (h = {})",
                scheme.mesh().h()
            )));
        }
        results.push(LevelResult {
            h: scheme.mesh().h(),
            tau: level_setup.params.tau,
            mesh: scheme.mesh().clone(),
            u: out.state.u,
            v: out.state.v,
        });
    }

    let reference = results.pop().expect("levels + 1 results");
    let ref_mesh = &reference.mesh;
    let u_scale = fem::l2h_norm(ref_mesh, &reference.u)?;

    let mut rows = Vec::with_capacity(levels);
    for (level, res) in results.iter().enumerate() {
        let inject = |field: &NodalField| -> NodalField {
            let vals: Vec<f64> = ref_mesh
                .vertices()
                .iter()
                .map(|p| res.mesh.eval_p1(field.values(), p[0], p[1]))
                .collect();
            NodalField::from_raw(vals)
        };
        let du = diff(&inject(&res.u), &reference.u);
        let dv = diff(&inject(&res.v), &reference.v);
        let err_u = fem::l2h_norm(ref_mesh, &du)?;
        let err_v = (fem::l2_norm(ref_mesh, &dv)?.powi(2)
            + fem::h1_seminorm(ref_mesh, &dv)?.powi(2))
        .sqrt();
        rows.push(RateRow {
            level,
            h: res.h,
            tau: res.tau,
            err_u_l2h: err_u,
            err_v_h1: err_v,
            rate_u: None,
            rate_v: None,
        });
    }

    let floor = 1e-12 * (1.0 + u_scale);
    for i in 1..rows.len() {
        let (prev_u, prev_v) = (rows[i - 1].err_u_l2h, rows[i - 1].err_v_h1);
        let (cur_u, cur_v) = (rows[i].err_u_l2h, rows[i].err_v_h1);
        rows[i].rate_u = if prev_u > floor && cur_u > floor {
            Some((prev_u / cur_u).log2())
        } else {
            None
        };
        rows[i].rate_v = if prev_v > floor && cur_v > floor {
            Some((prev_v / cur_v).log2())
        } else {
            None
        };
    }

    Ok(RateTable { rows })
}

fn diff(a: &NodalField, b: &NodalField) -> NodalField {
    NodalField::from_raw(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x - y)
            .collect(),
    )
}

/// Outcome of a blow-up experiment.
#[derive(Debug)]
pub struct BlowupReport {
    pub verdict: Verdict,
    pub status: StepStatus,
    pub history: Vec<DiagnosticsRecord>,
    /// Last time level at which the discrete solution existed, when the run
    /// terminated early.
    pub t_max: Option<f64>,
}

/// Run to `final_time` or early Newton failure, tracking the moment series
/// and classifying the outcome.
pub fn blowup_study(
    setup: &SimulationSetup,
    final_time: f64,
    thresholds: &ClassifyThresholds,
) -> Result<BlowupReport> {
    if !(final_time > 0.0) {
        return Err(Error::Config(format!(
            "blow-up study needs final_time > 0, got {final_time}"
        )));
    }
    let (scheme, state) = setup.build()?;
    let weight = diagnostics::default_moment_weight(scheme.mesh())?;
    let steps = (final_time / setup.params.tau).round().max(1.0) as usize;
    let out = scheme.advance(state, steps, Some(&weight), |_| {})?;
    let verdict = diagnostics::classify_run(&out.history, out.status, thresholds);
    let t_max = match out.status {
        StepStatus::NewtonFailed => out.history.last().map(|r| r.t),
        StepStatus::Ok => None,
    };
    Ok(BlowupReport {
        verdict,
        status: out.status,
        history: out.history,
        t_max,
    })
}
