//! Per-step scalar observables: discrete mass, extrema, free energy, the
//! moment against a flattened quadratic weight, and blow-up classification.

use crate::error::{Error, Result};
use crate::fem;
use crate::field::NodalField;
use crate::mesh::Mesh;
use crate::scheme::StepStatus;

/// Cutoff weight Phi(x) = phi(|x - q|): quadratic near the center, blended to
/// the constant plateau r1*r2 outside radius r2.
#[derive(Debug, Clone)]
pub struct MomentWeight {
    pub q: [f64; 2],
    pub r1: f64,
    pub r2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    phi_h: NodalField,
}

impl MomentWeight {
    pub fn phi_h(&self) -> &NodalField {
        &self.phi_h
    }

    /// Radial profile phi(r).
    pub fn phi(&self, r: f64) -> f64 {
        if r <= self.r1 {
            r * r
        } else if r <= self.r2 {
            self.a1 * r * r + self.a2 * r + self.a3
        } else {
            self.r1 * self.r2
        }
    }
}

/// Build the moment weight, requiring 0 < r1 < r2 < dist(q, boundary).
pub fn build_moment_weight(mesh: &Mesh, q: [f64; 2], r1: f64, r2: f64) -> Result<MomentWeight> {
    if !(r1 > 0.0 && r2 > r1) {
        return Err(Error::Config(format!(
            "moment radii must satisfy 0 < r1 < r2, got r1={r1}, r2={r2}"
        )));
    }
    let d = mesh.boundary_distance(q);
    if !(r2 < d) {
        return Err(Error::Config(format!(
            "moment radius r2={r2} must stay below the boundary distance {d} of q={q:?}"
        )));
    }
    let a1 = -r1 / (r2 - r1);
    let a2 = 2.0 * r1 * r2 / (r2 - r1);
    let a3 = -r1 * r1 * r2 / (r2 - r1);
    let mut w = MomentWeight {
        q,
        r1,
        r2,
        a1,
        a2,
        a3,
        phi_h: NodalField::from_raw(Vec::new()),
    };
    let values: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| {
            let r = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            w.phi(r)
        })
        .collect();
    w.phi_h = NodalField::new(mesh, values)?;
    Ok(w)
}

/// Default weight: q at the rectangle center, r1 = d/4, r2 = d/2.
pub fn default_moment_weight(mesh: &Mesh) -> Result<MomentWeight> {
    let (x0, x1) = mesh.x_range();
    let (y0, y1) = mesh.y_range();
    let q = [0.5 * (x0 + x1), 0.5 * (y0 + y1)];
    let d = mesh.boundary_distance(q);
    build_moment_weight(mesh, q, 0.25 * d, 0.5 * d)
}

/// Moment M = (u, I_h Phi)_h.
pub fn moment(mesh: &Mesh, u: &NodalField, w: &MomentWeight) -> Result<f64> {
    fem::discrete_inner_product(mesh, u, w.phi_h())
}

/// Discrete free energy
/// F = (u (log u - 1), 1)_h - chi (u, v)_h + chi/(2 alpha) (|grad v|^2 + |v|^2),
/// with the v-norms taken as exact L2 quantities.
pub fn discrete_energy(
    mesh: &Mesh,
    u: &NodalField,
    v: &NodalField,
    chi: f64,
    alpha: f64,
) -> Result<f64> {
    if let Some((i, &bad)) = u
        .values()
        .iter()
        .enumerate()
        .find(|(_, &x)| !(x > 0.0))
    {
        return Err(Error::NonPositive {
            vertex: i,
            value: bad,
        });
    }
    let entropy_vals: Vec<f64> = u.values().iter().map(|&x| x * (x.ln() - 1.0)).collect();
    let entropy = {
        let diag = fem::lumped_mass_diagonal(mesh);
        diag.iter().zip(&entropy_vals).map(|(l, e)| l * e).sum::<f64>()
    };
    let coupling = fem::discrete_inner_product(mesh, u, v)?;
    let grad2 = fem::h1_seminorm(mesh, v)?.powi(2);
    let l22 = fem::l2_norm(mesh, v)?.powi(2);
    Ok(entropy - chi * coupling + chi / (2.0 * alpha) * (grad2 + l22))
}

/// Critical mass 8 pi / (alpha chi) above which concentrated data blow up.
pub fn blowup_threshold(alpha: f64, chi: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(chi > 0.0) {
        return Err(Error::Config(format!(
            "blow-up threshold needs alpha > 0 and chi > 0, got alpha={alpha}, chi={chi}"
        )));
    }
    Ok(8.0 * std::f64::consts::PI / (alpha * chi))
}

/// Scalars recorded after every accepted step (and for the initial state).
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub k: usize,
    pub t: f64,
    pub mass: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub energy: f64,
    /// NaN when no moment weight is configured.
    pub moment: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Completed,
    BlowupSuspected,
}

/// Thresholds for the blow-up heuristic.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyThresholds {
    /// Growth of u_max relative to its initial value that counts as evidence.
    pub growth_factor: f64,
    /// Number of trailing steps over which a monotone moment decrease counts.
    pub moment_window: usize,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            growth_factor: 50.0,
            moment_window: 20,
        }
    }
}

/// Blow-up is suspected when the run ended in a Newton failure and either
/// u_max grew past the threshold factor or the moment decreased monotonically
/// over the trailing window.
pub fn classify_run(
    history: &[DiagnosticsRecord],
    status: StepStatus,
    thresholds: &ClassifyThresholds,
) -> Verdict {
    if history.is_empty() || status == StepStatus::Ok {
        return Verdict::Completed;
    }
    let initial_max = history[0].u_max;
    let peak = history
        .iter()
        .map(|r| r.u_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let growth = initial_max > 0.0 && peak >= thresholds.growth_factor * initial_max;

    let w = thresholds.moment_window;
    let moment_decreasing = history.len() > w
        && history[history.len() - w - 1..]
            .windows(2)
            .all(|pair| {
                pair[0].moment.is_finite()
                    && pair[1].moment.is_finite()
                    && pair[1].moment < pair[0].moment
            });

    if growth || moment_decreasing {
        Verdict::BlowupSuspected
    } else {
        Verdict::Completed
    }
}
