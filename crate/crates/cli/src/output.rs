//! File writers: per-step CSV, rate tables, legacy-VTK ASCII snapshots and
//! the run summary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ks2d::diagnostics::DiagnosticsRecord;
use ks2d::harness::RateTable;
use ks2d::{Mesh, SchemeState};

pub const TIMESERIES_HEADER: &str = "step,t,mass,u_min,u_max,energy,moment,newton_iters";
pub const RATES_HEADER: &str = "level,h,tau,err_u_l2h,err_v_h1,rate_u,rate_v";

/// Full-precision float formatting (17 significant digits round-trips f64).
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct TimeseriesWriter {
    out: BufWriter<File>,
}

impl TimeseriesWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{TIMESERIES_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, rec: &DiagnosticsRecord) -> io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            rec.k,
            full(rec.t),
            full(rec.mass),
            full(rec.u_min),
            full(rec.u_max),
            full(rec.energy),
            full(rec.moment),
            rec.newton_iterations
        )
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

pub fn write_rates(path: &Path, table: &RateTable) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{RATES_HEADER}")?;
    for row in &table.rows {
        let rate = |r: Option<f64>| r.map(full).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.level,
            full(row.h),
            full(row.tau),
            full(row.err_u_l2h),
            full(row.err_v_h1),
            rate(row.rate_u),
            rate(row.rate_v)
        )?;
    }
    out.flush()
}

/// Legacy-VTK ASCII unstructured grid with point scalars `u` and `v`.
pub fn write_vtk(path: &Path, mesh: &Mesh, state: &SchemeState) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "ks2d snapshot step {} t {}", state.k, full(state.t))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    let n = mesh.n_vertices();
    writeln!(out, "POINTS {n} double")?;
    for p in mesh.vertices() {
        writeln!(out, "{} {} 0", full(p[0]), full(p[1]))?;
    }
    let nt = mesh.n_triangles();
    writeln!(out, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(out, "5")?; // VTK_TRIANGLE
    }
    writeln!(out, "POINT_DATA {n}")?;
    for (name, field) in [("u", &state.u), ("v", &state.v)] {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for &x in field.values() {
            writeln!(out, "{}", full(x))?;
        }
    }
    out.flush()
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.flush()
}
