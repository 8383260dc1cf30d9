//! Structured triangulations of axis-aligned rectangles.
//!
//! Each grid cell is split along the same diagonal (lower-left to upper-right),
//! so refinement by doubling `nx`, `ny` halves the mesh size exactly and keeps
//! every coarse vertex as a fine vertex.

use crate::error::{Error, Result};

/// Conforming triangulation of a rectangle with cached element geometry.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    /// Constant gradient of the P1 hat function of each local vertex.
    basis_gradients: Vec<[[f64; 2]; 3]>,
    h: f64,
    boundary_vertices: Vec<usize>,
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
}

/// Structured mesh of a rectangle with `nx * ny` cells, each split into two
/// right triangles along the cell diagonal. Triangles are oriented
/// counterclockwise.
pub fn build_uniform_rect_mesh(
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<Mesh> {
    if nx < 1 || ny < 1 {
        return Err(Error::Config(format!(
            "mesh resolution must be at least 1x1, got {nx}x{ny}"
        )));
    }
    if !(x_range.1 > x_range.0) || !(y_range.1 > y_range.0) {
        return Err(Error::Config(format!(
            "degenerate domain [{}, {}] x [{}, {}]",
            x_range.0, x_range.1, y_range.0, y_range.1
        )));
    }

    let dx = (x_range.1 - x_range.0) / nx as f64;
    let dy = (y_range.1 - y_range.0) / ny as f64;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                x_range.0 + i as f64 * dx,
                y_range.0 + j as f64 * dy,
            ]);
        }
    }

    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut boundary_vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || i == nx || j == 0 || j == ny {
                boundary_vertices.push(idx(i, j));
            }
        }
    }

    let mut mesh = Mesh {
        vertices,
        triangles,
        areas: Vec::new(),
        basis_gradients: Vec::new(),
        h: 0.0,
        boundary_vertices,
        x_range,
        y_range,
        nx,
        ny,
    };
    mesh.compute_geometry()?;
    Ok(mesh)
}

/// Mesh with `nx`, `ny` doubled; halves `h` exactly for structured meshes.
pub fn refine(mesh: &Mesh) -> Result<Mesh> {
    build_uniform_rect_mesh(mesh.x_range, mesh.y_range, 2 * mesh.nx, 2 * mesh.ny)
}

impl Mesh {
    fn compute_geometry(&mut self) -> Result<()> {
        self.areas.clear();
        self.basis_gradients.clear();
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            let [a, b, c] = [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]];
            let signed = 0.5
                * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
            if signed <= 0.0 {
                return Err(Error::Config(format!(
                    "triangle {:?} has nonpositive signed area {signed}",
                    tri
                )));
            }
            self.areas.push(signed);

            // grad phi_i = rot90(P_{i+2} - P_{i+1}) / (2 area)
            let verts = [a, b, c];
            let mut grads = [[0.0; 2]; 3];
            for i in 0..3 {
                let p = verts[(i + 1) % 3];
                let q = verts[(i + 2) % 3];
                grads[i] = [
                    -(q[1] - p[1]) / (2.0 * signed),
                    (q[0] - p[0]) / (2.0 * signed),
                ];
            }
            self.basis_gradients.push(grads);

            for i in 0..3 {
                let p = verts[i];
                let q = verts[(i + 1) % 3];
                let edge = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                h = h.max(edge);
            }
        }
        self.h = h;
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn basis_gradients(&self) -> &[[[f64; 2]; 3]] {
        &self.basis_gradients
    }

    /// Maximum edge length over all triangles.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.x_range
    }

    pub fn y_range(&self) -> (f64, f64) {
        self.y_range
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Grid spacing of the underlying structured grid.
    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.x_range.1 - self.x_range.0) / self.nx as f64,
            (self.y_range.1 - self.y_range.0) / self.ny as f64,
        )
    }

    /// Index of the grid vertex at column `i`, row `j`.
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        j * (self.nx + 1) + i
    }

    /// Distance from `q` to the rectangle boundary (negative outside).
    pub fn boundary_distance(&self, q: [f64; 2]) -> f64 {
        let dx = (q[0] - self.x_range.0).min(self.x_range.1 - q[0]);
        let dy = (q[1] - self.y_range.0).min(self.y_range.1 - q[1]);
        dx.min(dy)
    }

    /// Evaluate the P1 function with the given nodal values at a point.
    /// Points outside the domain are clamped to it.
    pub fn eval_p1(&self, values: &[f64], x: f64, y: f64) -> f64 {
        let (dx, dy) = self.cell_size();
        let fx = ((x - self.x_range.0) / dx).clamp(0.0, self.nx as f64);
        let fy = ((y - self.y_range.0) / dy).clamp(0.0, self.ny as f64);
        let i = (fx.floor() as usize).min(self.nx - 1);
        let j = (fy.floor() as usize).min(self.ny - 1);
        let xi = fx - i as f64;
        let eta = fy - j as f64;
        let f00 = values[self.vertex_index(i, j)];
        let f10 = values[self.vertex_index(i + 1, j)];
        let f01 = values[self.vertex_index(i, j + 1)];
        let f11 = values[self.vertex_index(i + 1, j + 1)];
        if xi >= eta {
            // lower triangle (v00, v10, v11)
            f00 * (1.0 - xi) + f10 * (xi - eta) + f11 * eta
        } else {
            // upper triangle (v00, v11, v01)
            f00 * (1.0 - eta) + f11 * xi + f01 * (eta - xi)
        }
    }
}
