//! Silhouette rasterization in normalized image coordinates.
//!
//! The image covers `[0, 1]^2`; pixel `(r, c)` of an `R x R` image samples
//! the point `((c + 0.5) / R, (r + 0.5) / R)`. Inverse temperatures are in
//! the same normalized units.

use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::program::{beta_heuristic, run, Condition, Expr, Mode, RunReport, State, Statement};

/// Triangles below this absolute signed area are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Projected 2-D triangles, stored as a `[T, 3, 2]` tensor of vertex
/// coordinates (possibly tracked).
#[derive(Debug, Clone)]
pub struct Mesh2DProjection {
    pub triangles: Tensor,
}

impl Mesh2DProjection {
    pub fn new(triangles: Tensor) -> Result<Self> {
        if triangles.rank() != 3 || triangles.shape()[1..] != [3, 2] {
            return Err(Error::structural(format!(
                "triangles must have shape [T, 3, 2], got {:?}",
                triangles.shape()
            )));
        }
        if triangles.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("mesh", "non-finite vertex coordinate"));
        }
        Ok(Mesh2DProjection { triangles })
    }

    pub fn from_points(tris: &[[[f64; 2]; 3]]) -> Result<Self> {
        let data = tris.iter().flatten().flatten().copied().collect();
        Self::new(Tensor::new(&[tris.len(), 3, 2], data)?)
    }

    pub fn len(&self) -> usize {
        self.triangles.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self, t: usize) -> [[f64; 2]; 3] {
        let v = &self.triangles.value()[t * 6..t * 6 + 6];
        [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]
    }

    /// Signed area per triangle; positive for counter-clockwise winding.
    pub fn winding(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| {
                let [a, b, c] = self.points(t);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            })
            .collect()
    }

    pub fn degenerate(&self) -> Vec<bool> {
        self.winding().iter().map(|a| a.abs() < DEGENERATE_AREA).collect()
    }

    /// The `[3, 2]` vertex block of triangle `t`, keeping tape identity.
    pub fn triangle(&self, t: usize) -> Result<Tensor> {
        let idx: Vec<usize> = (t * 6..t * 6 + 6).collect();
        self.triangles.gather(&idx, &[3, 2])
    }
}

/// Rigid pose plus pinhole intrinsics. A camera-space point `(x, y, z)`
/// with `z > 0` lands at `(0.5 + f x / z, 0.5 + f y / z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub focal: f64,
}

impl Camera {
    pub fn identity(focal: f64) -> Self {
        Camera {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            focal,
        }
    }
}

/// Transforms `[V, 3]` world vertices into the camera and projects the
/// faces onto the image plane.
pub fn transform_and_projection(
    vertices: &Tensor,
    faces: &[[usize; 3]],
    camera: &Camera,
) -> Result<Mesh2DProjection> {
    if vertices.rank() != 2 || vertices.shape()[1] != 3 {
        return Err(Error::structural(format!(
            "vertices must have shape [V, 3], got {:?}",
            vertices.shape()
        )));
    }
    let nv = vertices.shape()[0];
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= nv) {
        return Err(Error::structural(format!("face references vertex {bad} of {nv}")));
    }
    let rt: Vec<f64> = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| camera.rotation[j][i])
        .collect();
    let shift: Vec<f64> = (0..nv).flat_map(|_| camera.translation).collect();
    let cam = vertices
        .matmul(&Tensor::matrix(3, 3, rt)?)?
        .add(&Tensor::new(&[nv, 3], shift)?)?;
    let col = |k: usize| cam.gather(&(0..nv).map(|v| v * 3 + k).collect::<Vec<_>>(), &[nv]);
    let (x, y, z) = (col(0)?, col(1)?, col(2)?);
    if let Some(zv) = z.value().iter().find(|z| **z <= 0.0) {
        return Err(Error::domain("projection", format!("vertex depth {zv} is not in front of the camera")));
    }
    let u = x.div(&z)?.affine(camera.focal, 0.5);
    let v = y.div(&z)?.affine(camera.focal, 0.5);
    let uv = Tensor::concat(&[u, v], &[2 * nv])?;
    let idx: Vec<usize> = faces
        .iter()
        .flat_map(|f| f.iter().flat_map(|&vi| [vi, nv + vi]))
        .collect();
    Mesh2DProjection::new(uv.gather(&idx, &[faces.len(), 3, 2])?)
}

/// Pixel-center coordinates of an `R x R` image, row-major.
pub fn pixel_centers(res: usize) -> (Tensor, Tensor) {
    let mut xs = Vec::with_capacity(res * res);
    let mut ys = Vec::with_capacity(res * res);
    for r in 0..res {
        for c in 0..res {
            xs.push((c as f64 + 0.5) / res as f64);
            ys.push((r as f64 + 0.5) / res as f64);
        }
    }
    (Tensor::vector(xs), Tensor::vector(ys))
}

struct Edge {
    ax: Tensor,
    ay: Tensor,
    ex: Tensor,
    ey: Tensor,
}

fn edges(tri: &Tensor) -> Result<[Edge; 3]> {
    let c = |k: usize| tri.at(k);
    let pts = [(c(0)?, c(1)?), (c(2)?, c(3)?), (c(4)?, c(5)?)];
    let mk = |i: usize| -> Result<Edge> {
        let (a, b) = (&pts[i], &pts[(i + 1) % 3]);
        Ok(Edge {
            ax: a.0.clone(),
            ay: a.1.clone(),
            ex: b.0.sub(&a.0)?,
            ey: b.1.sub(&a.1)?,
        })
    };
    Ok([mk(0)?, mk(1)?, mk(2)?])
}

fn check_triangle(tri: &Tensor) -> Result<()> {
    let v = tri.value();
    let area = 0.5 * ((v[2] - v[0]) * (v[5] - v[1]) - (v[3] - v[1]) * (v[4] - v[0]));
    if area.abs() < DEGENERATE_AREA {
        return Err(Error::domain("triangle", format!("degenerate triangle (area {area:e})")));
    }
    Ok(())
}

/// Signed distances of pixel points to the three edge lines (positive on
/// the left of each directed edge).
pub fn directed_edge_distances(px: &Tensor, py: &Tensor, tri: &Tensor) -> Result<[Tensor; 3]> {
    check_triangle(tri)?;
    let es = edges(tri)?;
    let one = |e: &Edge| -> Result<Tensor> {
        let wx = px.sub(&e.ax)?;
        let wy = py.sub(&e.ay)?;
        let cross = e.ex.mul(&wy)?.sub(&e.ey.mul(&wx)?)?;
        let len = e.ex.square().add(&e.ey.square())?.sqrt()?;
        cross.div(&len)
    };
    Ok([one(&es[0])?, one(&es[1])?, one(&es[2])?])
}

/// Euclidean distance from each point to the triangle boundary, negated
/// for points inside. Inside means all three directed edge distances are
/// `<= 0` or all are `> 0`, matching the three-edge renderer.
pub fn signed_distance_lanes(px: &Tensor, py: &Tensor, tri: &Tensor) -> Result<Tensor> {
    check_triangle(tri)?;
    let n = px.len();
    let zeros = Tensor::zeros(&[n]);
    let ones = Tensor::full(&[n], 1.0);
    let mut dists = Vec::with_capacity(3);
    let mut signs = Vec::with_capacity(3);
    for e in edges(tri)? {
        let wx = px.sub(&e.ax)?;
        let wy = py.sub(&e.ay)?;
        let len2 = e.ex.square().add(&e.ey.square())?;
        let t = wx.mul(&e.ex)?.add(&wy.mul(&e.ey)?)?.div(&len2)?;
        let below: Vec<bool> = t.value().iter().map(|v| *v < 0.0).collect();
        let t = Tensor::select(&below, &zeros, &t)?;
        let above: Vec<bool> = t.value().iter().map(|v| *v > 1.0).collect();
        let t = Tensor::select(&above, &ones, &t)?;
        let qx = wx.sub(&t.mul(&e.ex)?)?;
        let qy = wy.sub(&t.mul(&e.ey)?)?;
        // The tiny floor keeps the derivative finite on the boundary.
        dists.push(qx.square().add(&qy.square())?.add_scalar(1e-24).sqrt()?);
        let cross = e.ex.mul(&wy)?.sub(&e.ey.mul(&wx)?)?;
        signs.push(cross.to_vec());
    }
    let pick: Vec<bool> = dists[0].value().iter().zip(dists[1].value()).map(|(a, b)| a < b).collect();
    let m = Tensor::select(&pick, &dists[0], &dists[1])?;
    let pick: Vec<bool> = m.value().iter().zip(dists[2].value()).map(|(a, b)| a < b).collect();
    let m = Tensor::select(&pick, &m, &dists[2])?;
    let inside: Vec<bool> = (0..n)
        .map(|k| {
            let s = [signs[0][k], signs[1][k], signs[2][k]];
            s.iter().all(|v| *v <= 0.0) || s.iter().all(|v| *v > 0.0)
        })
        .collect();
    Tensor::select(&inside, &m.neg(), &m)
}

/// Signed distance from one point `p` (`[2]`) to a `[3, 2]` triangle.
pub fn signed_point_triangle_distance(p: &Tensor, tri: &Tensor) -> Result<Tensor> {
    if p.len() != 2 || tri.len() != 6 {
        return Err(Error::structural("expected a 2-D point and a [3, 2] triangle"));
    }
    let px = p.gather(&[0], &[1])?;
    let py = p.gather(&[1], &[1])?;
    signed_distance_lanes(&px, &py, tri)?.reshape(&[])
}

/// A rendered image with the run's warnings.
#[derive(Debug, Clone)]
pub struct Rendered {
    /// `[R, R]` occupancy in `[0, 1]`.
    pub image: Tensor,
    pub report: RunReport,
}

#[derive(Clone, Copy)]
enum Renderer {
    ThreeEdges,
    Euclidean,
}

fn set_pixels() -> Statement {
    Statement::assign(
        "image",
        Expr::new(|s| Ok(Tensor::full(crate::program::get(s, "image")?.shape(), 1.0))),
    )
}

fn le_zero(name: &str) -> Condition {
    Condition::gt(Expr::var(name), Expr::constant(0.0)).not()
}

fn gt_zero(name: &str) -> Condition {
    Condition::gt(Expr::var(name), Expr::constant(0.0))
}

fn renderer_program(kind: Renderer, triangles: Arc<Vec<usize>>) -> Statement {
    let per_triangle = match kind {
        Renderer::ThreeEdges => {
            let tris = triangles.clone();
            let distances = Statement::compute(&["V", "t", "px", "py"], &["d1", "d2", "d3"], move |v, _| {
                let tri = triangle_of(&v[0], tris[v[1].item() as usize])?;
                let [d1, d2, d3] = directed_edge_distances(&v[2], &v[3], &tri)?;
                Ok(vec![d1, d2, d3])
            });
            Statement::seq(vec![
                distances,
                Statement::if_else(
                    le_zero("d1"),
                    Statement::if_then(le_zero("d2"), Statement::if_then(le_zero("d3"), set_pixels())),
                    Statement::if_then(gt_zero("d2"), Statement::if_then(gt_zero("d3"), set_pixels())),
                ),
            ])
        }
        Renderer::Euclidean => {
            let tris = triangles.clone();
            let distance = Statement::compute(&["V", "t", "px", "py"], &["d"], move |v, _| {
                let tri = triangle_of(&v[0], tris[v[1].item() as usize])?;
                Ok(vec![signed_distance_lanes(&v[2], &v[3], &tri)?])
            });
            Statement::seq(vec![distance, Statement::if_then(le_zero("d"), set_pixels())])
        }
    };
    Statement::for_loop("t", Expr::constant(triangles.len() as f64), per_triangle)
}

fn triangle_of(all: &Tensor, t: usize) -> Result<Tensor> {
    let idx: Vec<usize> = (t * 6..t * 6 + 6).collect();
    all.gather(&idx, &[3, 2])
}

fn setup(kind: Renderer, mesh: &Mesh2DProjection, res: usize) -> Result<(Statement, State)> {
    if res == 0 {
        return Err(Error::structural("resolution must be at least 1"));
    }
    let degenerate = mesh.degenerate();
    let keep: Vec<usize> = (0..mesh.len()).filter(|t| !degenerate[*t]).collect();
    let (px, py) = pixel_centers(res);
    let lanes = res * res;
    let mut s = State::new();
    s.insert("V".into(), mesh.triangles.clone());
    s.insert("px".into(), px);
    s.insert("py".into(), py);
    s.insert("image".into(), Tensor::zeros(&[lanes]));
    for name in ["d", "d1", "d2", "d3"] {
        s.insert(name.into(), Tensor::zeros(&[lanes]));
    }
    Ok((renderer_program(kind, Arc::new(keep)), s))
}

fn render(kind: Renderer, mesh: &Mesh2DProjection, res: usize, beta: f64, mode: Mode) -> Result<Rendered> {
    let (program, s) = setup(kind, mesh, res)?;
    let (out, mut report) = run(&program, &s, beta, mode)?;
    for (t, bad) in mesh.degenerate().iter().enumerate() {
        if *bad {
            let msg = format!("triangle {t} is degenerate and was not drawn");
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
    }
    Ok(Rendered {
        image: out["image"].reshape(&[res, res])?,
        report,
    })
}

/// The square-root access-count heuristic for rendering `mesh`.
pub fn heuristic_beta(mesh: &Mesh2DProjection, res: usize, euclidean: bool) -> Result<f64> {
    let kind = if euclidean { Renderer::Euclidean } else { Renderer::ThreeEdges };
    let (program, s) = setup(kind, mesh, res)?;
    beta_heuristic(&program, &s)
}

/// Per pixel and triangle, the triangle covers the pixel when it lies on the
/// inner side of all three edges (either winding). Coverage of several
/// triangles combines as a probabilistic OR.
pub fn rasterize_three_edges(mesh: &Mesh2DProjection, res: usize, beta: f64, mode: Mode) -> Result<Rendered> {
    render(Renderer::ThreeEdges, mesh, res, beta, mode)
}

/// Occupancy `P[d <= 0] = sigma(-beta d)` of the signed Euclidean distance
/// `d` to each triangle, combined across triangles as a probabilistic OR.
pub fn rasterize_euclidean(mesh: &Mesh2DProjection, res: usize, beta: f64, mode: Mode) -> Result<Rendered> {
    render(Renderer::Euclidean, mesh, res, beta, mode)
}
