//! Discretized domain (flat square torus) and target manifold (round unit
//! sphere) with the pointwise differential-geometric primitives everything
//! else is built on.
//!
//! The domain metric is flat (`g = delta`, unit volume element), so normal
//! coordinates around any node are exact: they are the minimal periodic
//! displacement. The target is the unit sphere `S^{k-1}` in ambient `R^k`,
//! which has explicit projection, exponential/logarithm maps and second
//! fundamental form.

use thiserror::Error;

/// Tolerance for the on-manifold invariant of [`MapField`] values.
pub const ON_SPHERE_TOL: f64 = 1e-12;

const PROJECT_MIN_NORM: f64 = 1e-6;
const TANGENT_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("projection undefined at origin")]
    ProjectionUndefined,
    #[error("outside injectivity radius: |v| = {0} >= pi")]
    OutsideInjectivityRadius(f64),
    #[error("log undefined at cut locus")]
    CutLocus,
    #[error("expected unit vector, got norm {0}")]
    NotUnit(f64),
    #[error("vector is not tangent: normal component {0}")]
    NotTangent(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("ambient dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Periodic rectangular discretization of the flat square torus.
///
/// Nodes sit at `(i h, j h)` for `0 <= i, j < nx` with `h = L / nx`; index
/// arithmetic is modulo `nx`, `ny`. `cutoff_radius` bounds the support of
/// the monotonicity cutoff so balls of that radius never self-overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    nx: usize,
    ny: usize,
    side: f64,
    cutoff_radius: f64,
}

impl TorusGrid {
    /// Square grid with the default cutoff radius `L/4`.
    pub fn new(nx: usize, side: f64) -> Result<Self> {
        Self::with_cutoff(nx, side, side / 4.0)
    }

    pub fn with_cutoff(nx: usize, side: f64, cutoff_radius: f64) -> Result<Self> {
        if nx < 8 {
            return Err(GeometryError::InvalidGrid(format!("nx >= 8 required, got {nx}")));
        }
        if !(side > 0.0) {
            return Err(GeometryError::InvalidGrid(format!("side length must be positive, got {side}")));
        }
        if !(cutoff_radius > 0.0 && cutoff_radius <= side / 4.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "cutoff radius must lie in (0, L/4], got {cutoff_radius}"
            )));
        }
        Ok(TorusGrid { nx, ny: nx, side, cutoff_radius })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.cutoff_radius
    }

    /// Grid spacing `h = L / nx`.
    pub fn spacing(&self) -> f64 {
        self.side / self.nx as f64
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of node `(i, j)`, row-major with `i` fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn wrap(&self, i: isize, j: isize) -> (usize, usize) {
        (i.rem_euclid(self.nx as isize) as usize, j.rem_euclid(self.ny as isize) as usize)
    }

    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [i as f64 * h, j as f64 * h]
    }

    /// Minimal signed periodic displacement from node `a` to node `b`,
    /// componentwise in `(-L/2, L/2]`. Ties at `L/2` resolve to `+L/2`.
    pub fn displacement(&self, a: (usize, usize), b: (usize, usize)) -> [f64; 2] {
        let h = self.spacing();
        let dx = wrap_offset(b.0 as isize - a.0 as isize, self.nx as isize);
        let dy = wrap_offset(b.1 as isize - a.1 as isize, self.ny as isize);
        [dx as f64 * h, dy as f64 * h]
    }

    /// Minimal periodic distance between two nodes.
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let [dx, dy] = self.displacement(a, b);
        dx.hypot(dy)
    }

    /// Minimal periodic representative of a raw coordinate difference.
    pub fn wrap_coord(&self, d: f64) -> f64 {
        let l = self.side;
        let mut r = d - (d / l).round() * l;
        if r <= -l / 2.0 {
            r += l;
        }
        r
    }
}

fn wrap_offset(d: isize, n: isize) -> isize {
    let mut r = d.rem_euclid(n);
    // map to (-n/2, n/2], ties to +n/2
    if 2 * r > n {
        r -= n;
    }
    r
}

/// Round unit sphere `S^{k-1}` embedded in `R^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereTarget {
    ambient_dim: usize,
}

impl SphereTarget {
    pub fn new(ambient_dim: usize) -> Result<Self> {
        if ambient_dim < 3 {
            return Err(GeometryError::InvalidGrid(format!(
                "ambient dimension must be >= 3, got {ambient_dim}"
            )));
        }
        Ok(SphereTarget { ambient_dim })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ambient_dim {
            return Err(GeometryError::DimensionMismatch { expected: self.ambient_dim, got: v.len() });
        }
        Ok(())
    }

    fn check_unit(&self, p: &[f64]) -> Result<()> {
        let n = norm(p);
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(())
    }

    /// Nearest-point retraction `y -> y / |y|`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let n = norm(y);
        if n <= PROJECT_MIN_NORM {
            return Err(GeometryError::ProjectionUndefined);
        }
        Ok(y.iter().map(|c| c / n).collect())
    }

    /// Second fundamental form of the unit sphere, `A(p)(X, Y) = (X . Y) p`.
    ///
    /// The sign is fixed so that `lap(u) + A(u)(grad u, grad u)` is the
    /// tangential part of the Laplacian.
    pub fn second_fundamental_form(&self, p: &[f64], x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        self.check_dim(x)?;
        self.check_dim(y)?;
        self.check_unit(p)?;
        for v in [x, y] {
            let np = dot(v, p).abs();
            if np > TANGENT_TOL {
                return Err(GeometryError::NotTangent(np));
            }
        }
        let xy = dot(x, y);
        Ok(p.iter().map(|c| xy * c).collect())
    }

    /// Great-circle exponential map `cos(|v|) p + sin(|v|) v/|v|`.
    pub fn exp_point(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        self.check_dim(v)?;
        let nv = norm(v);
        if nv <= 1e-15 {
            return Ok(p.to_vec());
        }
        if nv >= std::f64::consts::PI {
            return Err(GeometryError::OutsideInjectivityRadius(nv));
        }
        let (s, c) = nv.sin_cos();
        Ok(p.iter().zip(v).map(|(pc, vc)| c * pc + s * vc / nv).collect())
    }

    /// Inverse of [`exp_point`](Self::exp_point); `|log_p q| = arccos(p . q)`.
    pub fn log_point(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        self.check_dim(q)?;
        let d = dot(p, q);
        if d <= -1.0 + TANGENT_TOL {
            return Err(GeometryError::CutLocus);
        }
        let perp: Vec<f64> = q.iter().zip(p).map(|(qc, pc)| qc - d * pc).collect();
        let np = norm(&perp);
        if np <= 1e-15 {
            return Ok(vec![0.0; self.ambient_dim]);
        }
        let theta = np.atan2(d.clamp(-1.0, 1.0));
        Ok(perp.iter().map(|c| c * theta / np).collect())
    }

    /// Constant-speed minimal great-circle arc with `gamma(0) = p`, `gamma(1) = q`.
    pub fn geodesic(&self, p: &[f64], q: &[f64], s: f64) -> Result<Vec<f64>> {
        let v = self.log_point(p, q)?;
        let scaled: Vec<f64> = v.iter().map(|c| c * s).collect();
        self.exp_point(p, &scaled)
    }

    /// Geodesic distance `arccos(p . q)`.
    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        dot(p, q).clamp(-1.0, 1.0).acos()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-node ambient vectors representing a map `u: M -> S^{k-1}`.
///
/// Storage is row-major over nodes with components innermost, matching the
/// checkpoint wire format.
#[derive(Debug, Clone, PartialEq)]
pub struct MapField {
    grid: TorusGrid,
    ambient_dim: usize,
    data: Vec<f64>,
}

impl MapField {
    pub fn constant(grid: TorusGrid, point: &[f64]) -> Result<Self> {
        let target = SphereTarget::new(point.len())?;
        target.check_unit(point)?;
        let mut data = Vec::with_capacity(grid.node_count() * point.len());
        for _ in 0..grid.node_count() {
            data.extend_from_slice(point);
        }
        Ok(MapField { grid, ambient_dim: point.len(), data })
    }

    /// Build a field by evaluating `f` at node positions, then projecting.
    pub fn from_fn<F>(grid: TorusGrid, ambient_dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64, f64) -> Vec<f64>,
    {
        let target = SphereTarget::new(ambient_dim)?;
        let mut data = Vec::with_capacity(grid.node_count() * ambient_dim);
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let [x, y] = grid.position(i, j);
                let v = f(x, y);
                let p = target.project(&v)?;
                data.extend_from_slice(&p);
            }
        }
        Ok(MapField { grid, ambient_dim, data })
    }

    pub fn from_raw(grid: TorusGrid, ambient_dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() * ambient_dim {
            return Err(GeometryError::DimensionMismatch {
                expected: grid.node_count() * ambient_dim,
                got: data.len(),
            });
        }
        Ok(MapField { grid, ambient_dim, data })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn target(&self) -> SphereTarget {
        SphereTarget { ambient_dim: self.ambient_dim }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, i: usize, j: usize) -> &[f64] {
        let k = self.ambient_dim;
        let idx = self.grid.index(i, j) * k;
        &self.data[idx..idx + k]
    }

    pub fn node_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = self.ambient_dim;
        let idx = self.grid.index(i, j) * k;
        &mut self.data[idx..idx + k]
    }

    /// Node value with periodic index wrap.
    pub fn node_wrapped(&self, i: isize, j: isize) -> &[f64] {
        let (i, j) = self.grid.wrap(i, j);
        self.node(i, j)
    }

    /// Bilinear interpolation at an arbitrary torus point, projected back
    /// onto the sphere.
    pub fn sample(&self, x: f64, y: f64) -> Result<Vec<f64>> {
        let h = self.grid.spacing();
        let fx = x / h;
        let fy = y / h;
        let i0 = fx.floor() as isize;
        let j0 = fy.floor() as isize;
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let mut out = vec![0.0; self.ambient_dim];
        for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                let v = self.node_wrapped(i0 + di, j0 + dj);
                let w = wx * wy;
                for (o, c) in out.iter_mut().zip(v) {
                    *o += w * c;
                }
            }
        }
        self.target().project(&out)
    }

    /// Renormalize every node onto the sphere.
    pub fn project_all(&mut self) -> Result<()> {
        let k = self.ambient_dim;
        for node in self.data.chunks_mut(k) {
            let n = norm(node);
            if n <= PROJECT_MIN_NORM {
                return Err(GeometryError::ProjectionUndefined);
            }
            for c in node.iter_mut() {
                *c /= n;
            }
        }
        Ok(())
    }

    /// Largest deviation `| |u| - 1 |` over all nodes.
    pub fn max_radial_deviation(&self) -> f64 {
        self.data
            .chunks(self.ambient_dim)
            .map(|n| (norm(n) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Discrete `L^2` distance `(sum |u - v|^2 h^2)^{1/2}`.
    pub fn l2_distance(&self, other: &MapField) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let h2 = self.grid.spacing() * self.grid.spacing();
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s * h2).sqrt()
    }

    /// Largest nodewise geodesic distance to another field on the same grid.
    pub fn sup_geodesic_distance(&self, other: &MapField) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let target = self.target();
        let k = self.ambient_dim;
        self.data
            .chunks(k)
            .zip(other.data.chunks(k))
            .map(|(a, b)| target.distance(a, b))
            .fold(0.0, f64::max)
    }

    /// Largest nodewise Euclidean displacement to another field.
    pub fn sup_displacement(&self, other: &MapField) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let k = self.ambient_dim;
        self.data
            .chunks(k)
            .zip(other.data.chunks(k))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Quintic smoothstep, `C^2` monotone ramp from 0 at `x <= 0` to 1 at `x >= 1`.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn s3() -> SphereTarget {
        SphereTarget::new(3).unwrap()
    }

    #[test]
    fn project_scales_radially() {
        assert_eq!(s3().project(&[0.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(s3().project(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let p = s3().project(&[3.0, 4.0, 0.0]).unwrap();
        assert!((p[0] - 0.6).abs() < TOL && (p[1] - 0.8).abs() < TOL);
    }

    #[test]
    fn project_rejects_origin() {
        assert_eq!(s3().project(&[1e-9, 0.0, 0.0]), Err(GeometryError::ProjectionUndefined));
    }

    #[test]
    fn second_fundamental_form_examples() {
        let a = s3()
            .second_fundamental_form(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(a, vec![0.0, 0.0, 1.0]);
        let a = s3()
            .second_fundamental_form(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(a, vec![0.0, 0.0, 0.0]);
        let a = s3()
            .second_fundamental_form(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 2.0, 0.0])
            .unwrap();
        assert_eq!(a, vec![4.0, 0.0, 0.0]);
    }

    #[test]
    fn second_fundamental_form_rejects_non_tangent() {
        let r = s3().second_fundamental_form(&[0.0, 0.0, 1.0], &[0.0, 0.1, 0.1], &[1.0, 0.0, 0.0]);
        assert!(matches!(r, Err(GeometryError::NotTangent(_))));
    }

    #[test]
    fn exp_quarter_circle() {
        use std::f64::consts::FRAC_PI_2;
        let q = s3().exp_point(&[1.0, 0.0, 0.0], &[0.0, FRAC_PI_2, 0.0]).unwrap();
        assert!((q[0]).abs() < TOL && (q[1] - 1.0).abs() < TOL);
        let q = s3()
            .exp_point(&[0.0, 0.0, 1.0], &[std::f64::consts::FRAC_PI_4, 0.0, 0.0])
            .unwrap();
        let s = std::f64::consts::FRAC_PI_4.sin();
        assert!((q[0] - s).abs() < TOL && (q[2] - s).abs() < TOL);
    }

    #[test]
    fn exp_zero_is_identity() {
        let p = [0.3, 0.4, (1.0_f64 - 0.25).sqrt()];
        assert_eq!(s3().exp_point(&p, &[0.0; 3]).unwrap(), p.to_vec());
    }

    #[test]
    fn exp_rejects_outside_injectivity() {
        let r = s3().exp_point(&[1.0, 0.0, 0.0], &[0.0, 3.2, 0.0]);
        assert!(matches!(r, Err(GeometryError::OutsideInjectivityRadius(_))));
    }

    #[test]
    fn log_length_is_geodesic_distance() {
        let v = s3().log_point(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((norm(&v) - std::f64::consts::FRAC_PI_2).abs() < TOL);
        let z = s3().log_point(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn log_rejects_antipodal() {
        assert_eq!(s3().log_point(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]), Err(GeometryError::CutLocus));
    }

    #[test]
    fn geodesic_endpoints_and_midpoint() {
        let t = s3();
        let p = [1.0, 0.0, 0.0];
        let q = [0.0, 1.0, 0.0];
        assert!(norm(&sub(&t.geodesic(&p, &q, 0.0).unwrap(), &p)) < TOL);
        assert!(norm(&sub(&t.geodesic(&p, &q, 1.0).unwrap(), &q)) < TOL);
        let m = t.geodesic(&p, &q, 0.5).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - r).abs() < TOL && (m[1] - r).abs() < TOL);
        // degenerate p = q
        let c = t.geodesic(&p, &p, 0.7).unwrap();
        assert_eq!(c, p.to_vec());
    }

    fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    #[test]
    fn displacement_wraps_minimally() {
        let g = TorusGrid::new(10, 1.0).unwrap();
        assert_eq!(g.displacement((3, 4), (3, 4)), [0.0, 0.0]);
        // a at x = 0.9, b at x = 0.1 -> wraps to -0.2... displacement from a to b is +0.2
        let d = g.displacement((9, 0), (1, 0));
        assert!((d[0] - 0.2).abs() < TOL && d[1] == 0.0);
        let d = g.displacement((1, 0), (9, 0));
        assert!((d[0] + 0.2).abs() < TOL);
    }

    #[test]
    fn displacement_tie_resolves_positive() {
        let g = TorusGrid::new(10, 1.0).unwrap();
        let d = g.displacement((0, 0), (5, 0));
        assert!((d[0] - 0.5).abs() < TOL);
        let d = g.displacement((5, 0), (0, 0));
        assert!((d[0] - 0.5).abs() < TOL);
    }

    #[test]
    fn displacement_bound() {
        let g = TorusGrid::new(16, 2.0).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let d = g.displacement((a, a), (b, b));
                let n = d[0].hypot(d[1]);
                assert!(n <= 2.0_f64.sqrt() * 1.0 + TOL);
            }
        }
    }

    #[test]
    fn grid_invariants_enforced() {
        assert!(TorusGrid::new(4, 1.0).is_err());
        assert!(TorusGrid::with_cutoff(16, 1.0, 0.3).is_err());
        assert!(TorusGrid::new(8, 0.0).is_err());
    }

    #[test]
    fn constant_field_on_manifold() {
        let g = TorusGrid::new(8, 1.0).unwrap();
        let f = MapField::constant(g, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.max_radial_deviation(), 0.0);
    }

    #[test]
    fn sample_reproduces_nodes() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let f = MapField::from_fn(g, 3, |x, y| {
            vec![(2.0 * x).cos(), (2.0 * x).sin() * (y + 0.3).cos(), (y + 1.0).sin() + 1.5]
        })
        .unwrap();
        let v = f.sample(3.0 / 16.0, 5.0 / 16.0).unwrap();
        let n = f.node(3, 5);
        for (a, b) in v.iter().zip(n) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
