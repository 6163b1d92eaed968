//! Bubble extraction by rescaling, tree construction with neck-energy
//! accounting, and the annulus surgery maps (cone extension, squeeze,
//! geodesic neck, competitor assembly).

use crate::diagnostics::ball_sum;
use crate::flow;
use crate::geometry::{dot, GeometryError, MapField, SphereTarget, TorusGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BubbleError {
    #[error("bubble below resolution: scale {0} < h/4 = {1}")]
    BelowResolution(f64, f64),
    #[error("zero energy density in window")]
    ZeroDensity,
    #[error("insufficient energy for neck cut: ball carries {0}, need {1}")]
    InsufficientEnergy(f64, f64),
    #[error("bubble tree recursion exceeded depth 8")]
    DepthExceeded,
    #[error("loop leaves the hemisphere around its cone point (max distance {0})")]
    HemisphereViolation(f64),
    #[error("neck too short to squeeze: K = {0} <= 16")]
    NeckTooShort(f64),
    #[error("unresolved neck {0}: b - a = {1} < 8h")]
    UnresolvedNeck(usize, f64),
    #[error("neck endpoints antipodal")]
    Antipodal,
    #[error("invalid neck spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, BubbleError>;

/// Map sampled on a square plane chart `[-half_width, half_width]^2`
/// (node-centered, `n` nodes per axis, non-periodic).
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneChart {
    pub n: usize,
    pub half_width: f64,
    pub ambient_dim: usize,
    pub data: Vec<f64>,
}

impl PlaneChart {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> &[f64] {
        let k = self.ambient_dim;
        &self.data[(j * self.n + i) * k..(j * self.n + i + 1) * k]
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// `|grad u|^2` by central differences; boundary nodes use one-sided
    /// differences.
    pub fn energy_density(&self) -> Vec<f64> {
        let (n, k) = (self.n, self.ambient_dim);
        let h = self.spacing();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let (il, ir, wx) = one_sided(i, n);
                let (jl, jr, wy) = one_sided(j, n);
                let ue = self.node(ir, j);
                let uw = self.node(il, j);
                let un = self.node(i, jr);
                let us = self.node(i, jl);
                let mut s = 0.0;
                for c in 0..k {
                    let dx = (ue[c] - uw[c]) / (wx * h);
                    let dy = (un[c] - us[c]) / (wy * h);
                    s += dx * dx + dy * dy;
                }
                out[j * n + i] = s;
            }
        }
        out
    }

    pub fn dirichlet_energy(&self) -> f64 {
        let h = self.spacing();
        self.energy_density().iter().sum::<f64>() * h * h
    }

    /// Energy restricted to the chart disk of the given radius.
    pub fn disk_energy(&self, radius: f64) -> f64 {
        let e = self.energy_density();
        let h = self.spacing();
        let mut acc = 0.0;
        for j in 0..self.n {
            for i in 0..self.n {
                let (x, y) = (self.coord(i), self.coord(j));
                if x * x + y * y <= radius * radius {
                    acc += e[j * self.n + i];
                }
            }
        }
        acc * h * h
    }

    pub fn center_density(&self) -> f64 {
        let c = (self.n - 1) / 2;
        self.energy_density()[c * self.n + c]
    }
}

fn one_sided(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 2.0)
    }
}

pub const CHART_NODES: usize = 129;
pub const DEFAULT_ZOOM_UNITS: usize = 32;
pub const MAX_TREE_DEPTH: usize = 8;

/// Inclusive index rectangle restricting a search; `None` means the whole grid.
pub type Window = Option<((usize, usize), (usize, usize))>;

fn window_nodes(grid: &TorusGrid, window: Window) -> Vec<(usize, usize)> {
    let ((i0, j0), (i1, j1)) = window.unwrap_or(((0, 0), (grid.nx() - 1, grid.ny() - 1)));
    let mut out = Vec::new();
    for j in j0..=j1.min(grid.ny() - 1) {
        for i in i0..=i1.min(grid.nx() - 1) {
            out.push((i, j));
        }
    }
    out
}

/// Locate the density maximum in the window and resample the map on a plane
/// chart of radius `zoom_radius_units * lambda` around it, where
/// `lambda = e(c)^{-1/2}` is the density scale; bilinear sampling followed
/// by projection. After rescaling the center density is of unit order.
pub fn detect_and_rescale(
    field: &MapField,
    window: Window,
    zoom_radius_units: usize,
) -> Result<((usize, usize), f64, PlaneChart)> {
    let grid = *field.grid();
    let h = grid.spacing();
    let e = flow::energy_density(field);
    let c = window_nodes(&grid, window)
        .into_iter()
        .max_by(|&a, &b| {
            e[a.1 * grid.nx() + a.0]
                .partial_cmp(&e[b.1 * grid.nx() + b.0])
                .unwrap()
        })
        .expect("nonempty window");
    let e_max = e[c.1 * grid.nx() + c.0];
    if e_max <= 0.0 {
        return Err(BubbleError::ZeroDensity);
    }
    let lambda = e_max.powf(-0.5);
    if lambda < h / 4.0 {
        return Err(BubbleError::BelowResolution(lambda, h / 4.0));
    }
    let chart = resample_chart(field, c, lambda, zoom_radius_units)?;
    Ok((c, lambda, chart))
}

/// Resample around `c` at the given scale without the resolution guard;
/// the tree builder clamps sub-resolution density scales to `h/4` so that
/// under-resolved concentrations still get a (pixelated) chart.
fn resample_chart(
    field: &MapField,
    c: (usize, usize),
    lambda: f64,
    zoom_radius_units: usize,
) -> Result<PlaneChart> {
    let grid = *field.grid();
    let k = field.ambient_dim();
    let n = CHART_NODES;
    let half_width = zoom_radius_units as f64;
    let spacing = 2.0 * half_width / (n - 1) as f64;
    let [cx, cy] = grid.position(c.0, c.1);
    let mut data = vec![0.0; n * n * k];
    for j in 0..n {
        for i in 0..n {
            let xr = -half_width + i as f64 * spacing;
            let yr = -half_width + j as f64 * spacing;
            let v = field.sample(cx + lambda * xr, cy + lambda * yr)?;
            data[(j * n + i) * k..(j * n + i + 1) * k].copy_from_slice(&v);
        }
    }
    Ok(PlaneChart { n, half_width, ambient_dim: k, data })
}

/// Largest `lambda` such that the annulus `B_epsilon(c) \ B_lambda(c)`
/// carries energy at least `c_r`, by bisection.
pub fn lambda_by_energy(
    field: &MapField,
    c: (usize, usize),
    epsilon_out: f64,
    c_r: f64,
) -> Result<f64> {
    let grid = *field.grid();
    let e = flow::energy_density(field);
    let ball = |r: f64| ball_sum(&grid, &e, c, r);
    let total = ball(epsilon_out);
    if total < c_r {
        return Err(BubbleError::InsufficientEnergy(total, c_r));
    }
    if c_r == 0.0 {
        return Ok(epsilon_out);
    }
    // annulus energy total - ball(lambda) is nonincreasing in lambda
    let (mut lo, mut hi) = (0.0f64, epsilon_out);
    let h = grid.spacing();
    while hi - lo > h / 16.0 {
        let mid = 0.5 * (lo + hi);
        if total - ball(mid) >= c_r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo < h / 4.0 {
        return Err(BubbleError::BelowResolution(lo, h / 4.0));
    }
    Ok(lo)
}

#[derive(Debug, Clone)]
pub struct BubbleNode {
    pub center: (usize, usize),
    /// Separation scale: largest radius whose complementary annulus inside
    /// `B_{neck_outer}` still carries `c_r` of energy.
    pub scale: f64,
    /// Density scale `e(c)^{-1/2}` used for the chart; clamped to `h/4` when
    /// the concentration is deliberately under-resolved.
    pub density_scale: f64,
    pub bubble_field: PlaneChart,
    /// Chart-disk energy out to the separation scale (conformally invariant
    /// under the rescaling).
    pub bubble_energy: f64,
    pub neck_inner: f64,
    pub neck_outer: f64,
    pub neck_energy: f64,
    pub children: Vec<BubbleNode>,
}

#[derive(Debug, Clone)]
pub struct BubbleTree {
    /// The analyzed field away from bubbles (bubble balls overwritten with
    /// their outer boundary value); the body map.
    pub root: MapField,
    pub nodes: Vec<BubbleNode>,
    pub total_energy_in: f64,
    /// Energy of the analyzed field outside all bubble balls.
    pub body_energy: f64,
    /// `total_energy_in - body_energy - sum(bubble) - sum(neck)`; measures
    /// resampling error only.
    pub identity_residual: f64,
    pub epsilon_1: f64,
    pub c_r: f64,
}

/// Decompose a field into body + bubbles + necks.
///
/// Centers are the density maxima whose surrounding ball carries at least
/// `epsilon_1` of energy; each bubble is rescaled onto a plane chart, its
/// separation scale cut so the neck annulus carries exactly `c_r`, and the
/// same search recurses into each bubble ball at a quarter of its radius
/// (depth-capped). Bubbles recovering less than `epsilon_1 / 2` are pruned.
pub fn build_tree(field: &MapField, epsilon_1: f64, c_r: f64) -> Result<BubbleTree> {
    let grid = *field.grid();
    let e = flow::energy_density(field);
    let total = e.iter().sum::<f64>() * grid.spacing() * grid.spacing();
    let nodes = find_bubbles(field, &e, None, grid.cutoff_radius(), epsilon_1, c_r, 0)?;

    let mut body_energy = total;
    let mut bubble_sum = 0.0;
    let mut neck_sum = 0.0;
    for node in &nodes {
        body_energy -= ball_sum(&grid, &e, node.center, node.neck_outer);
        bubble_sum += node.bubble_energy;
        neck_sum += node.neck_energy;
    }
    let mut root = field.clone();
    for node in &nodes {
        let fill = field
            .node(
                (node.center.0 + (node.neck_outer / grid.spacing()).ceil() as usize) % grid.nx(),
                node.center.1,
            )
            .to_vec();
        let (nx, ny) = (grid.nx(), grid.ny());
        for j in 0..ny {
            for i in 0..nx {
                if grid.distance(node.center, (i, j)) <= node.neck_outer {
                    root.node_mut(i, j).copy_from_slice(&fill);
                }
            }
        }
    }
    Ok(BubbleTree {
        root,
        total_energy_in: total,
        identity_residual: total - body_energy - bubble_sum - neck_sum,
        body_energy,
        nodes,
        epsilon_1,
        c_r,
    })
}

fn find_bubbles(
    field: &MapField,
    e: &[f64],
    window: Window,
    epsilon_out_cap: f64,
    epsilon_1: f64,
    c_r: f64,
    depth: usize,
) -> Result<Vec<BubbleNode>> {
    if depth >= MAX_TREE_DEPTH {
        return Err(BubbleError::DepthExceeded);
    }
    let grid = *field.grid();
    let h = grid.spacing();

    // greedy center collection: repeatedly take the strongest unclaimed
    // density maximum whose ball clears the bubble quantum
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    let mut pool = window_nodes(&grid, window);
    pool.sort_by(|&a, &b| {
        e[b.1 * grid.nx() + b.0]
            .partial_cmp(&e[a.1 * grid.nx() + a.0])
            .unwrap()
            .then(a.cmp(&b))
    });
    for &node in &pool {
        // twice the outer radius keeps candidate balls disjoint, so a later
        // candidate can never ride on an earlier bubble's energy
        if candidates
            .iter()
            .any(|&c| grid.distance(c, node) < 2.0 * epsilon_out_cap)
        {
            continue;
        }
        if e[node.1 * grid.nx() + node.0] > 0.0
            && ball_sum(&grid, e, node, epsilon_out_cap) >= epsilon_1
        {
            candidates.push(node);
        }
    }

    let mut out = Vec::new();
    for &c in &candidates {
        let mut epsilon_out = epsilon_out_cap;
        for &other in &candidates {
            if other != c {
                epsilon_out = epsilon_out.min(grid.distance(c, other) / 2.0);
            }
        }
        let ball = ball_sum(&grid, e, c, epsilon_out);
        if ball < epsilon_1 / 2.0 {
            continue; // pruned: recovers less than the level quantum
        }
        let scale = lambda_by_energy(field, c, epsilon_out, c_r.min(ball))?;
        let e_center = e[c.1 * grid.nx() + c.0];
        let density_scale = e_center.powf(-0.5).max(h / 4.0);
        let zoom = (scale / density_scale).ceil() as usize + 1;
        let chart = resample_chart(field, c, density_scale, zoom.max(4))?;
        let bubble_energy = chart.disk_energy(scale / density_scale);
        let neck_energy = ball - ball_sum(&grid, e, c, scale);
        // recurse inside the bubble ball at a quarter of its scale
        let children = if scale / 4.0 >= 4.0 * h {
            let m = (scale / 2.0 / h).floor() as usize;
            let sub = ((c.0.saturating_sub(m), c.1.saturating_sub(m)),
                       ((c.0 + m).min(grid.nx() - 1), (c.1 + m).min(grid.ny() - 1)));
            find_bubbles(field, e, Some(sub), scale / 4.0, epsilon_1, c_r, depth + 1)?
        } else {
            Vec::new()
        };
        out.push(BubbleNode {
            center: c,
            scale,
            density_scale,
            bubble_field: chart,
            bubble_energy,
            neck_inner: scale,
            neck_outer: epsilon_out,
            neck_energy,
            children,
        });
    }
    Ok(out)
}

/// Map sampled on the annulus `B_{r_outer} \ B_{r_inner}` in polar samples
/// (`n_theta` angles, `n_r` radial midpoint shells).
#[derive(Debug, Clone)]
pub struct AnnulusMap {
    pub n_theta: usize,
    pub n_r: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub ambient_dim: usize,
    /// Row-major `[radial shell][angle][component]` at radial midpoints.
    pub data: Vec<f64>,
    pub energy: f64,
}

impl AnnulusMap {
    pub fn node(&self, ir: usize, it: usize) -> &[f64] {
        let k = self.ambient_dim;
        let idx = ir * self.n_theta + it;
        &self.data[idx * k..(idx + 1) * k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeDirection {
    /// Trace equals the loop at the inner radius 1, the cone point at 2.
    Outward,
    /// Trace equals the loop at the outer radius 2, the cone point at 1.
    Inward,
}

const CONE_RADIAL_SAMPLES: usize = 64;

/// Fill the annulus `B_2 \ B_1` from a boundary loop toward the point `p` by
/// radial exp/log interpolation: the loop parameter is transported along
/// geodesics through `p`, reaching `p` at the far boundary.
///
/// Every loop value must lie within geodesic distance `pi/2` of `p`.
pub fn cone_extension(
    loop_values: &[f64],
    k: usize,
    p: &[f64],
    direction: ConeDirection,
) -> Result<AnnulusMap> {
    assert!(loop_values.len() % k == 0 && !loop_values.is_empty());
    let n_theta = loop_values.len() / k;
    let target = SphereTarget::new(k)?;
    let mut logs = vec![0.0; n_theta * k];
    let mut max_d = 0.0f64;
    for t in 0..n_theta {
        let f = &loop_values[t * k..(t + 1) * k];
        max_d = max_d.max(target.distance(p, f));
        let l = target.log_point(p, f)?;
        logs[t * k..(t + 1) * k].copy_from_slice(&l);
    }
    if max_d > std::f64::consts::FRAC_PI_2 {
        return Err(BubbleError::HemisphereViolation(max_d));
    }

    let n_r = CONE_RADIAL_SAMPLES;
    let dr = 1.0 / n_r as f64;
    let dth = 2.0 * std::f64::consts::PI / n_theta as f64;
    let mut data = vec![0.0; n_r * n_theta * k];
    let mut energy = 0.0;
    let amplitude = |r: f64| match direction {
        ConeDirection::Outward => 2.0 - r,
        ConeDirection::Inward => r - 1.0,
    };
    for ir in 0..n_r {
        let r = 1.0 + (ir as f64 + 0.5) * dr;
        let g = amplitude(r);
        for it in 0..n_theta {
            let w = &logs[it * k..(it + 1) * k];
            let v: Vec<f64> = w.iter().map(|&x| x * g).collect();
            let u = target.exp_point(p, &v)?;
            data[(ir * n_theta + it) * k..(ir * n_theta + it + 1) * k].copy_from_slice(&u);
        }
        // midpoint quadrature of (|d_r|^2 + |d_theta|^2 / r^2) r dr dtheta;
        // |d_r u| = |w(theta)| since exp_p is a radial isometry
        for it in 0..n_theta {
            let w = &logs[it * k..(it + 1) * k];
            let dr_sq = dot(w, w);
            let a = &data[(ir * n_theta + it) * k..(ir * n_theta + it + 1) * k];
            let b_idx = (it + 1) % n_theta;
            let b = &data[(ir * n_theta + b_idx) * k..(ir * n_theta + b_idx + 1) * k];
            let mut dth_sq = 0.0;
            for c in 0..k {
                let d = (b[c] - a[c]) / dth;
                dth_sq += d * d;
            }
            energy += (dr_sq + dth_sq / (r * r)) * r * dr * dth;
        }
    }
    Ok(AnnulusMap {
        n_theta,
        n_r,
        r_inner: 1.0,
        r_outer: 2.0,
        ambient_dim: k,
        data,
        energy,
    })
}

/// Map sampled on the flat cylinder `S^1 x [rho_0, rho_1]`.
#[derive(Debug, Clone)]
pub struct CylinderMap {
    pub n_theta: usize,
    pub n_rho: usize,
    pub rho_range: (f64, f64),
    pub ambient_dim: usize,
    /// Row-major `[rho sample][angle][component]`, uniform in both axes.
    pub data: Vec<f64>,
}

impl CylinderMap {
    pub fn from_fn(
        n_theta: usize,
        n_rho: usize,
        rho_range: (f64, f64),
        k: usize,
        mut f: impl FnMut(f64, f64) -> Vec<f64>,
    ) -> Self {
        let mut data = vec![0.0; n_rho * n_theta * k];
        for jr in 0..n_rho {
            let rho = rho_range.0
                + (rho_range.1 - rho_range.0) * jr as f64 / (n_rho - 1) as f64;
            for it in 0..n_theta {
                let theta = 2.0 * std::f64::consts::PI * it as f64 / n_theta as f64;
                let v = f(theta, rho);
                data[(jr * n_theta + it) * k..(jr * n_theta + it + 1) * k].copy_from_slice(&v);
            }
        }
        CylinderMap { n_theta, n_rho, rho_range, ambient_dim: k, data }
    }

    pub fn node(&self, jr: usize, it: usize) -> &[f64] {
        let k = self.ambient_dim;
        let idx = jr * self.n_theta + it;
        &self.data[idx * k..(idx + 1) * k]
    }

    /// Value at `(theta sample, rho)` by linear interpolation in `rho`.
    fn sample_rho(&self, it: usize, rho: f64) -> Vec<f64> {
        let (r0, r1) = self.rho_range;
        let s = ((rho - r0) / (r1 - r0) * (self.n_rho - 1) as f64)
            .clamp(0.0, (self.n_rho - 1) as f64);
        let j0 = (s.floor() as usize).min(self.n_rho - 2);
        let f = s - j0 as f64;
        self.node(j0, it)
            .iter()
            .zip(self.node(j0 + 1, it))
            .map(|(a, b)| a + (b - a) * f)
            .collect()
    }

    /// Dirichlet energy in the flat cylinder metric `dtheta^2 + drho^2`,
    /// trapezoid in `rho`, periodic in `theta`.
    pub fn dirichlet_energy(&self) -> f64 {
        let k = self.ambient_dim;
        let dth = 2.0 * std::f64::consts::PI / self.n_theta as f64;
        let drho = (self.rho_range.1 - self.rho_range.0) / (self.n_rho - 1) as f64;
        let mut acc = 0.0;
        for jr in 0..self.n_rho {
            let weight = if jr == 0 || jr == self.n_rho - 1 { 0.5 } else { 1.0 };
            let (jl, jrr, w) = one_sided(jr, self.n_rho);
            for it in 0..self.n_theta {
                let a = self.node(jr, it);
                let b = self.node(jr, (it + 1) % self.n_theta);
                let c = self.node(jr, (it + self.n_theta - 1) % self.n_theta);
                let lo = self.node(jl, it);
                let hi = self.node(jrr, it);
                let mut e = 0.0;
                for ci in 0..k {
                    let dt = (b[ci] - c[ci]) / (2.0 * dth);
                    let dro = (hi[ci] - lo[ci]) / (w * drho);
                    e += dt * dt + dro * dro;
                }
                let _ = a;
                acc += weight * e * dth * drho;
            }
        }
        acc
    }
}

/// Reparametrize a cylinder map on `S^1 x [0, K]` onto `S^1 x [4, K - 4]`
/// by the affine stretch `rho -> 4 + rho (K - 8) / K`, freeing a collar of
/// width 4 at each end. The energy changes by a factor within `1 ± 10/K`.
pub fn squeeze_map(cyl: &CylinderMap) -> Result<(CylinderMap, f64)> {
    let kk = cyl.rho_range.1 - cyl.rho_range.0;
    if kk <= 16.0 {
        return Err(BubbleError::NeckTooShort(kk));
    }
    assert!(
        cyl.rho_range.0.abs() < 1e-12,
        "squeeze expects the cylinder parametrized over [0, K]"
    );
    let out_range = (4.0, kk - 4.0);
    let n_rho = cyl.n_rho;
    let mut data = vec![0.0; n_rho * cyl.n_theta * cyl.ambient_dim];
    for jr in 0..n_rho {
        let rho_out = out_range.0
            + (out_range.1 - out_range.0) * jr as f64 / (n_rho - 1) as f64;
        // preimage under rho -> 4 + rho (K-8)/K
        let rho_in = (rho_out - 4.0) * kk / (kk - 8.0);
        for it in 0..cyl.n_theta {
            let v = cyl.sample_rho(it, rho_in);
            let k = cyl.ambient_dim;
            data[(jr * cyl.n_theta + it) * k..(jr * cyl.n_theta + it + 1) * k]
                .copy_from_slice(&v);
        }
    }
    let out = CylinderMap {
        n_theta: cyl.n_theta,
        n_rho,
        rho_range: out_range,
        ambient_dim: cyl.ambient_dim,
        data,
    };
    let before = cyl.dirichlet_energy();
    let after = out.dirichlet_energy();
    let ratio = if before == 0.0 { 1.0 } else { after / before };
    Ok((out, ratio))
}

/// Annulus neck specification: endpoints `p` (outer) and `q` (inner) with
/// radii `a < b`, at least one conformal cylinder unit apart (`b/a >= e`).
#[derive(Debug, Clone)]
pub struct NeckSpec {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl NeckSpec {
    pub fn new(p: Vec<f64>, q: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < b) {
            return Err(BubbleError::InvalidSpec(format!("need 0 < a < b, got a={a}, b={b}")));
        }
        if b / a < std::f64::consts::E {
            return Err(BubbleError::InvalidSpec(format!(
                "b/a = {} < e: less than one conformal cylinder unit",
                b / a
            )));
        }
        if dot(&p, &q) <= -1.0 + 1e-8 {
            return Err(BubbleError::Antipodal);
        }
        Ok(NeckSpec { p, q, a, b })
    }

    /// Radii from the collar parameters: inner `a = 2 lambda R`, outer
    /// `b = delta / 2`.
    pub fn from_collar(p: Vec<f64>, q: Vec<f64>, lambda_r: f64, delta: f64) -> Result<Self> {
        NeckSpec::new(p, q, 2.0 * lambda_r, delta / 2.0)
    }
}

const NECK_RADIAL_SAMPLES: usize = 512;

/// Geodesic neck `u(theta, r) = gamma((ln r - ln a)/(ln b - ln a))` running
/// from `q` at the inner boundary to `p` at the outer; its energy is
/// `2 pi d(p,q)^2 / ln(b/a)`.
pub fn geodesic_neck(spec: &NeckSpec) -> Result<AnnulusMap> {
    let k = spec.p.len();
    let target = SphereTarget::new(k)?;
    if dot(&spec.p, &spec.q) <= -1.0 + 1e-8 {
        return Err(BubbleError::Antipodal);
    }
    let d = target.distance(&spec.q, &spec.p);
    let log_ratio = (spec.b / spec.a).ln();
    let n_r = NECK_RADIAL_SAMPLES;
    let n_theta = 1; // the map is theta-independent
    let mut data = vec![0.0; n_r * k];
    let mut energy = 0.0;
    for ir in 0..n_r {
        // geometric midpoints make the quadrature uniform in s = ln r
        let s = (ir as f64 + 0.5) / n_r as f64;
        let r = spec.a * (s * log_ratio).exp();
        let u = target.geodesic(&spec.q, &spec.p, s)?;
        data[ir * k..(ir + 1) * k].copy_from_slice(&u);
        // |d_r u| = d / (r ln(b/a)); integrate 2 pi |d_r u|^2 r dr with
        // dr = r ds ln(b/a)
        let dr_sq = (d / (r * log_ratio)).powi(2);
        energy += 2.0 * std::f64::consts::PI * dr_sq * r * (r * log_ratio / n_r as f64);
    }
    Ok(AnnulusMap {
        n_theta,
        n_r,
        r_inner: spec.a,
        r_outer: spec.b,
        ambient_dim: k,
        data,
        energy,
    })
}

/// Closed form for the geodesic neck energy.
pub fn geodesic_neck_energy(d: f64, b_over_a: f64) -> f64 {
    2.0 * std::f64::consts::PI * d * d / b_over_a.ln()
}

/// Per-region energy bookkeeping of a competitor map.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct RegionEnergies {
    pub kept_outside: f64,
    pub outer_cone: f64,
    pub geodesic: f64,
    pub inner_cone: f64,
    pub kept_inside: f64,
}

impl RegionEnergies {
    pub fn total(&self) -> f64 {
        self.kept_outside + self.outer_cone + self.geodesic + self.inner_cone + self.kept_inside
    }
}

/// One neck surgery site: the tree node's center paired with its spec.
#[derive(Debug, Clone)]
pub struct NeckSite {
    pub center: (usize, usize),
    pub spec: NeckSpec,
}

const LOOP_SAMPLES: usize = 256;

fn sample_loop(field: &MapField, center: [f64; 2], radius: f64) -> Result<Vec<f64>> {
    let k = field.ambient_dim();
    let mut out = vec![0.0; LOOP_SAMPLES * k];
    for t in 0..LOOP_SAMPLES {
        let theta = 2.0 * std::f64::consts::PI * t as f64 / LOOP_SAMPLES as f64;
        let v = field.sample(center[0] + radius * theta.cos(), center[1] + radius * theta.sin())?;
        out[t * k..(t + 1) * k].copy_from_slice(&v);
    }
    Ok(out)
}

/// Replace each neck annulus of the field by the surgered model: field kept
/// bit-identically outside `B_{2b}` and inside `B_{a/2}`, cones on
/// `[b, 2b]` (toward `p`) and `[a/2, a]` (toward `q`), geodesic neck on
/// `(a, b)`. Necks are paired with the top-level tree nodes by index.
pub fn build_competitor(
    field: &MapField,
    tree: &BubbleTree,
    specs: &[NeckSpec],
) -> Result<(MapField, RegionEnergies)> {
    assert_eq!(specs.len(), tree.nodes.len(), "one spec per top-level neck");
    let grid = *field.grid();
    let h = grid.spacing();
    let k = field.ambient_dim();
    let target = SphereTarget::new(k)?;
    let mut out = field.clone();

    let sites: Vec<NeckSite> = tree
        .nodes
        .iter()
        .zip(specs)
        .map(|(n, s)| NeckSite { center: n.center, spec: s.clone() })
        .collect();

    for (idx, site) in sites.iter().enumerate() {
        let spec = &site.spec;
        if spec.b - spec.a < 8.0 * h {
            return Err(BubbleError::UnresolvedNeck(idx, spec.b - spec.a));
        }
        assert!(
            2.0 * spec.b <= grid.side() / 2.0,
            "neck {idx}: 2b exceeds half the torus period"
        );
        let c_pos = grid.position(site.center.0, site.center.1);
        // hemisphere guards on the actual boundary traces
        for (radius, point) in [(2.0 * spec.b, &spec.p), (spec.a / 2.0, &spec.q)] {
            let lp = sample_loop(field, c_pos, radius)?;
            let mut max_d = 0.0f64;
            for t in 0..LOOP_SAMPLES {
                max_d = max_d.max(target.distance(point, &lp[t * k..(t + 1) * k]));
            }
            if max_d > std::f64::consts::FRAC_PI_2 {
                return Err(BubbleError::HemisphereViolation(max_d));
            }
        }
        let log_ratio = (spec.b / spec.a).ln();
        let (nx, ny) = (grid.nx(), grid.ny());
        for j in 0..ny {
            for i in 0..nx {
                let r = grid.distance(site.center, (i, j));
                if r >= 2.0 * spec.b || r < spec.a / 2.0 {
                    continue; // kept zones
                }
                let d = grid.displacement(site.center, (i, j));
                let theta_pos = [c_pos[0] + d[0], c_pos[1] + d[1]];
                let v = if r >= spec.b {
                    // outer cone: matches the field trace at 2b, reaches p at b
                    let boundary = field.sample(
                        c_pos[0] + d[0] * (2.0 * spec.b / r),
                        c_pos[1] + d[1] * (2.0 * spec.b / r),
                    )?;
                    let w = target.log_point(&spec.p, &boundary)?;
                    let g = (r - spec.b) / spec.b;
                    let wv: Vec<f64> = w.iter().map(|&x| x * g).collect();
                    target.exp_point(&spec.p, &wv)?
                } else if r > spec.a {
                    // geodesic neck from q to p, logarithmic in r
                    let s = (r / spec.a).ln() / log_ratio;
                    target.geodesic(&spec.q, &spec.p, s)?
                } else {
                    // inner cone: matches the field trace at a/2, reaches q at a
                    let boundary = field.sample(
                        c_pos[0] + d[0] * (spec.a / (2.0 * r)),
                        c_pos[1] + d[1] * (spec.a / (2.0 * r)),
                    )?;
                    let w = target.log_point(&spec.q, &boundary)?;
                    let g = 2.0 * (spec.a - r) / spec.a;
                    let wv: Vec<f64> = w.iter().map(|&x| x * g).collect();
                    target.exp_point(&spec.q, &wv)?
                };
                let _ = theta_pos;
                out.node_mut(i, j).copy_from_slice(&v);
            }
        }
    }

    // per-region energy accounting of the result
    let e = flow::energy_density(&out);
    let mut regions = RegionEnergies::default();
    let h2 = h * h;
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx {
            let ei = e[j * nx + i] * h2;
            let mut zone = 0; // 0 kept outside
            for site in &sites {
                let r = grid.distance(site.center, (i, j));
                let spec = &site.spec;
                if r >= 2.0 * spec.b {
                    continue;
                }
                zone = if r >= spec.b {
                    1
                } else if r > spec.a {
                    2
                } else if r >= spec.a / 2.0 {
                    3
                } else {
                    4
                };
                break;
            }
            match zone {
                0 => regions.kept_outside += ei,
                1 => regions.outer_cone += ei,
                2 => regions.geodesic += ei,
                3 => regions.inner_cone += ei,
                _ => regions.kept_inside += ei,
            }
        }
    }
    Ok((out, regions))
}

/// Closeness predicate behind the small-distance homotopy: two maps on the
/// same grid are homotopic through geodesic interpolation whenever their
/// pointwise geodesic distance stays below `sigma`.
pub fn close_maps_homotopic(f1: &MapField, f2: &MapField, sigma: f64) -> (bool, f64) {
    let max_d = f1.sup_geodesic_distance(f2);
    (max_d < sigma, max_d)
}

/// Synthetic long-neck field: constant `q` inside `B_a(c)`, constant `p`
/// outside `B_b(c)`, and in between the neck geodesic traversed with an
/// oscillating parametrization `s -> s + amplitude * sin(2 pi s)` so the
/// neck carries `(1 + 2 pi^2 amplitude^2)` times the minimal energy.
pub fn synthetic_long_neck(
    grid: TorusGrid,
    center: (usize, usize),
    spec: &NeckSpec,
    amplitude: f64,
) -> Result<MapField> {
    let k = spec.p.len();
    let target = SphereTarget::new(k)?;
    let log_ratio = (spec.b / spec.a).ln();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut data = vec![0.0; nx * ny * k];
    for j in 0..ny {
        for i in 0..nx {
            let r = grid.distance(center, (i, j));
            let v = if r <= spec.a {
                spec.q.clone()
            } else if r >= spec.b {
                spec.p.clone()
            } else {
                let s = (r / spec.a).ln() / log_ratio;
                let psi = s + amplitude * (2.0 * std::f64::consts::PI * s).sin();
                geodesic_extended(&target, &spec.q, &spec.p, psi)?
            };
            data[(j * nx + i) * k..(j * nx + i + 1) * k].copy_from_slice(&v);
        }
    }
    Ok(MapField::from_raw(grid, k, data)?)
}

/// Great-circle curve through `p`, `q` evaluated at any real parameter
/// (the oscillating parametrization may momentarily overshoot [0, 1]).
fn geodesic_extended(
    target: &SphereTarget,
    q: &[f64],
    p: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let w = target.log_point(q, p)?;
    let d = crate::geometry::norm(&w);
    if d * s.abs() >= std::f64::consts::PI {
        // fall back through the antipode-safe composition
        let mid = target.exp_point(q, &w.iter().map(|&x| x * 0.5).collect::<Vec<_>>())?;
        let w2 = target.log_point(&mid, p)?;
        let v: Vec<f64> = w2.iter().map(|&x| x * (2.0 * s - 1.0)).collect();
        return Ok(target.exp_point(&mid, &v)?);
    }
    let v: Vec<f64> = w.iter().map(|&x| x * s).collect();
    Ok(target.exp_point(q, &v)?)
}
