//! Energy functionals, degree, the backward-kernel-weighted monotonicity
//! quantity, concentration detection, and the softer residual probes
//! (local energy inequality, Bochner).

use crate::flow::{self, FlowParams, FlowRun, Snapshot};
use crate::geometry::{smoothstep, MapField, TorusGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("degree requires 3-dimensional ambient target, got k = {0}")]
    DegreeDimension(usize),
    #[error("no snapshot at t = {0}")]
    MissingSnapshot(f64),
    #[error("insufficient snapshot coverage for window [{start}, {end}] (radius {rho}): {got} samples, need at least 4")]
    InsufficientCoverage { start: f64, end: f64, rho: f64, got: usize },
    #[error("snapshot spacing nonuniform around t = {0}")]
    NonuniformSpacing(f64),
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Values scanned when fitting an existential constant; the smallest passing
/// value is reported.
pub const FIT_SCAN: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

/// `sum e h^2`.
pub fn dirichlet_energy(field: &MapField) -> f64 {
    let h = field.grid().spacing();
    flow::energy_density(field).iter().sum::<f64>() * h * h
}

/// `sum (1 + e)^alpha h^2`.
pub fn alpha_energy(field: &MapField, alpha: f64) -> f64 {
    let h = field.grid().spacing();
    flow::alpha_energy_of_density(&flow::energy_density(field), alpha, h)
}

/// Degree integral `(1/4pi) sum u . (d_x u x d_y u) h^2` and its nearest
/// integer; meaningful as a homotopy invariant while the field resolves its
/// variation (`sup_e * h^2` small).
pub fn degree(field: &MapField) -> Result<(f64, i64)> {
    let k = field.ambient_dim();
    if k != 3 {
        return Err(DiagnosticsError::DegreeDimension(k));
    }
    let grid = *field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv2h = 1.0 / (2.0 * grid.spacing());
    let mut acc = 0.0;
    for j in 0..ny {
        let jm = (j + ny - 1) % ny;
        let jp = (j + 1) % ny;
        for i in 0..nx {
            let im = (i + nx - 1) % nx;
            let ip = (i + 1) % nx;
            let u = field.node(i, j);
            let ue = field.node(ip, j);
            let uw = field.node(im, j);
            let un = field.node(i, jp);
            let us = field.node(i, jm);
            let dx = [
                (ue[0] - uw[0]) * inv2h,
                (ue[1] - uw[1]) * inv2h,
                (ue[2] - uw[2]) * inv2h,
            ];
            let dy = [
                (un[0] - us[0]) * inv2h,
                (un[1] - us[1]) * inv2h,
                (un[2] - us[2]) * inv2h,
            ];
            let cross = [
                dx[1] * dy[2] - dx[2] * dy[1],
                dx[2] * dy[0] - dx[0] * dy[2],
                dx[0] * dy[1] - dx[1] * dy[0],
            ];
            acc += u[0] * cross[0] + u[1] * cross[1] + u[2] * cross[2];
        }
    }
    let h = grid.spacing();
    let real = acc * h * h / (4.0 * std::f64::consts::PI);
    Ok((real, real.round() as i64))
}

/// Sum of `density * h^2` over nodes within periodic distance `r` of the
/// given node.
pub fn ball_sum(grid: &TorusGrid, density: &[f64], center: (usize, usize), r: f64) -> f64 {
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.spacing();
    let m = (r / h).ceil() as isize + 1;
    let mut acc = 0.0;
    if 2 * m + 1 >= nx as isize {
        for j in 0..ny {
            for i in 0..nx {
                if grid.distance(center, (i, j)) <= r {
                    acc += density[j * nx + i];
                }
            }
        }
    } else {
        for dj in -m..=m {
            for di in -m..=m {
                let (i, j) = grid.wrap(center.0 as isize + di, center.1 as isize + dj);
                if grid.distance(center, (i, j)) <= r {
                    acc += density[j * nx + i];
                }
            }
        }
    }
    acc * h * h
}

/// Dirichlet energy inside the periodic ball `B_r(center)`.
pub fn ball_energy(field: &MapField, center: (usize, usize), r: f64) -> f64 {
    ball_sum(field.grid(), &flow::energy_density(field), center, r)
}

/// Scalar monitors of a single field.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EnergyReport {
    pub e: f64,
    pub e_alpha: f64,
    pub sup_e: f64,
    pub tau_norm: f64,
    pub degree_real: f64,
    pub degree_int: i64,
    /// Configured global energy bound used by the inequality checks
    /// (perturbed energy of the initial datum).
    pub e0: f64,
}

pub fn energy_report(field: &MapField, params: &FlowParams, e0: f64) -> EnergyReport {
    let h = field.grid().spacing();
    let e_density = flow::energy_density(field);
    let e = e_density.iter().sum::<f64>() * h * h;
    let e_alpha = flow::alpha_energy_of_density(&e_density, params.alpha, h);
    let sup_e = e_density.iter().cloned().fold(0.0, f64::max);
    let (_, tau_norm) = flow::tension_alpha(field, params);
    let (degree_real, degree_int) = degree(field).unwrap_or((0.0, 0));
    EnergyReport { e, e_alpha, sup_e, tau_norm, degree_real, degree_int, e0 }
}

/// One CSV row's worth of diagnostics for a snapshot.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DiagRow {
    pub step: u64,
    pub t: f64,
    pub e: f64,
    pub e_alpha: f64,
    pub dissipation: f64,
    pub sup_e: f64,
    pub degree_real: f64,
    pub degree_int: i64,
    pub tau_norm: f64,
}

pub fn diag_row(snapshot: &Snapshot, alpha: f64) -> DiagRow {
    let h = snapshot.field.grid().spacing();
    let e_density = flow::energy_density(&snapshot.field);
    let e = e_density.iter().sum::<f64>() * h * h;
    let e_alpha = flow::alpha_energy_of_density(&e_density, alpha, h);
    let (degree_real, degree_int) = degree(&snapshot.field).unwrap_or((0.0, 0));
    DiagRow {
        step: snapshot.step,
        t: snapshot.t,
        e,
        e_alpha,
        dissipation: snapshot.cumulative_dissipation,
        sup_e: snapshot.sup_e,
        degree_real,
        degree_int,
        tau_norm: snapshot.tau_norm,
    }
}

pub fn diag_rows(run: &FlowRun) -> Vec<DiagRow> {
    run.snapshots.iter().map(|s| diag_row(s, run.params.alpha)).collect()
}

/// Quintic cutoff: 1 on `B_{R/2}(center)`, 0 outside `B_R(center)`.
pub fn cutoff_values(grid: &TorusGrid, center: (usize, usize)) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let rm = grid.cutoff_radius();
    let mut phi = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let r = grid.distance(center, (i, j));
            phi[j * nx + i] = if r <= rm / 2.0 {
                1.0
            } else if r >= rm {
                0.0
            } else {
                1.0 - smoothstep((r - rm / 2.0) / (rm / 2.0))
            };
        }
    }
    phi
}

/// Backward-kernel probe at a space-time center.
///
/// For each radius `rho`, the probed quantity integrates
/// `(1 + e)^alpha G_z phi^2` over the window `[t0 - 4 rho^2, t0 - rho^2]`,
/// scaled by `rho^{2 alpha - 2}`, with
/// `G_z = |t - t0|^{-1} exp(-|x - p|^2 / (4 |t - t0|))` and `|x - p|` the
/// minimal periodic displacement.
#[derive(Debug, Clone)]
pub struct MonotonicityProbe {
    pub center: (usize, usize),
    pub t0: f64,
    /// Strictly increasing; each radius must satisfy `4 rho^2 <= t0`.
    pub radii: Vec<f64>,
}

impl MonotonicityProbe {
    pub fn new(center: (usize, usize), t0: f64, radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(DiagnosticsError::InvalidProbe("empty radius list".into()));
        }
        for w in radii.windows(2) {
            if w[1] <= w[0] {
                return Err(DiagnosticsError::InvalidProbe(format!(
                    "radii must increase strictly, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        for &rho in &radii {
            if !(rho > 0.0) || 4.0 * rho * rho > t0 * (1.0 + 1e-12) {
                return Err(DiagnosticsError::InvalidProbe(format!(
                    "radius {rho} violates 4 rho^2 <= t0 = {t0}"
                )));
            }
        }
        Ok(MonotonicityProbe { center, t0, radii })
    }
}

/// Spatial part `sum (1 + e)^alpha G phi^2 h^2` at backward time `tau = t0 - t`.
fn psi_spatial(
    grid: &TorusGrid,
    e: &[f64],
    phi: &[f64],
    center: (usize, usize),
    tau: f64,
    alpha: f64,
) -> f64 {
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.spacing();
    let mut acc = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            let p = phi[idx];
            if p == 0.0 {
                continue;
            }
            let r = grid.distance(center, (i, j));
            let g = (-(r * r) / (4.0 * tau)).exp() / tau;
            acc += (1.0 + e[idx]).powf(alpha) * g * p * p;
        }
    }
    acc * h * h
}

/// Evaluate the probe on a run: per-radius trapezoidal time quadrature over
/// the snapshots that fall in each backward window. The per-snapshot spatial
/// integral is shared across radii.
pub fn psi(run: &FlowRun, probe: &MonotonicityProbe, alpha: f64) -> Result<Vec<f64>> {
    let grid = *run.final_state.field.grid();
    let phi = cutoff_values(&grid, probe.center);
    let times: Vec<f64> = run.snapshots.iter().map(|s| s.t).collect();
    let mut spatial: Vec<Option<f64>> = vec![None; times.len()];
    let mut eval = |idx: usize, cache: &mut Vec<Option<f64>>| -> f64 {
        if cache[idx].is_none() {
            let snap = &run.snapshots[idx];
            let e = flow::energy_density(&snap.field);
            let tau = probe.t0 - snap.t;
            cache[idx] = Some(psi_spatial(&grid, &e, &phi, probe.center, tau, alpha));
        }
        cache[idx].unwrap()
    };

    let mut out = Vec::with_capacity(probe.radii.len());
    for &rho in &probe.radii {
        let start = probe.t0 - 4.0 * rho * rho;
        let end = probe.t0 - rho * rho;
        let tol = 1e-12 * (1.0 + probe.t0.abs());
        let inside: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] >= start - tol && times[i] <= end + tol)
            .collect();
        if inside.len() < 4 {
            return Err(DiagnosticsError::InsufficientCoverage {
                start,
                end,
                rho,
                got: inside.len(),
            });
        }
        // integration nodes: window endpoints (linearly interpolated when a
        // snapshot does not land on them) plus the interior samples
        let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(inside.len() + 2);
        let interp_at = |t: f64, cache: &mut Vec<Option<f64>>, ev: &mut dyn FnMut(usize, &mut Vec<Option<f64>>) -> f64| -> f64 {
            // bracket t among all snapshot times
            let mut lo = None;
            let mut hi = None;
            for (i, &ti) in times.iter().enumerate() {
                if ti <= t + tol {
                    lo = Some(i);
                }
                if ti >= t - tol && hi.is_none() {
                    hi = Some(i);
                }
            }
            match (lo, hi) {
                (Some(a), Some(b)) if a == b => ev(a, cache),
                (Some(a), Some(b)) => {
                    let (ta, tb) = (times[a], times[b]);
                    let (va, vb) = (ev(a, cache), ev(b, cache));
                    va + (vb - va) * (t - ta) / (tb - ta)
                }
                (Some(a), None) => ev(a, cache),
                (None, Some(b)) => ev(b, cache),
                (None, None) => unreachable!("nonempty window"),
            }
        };
        let first = *inside.first().unwrap();
        let last = *inside.last().unwrap();
        if times[first] > start + tol {
            nodes.push((start, interp_at(start, &mut spatial, &mut eval)));
        }
        for &i in &inside {
            nodes.push((times[i], eval(i, &mut spatial)));
        }
        if times[last] < end - tol {
            nodes.push((end, interp_at(end, &mut spatial, &mut eval)));
        }
        let mut integral = 0.0;
        for w in nodes.windows(2) {
            integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
        }
        out.push(rho.powf(2.0 * alpha - 2.0) * integral);
    }
    Ok(out)
}

/// Worst violation of `Psi_r <= e^{c (rho - r)} Psi_rho + c E0 (rho - r)`
/// over all sampled pairs `r < rho`; nonpositive means the bound holds.
pub fn almost_monotonicity_check(psi_values: &[f64], radii: &[f64], e0: f64, c_fit: f64) -> f64 {
    assert!(psi_values.len() == radii.len() && radii.len() >= 2);
    let mut worst = f64::NEG_INFINITY;
    for a in 0..radii.len() {
        for b in a + 1..radii.len() {
            let (r, rho) = (radii[a], radii[b]);
            let gap = rho - r;
            let v = psi_values[a] - (c_fit * gap).exp() * psi_values[b] - c_fit * e0 * gap;
            worst = worst.max(v);
        }
    }
    worst
}

/// Smallest scanned constant for which `check` is nonpositive.
pub fn fit_constant(check: impl Fn(f64) -> f64) -> Option<f64> {
    FIT_SCAN.iter().copied().find(|&c| check(c) <= 0.0)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FlaggedNode {
    pub node: (usize, usize),
    pub position: [f64; 2],
    /// `(scale, ball energy)` per probed scale, smallest first.
    pub ball_energies: Vec<(f64, f64)>,
    /// Backward-kernel value at the smallest scale when snapshot coverage
    /// allows its window; best-effort cross-check.
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConcentrationReport {
    pub t: f64,
    pub epsilon_0: f64,
    pub flagged: Vec<FlaggedNode>,
}

/// Flag nodes whose ball energy stays at or above `epsilon_0` at every probed
/// scale; clusters of flagged nodes are reduced to their density maxima so
/// the report is a finite point list.
pub fn detect_concentration(
    run: &FlowRun,
    t: f64,
    epsilon_0: f64,
    scales: &[f64],
) -> Result<ConcentrationReport> {
    let snap = run.snapshot_at(t).ok_or(DiagnosticsError::MissingSnapshot(t))?;
    let grid = *snap.field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.spacing();
    let mut scales: Vec<f64> = scales.to_vec();
    scales.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(
        scales.first().map_or(false, |&s| s >= 4.0 * h - 1e-12),
        "smallest probe scale must be >= 4h"
    );
    let e = flow::energy_density(&snap.field);

    // survivors must clear epsilon_0 at every scale; filter from the cheapest
    // (smallest) ball outward
    let mut candidates: Vec<(usize, usize)> =
        (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).collect();
    let mut energies: Vec<Vec<(f64, f64)>> = vec![Vec::new(); nx * ny];
    for &scale in &scales {
        candidates.retain(|&(i, j)| {
            let be = ball_sum(&grid, &e, (i, j), scale);
            let keep = be >= epsilon_0;
            if keep {
                energies[j * nx + i].push((scale, be));
            }
            keep
        });
        if candidates.is_empty() {
            break;
        }
    }

    // cluster: greedily keep density maxima separated by at least twice the
    // smallest scale
    candidates.sort_by(|&(ia, ja), &(ib, jb)| {
        e[jb * nx + ib]
            .partial_cmp(&e[ja * nx + ia])
            .unwrap()
            .then((ia, ja).cmp(&(ib, jb)))
    });
    let sep = 2.0 * scales[0];
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| grid.distance(k, c) > sep) {
            kept.push(c);
        }
    }

    let flagged = kept
        .into_iter()
        .map(|node| {
            let psi_value = MonotonicityProbe::new(node, t, vec![scales[0]])
                .ok()
                .and_then(|probe| psi(run, &probe, run.params.alpha).ok())
                .map(|v| v[0]);
            FlaggedNode {
                node,
                position: grid.position(node.0, node.1),
                ball_energies: energies[node.1 * nx + node.0].clone(),
                psi: psi_value,
            }
        })
        .collect();
    Ok(ConcentrationReport { t, epsilon_0, flagged })
}

/// Residual of the local energy inequality between two snapshot times:
/// `int_{B_R(x)} e_alpha(t2) - int_{B_{2R}(x)} e_alpha(t1) - c_fit (t2 - t1) E0 / R^2`.
/// The inequality holds when the residual is nonpositive.
pub fn local_energy_residual(
    run: &FlowRun,
    x: (usize, usize),
    r: f64,
    t1: f64,
    t2: f64,
    c_fit: f64,
    e0: f64,
) -> Result<f64> {
    assert!(t1 < t2, "t1 < t2 required");
    let grid = run.final_state.field.grid();
    assert!(2.0 * r <= grid.cutoff_radius() + 1e-12, "2R <= R_M required");
    let s1 = run.snapshot_at(t1).ok_or(DiagnosticsError::MissingSnapshot(t1))?;
    let s2 = run.snapshot_at(t2).ok_or(DiagnosticsError::MissingSnapshot(t2))?;
    let alpha = run.params.alpha;
    let h = grid.spacing();
    let density_alpha = |snap: &Snapshot| -> Vec<f64> {
        flow::energy_density(&snap.field)
            .into_iter()
            .map(|e| (1.0 + e).powf(alpha))
            .collect()
    };
    let da2 = density_alpha(s2);
    let da1 = density_alpha(s1);
    let inner = ball_sum(grid, &da2, x, r);
    let outer = ball_sum(grid, &da1, x, 2.0 * r);
    let _ = h;
    Ok(inner - outer - c_fit * (t2 - t1) * e0 / (r * r))
}

/// Pointwise residual of the parabolic inequality satisfied by the energy
/// density: `d_t e - div((I + 2(alpha-1) grad u grad u^T / (r^2+e)) grad e) - c_fit e (e + 1)`,
/// with `d_t e` centered across the snapshots adjacent to `t`. Returns the
/// residual field and the fraction of nodes where it is nonpositive. Soft
/// diagnostic only; the domain is periodic, so every node is interior.
pub fn bochner_residual(run: &FlowRun, t: f64, c_fit: f64) -> Result<(Vec<f64>, f64)> {
    let idx = run
        .snapshots
        .iter()
        .position(|s| (s.t - t).abs() <= 1e-12 * (1.0 + t.abs()))
        .ok_or(DiagnosticsError::MissingSnapshot(t))?;
    if idx == 0 || idx + 1 >= run.snapshots.len() {
        return Err(DiagnosticsError::MissingSnapshot(t));
    }
    let (prev, mid, next) = (&run.snapshots[idx - 1], &run.snapshots[idx], &run.snapshots[idx + 1]);
    let dt1 = mid.t - prev.t;
    let dt2 = next.t - mid.t;
    if (dt1 - dt2).abs() > 1e-9 * dt1.max(dt2) {
        return Err(DiagnosticsError::NonuniformSpacing(t));
    }
    let grid = *mid.field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.spacing();
    let inv2h = 1.0 / (2.0 * h);
    let alpha = run.params.alpha;
    let r2 = run.params.r_scale * run.params.r_scale;

    let e_prev = flow::energy_density(&prev.field);
    let e_mid = flow::energy_density(&mid.field);
    let e_next = flow::energy_density(&next.field);
    let grad_u = flow::gradient(&mid.field);
    let k = mid.field.ambient_dim();

    // flux F = D grad e with D = I + 2(alpha-1) (grad u)(grad u)^T / (r^2 + e)
    let mut flux = vec![0.0; nx * ny * 2];
    for j in 0..ny {
        let jm = (j + ny - 1) % ny;
        let jp = (j + 1) % ny;
        for i in 0..nx {
            let im = (i + nx - 1) % nx;
            let ip = (i + 1) % nx;
            let idx2 = j * nx + i;
            let gx = (e_mid[j * nx + ip] - e_mid[j * nx + im]) * inv2h;
            let gy = (e_mid[jp * nx + i] - e_mid[jm * nx + i]) * inv2h;
            let g = &grad_u[idx2 * 2 * k..(idx2 + 1) * 2 * k];
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for c in 0..k {
                sxx += g[c] * g[c];
                sxy += g[c] * g[k + c];
                syy += g[k + c] * g[k + c];
            }
            let coef = 2.0 * (alpha - 1.0) / (r2 + e_mid[idx2]);
            flux[idx2 * 2] = (1.0 + coef * sxx) * gx + coef * sxy * gy;
            flux[idx2 * 2 + 1] = coef * sxy * gx + (1.0 + coef * syy) * gy;
        }
    }

    let mut residual = vec![0.0; nx * ny];
    let mut nonpos = 0usize;
    for j in 0..ny {
        let jm = (j + ny - 1) % ny;
        let jp = (j + 1) % ny;
        for i in 0..nx {
            let im = (i + nx - 1) % nx;
            let ip = (i + 1) % nx;
            let idx2 = j * nx + i;
            let dedt = (e_next[idx2] - e_prev[idx2]) / (dt1 + dt2);
            let div = (flux[(j * nx + ip) * 2] - flux[(j * nx + im) * 2]) * inv2h
                + (flux[(jp * nx + i) * 2 + 1] - flux[(jm * nx + i) * 2 + 1]) * inv2h;
            let r = dedt - div - c_fit * e_mid[idx2] * (e_mid[idx2] + 1.0);
            residual[idx2] = r;
            if r <= 0.0 {
                nonpos += 1;
            }
        }
    }
    Ok((residual, nonpos as f64 / (nx * ny) as f64))
}
