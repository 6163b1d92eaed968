//! Flat `key = value` scenario configuration: one assignment per line,
//! `#` comments, braced lists like `{1.2, 1.1, 1.05}`. All violations are
//! collected and reported together, each with its line number.

use crate::flow::{FlowParams, Integrator};
use std::collections::HashMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}", .0.join("\n"))]
    Violations(Vec<String>),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Relax,
    AlphaSweep,
    Minimize,
    BubbleAnalyze,
    SurgeryDemo,
    Stability,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMap {
    Constant,
    EquatorialWrap { degree: i32 },
    GluedBubble { scale: f64, center: (f64, f64) },
    FourierPerturbed { seed: u64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Thresholds {
    pub epsilon_0: f64,
    pub epsilon_1: f64,
    pub c_r: f64,
    pub sigma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let epsilon_1 = 4.0 * std::f64::consts::PI;
        Thresholds {
            epsilon_0: 1.0,
            epsilon_1,
            c_r: epsilon_1 / 6.0,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub nx: usize,
    pub side: f64,
    pub k: usize,
    pub flow: FlowParams,
    /// Strictly decreasing toward 1; used by sweep/minimize scenarios.
    pub alpha_schedule: Vec<f64>,
    pub initial_map: InitialMap,
    pub thresholds: Thresholds,
    pub output_dir: Option<PathBuf>,
    pub snapshot_stride: usize,
    pub seed: u64,
    /// Relaxation horizon; stop-by-convergence applies before it.
    pub t_max: Option<f64>,
    /// Perturbation size for the stability scenario.
    pub delta_0: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Relax,
            nx: 64,
            side: 1.0,
            k: 3,
            flow: FlowParams::new(1.1),
            alpha_schedule: vec![1.2, 1.1, 1.05, 1.02],
            initial_map: InitialMap::Constant,
            thresholds: Thresholds::default(),
            output_dir: None,
            snapshot_stride: 10,
            seed: 0,
            t_max: None,
            delta_0: 1e-6,
        }
    }
}

struct Entry {
    line: usize,
    value: String,
    used: std::cell::Cell<bool>,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut violations: Vec<String> = Vec::new();
    let mut entries: HashMap<String, Entry> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let Some((key, value)) = stripped.split_once('=') else {
            violations.push(format!("line {line}: expected `key = value`, got `{stripped}`"));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if entries.contains_key(&key) {
            violations.push(format!("line {line}: duplicate key `{key}`"));
            continue;
        }
        entries.insert(key, Entry { line, value, used: std::cell::Cell::new(false) });
    }

    let mut cfg = ScenarioConfig::default();
    let get = |key: &str| -> Option<(usize, String)> {
        entries.get(key).map(|e| {
            e.used.set(true);
            (e.line, e.value.clone())
        })
    };

    macro_rules! parse_as {
        ($key:expr, $ty:ty, $slot:expr) => {
            if let Some((line, v)) = get($key) {
                match v.parse::<$ty>() {
                    Ok(x) => $slot = x,
                    Err(_) => violations
                        .push(format!("line {line}: cannot parse `{v}` as {} for {}", stringify!($ty), $key)),
                }
            }
        };
    }

    if let Some((line, v)) = get("scenario") {
        cfg.scenario = match v.as_str() {
            "relax" => Scenario::Relax,
            "alpha_sweep" => Scenario::AlphaSweep,
            "minimize" => Scenario::Minimize,
            "bubble_analyze" => Scenario::BubbleAnalyze,
            "surgery_demo" => Scenario::SurgeryDemo,
            "stability" => Scenario::Stability,
            _ => {
                violations.push(format!("line {line}: unknown scenario `{v}`"));
                cfg.scenario
            }
        };
    }
    parse_as!("nx", usize, cfg.nx);
    parse_as!("L", f64, cfg.side);
    parse_as!("k", usize, cfg.k);
    parse_as!("alpha", f64, cfg.flow.alpha);
    parse_as!("r_scale", f64, cfg.flow.r_scale);
    parse_as!("cfl_factor", f64, cfg.flow.cfl_factor);
    parse_as!("tau_tolerance", f64, cfg.flow.tau_tolerance);
    parse_as!("snapshot_stride", usize, cfg.snapshot_stride);
    parse_as!("seed", u64, cfg.seed);
    parse_as!("delta_0", f64, cfg.delta_0);
    parse_as!("epsilon_0", f64, cfg.thresholds.epsilon_0);
    parse_as!("epsilon_1", f64, cfg.thresholds.epsilon_1);
    parse_as!("C_R", f64, cfg.thresholds.c_r);
    parse_as!("sigma", f64, cfg.thresholds.sigma);

    if let Some((line, v)) = get("integrator") {
        cfg.flow.integrator = match v.as_str() {
            "euler" => Integrator::Euler,
            "rk2" => Integrator::Rk2,
            _ => {
                violations.push(format!("line {line}: unknown integrator `{v}`"));
                cfg.flow.integrator
            }
        };
    }
    if let Some((line, v)) = get("blowup_sup_e") {
        match v.parse::<f64>() {
            Ok(x) => cfg.flow.blowup_sup_e = Some(x),
            Err(_) => violations.push(format!("line {line}: cannot parse `{v}` as f64 for blowup_sup_e")),
        }
    }
    if let Some((line, v)) = get("t_max") {
        match v.parse::<f64>() {
            Ok(x) if x > 0.0 => cfg.t_max = Some(x),
            _ => violations.push(format!("line {line}: t_max must be a positive number, got `{v}`")),
        }
    }
    if let Some((_, v)) = get("output_dir") {
        cfg.output_dir = Some(PathBuf::from(v));
    }
    if let Some((line, v)) = get("alpha_schedule") {
        match parse_list(&v) {
            Ok(xs) if !xs.is_empty() => cfg.alpha_schedule = xs,
            _ => violations.push(format!("line {line}: alpha_schedule must be a braced list, got `{v}`")),
        }
    }

    // initial map family plus its parameters
    let map_kind = get("initial_map");
    let wrap_degree = get("wrap_degree");
    let bubble_scale = get("bubble_scale");
    let bubble_center = get("bubble_center");
    let noise_amplitude = get("noise_amplitude");
    if let Some((line, kind)) = &map_kind {
        cfg.initial_map = match kind.as_str() {
            "constant" => InitialMap::Constant,
            "equatorial_wrap" => {
                let mut degree = 1;
                if let Some((l, v)) = &wrap_degree {
                    match v.parse::<i32>() {
                        Ok(d) => degree = d,
                        Err(_) => violations.push(format!("line {l}: cannot parse wrap_degree `{v}`")),
                    }
                }
                InitialMap::EquatorialWrap { degree }
            }
            "glued_bubble" => {
                let mut scale = 0.1;
                let mut center = (cfg.side / 2.0, cfg.side / 2.0);
                if let Some((l, v)) = &bubble_scale {
                    match v.parse::<f64>() {
                        Ok(s) if s > 0.0 => scale = s,
                        _ => violations.push(format!("line {l}: bubble_scale must be positive, got `{v}`")),
                    }
                }
                if let Some((l, v)) = &bubble_center {
                    match parse_list(v).ok().filter(|xs| xs.len() == 2) {
                        Some(xs) => center = (xs[0], xs[1]),
                        None => violations
                            .push(format!("line {l}: bubble_center must be a 2-element list, got `{v}`")),
                    }
                }
                InitialMap::GluedBubble { scale, center }
            }
            "fourier_perturbed" => {
                let mut amplitude = 0.3;
                if let Some((l, v)) = &noise_amplitude {
                    match v.parse::<f64>() {
                        Ok(a) if a > 0.0 => amplitude = a,
                        _ => violations
                            .push(format!("line {l}: noise_amplitude must be positive, got `{v}`")),
                    }
                }
                InitialMap::FourierPerturbed { seed: cfg.seed, amplitude }
            }
            _ => {
                violations.push(format!("line {line}: unknown initial_map `{kind}`"));
                cfg.initial_map.clone()
            }
        };
    }

    // unknown keys
    let mut unknown: Vec<&Entry> = entries
        .iter()
        .filter(|(_, e)| !e.used.get())
        .map(|(_, e)| e)
        .collect();
    unknown.sort_by_key(|e| e.line);
    for e in &unknown {
        let key = entries
            .iter()
            .find(|(_, v)| v.line == e.line)
            .map(|(k, _)| k.clone())
            .unwrap_or_default();
        violations.push(format!("line {}: unknown key `{}`", e.line, key));
    }

    // cross-field constraints
    let line_of = |key: &str| entries.get(key).map(|e| e.line).unwrap_or(0);
    if cfg.nx < 8 {
        violations.push(format!("line {}: nx >= 8 required, got {}", line_of("nx"), cfg.nx));
    }
    if !(cfg.side > 0.0) {
        violations.push(format!("line {}: L must be positive", line_of("L")));
    }
    if cfg.k < 3 {
        violations.push(format!("line {}: k >= 3 required, got {}", line_of("k"), cfg.k));
    }
    if !(cfg.flow.alpha > 1.0 && cfg.flow.alpha <= 2.0) {
        violations.push(format!(
            "line {}: alpha must lie in (1, 2], got {}",
            line_of("alpha"),
            cfg.flow.alpha
        ));
    }
    if !(cfg.flow.cfl_factor > 0.0 && cfg.flow.cfl_factor <= 1.0) {
        violations.push(format!(
            "line {}: cfl_factor must lie in (0, 1], got {}",
            line_of("cfl_factor"),
            cfg.flow.cfl_factor
        ));
    }
    if cfg.snapshot_stride == 0 {
        violations.push(format!(
            "line {}: snapshot_stride >= 1 required",
            line_of("snapshot_stride")
        ));
    }
    for w in cfg.alpha_schedule.windows(2) {
        if w[1] >= w[0] {
            violations.push(format!(
                "line {}: schedule must decrease, got {} after {}",
                line_of("alpha_schedule"),
                w[1],
                w[0]
            ));
            break;
        }
    }
    if cfg.alpha_schedule.iter().any(|&a| !(a > 1.0 && a <= 2.0)) {
        violations.push(format!(
            "line {}: schedule values must lie in (1, 2]",
            line_of("alpha_schedule")
        ));
    }
    if let InitialMap::GluedBubble { scale, .. } = cfg.initial_map {
        let h = cfg.side / cfg.nx as f64;
        if scale < 4.0 * h && cfg.scenario != Scenario::BubbleAnalyze {
            violations.push(format!(
                "line {}: bubble_scale {} is under-resolved (< 4h = {}); only the bubble_analyze scenario accepts this deliberately",
                line_of("bubble_scale"),
                scale,
                4.0 * h
            ));
        }
    }

    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Violations(violations))
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, ()> {
    let inner = v.strip_prefix('{').and_then(|s| s.strip_suffix('}')).ok_or(())?;
    inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| ()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_relax_config_fills_defaults() {
        let cfg = parse_config("scenario = relax\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::Relax);
        assert_eq!(cfg.nx, 64);
        assert_eq!(cfg.flow.alpha, 1.1);
        assert_eq!(cfg.flow.cfl_factor, 0.2);
        assert_eq!(cfg.thresholds.epsilon_0, 1.0);
        assert_eq!(cfg.alpha_schedule, vec![1.2, 1.1, 1.05, 1.02]);
    }

    #[test]
    fn comments_and_lists() {
        let cfg = parse_config(
            "# experiment\nscenario = alpha_sweep  # sweep\nalpha_schedule = {1.3, 1.15, 1.05}\nnx = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.alpha_schedule, vec![1.3, 1.15, 1.05]);
        assert_eq!(cfg.nx, 32);
    }

    #[test]
    fn increasing_schedule_rejected() {
        let err = parse_config("alpha_schedule = {1.05, 1.1}\n").unwrap_err();
        let ConfigError::Violations(v) = err;
        assert!(v.iter().any(|m| m.contains("schedule must decrease")), "{v:?}");
        assert!(v[0].starts_with("line 1:"));
    }

    #[test]
    fn small_grid_rejected() {
        let err = parse_config("nx = 4\n").unwrap_err();
        let ConfigError::Violations(v) = err;
        assert!(v.iter().any(|m| m.contains("nx >= 8")), "{v:?}");
    }

    #[test]
    fn unknown_key_named_with_line() {
        let err = parse_config("scenario = relax\nfrobnicate = 3\n").unwrap_err();
        let ConfigError::Violations(v) = err;
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("line 2") && v[0].contains("frobnicate"), "{v:?}");
    }

    #[test]
    fn all_violations_collected() {
        let err = parse_config("nx = 4\nalpha = 3.0\nbogus = 1\n").unwrap_err();
        let ConfigError::Violations(v) = err;
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn under_resolved_bubble_gated_by_scenario() {
        let base = "initial_map = glued_bubble\nbubble_scale = 0.01\nnx = 64\n";
        assert!(parse_config(base).is_err());
        let ok = format!("scenario = bubble_analyze\n{base}");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn initial_map_parameters() {
        let cfg = parse_config(
            "initial_map = glued_bubble\nbubble_scale = 0.1\nbubble_center = {0.25, 0.75}\n",
        )
        .unwrap();
        assert_eq!(
            cfg.initial_map,
            InitialMap::GluedBubble { scale: 0.1, center: (0.25, 0.75) }
        );
        let cfg = parse_config("initial_map = equatorial_wrap\nwrap_degree = 2\n").unwrap();
        assert_eq!(cfg.initial_map, InitialMap::EquatorialWrap { degree: 2 });
        let cfg = parse_config("initial_map = fourier_perturbed\nseed = 7\n").unwrap();
        assert_eq!(
            cfg.initial_map,
            InitialMap::FourierPerturbed { seed: 7, amplitude: 0.3 }
        );
    }
}
