//! Fixed-step simulation of hybrid dynamical systems.
//!
//! Each mode's field is integrated with RK4 (or Euler). After every step the
//! out-arrows of the current mode are checked for guard crossings; only
//! branches with at least one pinned guard coordinate can fire. A crossing
//! is located by bisection, the segment is cut there and the selected arrow
//! fires at once. Further arrows enabled at the landing point at the same
//! instant are chained into one composite jump, up to `chain_depth` arrows.
//!
//! Executions returned with [`Status::Completed`] validate at
//! [`SimConfig::validation_tol`]: `100·step²` for RK4, `100·step` for Euler.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::hyds::{Execution, HybridDynamicalSystem, Segment};
use crate::hyph::{Path, UnderlyingPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpPolicy {
    /// Lowest arrow index among the enabled arrows.
    Priority,
    /// The arrow whose guard was crossed first; ties go to the lower index.
    FirstEnabled,
    /// Uniform among enabled arrows, reproducible from the seed.
    SeededRandom(u64),
}

impl fmt::Display for JumpPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpPolicy::Priority => write!(f, "priority"),
            JumpPolicy::FirstEnabled => write!(f, "first-enabled"),
            JumpPolicy::SeededRandom(s) => write!(f, "seeded-random:{s}"),
        }
    }
}

impl JumpPolicy {
    /// Parses `priority`, `first-enabled` or `seeded-random` (the seed is
    /// supplied separately).
    pub fn parse(name: &str, seed: u64) -> Result<JumpPolicy> {
        match name {
            "priority" => Ok(JumpPolicy::Priority),
            "first-enabled" => Ok(JumpPolicy::FirstEnabled),
            "seeded-random" | "random" => Ok(JumpPolicy::SeededRandom(seed)),
            other => Err(Error::Unknown {
                kind: "policy",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

impl FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "euler" => Ok(Integrator::Euler),
            other => Err(Error::Unknown {
                kind: "integrator",
                name: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Rk4 => "rk4",
            Integrator::Euler => "euler",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub t_max: f64,
    pub max_jumps: usize,
    /// Width of the time bracket at which bisection stops.
    pub event_tol: f64,
    pub integrator: Integrator,
    /// Longest composite jump taken at one instant.
    pub chain_depth: usize,
    /// Distance from a pinned value at which a guard counts as reached.
    pub guard_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            t_max: 10.0,
            max_jumps: 100,
            event_tol: 1e-10,
            integrator: Integrator::Rk4,
            chain_depth: 4,
            guard_tol: 1e-7,
        }
    }
}

/// Constant `c` in the documented validation tolerance.
pub const VALIDATION_CONSTANT: f64 = 100.0;

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.step.is_finite()
            && self.t_max.is_finite()
            && self.t_max >= 0.0
            && self.event_tol > 0.0
            && self.guard_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid simulation settings {self:?}")))
        }
    }

    /// Tolerance at which executions from this configuration validate.
    pub fn validation_tol(&self) -> f64 {
        let order = match self.integrator {
            Integrator::Rk4 => self.step * self.step,
            Integrator::Euler => self.step,
        };
        (VALIDATION_CONSTANT * order).max(1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Reached `t_max`.
    Completed,
    /// A guard was reached with `max_jumps` jumps already taken.
    JumpLimit,
    /// The flow left the mode box with no guard to catch it.
    Stuck,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Completed => "completed",
            Status::JumpLimit => "jump-limit",
            Status::Stuck => "stuck",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub execution: Execution,
    pub status: Status,
}

/// Arrows out of the state's mode with some branch guard containing it.
pub fn enabled_arrows(h: &HybridDynamicalSystem, state: &UnderlyingPoint, tol: f64) -> Vec<usize> {
    let sp = h.space();
    sp.out_arrows(state.mode)
        .into_iter()
        .filter(|&a| !sp.arrow(a).rel.enabled_branches(&state.point, tol).is_empty())
        .collect()
}

/// Event functions `x[coord] − pin` for one arrow branch.
struct Watch {
    arrow: usize,
    coord: usize,
    pin: f64,
}

fn watches(h: &HybridDynamicalSystem, mode: usize) -> Vec<Watch> {
    let sp = h.space();
    let mut out = vec![];
    for a in sp.out_arrows(mode) {
        for br in sp.arrow(a).rel.branches() {
            for c in br.guard.pinned_coords() {
                out.push(Watch {
                    arrow: a,
                    coord: c,
                    pin: br.guard.intervals()[c].lo,
                });
            }
        }
    }
    out
}

fn pinned_enabled(h: &HybridDynamicalSystem, mode: usize, x: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let sp = h.space();
    let mut out = vec![];
    for a in sp.out_arrows(mode) {
        for (bi, br) in sp.arrow(a).rel.branches().iter().enumerate() {
            if !br.guard.pinned_coords().is_empty() && br.guard.contains(x, tol) {
                out.push((a, bi));
                break;
            }
        }
    }
    out
}

struct Stepper<'a> {
    h: &'a HybridDynamicalSystem,
    integrator: Integrator,
}

impl Stepper<'_> {
    fn step(&self, mode: usize, x: &[f64], dt: f64) -> Result<Point> {
        let f = self.h.field(mode);
        let axpy = |a: &[f64], k: &[f64], s: f64| -> Point { a.iter().zip(k).map(|(u, v)| u + s * v).collect() };
        let out: Point = match self.integrator {
            Integrator::Euler => axpy(x, &f.eval(x), dt),
            Integrator::Rk4 => {
                let k1 = f.eval(x);
                let k2 = f.eval(&axpy(x, &k1, 0.5 * dt));
                let k3 = f.eval(&axpy(x, &k2, 0.5 * dt));
                let k4 = f.eval(&axpy(x, &k3, dt));
                x.iter()
                    .enumerate()
                    .map(|(i, v)| v + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "field of mode `{}` produced {out:?} from {x:?}",
                self.h.space().mode(mode).name
            )));
        }
        Ok(out)
    }
}

/// Smallest `s ∈ (lo, hi]` (to within `tol`) where `hit(x(s))` holds,
/// given that it fails at `lo` and holds at `hi`.
fn bisect(
    stepper: &Stepper,
    mode: usize,
    x: &[f64],
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    hit: &dyn Fn(&[f64]) -> bool,
) -> Result<f64> {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hit(&stepper.step(mode, x, mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn simulate(
    h: &HybridDynamicalSystem,
    init: &UnderlyingPoint,
    policy: JumpPolicy,
    cfg: &SimConfig,
) -> Result<Simulation> {
    cfg.check()?;
    let sp = h.space();
    if init.mode >= sp.modes().len() {
        return Err(Error::structural(format!("initial mode {} out of range", init.mode)));
    }
    let box_tol = 1e-9;
    if !sp.space(init.mode).contains(&init.point, box_tol)? {
        return Err(Error::OutsideDomain {
            point: init.point.clone(),
        });
    }
    let stepper = Stepper {
        h,
        integrator: cfg.integrator,
    };
    let mut rng = match policy {
        JumpPolicy::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let end_slack = 1e-12 * (1.0 + cfg.t_max.abs());

    let mut t = 0.0;
    let mut mode = init.mode;
    let mut x = init.point.clone();
    let mut track = vec![t];
    let mut segments: Vec<Segment> = vec![];
    let mut jumps: Vec<Path> = vec![];
    let mut samples = vec![(t, x.clone())];
    let mut watch = watches(h, mode);

    let status = loop {
        if t >= cfg.t_max - end_slack {
            break Status::Completed;
        }
        let dt = cfg.step.min(cfg.t_max - t);
        let x_new = stepper.step(mode, &x, dt)?;

        // earliest guard crossing in this step
        let mut event: Option<(f64, usize)> = None;
        for w in &watch {
            let h_prev = x[w.coord] - w.pin;
            let h_new = x_new[w.coord] - w.pin;
            if h_prev.abs() <= cfg.guard_tol {
                continue;
            }
            if h_prev * h_new < 0.0 || h_new.abs() <= cfg.guard_tol {
                let (c, pin) = (w.coord, w.pin);
                let s = if h_prev * h_new <= 0.0 {
                    bisect(&stepper, mode, &x, 0.0, dt, cfg.event_tol, &|y: &[f64]| h_prev * (y[c] - pin) <= 0.0)?
                } else {
                    dt
                };
                let better = match event {
                    None => true,
                    Some((s0, a0)) => s < s0 || (s == s0 && w.arrow < a0),
                };
                if better {
                    event = Some((s, w.arrow));
                }
            }
        }

        // leaving the mode box before any event
        let mbox = sp.space(mode);
        let exit = if mbox.violation(&x_new) > box_tol {
            let hit = |y: &[f64]| mbox.violation(y) > box_tol;
            Some(bisect(&stepper, mode, &x, 0.0, dt, cfg.event_tol, &hit)?)
        } else {
            None
        };
        if let Some(s_exit) = exit {
            if event.is_none_or(|(s, _)| s_exit < s - cfg.event_tol) {
                let s = (s_exit - cfg.event_tol).max(0.0);
                if s > 0.0 {
                    let y = stepper.step(mode, &x, s)?;
                    samples.push((t + s, y));
                }
                break Status::Stuck;
            }
        }

        let Some((s, trigger)) = event else {
            t += dt;
            x = x_new;
            samples.push((t, x.clone()));
            continue;
        };

        let x_e = stepper.step(mode, &x, s)?;
        let t_e = t + s;
        if s < 1e-6 * cfg.step && samples.len() > 1 {
            samples.pop();
        }
        samples.push((t_e, x_e.clone()));
        t = t_e;
        if t >= cfg.t_max - end_slack {
            break Status::Completed;
        }
        if jumps.len() >= cfg.max_jumps {
            break Status::JumpLimit;
        }

        // fire the selected arrow, then chain arrows enabled at the landing point
        let mut path = Path::identity(mode);
        let mut at = x_e;
        let mut first = true;
        while path.len() < cfg.chain_depth.max(1) {
            let enabled = pinned_enabled(h, mode, &at, cfg.guard_tol);
            if enabled.is_empty() {
                break;
            }
            let (a, bi) = match (policy, first) {
                (JumpPolicy::FirstEnabled, true) => enabled
                    .iter()
                    .copied()
                    .find(|&(a, _)| a == trigger)
                    .unwrap_or(enabled[0]),
                (JumpPolicy::SeededRandom(_), _) => {
                    let r = rng.as_mut().expect("seeded policy has a generator");
                    enabled[r.gen_range(0..enabled.len())]
                }
                _ => enabled[0],
            };
            first = false;
            let arrow = sp.arrow(a);
            at = arrow.rel.branches()[bi].map.eval(&at);
            if at.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("reset `{}` produced {at:?}", arrow.name)));
            }
            path = path.then(&sp.single(a))?;
            mode = arrow.dst;
        }
        if path.is_identity() {
            // the crossing did not meet the rest of the guard
            x = samples.last().expect("nonempty").1.clone();
            continue;
        }
        segments.push(Segment {
            mode: path.src,
            samples: std::mem::take(&mut samples),
        });
        track.push(t);
        jumps.push(path);
        x = at;
        samples.push((t, x.clone()));
        watch = watches(h, mode);
    };

    if samples.len() > 1 || segments.is_empty() {
        let t_end = samples.last().expect("nonempty").0;
        if t_end > *track.last().expect("nonempty") {
            track.push(t_end);
        }
        segments.push(Segment { mode, samples });
    } else {
        // a final zero-length segment cannot sit on a strictly increasing
        // track, so the jump leading to it is dropped
        jumps.pop();
    }
    Ok(Simulation {
        execution: Execution {
            track,
            segments,
            jumps,
        },
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::hyds::validate_execution;

    fn start(h: &HybridDynamicalSystem, mode: &str, x: f64) -> UnderlyingPoint {
        let sp = h.space();
        UnderlyingPoint::new(sp, sp.mode_id(mode).unwrap(), vec![x], 0.0).unwrap()
    }

    #[test]
    fn thermostat_switches_at_closed_form_times() {
        let h = corpus::thermostat();
        let cfg = SimConfig {
            t_max: 4.0,
            ..SimConfig::default()
        };
        let s = simulate(&h, &start(&h, "off", 0.5), JumpPolicy::Priority, &cfg).unwrap();
        assert_eq!(s.status, Status::Completed);
        let times = s.execution.jump_times();
        assert_eq!(times.len(), 4);
        for (k, t) in times.iter().enumerate() {
            assert!((t - (0.5 + k as f64)).abs() < 1e-8, "{t}");
        }
        let r = validate_execution(&s.execution, &h, cfg.validation_tol());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn euler_run_validates_at_its_tolerance() {
        let h = corpus::thermostat();
        let cfg = SimConfig {
            t_max: 2.0,
            step: 1e-2,
            integrator: Integrator::Euler,
            ..SimConfig::default()
        };
        let s = simulate(&h, &start(&h, "on", 0.2), JumpPolicy::FirstEnabled, &cfg).unwrap();
        let r = validate_execution(&s.execution, &h, cfg.validation_tol());
        assert!(r.passed(), "{r}");
        assert!((s.execution.jump_times()[0] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn jump_limit_is_reported() {
        let h = corpus::thermostat();
        let cfg = SimConfig {
            t_max: 10.0,
            max_jumps: 3,
            ..SimConfig::default()
        };
        let s = simulate(&h, &start(&h, "off", 0.5), JumpPolicy::Priority, &cfg).unwrap();
        assert_eq!(s.status, Status::JumpLimit);
        assert_eq!(s.execution.jumps.len(), 3);
    }

    #[test]
    fn seeded_runs_repeat() {
        let h = corpus::thermostat();
        let cfg = SimConfig {
            t_max: 3.0,
            ..SimConfig::default()
        };
        let a = simulate(&h, &start(&h, "off", 0.3), JumpPolicy::SeededRandom(7), &cfg).unwrap();
        let b = simulate(&h, &start(&h, "off", 0.3), JumpPolicy::SeededRandom(7), &cfg).unwrap();
        assert_eq!(a.execution, b.execution);
    }

    #[test]
    fn zero_horizon_gives_degenerate_execution() {
        let h = corpus::thermostat();
        let cfg = SimConfig {
            t_max: 0.0,
            ..SimConfig::default()
        };
        let s = simulate(&h, &start(&h, "off", 0.3), JumpPolicy::Priority, &cfg).unwrap();
        assert_eq!(s.execution.track, vec![0.0]);
        assert!(validate_execution(&s.execution, &h, 1e-9).passed());
    }
}
