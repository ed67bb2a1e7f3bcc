//! Hybrid dynamical systems, their executions and maps between them.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{differential, Point, SmoothFn};
use crate::hyph::{product, HyPhMap, HybridPhaseSpace, Path, Product};
use crate::report::Report;

pub const TRACE_SCHEMA: &str = "hycomp.trace/1";

/// A phase space with one vector field per mode. The field on a mode with
/// box `B ⊆ ℝⁿ` is a map `B → ℝⁿ` giving tangent vector coordinates.
#[derive(Debug, Clone)]
pub struct HybridDynamicalSystem {
    space: Arc<HybridPhaseSpace>,
    field: Vec<SmoothFn>,
}

impl HybridDynamicalSystem {
    pub fn new(space: Arc<HybridPhaseSpace>, field: Vec<SmoothFn>) -> Result<Self> {
        Error::check_dim(space.modes().len(), field.len())?;
        for (m, (mode, x)) in space.modes().iter().zip(&field).enumerate() {
            let n = mode.space.dim();
            if x.dom().dim() != n || x.cod().dim() != n {
                return Err(Error::structural(format!(
                    "field on mode `{}` (#{m}) maps R^{} -> R^{}, expected R^{n} -> R^{n}",
                    mode.name,
                    x.dom().dim(),
                    x.cod().dim()
                )));
            }
        }
        Ok(HybridDynamicalSystem { space, field })
    }

    /// The zero field on every mode.
    pub fn zero(space: Arc<HybridPhaseSpace>) -> Self {
        let field = space
            .modes()
            .iter()
            .map(|m| {
                SmoothFn::constant(&m.space, crate::geometry::HyperBox::real_space(m.space.dim()), &vec![0.0; m.space.dim()])
                    .expect("matching dimension")
            })
            .collect();
        HybridDynamicalSystem { space, field }
    }

    pub fn space(&self) -> &Arc<HybridPhaseSpace> {
        &self.space
    }

    pub fn field(&self, mode: usize) -> &SmoothFn {
        &self.field[mode]
    }

    pub fn fields(&self) -> &[SmoothFn] {
        &self.field
    }
}

/// Product system `X₁ × ⋯ × Xₙ` on the product phase space.
pub fn product_system(systems: &[&HybridDynamicalSystem]) -> (HybridDynamicalSystem, Product) {
    let spaces: Vec<Arc<HybridPhaseSpace>> = systems.iter().map(|s| s.space.clone()).collect();
    let prod = product(&spaces);
    if systems.len() == 1 {
        return (systems[0].clone(), prod);
    }
    let field = (0..prod.space.modes().len())
        .map(|i| {
            let t = prod.mode_tuple(i);
            let parts: Vec<SmoothFn> = t.iter().zip(systems).map(|(&m, s)| s.field[m].clone()).collect();
            SmoothFn::product(&parts)
        })
        .collect();
    (
        HybridDynamicalSystem {
            space: prod.space.clone(),
            field,
        },
        prod,
    )
}

/// One continuous piece of an execution, densely sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub mode: usize,
    pub samples: Vec<(f64, Point)>,
}

/// A finite execution: `segments[i]` lives on `[track[i], track[i+1]]` and
/// `jumps[i]` joins segment `i` to segment `i+1`. A track with a single time
/// carries one zero-length segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub track: Vec<f64>,
    pub segments: Vec<Segment>,
    pub jumps: Vec<Path>,
}

impl Execution {
    pub fn modes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.mode).collect()
    }

    /// Times at which jumps happen.
    pub fn jump_times(&self) -> Vec<f64> {
        self.track.iter().skip(1).take(self.jumps.len()).copied().collect()
    }

    pub fn last_state(&self) -> Option<(usize, &Point)> {
        let s = self.segments.last()?;
        s.samples.last().map(|(_, x)| (s.mode, x))
    }

    /// Structural problems: track order, counts, path endpoints.
    pub fn structural_issues(&self, space: &HybridPhaseSpace) -> Vec<String> {
        let mut out = vec![];
        if self.track.is_empty() {
            out.push("empty time track".into());
            return out;
        }
        if self.track.windows(2).any(|w| !(w[0] < w[1])) {
            out.push("time track is not strictly increasing".into());
        }
        let want = (self.track.len() - 1).max(1);
        if self.segments.len() != want {
            out.push(format!("{} segments for a track of {} times", self.segments.len(), self.track.len()));
            return out;
        }
        if self.jumps.len() + 1 != self.segments.len() {
            out.push(format!("{} jumps for {} segments", self.jumps.len(), self.segments.len()));
            return out;
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.mode >= space.modes().len() {
                out.push(format!("segment {i} has unknown mode {}", s.mode));
            } else if s.samples.is_empty() {
                out.push(format!("segment {i} has no samples"));
            } else if s.samples.iter().any(|(_, x)| x.len() != space.space(s.mode).dim()) {
                out.push(format!("segment {i} has samples of the wrong dimension"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        for (i, p) in self.jumps.iter().enumerate() {
            if p.src != self.segments[i].mode || p.dst != self.segments[i + 1].mode {
                out.push(format!("jump {i} does not join the modes of its segments"));
            } else if let Err(e) = space.check_path(p) {
                out.push(format!("jump {i}: {e}"));
            }
        }
        out
    }
}

/// Checks an execution against a system: midpoint-rule ODE residual on
/// every pair of consecutive samples, jump membership in the path relation,
/// segment endpoints against the track and samples inside the mode boxes.
pub fn validate_execution(e: &Execution, h: &HybridDynamicalSystem, tol: f64) -> Report {
    let mut report = Report::new("execution");
    for s in e.structural_issues(&h.space) {
        report.structural(s);
    }
    if report.is_structural_failure() {
        return report;
    }
    let degenerate = e.track.len() == 1;
    for (i, seg) in e.segments.iter().enumerate() {
        let (t0, t1) = if degenerate {
            (e.track[0], e.track[0])
        } else {
            (e.track[i], e.track[i + 1])
        };
        let (first, last) = (seg.samples[0].0, seg.samples[seg.samples.len() - 1].0);
        let time_tol = tol * (1.0 + t0.abs().max(t1.abs()));
        if (first - t0).abs() > time_tol || (last - t1).abs() > time_tol {
            report.fail(
                format!("segment {i}"),
                format!("samples span [{first}, {last}], track says [{t0}, {t1}]"),
                Some((first - t0).abs().max((last - t1).abs())),
            );
        }
        let b = h.space.space(seg.mode);
        for (t, x) in &seg.samples {
            let v = b.violation(x);
            if !(v <= tol) {
                report.fail(format!("segment {i} at t={t}"), format!("{x:?} is outside {b}"), Some(v));
            }
        }
        let field = &h.field[seg.mode];
        for w in seg.samples.windows(2) {
            let ((ta, xa), (tb, xb)) = (&w[0], &w[1]);
            let dt = tb - ta;
            if dt < 0.0 {
                report.fail(format!("segment {i} at t={ta}"), "sample times decrease", None);
                continue;
            }
            if dt == 0.0 {
                continue;
            }
            let mid: Point = xa.iter().zip(xb).map(|(a, b)| 0.5 * (a + b)).collect();
            let v = field.eval(&mid);
            let scale = 1.0 + v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let r = xa
                .iter()
                .zip(xb)
                .zip(&v)
                .map(|((a, b), f)| ((b - a) / dt - f).abs())
                .fold(0.0, f64::max);
            let rel = if r.is_finite() { r / scale } else { f64::NAN };
            report.residual(rel);
            if !(rel <= tol) {
                report.fail(
                    format!("segment {i} on [{ta}, {tb}]"),
                    "difference quotient does not match the field",
                    Some(rel),
                );
            }
        }
    }
    for (i, p) in e.jumps.iter().enumerate() {
        let rel = match h.space.path_relation(p) {
            Ok(r) => r,
            Err(err) => {
                report.structural(format!("jump {i}: {err}"));
                continue;
            }
        };
        let x = &e.segments[i].samples.last().expect("nonempty").1;
        let y = &e.segments[i + 1].samples[0].1;
        let d = rel.distance(x, y, tol);
        report.residual(d);
        if !(d <= tol) {
            report.fail(
                format!("jump {i} ({})", h.space.path_label(p)),
                format!("({x:?}, {y:?}) is not in the reset relation"),
                Some(d),
            );
        }
    }
    report
}

/// Image of an execution under a map of phase spaces: same track, mapped
/// modes, mapped jump paths and pointwise mapped samples.
pub fn pushforward_execution(f: &HyPhMap, e: &Execution) -> Result<Execution> {
    let issues = e.structural_issues(f.dom());
    if !issues.is_empty() {
        return Err(Error::Structural(issues.join("; ")));
    }
    let segments = e
        .segments
        .iter()
        .map(|s| Segment {
            mode: f.obj()[s.mode],
            samples: s
                .samples
                .iter()
                .map(|(t, x)| (*t, f.comp(s.mode).eval(x)))
                .collect(),
        })
        .collect();
    let jumps = e.jumps.iter().map(|p| f.map_path(p)).collect::<Result<Vec<_>>>()?;
    Ok(Execution {
        track: e.track.clone(),
        segments,
        jumps,
    })
}

/// Checks that `dst`'s field is related to `src`'s field along `f`:
/// `DΦ_m(x)·X_m(x) = Y_{φ(m)}(Φ_m(x))` on sampled points of every mode.
pub fn check_hds_map(
    f: &HyPhMap,
    src: &HybridDynamicalSystem,
    dst: &HybridDynamicalSystem,
    nsamples: usize,
    tol: f64,
) -> Report {
    let mut report = Report::new("system map");
    if !src.space.same_shape(f.dom()) {
        report.structural("map domain is not the source phase space");
    }
    if !dst.space.same_shape(f.cod()) {
        report.structural("map codomain is not the target phase space");
    }
    if report.is_structural_failure() {
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e1a7ed);
    for (m, mode) in src.space.modes().iter().enumerate() {
        let phi = f.comp(m);
        let target = f.obj()[m];
        for x in mode.space.sample(nsamples, &mut rng) {
            let r = match differential(phi, &x) {
                Ok(d) => {
                    let xv = src.field[m].eval(&x);
                    let push = &d * nalgebra::DVector::from_column_slice(&xv);
                    let y = dst.field[target].eval(&phi.eval(&x));
                    push.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                }
                Err(e) => {
                    report.fail(format!("mode {}", mode.name), e.to_string(), None);
                    continue;
                }
            };
            let r = if r.is_finite() { r } else { f64::NAN };
            report.residual(r);
            if !(r <= tol) {
                report.fail(
                    format!("mode {} at {x:?}", mode.name),
                    "pushed-forward field differs from the target field",
                    Some(r),
                );
            }
        }
    }
    report
}

/// JSON trace of an execution.
pub fn trace_json(e: &Execution, space: &HybridPhaseSpace, status: &str) -> serde_json::Value {
    let jumps: Vec<_> = e
        .jumps
        .iter()
        .enumerate()
        .map(|(i, p)| {
            json!({
                "time": e.track[i + 1],
                "from": space.mode(p.src).name,
                "to": space.mode(p.dst).name,
                "arrows": p.arrows.iter().map(|&a| space.arrow(a).name.clone()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let segments: Vec<_> = e
        .segments
        .iter()
        .map(|s| {
            json!({
                "mode": space.mode(s.mode).name,
                "vars": space.mode(s.mode).vars,
                "samples": s.samples.iter().map(|(t, x)| {
                    let mut row = vec![*t];
                    row.extend(x);
                    row
                }).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "schema": TRACE_SCHEMA,
        "status": status,
        "track": e.track,
        "modes": e.segments.iter().map(|s| space.mode(s.mode).name.clone()).collect::<Vec<_>>(),
        "jumps": jumps,
        "segments": segments,
    })
}

/// CSV trace with header `t,mode,x0,…,event`. The first sample after a jump
/// carries `jump:<arrows joined by +>`; all other rows carry `flow`.
pub fn write_csv<W: Write>(e: &Execution, space: &HybridPhaseSpace, out: W) -> Result<()> {
    let width = space.modes().iter().map(|m| m.space.dim()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(format!("writing trace: {e}"));
    let mut header = vec!["t".to_string(), "mode".to_string()];
    header.extend((0..width).map(|i| format!("x{i}")));
    header.push("event".into());
    w.write_record(&header).map_err(io)?;
    for (i, s) in e.segments.iter().enumerate() {
        for (k, (t, x)) in s.samples.iter().enumerate() {
            let event = if k == 0 && i > 0 {
                format!("jump:{}", space.path_label(&e.jumps[i - 1]))
            } else {
                "flow".to_string()
            };
            let mut row = vec![format!("{t}"), space.mode(s.mode).name.clone()];
            row.extend((0..width).map(|j| x.get(j).map(|v| format!("{v}")).unwrap_or_default()));
            row.push(event);
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Config(format!("writing trace: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::hyph::HyPhMap;

    fn thermostat_run(jump_to: f64) -> Execution {
        // off from 1.0 down to 0 on [0,1], jump f, on from 0 up on [1,2]
        let n = 50;
        let down = (0..=n).map(|k| {
            let t = k as f64 / n as f64;
            (t, vec![1.0 - t])
        });
        let up = (0..=n).map(|k| {
            let t = 1.0 + k as f64 / n as f64;
            (t, vec![t - 1.0 + jump_to])
        });
        let t = corpus::thermostat();
        let sp = t.space();
        Execution {
            track: vec![0.0, 1.0, 2.0],
            segments: vec![
                Segment {
                    mode: sp.mode_id("off").unwrap(),
                    samples: down.collect(),
                },
                Segment {
                    mode: sp.mode_id("on").unwrap(),
                    samples: up.map(|(t, x)| (t, vec![x[0].min(1.0)])).collect(),
                },
            ],
            jumps: vec![sp.single(sp.arrow_id("f").unwrap())],
        }
    }

    #[test]
    fn closed_form_thermostat_execution_validates() {
        let h = corpus::thermostat();
        let e = thermostat_run(0.0);
        let r = validate_execution(&e, &h, 1e-9);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn wrong_reset_fails_jump_check() {
        let h = corpus::thermostat();
        let mut e = thermostat_run(0.0);
        e.segments[1].samples[0].1 = vec![0.5];
        let r = validate_execution(&e, &h, 1e-9);
        assert!(!r.passed());
        assert!(r.failures.iter().any(|f| f.location.starts_with("jump 0")));
    }

    #[test]
    fn degenerate_execution_is_valid() {
        let h = corpus::thermostat();
        let e = Execution {
            track: vec![0.3],
            segments: vec![Segment {
                mode: 0,
                samples: vec![(0.3, vec![0.5])],
            }],
            jumps: vec![],
        };
        assert!(validate_execution(&e, &h, 0.0).passed());
    }

    #[test]
    fn non_increasing_track_is_structural() {
        let h = corpus::thermostat();
        let mut e = thermostat_run(0.0);
        e.track = vec![0.0, 1.0, 1.0];
        assert!(validate_execution(&e, &h, 1e-9).is_structural_failure());
    }

    #[test]
    fn identity_pushforward_is_identity() {
        let h = corpus::thermostat();
        let e = thermostat_run(0.0);
        let id = HyPhMap::identity(h.space());
        assert_eq!(pushforward_execution(&id, &e).unwrap(), e);
        assert!(check_hds_map(&id, &h, &h, 10, 1e-12).passed());
    }

    #[test]
    fn csv_trace_marks_jumps() {
        let h = corpus::thermostat();
        let e = thermostat_run(0.0);
        let mut buf = vec![];
        write_csv(&e, h.space(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mode,x0,event"));
        assert_eq!(text.matches("jump:f").count(), 1);
        let j = trace_json(&e, h.space(), "completed");
        assert_eq!(j["schema"], TRACE_SCHEMA);
        assert_eq!(j["jumps"][0]["arrows"][0], "f");
    }
}
