//! Hybrid phase spaces: finite graphs of modes with box-shaped mode spaces
//! and reset relations on the arrows, plus the maps between them.
//!
//! Identity arrows are implicit. A map `(φ, Φ)` sends modes to modes, arrows
//! to paths in the target graph, and carries one smooth component per mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{HyperBox, Point, SmoothFn};
use crate::relation::{compose, identity_rel, rel_product_all, Relation};
use crate::report::Report;

const SAMPLE_SEED: u64 = 0x5eed_4a11;

#[derive(Debug, Clone)]
pub struct Mode {
    pub name: String,
    /// Coordinate names used by expressions over this mode.
    pub vars: Vec<String>,
    pub space: HyperBox,
}

impl Mode {
    pub fn new(name: impl Into<String>, space: HyperBox) -> Mode {
        let vars = default_vars(space.dim());
        Mode {
            name: name.into(),
            vars,
            space,
        }
    }

    pub fn with_vars(name: impl Into<String>, space: HyperBox, vars: Vec<String>) -> Result<Mode> {
        Error::check_dim(space.dim(), vars.len())?;
        Ok(Mode {
            name: name.into(),
            vars,
            space,
        })
    }
}

pub fn default_vars(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

#[derive(Debug, Clone)]
pub struct Arrow {
    pub name: String,
    pub src: usize,
    pub dst: usize,
    pub rel: Relation,
}

/// Arrows of the free category: composable sequences of generating arrows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub src: usize,
    pub dst: usize,
    pub arrows: Vec<usize>,
}

impl Path {
    pub fn identity(mode: usize) -> Path {
        Path {
            src: mode,
            dst: mode,
            arrows: vec![],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Path) -> Result<Path> {
        if self.dst != next.src {
            return Err(Error::structural(format!(
                "paths do not compose: mode {} vs {}",
                self.dst, next.src
            )));
        }
        let mut arrows = self.arrows.clone();
        arrows.extend(&next.arrows);
        Ok(Path {
            src: self.src,
            dst: next.dst,
            arrows,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HybridPhaseSpace {
    modes: Vec<Mode>,
    arrows: Vec<Arrow>,
}

/// Collects modes and arrows by name before checking them.
#[derive(Debug, Default)]
pub struct Builder {
    modes: Vec<Mode>,
    arrows: Vec<(String, String, String, Relation)>,
}

impl Builder {
    pub fn mode(mut self, name: impl Into<String>, space: HyperBox) -> Builder {
        self.modes.push(Mode::new(name, space));
        self
    }

    pub fn push_mode(mut self, mode: Mode) -> Builder {
        self.modes.push(mode);
        self
    }

    pub fn arrow(mut self, name: impl Into<String>, src: &str, dst: &str, rel: Relation) -> Builder {
        self.arrows.push((name.into(), src.into(), dst.into(), rel));
        self
    }

    pub fn build(self) -> Result<HybridPhaseSpace> {
        let find = |name: &str| {
            self.modes
                .iter()
                .position(|m| m.name == name)
                .ok_or_else(|| Error::Unknown {
                    kind: "mode",
                    name: name.to_string(),
                })
        };
        let mut arrows = Vec::with_capacity(self.arrows.len());
        for (name, src, dst, rel) in &self.arrows {
            arrows.push(Arrow {
                name: name.clone(),
                src: find(src)?,
                dst: find(dst)?,
                rel: rel.clone(),
            });
        }
        HybridPhaseSpace::new(self.modes, arrows)
    }
}

impl HybridPhaseSpace {
    pub fn builder() -> Builder {
        Builder::default()
    }

    pub fn new(modes: Vec<Mode>, arrows: Vec<Arrow>) -> Result<HybridPhaseSpace> {
        if modes.is_empty() {
            return Err(Error::structural("a phase space needs at least one mode"));
        }
        let mut seen = BTreeSet::new();
        for m in &modes {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::structural(format!("duplicate mode `{}`", m.name)));
            }
            Error::check_dim(m.space.dim(), m.vars.len())?;
        }
        let mut seen = BTreeSet::new();
        for a in &arrows {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::structural(format!("duplicate arrow `{}`", a.name)));
            }
            if a.src >= modes.len() || a.dst >= modes.len() {
                return Err(Error::structural(format!("arrow `{}` has an unknown endpoint", a.name)));
            }
            if *a.rel.source() != modes[a.src].space || *a.rel.target() != modes[a.dst].space {
                return Err(Error::BoxMismatch(format!(
                    "arrow `{}` relates {} -> {} but its modes are {} -> {}",
                    a.name,
                    a.rel.source(),
                    a.rel.target(),
                    modes[a.src].space,
                    modes[a.dst].space
                )));
            }
        }
        Ok(HybridPhaseSpace { modes, arrows })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn mode(&self, i: usize) -> &Mode {
        &self.modes[i]
    }

    pub fn arrow(&self, i: usize) -> &Arrow {
        &self.arrows[i]
    }

    pub fn space(&self, mode: usize) -> &HyperBox {
        &self.modes[mode].space
    }

    pub fn mode_id(&self, name: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::Unknown {
                kind: "mode",
                name: name.to_string(),
            })
    }

    pub fn arrow_id(&self, name: &str) -> Result<usize> {
        self.arrows
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Unknown {
                kind: "arrow",
                name: name.to_string(),
            })
    }

    pub fn out_arrows(&self, mode: usize) -> Vec<usize> {
        (0..self.arrows.len()).filter(|&i| self.arrows[i].src == mode).collect()
    }

    pub fn single(&self, arrow: usize) -> Path {
        let a = &self.arrows[arrow];
        Path {
            src: a.src,
            dst: a.dst,
            arrows: vec![arrow],
        }
    }

    /// Path from arrow names; `src` is needed only for the empty path.
    pub fn path_from_names(&self, src: usize, names: &[&str]) -> Result<Path> {
        let mut p = Path::identity(src);
        for n in names {
            p = p.then(&self.single(self.arrow_id(n)?))?;
        }
        Ok(p)
    }

    pub fn check_path(&self, p: &Path) -> Result<()> {
        if p.src >= self.modes.len() || p.dst >= self.modes.len() {
            return Err(Error::structural("path endpoint is not a mode"));
        }
        let mut at = p.src;
        for &a in &p.arrows {
            let arrow = self
                .arrows
                .get(a)
                .ok_or_else(|| Error::structural(format!("path uses unknown arrow {a}")))?;
            if arrow.src != at {
                return Err(Error::structural(format!(
                    "arrow `{}` starts at `{}`, path is at `{}`",
                    arrow.name, self.modes[arrow.src].name, self.modes[at].name
                )));
            }
            at = arrow.dst;
        }
        if at != p.dst {
            return Err(Error::structural(format!(
                "path ends at `{}` but claims `{}`",
                self.modes[at].name, self.modes[p.dst].name
            )));
        }
        Ok(())
    }

    /// Relation of a path: edge relations composed in order.
    pub fn path_relation(&self, p: &Path) -> Result<Relation> {
        self.check_path(p)?;
        let mut rel = identity_rel(self.space(p.src));
        let mut first = true;
        for &a in &p.arrows {
            rel = if first {
                self.arrows[a].rel.clone()
            } else {
                compose(&self.arrows[a].rel, &rel)?
            };
            first = false;
        }
        Ok(rel)
    }

    /// Arrow names joined by `+`; `id` for the empty path.
    pub fn path_label(&self, p: &Path) -> String {
        if p.arrows.is_empty() {
            return "id".to_string();
        }
        p.arrows
            .iter()
            .map(|&a| self.arrows[a].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn underlying(&self) -> Vec<(String, HyperBox)> {
        self.modes.iter().map(|m| (m.name.clone(), m.space.clone())).collect()
    }

    /// Same mode names and boxes, same arrow names and endpoints.
    pub fn same_shape(&self, other: &HybridPhaseSpace) -> bool {
        self.modes.len() == other.modes.len()
            && self.arrows.len() == other.arrows.len()
            && self
                .modes
                .iter()
                .zip(&other.modes)
                .all(|(a, b)| a.name == b.name && a.space == b.space)
            && self
                .arrows
                .iter()
                .zip(&other.arrows)
                .all(|(a, b)| a.name == b.name && a.src == b.src && a.dst == b.dst)
    }

    pub fn is_terminal(&self) -> bool {
        self.modes.len() == 1 && self.modes[0].space.dim() == 0 && self.arrows.is_empty()
    }

    /// Ordered mode pairs joined by some path of length `1..=max_len` whose
    /// relation is not empty.
    pub fn connected_pairs(&self, max_len: usize) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        // (start mode, current mode, relation of the path so far)
        let mut frontier: Vec<(usize, usize, Relation)> = vec![];
        for a in &self.arrows {
            if !a.rel.is_empty() {
                out.insert((a.src, a.dst));
                frontier.push((a.src, a.dst, a.rel.clone()));
            }
        }
        for _ in 1..max_len {
            let mut next = vec![];
            for (s, at, rel) in &frontier {
                for a in self.out_arrows(*at) {
                    let r = compose(&self.arrows[a].rel, rel).expect("boxes agree along a path");
                    if !r.is_empty() {
                        out.insert((*s, self.arrows[a].dst));
                        next.push((*s, self.arrows[a].dst, r));
                    }
                }
            }
            frontier = next;
        }
        out
    }
}

impl fmt::Display for HybridPhaseSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.modes {
            writeln!(f, "mode {}: {}", m.name, m.space)?;
        }
        for a in &self.arrows {
            writeln!(
                f,
                "arrow {}: {} -> {} ({} branches)",
                a.name,
                self.modes[a.src].name,
                self.modes[a.dst].name,
                a.rel.branches().len()
            )?;
        }
        Ok(())
    }
}

/// The one-mode, zero-dimensional phase space.
pub fn terminal() -> Arc<HybridPhaseSpace> {
    Arc::new(HybridPhaseSpace {
        modes: vec![Mode::new("*", HyperBox::point())],
        arrows: vec![],
    })
}

/// A point of the disjoint union of the mode boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderlyingPoint {
    pub mode: usize,
    pub point: Point,
}

impl UnderlyingPoint {
    pub fn new(space: &HybridPhaseSpace, mode: usize, point: Point, tol: f64) -> Result<UnderlyingPoint> {
        if mode >= space.modes.len() {
            return Err(Error::structural(format!("mode {mode} out of range")));
        }
        if !space.space(mode).contains(&point, tol)? {
            return Err(Error::OutsideDomain { point });
        }
        Ok(UnderlyingPoint { mode, point })
    }
}

/// A map of hybrid phase spaces.
#[derive(Debug, Clone)]
pub struct HyPhMap {
    dom: Arc<HybridPhaseSpace>,
    cod: Arc<HybridPhaseSpace>,
    obj: Vec<usize>,
    arr: Vec<Path>,
    comps: Vec<SmoothFn>,
}

impl HyPhMap {
    pub fn new(
        dom: Arc<HybridPhaseSpace>,
        cod: Arc<HybridPhaseSpace>,
        obj: Vec<usize>,
        arr: Vec<Path>,
        comps: Vec<SmoothFn>,
    ) -> Result<HyPhMap> {
        let m = HyPhMap {
            dom,
            cod,
            obj,
            arr,
            comps,
        };
        let issues = m.structural_issues();
        if issues.is_empty() {
            Ok(m)
        } else {
            Err(Error::Structural(issues.join("; ")))
        }
    }

    fn structural_issues(&self) -> Vec<String> {
        let mut out = vec![];
        let (a, b) = (&self.dom, &self.cod);
        if self.obj.len() != a.modes.len() {
            out.push(format!("object map has {} entries for {} modes", self.obj.len(), a.modes.len()));
            return out;
        }
        if self.arr.len() != a.arrows.len() {
            out.push(format!("arrow map has {} entries for {} arrows", self.arr.len(), a.arrows.len()));
            return out;
        }
        if self.comps.len() != a.modes.len() {
            out.push(format!("{} components for {} modes", self.comps.len(), a.modes.len()));
            return out;
        }
        for (x, &y) in self.obj.iter().enumerate() {
            if y >= b.modes.len() {
                out.push(format!("mode `{}` maps to unknown mode {y}", a.modes[x].name));
                continue;
            }
            let c = &self.comps[x];
            if c.dom().dim() != a.space(x).dim() || c.cod().dim() != b.space(y).dim() {
                out.push(format!(
                    "component at `{}` maps R^{} -> R^{}, expected R^{} -> R^{}",
                    a.modes[x].name,
                    c.dom().dim(),
                    c.cod().dim(),
                    a.space(x).dim(),
                    b.space(y).dim()
                ));
            }
        }
        if !out.is_empty() {
            return out;
        }
        for (g, p) in self.arr.iter().enumerate() {
            let arrow = &a.arrows[g];
            if p.src != self.obj[arrow.src] || p.dst != self.obj[arrow.dst] {
                out.push(format!(
                    "arrow `{}` maps to a path from `{}` to `{}`, expected `{}` to `{}`",
                    arrow.name,
                    b.modes.get(p.src).map_or("?", |m| &m.name),
                    b.modes.get(p.dst).map_or("?", |m| &m.name),
                    b.modes[self.obj[arrow.src]].name,
                    b.modes[self.obj[arrow.dst]].name
                ));
            } else if let Err(e) = b.check_path(p) {
                out.push(format!("arrow `{}`: {e}", arrow.name));
            }
        }
        out
    }

    pub fn identity(a: &Arc<HybridPhaseSpace>) -> HyPhMap {
        HyPhMap {
            dom: a.clone(),
            cod: a.clone(),
            obj: (0..a.modes.len()).collect(),
            arr: (0..a.arrows.len()).map(|g| a.single(g)).collect(),
            comps: a.modes.iter().map(|m| SmoothFn::identity(&m.space)).collect(),
        }
    }

    /// The unique map into a terminal phase space.
    pub fn to_terminal(a: &Arc<HybridPhaseSpace>, term: &Arc<HybridPhaseSpace>) -> Result<HyPhMap> {
        if !term.is_terminal() {
            return Err(Error::structural("target is not terminal"));
        }
        Ok(HyPhMap {
            dom: a.clone(),
            cod: term.clone(),
            obj: vec![0; a.modes.len()],
            arr: vec![Path::identity(0); a.arrows.len()],
            comps: a
                .modes
                .iter()
                .map(|m| SmoothFn::constant(&m.space, HyperBox::point(), &[]).expect("0-dim value"))
                .collect(),
        })
    }

    pub fn dom(&self) -> &Arc<HybridPhaseSpace> {
        &self.dom
    }

    pub fn cod(&self) -> &Arc<HybridPhaseSpace> {
        &self.cod
    }

    pub fn obj(&self) -> &[usize] {
        &self.obj
    }

    pub fn arr(&self) -> &[Path] {
        &self.arr
    }

    pub fn comps(&self) -> &[SmoothFn] {
        &self.comps
    }

    pub fn comp(&self, mode: usize) -> &SmoothFn {
        &self.comps[mode]
    }

    /// Image of a path: arrow images concatenated.
    pub fn map_path(&self, p: &Path) -> Result<Path> {
        self.dom.check_path(p)?;
        let mut out = Path::identity(self.obj[p.src]);
        for &g in &p.arrows {
            out = out.then(&self.arr[g])?;
        }
        Ok(out)
    }

    /// `U(φ, Φ)`: `x@m ↦ Φ_m(x)@φ(m)`.
    pub fn apply(&self, p: &UnderlyingPoint, tol: f64) -> Result<UnderlyingPoint> {
        if p.mode >= self.obj.len() {
            return Err(Error::structural(format!("mode {} out of range", p.mode)));
        }
        Ok(UnderlyingPoint {
            mode: self.obj[p.mode],
            point: self.comps[p.mode].apply(&p.point, tol)?,
        })
    }
}

/// `g ∘ f`.
pub fn compose_map(g: &HyPhMap, f: &HyPhMap) -> Result<HyPhMap> {
    if !Arc::ptr_eq(&f.cod, &g.dom) && !f.cod.same_shape(&g.dom) {
        return Err(Error::structural("codomain of the first map is not the domain of the second"));
    }
    let obj: Vec<usize> = f.obj.iter().map(|&y| g.obj[y]).collect();
    let arr = f.arr.iter().map(|p| g.map_path(p)).collect::<Result<Vec<_>>>()?;
    let comps = f
        .comps
        .iter()
        .enumerate()
        .map(|(x, c)| SmoothFn::compose(&g.comps[f.obj[x]], c))
        .collect::<Result<Vec<_>>>()?;
    HyPhMap::new(f.dom.clone(), g.cod.clone(), obj, arr, comps)
}

/// Check the 2-cell condition on samples: for every arrow `γ: x → y` and
/// sampled `(p, q) ∈ a(γ)`, `(Φ_x(p), Φ_y(q))` must lie in `b(φ₁(γ))`.
/// Components are also checked to land in the target boxes.
pub fn validate_map(f: &HyPhMap, nsamples: usize, tol: f64) -> Report {
    let mut report = Report::new("map");
    for s in f.structural_issues() {
        report.structural(s);
    }
    if !report.structural.is_empty() {
        return report;
    }
    let (a, b) = (&f.dom, &f.cod);
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    for (x, m) in a.modes.iter().enumerate() {
        let target = b.space(f.obj[x]);
        for p in m.space.sample(nsamples, &mut rng) {
            let y = f.comps[x].eval(&p);
            let v = target.violation(&y);
            let v = if y.iter().all(|c| c.is_finite()) { v } else { f64::NAN };
            report.residual(v);
            if !(v <= tol) {
                report.fail(
                    format!("mode {}", m.name),
                    format!("component sends {p:?} to {y:?}, outside {target}"),
                    Some(v),
                );
            }
        }
    }
    for (g, arrow) in a.arrows.iter().enumerate() {
        let rel = match b.path_relation(&f.arr[g]) {
            Ok(r) => r,
            Err(e) => {
                report.structural(format!("arrow `{}`: {e}", arrow.name));
                continue;
            }
        };
        let label = b.path_label(&f.arr[g]);
        for (bi, br) in arrow.rel.branches().iter().enumerate() {
            for p in br.guard.sample(nsamples, &mut rng) {
                let q = br.map.eval(&p);
                let (fp, fq) = (f.comps[arrow.src].eval(&p), f.comps[arrow.dst].eval(&q));
                let d = rel.distance(&fp, &fq, tol);
                report.residual(d);
                if !(d <= tol) {
                    report.fail(
                        format!("arrow {} branch {bi}", arrow.name),
                        format!("({p:?}, {q:?}) maps to ({fp:?}, {fq:?}), not in relation of {label}"),
                        Some(d),
                    );
                }
            }
        }
    }
    report
}

/// Every reset branch, applied to sampled guard points, must land in the
/// target mode box with finite values.
pub fn validate_space(a: &HybridPhaseSpace, nsamples: usize, tol: f64) -> Report {
    let mut report = Report::new("phase space");
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ 0x11);
    for arrow in &a.arrows {
        let target = a.space(arrow.dst);
        for (bi, br) in arrow.rel.branches().iter().enumerate() {
            for p in br.guard.sample(nsamples, &mut rng) {
                let q = br.map.eval(&p);
                let v = if q.iter().all(|c| c.is_finite()) {
                    target.violation(&q)
                } else {
                    f64::NAN
                };
                report.residual(v);
                if !(v <= tol) {
                    report.fail(
                        format!("arrow {} branch {bi}", arrow.name),
                        format!("reset sends {p:?} to {q:?}, outside {target}"),
                        Some(v),
                    );
                    break;
                }
            }
        }
    }
    report
}

/// A finite product of phase spaces with its projections.
///
/// Modes are tuples of factor modes in mixed radix (first factor most
/// significant). Generating arrows move one factor along one of its arrows
/// while every other factor stays put.
#[derive(Debug, Clone)]
pub struct Product {
    pub space: Arc<HybridPhaseSpace>,
    pub factors: Vec<Arc<HybridPhaseSpace>>,
    pub projections: Vec<HyPhMap>,
    generators: BTreeMap<(usize, usize, usize), usize>,
}

impl Product {
    pub fn mode_index(&self, tuple: &[usize]) -> usize {
        if self.factors.is_empty() {
            return 0;
        }
        tuple
            .iter()
            .zip(&self.factors)
            .fold(0, |acc, (&t, f)| acc * f.modes.len() + t)
    }

    pub fn mode_tuple(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for k in (0..self.factors.len()).rev() {
            let n = self.factors[k].modes.len();
            out[k] = index % n;
            index /= n;
        }
        out
    }

    /// Generating arrow moving factor `k` along `arrow` from product mode `from`.
    pub fn generator(&self, k: usize, arrow: usize, from: usize) -> usize {
        self.generators[&(k, arrow, from)]
    }

    /// Coordinate offset of factor `k` inside product mode `mode`.
    pub fn offset(&self, mode: usize, k: usize) -> usize {
        let t = self.mode_tuple(mode);
        (0..k).map(|j| self.factors[j].space(t[j]).dim()).sum()
    }

    /// Split a product point into factor points.
    pub fn split(&self, p: &UnderlyingPoint) -> Vec<UnderlyingPoint> {
        let t = self.mode_tuple(p.mode);
        let mut start = 0;
        t.iter()
            .enumerate()
            .map(|(k, &m)| {
                let n = self.factors[k].space(m).dim();
                let q = UnderlyingPoint {
                    mode: m,
                    point: p.point[start..start + n].to_vec(),
                };
                start += n;
                q
            })
            .collect()
    }

    pub fn join(&self, parts: &[UnderlyingPoint]) -> Result<UnderlyingPoint> {
        Error::check_dim(self.factors.len(), parts.len())?;
        let tuple: Vec<usize> = parts.iter().map(|p| p.mode).collect();
        Ok(UnderlyingPoint {
            mode: self.mode_index(&tuple),
            point: parts.iter().flat_map(|p| p.point.iter().copied()).collect(),
        })
    }

    /// The map `c → ∏ aₖ` induced by maps `zₖ: c → aₖ`.
    pub fn pair(&self, zs: &[HyPhMap]) -> Result<HyPhMap> {
        Error::check_dim(self.factors.len(), zs.len())?;
        let Some(c) = zs.first().map(|z| z.dom.clone()) else {
            return Err(Error::structural("pairing needs at least one map"));
        };
        for (k, z) in zs.iter().enumerate() {
            if !z.dom.same_shape(&c) {
                return Err(Error::structural("paired maps need a common domain"));
            }
            if !Arc::ptr_eq(&z.cod, &self.factors[k]) && !z.cod.same_shape(&self.factors[k]) {
                return Err(Error::structural(format!("map {k} does not land in factor {k}")));
            }
        }
        let obj: Vec<usize> = (0..c.modes.len())
            .map(|x| self.mode_index(&zs.iter().map(|z| z.obj[x]).collect::<Vec<_>>()))
            .collect();
        let mut arr = Vec::with_capacity(c.arrows.len());
        for (g, arrow) in c.arrows.iter().enumerate() {
            let mut tuple: Vec<usize> = zs.iter().map(|z| z.obj[arrow.src]).collect();
            let mut path = Path::identity(self.mode_index(&tuple));
            for (k, z) in zs.iter().enumerate() {
                for &alpha in &z.arr[g].arrows {
                    let from = self.mode_index(&tuple);
                    let gen = self.generator(k, alpha, from);
                    path = path.then(&self.space.single(gen))?;
                    tuple[k] = self.factors[k].arrows[alpha].dst;
                }
            }
            arr.push(path);
        }
        let comps = (0..c.modes.len())
            .map(|x| {
                let fs: Vec<SmoothFn> = zs.iter().map(|z| z.comps[x].clone()).collect();
                SmoothFn::pairing(c.space(x), &fs)?.with_boxes(c.space(x).clone(), self.space.space(obj[x]).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        HyPhMap::new(c, self.space.clone(), obj, arr, comps)
    }
}

/// Product of any number of phase spaces. The product of one factor is the
/// factor itself and the empty product is the terminal phase space.
pub fn product(factors: &[Arc<HybridPhaseSpace>]) -> Product {
    if factors.len() == 1 {
        let a = factors[0].clone();
        let generators = a
            .arrows
            .iter()
            .enumerate()
            .map(|(g, arr)| ((0, g, arr.src), g))
            .collect();
        return Product {
            space: a.clone(),
            factors: vec![a.clone()],
            projections: vec![HyPhMap::identity(&a)],
            generators,
        };
    }
    if factors.is_empty() {
        return Product {
            space: terminal(),
            factors: vec![],
            projections: vec![],
            generators: BTreeMap::new(),
        };
    }
    let mut proto = Product {
        space: terminal(),
        factors: factors.to_vec(),
        projections: vec![],
        generators: BTreeMap::new(),
    };
    let count: usize = factors.iter().map(|f| f.modes.len()).product();
    let tuples: Vec<Vec<usize>> = (0..count).map(|i| proto.mode_tuple(i)).collect();

    let modes: Vec<Mode> = tuples
        .iter()
        .map(|t| {
            let parts: Vec<&Mode> = t.iter().enumerate().map(|(k, &m)| &factors[k].modes[m]).collect();
            let name = format!(
                "({})",
                parts.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(",")
            );
            let space = HyperBox::concat(&parts.iter().map(|m| &m.space).collect::<Vec<_>>());
            let all: Vec<&String> = parts.iter().flat_map(|m| &m.vars).collect();
            let distinct = all.iter().collect::<BTreeSet<_>>().len() == all.len();
            let vars = if distinct {
                all.into_iter().cloned().collect()
            } else {
                parts
                    .iter()
                    .enumerate()
                    .flat_map(|(k, m)| m.vars.iter().map(move |v| format!("{v}_{}", k + 1)))
                    .collect()
            };
            Mode { name, vars, space }
        })
        .collect();

    let mut arrows = vec![];
    for (k, fac) in factors.iter().enumerate() {
        for (g, arrow) in fac.arrows.iter().enumerate() {
            for (from, t) in tuples.iter().enumerate() {
                if t[k] != arrow.src {
                    continue;
                }
                let mut to = t.clone();
                to[k] = arrow.dst;
                let ids: Vec<Relation> = t
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| identity_rel(factors[j].space(m)))
                    .collect();
                let rels: Vec<&Relation> = (0..factors.len())
                    .map(|j| if j == k { &arrow.rel } else { &ids[j] })
                    .collect();
                let label: Vec<String> = t
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| {
                        if j == k {
                            arrow.name.clone()
                        } else {
                            format!("id[{}]", factors[j].modes[m].name)
                        }
                    })
                    .collect();
                proto.generators.insert((k, g, from), arrows.len());
                arrows.push(Arrow {
                    name: format!("({})", label.join(",")),
                    src: from,
                    dst: proto.mode_index(&to),
                    rel: rel_product_all(&rels),
                });
            }
        }
    }
    let space = Arc::new(HybridPhaseSpace { modes, arrows });

    let mut projections = vec![];
    for (k, fac) in factors.iter().enumerate() {
        let obj: Vec<usize> = tuples.iter().map(|t| t[k]).collect();
        let arr: Vec<Path> = (0..space.arrows.len())
            .map(|_| Path::identity(0))
            .collect::<Vec<_>>();
        let mut arr = arr;
        for (&(j, g, from), &idx) in &proto.generators {
            arr[idx] = if j == k {
                fac.single(g)
            } else {
                Path::identity(tuples[from][k])
            };
        }
        let comps = tuples
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let off: usize = (0..k).map(|j| factors[j].space(t[j]).dim()).sum();
                let n = fac.space(t[k]).dim();
                SmoothFn::coordinate_projection(
                    space.space(i),
                    &(off..off + n).collect::<Vec<_>>(),
                    fac.space(t[k]).clone(),
                )
                .expect("factor coordinates lie inside the product")
            })
            .collect();
        projections.push(HyPhMap {
            dom: space.clone(),
            cod: fac.clone(),
            obj,
            arr,
            comps,
        });
    }
    proto.space = space;
    proto.projections = projections;
    proto
}

/// Product of two phase spaces with both projections.
pub fn product2(a: &Arc<HybridPhaseSpace>, b: &Arc<HybridPhaseSpace>) -> Product {
    product(&[a.clone(), b.clone()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::thermostat_space;

    fn thermo() -> Arc<HybridPhaseSpace> {
        Arc::new(thermostat_space())
    }

    #[test]
    fn thermostat_product_counts() {
        let t = thermo();
        let p = product2(&t, &t);
        assert_eq!(p.space.modes().len(), 4);
        assert_eq!(p.space.arrows().len(), 8);
        assert_eq!(p.space.connected_pairs(2).len(), 12);
        assert_eq!(p.space.connected_pairs(1).len(), 8);
        for pr in &p.projections {
            assert!(validate_map(pr, 8, 1e-9).passed());
        }
    }

    #[test]
    fn path_relation_of_empty_and_single_paths() {
        let t = thermo();
        let off = t.mode_id("off").unwrap();
        let id = t.path_relation(&Path::identity(off)).unwrap();
        assert!(id.member(&[0.4], &[0.4], 0.0).unwrap());
        let f = t.arrow_id("f").unwrap();
        let r = t.path_relation(&t.single(f)).unwrap();
        assert!(r.member(&[0.0], &[0.0], 1e-9).unwrap());
        assert!(!r.member(&[0.4], &[0.4], 1e-9).unwrap());
        assert!(t.path_from_names(off, &["f", "f"]).is_err());
    }

    #[test]
    fn product_with_terminal_is_isomorphic() {
        let t = thermo();
        let p = product2(&t, &terminal());
        assert_eq!(p.space.modes().len(), 2);
        assert_eq!(p.space.arrows().len(), 2);
        for (m, n) in p.space.modes().iter().zip(t.modes()) {
            assert_eq!(m.space, n.space);
        }
        let tt = product2(&terminal(), &terminal());
        assert!(tt.space.is_terminal());
    }

    #[test]
    fn swapped_labels_fail_validation() {
        let t = thermo();
        let (off, on) = (t.mode_id("off").unwrap(), t.mode_id("on").unwrap());
        let (f, g) = (t.arrow_id("f").unwrap(), t.arrow_id("g").unwrap());
        let mut obj = vec![0; 2];
        obj[off] = on;
        obj[on] = off;
        let mut arr = vec![Path::identity(0); 2];
        arr[f] = t.single(g);
        arr[g] = t.single(f);
        let comps = t.modes().iter().map(|m| SmoothFn::identity(&m.space)).collect();
        let swap = HyPhMap::new(t.clone(), t.clone(), obj, arr, comps).unwrap();
        let r = validate_map(&swap, 5, 1e-9);
        assert!(!r.passed());
        assert!(!r.is_structural_failure());
        assert!(validate_map(&HyPhMap::identity(&t), 5, 1e-9).passed());
    }

    #[test]
    fn bad_endpoints_are_structural() {
        let t = thermo();
        let arr = vec![Path::identity(0), Path::identity(0)];
        let comps = t.modes().iter().map(|m| SmoothFn::identity(&m.space)).collect();
        let e = HyPhMap::new(t.clone(), t.clone(), vec![0, 1], arr, comps).unwrap_err();
        assert!(matches!(e, Error::Structural(_)));
    }

    #[test]
    fn diagonal_duplicates_coordinates() {
        let t = thermo();
        let p = product2(&t, &t);
        let id = HyPhMap::identity(&t);
        let diag = p.pair(&[id.clone(), id]).unwrap();
        assert!(validate_map(&diag, 6, 1e-9).passed());
        let on = t.mode_id("on").unwrap();
        let y = diag.apply(&UnderlyingPoint { mode: on, point: vec![0.25] }, 1e-9).unwrap();
        assert_eq!(y.point, vec![0.25, 0.25]);
        assert_eq!(p.space.mode(y.mode).name, "(on,on)");
        // the diagonal image of f is a length-2 path
        let f = t.arrow_id("f").unwrap();
        assert_eq!(diag.arr()[f].len(), 2);
        for (k, pr) in p.projections.iter().enumerate() {
            let back = compose_map(pr, &diag).unwrap();
            assert_eq!(back.obj(), HyPhMap::identity(&t).obj());
            assert_eq!(back.arr()[f], t.single(f), "factor {k}");
        }
    }

    #[test]
    fn split_and_join_are_inverse() {
        let t = thermo();
        let p = product(&[t.clone(), t.clone(), t]);
        for mode in 0..p.space.modes().len() {
            let pt = UnderlyingPoint {
                mode,
                point: vec![0.1, 0.2, 0.3],
            };
            assert_eq!(p.join(&p.split(&pt)).unwrap(), pt);
            for (k, q) in p.split(&pt).iter().enumerate() {
                assert_eq!(p.projections[k].apply(&pt, 1e-9).unwrap(), *q);
            }
        }
    }
}
