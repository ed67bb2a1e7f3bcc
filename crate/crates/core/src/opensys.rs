//! Hybrid surjective submersions, open systems on them, interconnection
//! maps and the pullback of open systems along interconnections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{differential, HyperBox, SmoothFn};
use crate::hyds::HybridDynamicalSystem;
use crate::hyph::{compose_map, product, validate_map, HyPhMap, HybridPhaseSpace, Product};
use crate::report::Report;

const SAMPLE_SEED: u64 = 0x0be5_5eed;

/// `p: tot → st`, surjective on modes, with coordinate projections as
/// components.
#[derive(Debug, Clone)]
pub struct HybridSubmersion {
    p: HyPhMap,
}

impl HybridSubmersion {
    pub fn new(p: HyPhMap) -> Result<Self> {
        let s = HybridSubmersion { p };
        let issues = s.shape_issues();
        if issues.is_empty() {
            Ok(s)
        } else {
            Err(Error::Structural(issues.join("; ")))
        }
    }

    /// `id: a → a`.
    pub fn identity(a: &Arc<HybridPhaseSpace>) -> Self {
        HybridSubmersion {
            p: HyPhMap::identity(a),
        }
    }

    /// The `k`-th projection out of a product, as in `a × b → a`.
    pub fn projection(prod: &Product, k: usize) -> Self {
        HybridSubmersion {
            p: prod.projections[k].clone(),
        }
    }

    fn shape_issues(&self) -> Vec<String> {
        let mut out = vec![];
        let p = &self.p;
        let mut hit = vec![false; p.cod().modes().len()];
        for &y in p.obj() {
            hit[y] = true;
        }
        for (y, h) in hit.iter().enumerate() {
            if !h {
                out.push(format!("state mode `{}` is not hit", p.cod().mode(y).name));
            }
        }
        for (m, c) in p.comps().iter().enumerate() {
            match c.projection_coords() {
                Some(coords) => {
                    let mut sorted = coords.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != coords.len() {
                        out.push(format!("projection at `{}` repeats a coordinate", p.dom().mode(m).name));
                    }
                    for (row, &col) in coords.iter().enumerate() {
                        let st = p.cod().space(p.obj()[m]).intervals()[row];
                        let tot = p.dom().space(m).intervals()[col];
                        if st != tot {
                            out.push(format!(
                                "projection at `{}` sends coordinate {col} ({tot}) to a state coordinate with bounds {st}",
                                p.dom().mode(m).name
                            ));
                        }
                    }
                }
                None => out.push(format!(
                    "component at `{}` is not a coordinate projection",
                    p.dom().mode(m).name
                )),
            }
        }
        out
    }

    pub fn tot(&self) -> &Arc<HybridPhaseSpace> {
        self.p.dom()
    }

    pub fn st(&self) -> &Arc<HybridPhaseSpace> {
        self.p.cod()
    }

    pub fn p(&self) -> &HyPhMap {
        &self.p
    }

    /// Dimension of the state mode under total mode `m`.
    pub fn st_dim(&self, m: usize) -> usize {
        self.st().space(self.p.obj()[m]).dim()
    }

    /// True for `id: a → a` (closed systems live here).
    pub fn is_identity(&self) -> bool {
        let p = &self.p;
        p.dom().same_shape(p.cod())
            && p.obj().iter().enumerate().all(|(i, &j)| i == j)
            && p.arr().iter().enumerate().all(|(g, path)| path.arrows == [g])
            && p.comps().iter().all(SmoothFn::is_identity)
    }
}

pub fn validate_submersion(s: &HybridSubmersion, nsamples: usize) -> Report {
    let mut r = Report::new("submersion");
    for i in s.shape_issues() {
        r.structural(i);
    }
    r.absorb("p", validate_map(&s.p, nsamples, 0.0));
    r
}

/// Morphism of submersions: `tot` and `st` maps with `st ∘ p_a = p_b ∘ tot`.
#[derive(Debug, Clone)]
pub struct SubmersionMap {
    pub dom: Arc<HybridSubmersion>,
    pub cod: Arc<HybridSubmersion>,
    pub tot: HyPhMap,
    pub st: HyPhMap,
}

impl SubmersionMap {
    pub fn new(dom: Arc<HybridSubmersion>, cod: Arc<HybridSubmersion>, tot: HyPhMap, st: HyPhMap) -> Result<Self> {
        if !tot.dom().same_shape(dom.tot()) || !tot.cod().same_shape(cod.tot()) {
            return Err(Error::structural("total map does not join the total spaces"));
        }
        if !st.dom().same_shape(dom.st()) || !st.cod().same_shape(cod.st()) {
            return Err(Error::structural("state map does not join the state spaces"));
        }
        Ok(SubmersionMap { dom, cod, tot, st })
    }

    pub fn identity(a: &Arc<HybridSubmersion>) -> Self {
        SubmersionMap {
            dom: a.clone(),
            cod: a.clone(),
            tot: HyPhMap::identity(a.tot()),
            st: HyPhMap::identity(a.st()),
        }
    }
}

/// Checks the square `st ∘ p_a = p_b ∘ tot` on modes and on samples, and
/// both maps as maps of phase spaces.
pub fn validate_submersion_map(h: &SubmersionMap, nsamples: usize, tol: f64) -> Report {
    let mut r = Report::new("submersion map");
    r.absorb("tot", validate_map(&h.tot, nsamples, tol));
    r.absorb("st", validate_map(&h.st, nsamples, tol));
    let (pa, pb) = (h.dom.p(), h.cod.p());
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    for (m, mode) in h.dom.tot().modes().iter().enumerate() {
        let left = h.st.obj()[pa.obj()[m]];
        let right = pb.obj()[h.tot.obj()[m]];
        if left != right {
            r.fail(format!("mode {}", mode.name), "square does not commute on modes", None);
            continue;
        }
        for q in mode.space.sample(nsamples, &mut rng) {
            let a = h.st.comp(pa.obj()[m]).eval(&pa.comp(m).eval(&q));
            let b = pb.comp(h.tot.obj()[m]).eval(&h.tot.comp(m).eval(&q));
            let d = max_diff(&a, &b);
            r.residual(d);
            if !(d <= tol) {
                r.fail(format!("mode {} at {q:?}", mode.name), "square does not commute", Some(d));
            }
        }
    }
    r
}

/// Composite `g ∘ f` of submersion maps.
pub fn compose_submersion_map(g: &SubmersionMap, f: &SubmersionMap) -> Result<SubmersionMap> {
    SubmersionMap::new(
        f.dom.clone(),
        g.cod.clone(),
        compose_map(&g.tot, &f.tot)?,
        compose_map(&g.st, &f.st)?,
    )
}

/// A submersion map whose state part is a diffeomorphism. When the state
/// part is neither the identity nor affine, its inverse has to be given.
#[derive(Debug, Clone)]
pub struct InterconnectionMap {
    pub map: SubmersionMap,
    pub st_inverse: Option<HyPhMap>,
}

impl InterconnectionMap {
    pub fn new(map: SubmersionMap, st_inverse: Option<HyPhMap>) -> Result<Self> {
        let st = &map.st;
        let mut seen = vec![false; st.cod().modes().len()];
        for &y in st.obj() {
            if seen[y] {
                return Err(Error::structural("state map is not a bijection on modes"));
            }
            seen[y] = true;
        }
        if seen.iter().any(|s| !s) || st.obj().len() != seen.len() {
            return Err(Error::structural("state map is not a bijection on modes"));
        }
        if let Some(inv) = &st_inverse {
            if !inv.dom().same_shape(st.cod()) || !inv.cod().same_shape(st.dom()) {
                return Err(Error::structural("inverse of the state map has the wrong endpoints"));
            }
        } else {
            for (m, c) in st.comps().iter().enumerate() {
                let ok = c.is_identity()
                    || c.as_affine()
                        .is_some_and(|(a, _)| a.is_square() && a.clone().try_inverse().is_some());
                if !ok {
                    return Err(Error::structural(format!(
                        "state component at `{}` needs an explicit inverse",
                        st.dom().mode(m).name
                    )));
                }
            }
        }
        Ok(InterconnectionMap { map, st_inverse })
    }

    pub fn dom(&self) -> &Arc<HybridSubmersion> {
        &self.map.dom
    }

    pub fn cod(&self) -> &Arc<HybridSubmersion> {
        &self.map.cod
    }
}

/// Submersion-map checks plus a sampled round trip of the state inverse.
pub fn validate_interconnection(phi: &InterconnectionMap, nsamples: usize, tol: f64) -> Report {
    let mut r = Report::new("interconnection");
    r.absorb("map", validate_submersion_map(&phi.map, nsamples, tol));
    let st = &phi.map.st;
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ 1);
    for (m, mode) in st.dom().modes().iter().enumerate() {
        let n = mode.space.dim();
        let c = st.comp(m);
        if c.dom().dim() != n || c.cod().dim() != n {
            r.structural(format!("state component at `{}` changes dimension", mode.name));
            continue;
        }
        for x in mode.space.sample(nsamples, &mut rng) {
            let y = c.eval(&x);
            let back = match &phi.st_inverse {
                Some(inv) => {
                    if inv.obj()[st.obj()[m]] != m {
                        r.fail(format!("mode {}", mode.name), "inverse does not return to the mode", None);
                        break;
                    }
                    inv.comp(st.obj()[m]).eval(&y)
                }
                None => match invert_affine(c) {
                    Some(inv) => inv.eval(&y),
                    None => {
                        r.structural(format!("state component at `{}` is not invertible", mode.name));
                        break;
                    }
                },
            };
            let d = max_diff(&back, &x);
            r.residual(d);
            if !(d <= tol * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())))) {
                r.fail(format!("mode {} at {x:?}", mode.name), "state inverse does not round-trip", Some(d));
            }
        }
    }
    r
}

fn invert_affine(f: &SmoothFn) -> Option<SmoothFn> {
    let (a, b) = f.as_affine()?;
    let inv = a.clone().try_inverse()?;
    let off = -(&inv * b);
    SmoothFn::affine(f.cod().clone(), f.dom().clone(), inv, off).ok()
}

/// An open system: for each total mode a map from its box to tangent
/// vectors of the state mode below it.
#[derive(Debug, Clone)]
pub struct OpenSystem {
    carrier: Arc<HybridSubmersion>,
    field: Vec<SmoothFn>,
}

impl OpenSystem {
    pub fn new(carrier: Arc<HybridSubmersion>, field: Vec<SmoothFn>) -> Result<Self> {
        let o = OpenSystem { carrier, field };
        let issues = o.arity_issues();
        if issues.is_empty() {
            Ok(o)
        } else {
            Err(Error::Structural(issues.join("; ")))
        }
    }

    /// A closed system seen as an open system on `id: a → a`.
    pub fn from_system(h: &HybridDynamicalSystem) -> Self {
        OpenSystem {
            carrier: Arc::new(HybridSubmersion::identity(h.space())),
            field: h.fields().to_vec(),
        }
    }

    fn arity_issues(&self) -> Vec<String> {
        let tot = self.carrier.tot();
        if self.field.len() != tot.modes().len() {
            return vec![format!("{} maps for {} total modes", self.field.len(), tot.modes().len())];
        }
        let mut out = vec![];
        for (m, f) in self.field.iter().enumerate() {
            let (want_in, want_out) = (tot.space(m).dim(), self.carrier.st_dim(m));
            if f.dom().dim() != want_in || f.cod().dim() != want_out {
                out.push(format!(
                    "map at `{}` is R^{} -> R^{}, expected R^{want_in} -> R^{want_out}",
                    tot.mode(m).name,
                    f.dom().dim(),
                    f.cod().dim()
                ));
            }
        }
        out
    }

    pub fn carrier(&self) -> &Arc<HybridSubmersion> {
        &self.carrier
    }

    pub fn field(&self, m: usize) -> &SmoothFn {
        &self.field[m]
    }

    pub fn fields(&self) -> &[SmoothFn] {
        &self.field
    }

    /// The closed system, when the carrier is an identity submersion.
    pub fn to_system(&self) -> Result<HybridDynamicalSystem> {
        if !self.carrier.is_identity() {
            return Err(Error::structural("open system has inputs; it is not closed"));
        }
        HybridDynamicalSystem::new(self.carrier.st().clone(), self.field.clone())
    }
}

/// Output arity per mode and finite values at samples.
pub fn crl_check(o: &OpenSystem, nsamples: usize, tol: f64) -> Report {
    let _ = tol;
    let mut r = Report::new("open system");
    for s in o.arity_issues() {
        r.structural(s);
    }
    if r.is_structural_failure() {
        return r;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ 2);
    for (m, mode) in o.carrier.tot().modes().iter().enumerate() {
        for q in mode.space.sample(nsamples, &mut rng) {
            let v = o.field[m].eval(&q);
            r.samples += 1;
            if v.iter().any(|c| !c.is_finite()) {
                r.fail(format!("mode {} at {q:?}", mode.name), format!("non-finite value {v:?}"), None);
            }
        }
    }
    r
}

/// `D(h_st)·F(q) = G(h_tot(q))` on samples of every total mode of `F`.
pub fn crl_related(h: &SubmersionMap, f: &OpenSystem, g: &OpenSystem, nsamples: usize, tol: f64) -> Report {
    let mut r = Report::new("relatedness");
    if !f.carrier.tot().same_shape(h.tot.dom()) || !g.carrier.tot().same_shape(h.tot.cod()) {
        r.structural("open systems do not sit on the ends of the map");
        return r;
    }
    let pa = f.carrier.p();
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ 3);
    for (m, mode) in f.carrier.tot().modes().iter().enumerate() {
        let st_mode = pa.obj()[m];
        let hst = h.st.comp(st_mode);
        let target = h.tot.obj()[m];
        for q in mode.space.sample(nsamples, &mut rng) {
            let base = pa.comp(m).eval(&q);
            let jac = match hst.jacobian(&base) {
                Some(j) => j,
                None => match differential(hst, &base) {
                    Ok(j) => j,
                    Err(e) => {
                        r.fail(format!("mode {}", mode.name), e.to_string(), None);
                        continue;
                    }
                },
            };
            let push = &jac * DVector::from_column_slice(&f.field[m].eval(&q));
            let other = g.field[target].eval(&h.tot.comp(m).eval(&q));
            let d = max_diff(push.as_slice(), &other);
            r.residual(d);
            if !(d <= tol) {
                r.fail(
                    format!("mode {} at {q:?}", mode.name),
                    "pushed-forward system differs from the target system",
                    Some(d),
                );
            }
        }
    }
    r
}

/// `φ*G := T(φ_st)⁻¹ ∘ G ∘ φ_tot`. Identity and affine state maps keep the
/// result analytic.
pub fn pullback(phi: &InterconnectionMap, g: &OpenSystem) -> Result<OpenSystem> {
    if !g.carrier.tot().same_shape(phi.cod().tot()) {
        return Err(Error::structural("open system is not on the target of the interconnection"));
    }
    let a = phi.dom().clone();
    let (tot, st) = (&phi.map.tot, &phi.map.st);
    let mut field = Vec::with_capacity(a.tot().modes().len());
    for m in 0..a.tot().modes().len() {
        let pulled = SmoothFn::compose(&g.field[tot.obj()[m]], tot.comp(m))?;
        let st_mode = a.p().obj()[m];
        let c = st.comp(st_mode);
        let out_box = HyperBox::real_space(a.st_dim(m));
        let f = if c.is_identity() {
            pulled.with_boxes(a.tot().space(m).clone(), out_box)?
        } else if let Some((mat, _)) = c.as_affine() {
            let inv = mat
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::structural("state map is not invertible"))?;
            let n = inv.nrows();
            let lin = SmoothFn::affine(HyperBox::real_space(n), out_box, inv, DVector::zeros(n))?;
            SmoothFn::compose(&lin, &pulled)?
        } else {
            let inverse = phi
                .st_inverse
                .as_ref()
                .ok_or_else(|| Error::structural("state map needs an explicit inverse"))?;
            let inv_comp = inverse.comp(st.obj()[st_mode]).clone();
            let c = c.clone();
            let proj = a.p().comp(m).clone();
            SmoothFn::from_closure(
                a.tot().space(m).clone(),
                out_box,
                move |q: &[f64]| {
                    let base = proj.eval(q);
                    let v = DVector::from_column_slice(&pulled.eval(q));
                    let j: DMatrix<f64> = inv_comp
                        .jacobian(&c.eval(&base))
                        .unwrap_or_else(|| inv_comp.fd_jacobian(&c.eval(&base)));
                    (j * v).as_slice().to_vec()
                },
                None,
            )
        };
        field.push(f);
    }
    OpenSystem::new(a, field)
}

/// Product of submersions with the product projection.
#[derive(Debug, Clone)]
pub struct SubmersionProduct {
    pub sub: Arc<HybridSubmersion>,
    pub tot: Product,
    pub st: Product,
}

pub fn submersion_product(subs: &[Arc<HybridSubmersion>]) -> Result<SubmersionProduct> {
    if subs.is_empty() {
        return Err(Error::structural("empty list of submersions"));
    }
    let tot = product(&subs.iter().map(|s| s.tot().clone()).collect::<Vec<_>>());
    let st = product(&subs.iter().map(|s| s.st().clone()).collect::<Vec<_>>());
    let sub = if subs.len() == 1 {
        subs[0].clone()
    } else {
        let parts = subs
            .iter()
            .zip(&tot.projections)
            .map(|(s, pr)| compose_map(s.p(), pr))
            .collect::<Result<Vec<_>>>()?;
        Arc::new(HybridSubmersion::new(st.pair(&parts)?)?)
    };
    Ok(SubmersionProduct { sub, tot, st })
}

/// `F₁ × ⋯ × Fₙ` on the product submersion, evaluated factorwise.
pub fn crl_product(prod: &SubmersionProduct, systems: &[&OpenSystem]) -> Result<OpenSystem> {
    Error::check_dim(prod.tot.factors.len(), systems.len())?;
    if systems.len() == 1 {
        return Ok(systems[0].clone());
    }
    for (k, o) in systems.iter().enumerate() {
        if !o.carrier.tot().same_shape(&prod.tot.factors[k]) {
            return Err(Error::structural(format!("open system {k} is not on factor {k}")));
        }
    }
    let field = (0..prod.tot.space.modes().len())
        .map(|i| {
            let t = prod.tot.mode_tuple(i);
            let parts: Vec<SmoothFn> = t.iter().zip(systems).map(|(&m, o)| o.field[m].clone()).collect();
            SmoothFn::product(&parts)
        })
        .collect();
    OpenSystem::new(prod.sub.clone(), field)
}

/// `α·F + β·G` on a common carrier.
pub fn linear_combination(alpha: f64, f: &OpenSystem, beta: f64, g: &OpenSystem) -> Result<OpenSystem> {
    if !f.carrier.tot().same_shape(g.carrier.tot()) {
        return Err(Error::structural("open systems live on different submersions"));
    }
    let field = f
        .field
        .iter()
        .zip(&g.field)
        .map(|(a, b)| SmoothFn::linear_combination(alpha, a, beta, b))
        .collect::<Result<Vec<_>>>()?;
    OpenSystem::new(f.carrier.clone(), field)
}

pub(crate) fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}
