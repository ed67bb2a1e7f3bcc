//! Boxes, points, tangent vectors and smooth maps between boxes.
//!
//! Every mode of a hybrid phase space carries an axis-aligned box (a product
//! of possibly unbounded intervals). A [`SmoothFn`] is a map between boxes
//! with an optional analytic Jacobian; affine maps are kept in matrix form so
//! that relation composition can pull guards back exactly.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};

pub type Point = Vec<f64>;

/// Default containment tolerance; `HYCOMP_TOL` or [`set_default_tol`] override it.
pub const DEFAULT_TOL: f64 = 1e-9;

static TOL_BITS: AtomicU64 = AtomicU64::new(0);

pub fn default_tol() -> f64 {
    let bits = TOL_BITS.load(Ordering::Relaxed);
    if bits != 0 {
        return f64::from_bits(bits);
    }
    let tol = std::env::var("HYCOMP_TOL")
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|t| t.is_finite() && *t >= 0.0)
        .unwrap_or(DEFAULT_TOL);
    TOL_BITS.store(tol.to_bits(), Ordering::Relaxed);
    tol
}

pub fn set_default_tol(tol: f64) {
    TOL_BITS.store(tol.to_bits(), Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// A closed interval with `lo <= hi`; infinite endpoints are allowed.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn pin(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn real_line() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        self.lo >= other.lo && self.hi <= other.hi
    }

    /// A finite window used for sampling unbounded intervals.
    pub fn sampling_window(&self) -> (f64, f64) {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => (self.lo, self.hi),
            (true, false) => (self.lo, self.lo + 2.0),
            (false, true) => (self.hi - 2.0, self.hi),
            (false, false) => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Samples points of a product of intervals: the midpoint, up to 16 corners,
/// then uniform draws, `n` points in total (at least one).
pub fn sample_intervals<R: Rng + ?Sized>(ivs: &[Interval], n: usize, rng: &mut R) -> Vec<Point> {
    let n = n.max(1);
    let windows: Vec<(f64, f64)> = ivs.iter().map(Interval::sampling_window).collect();
    let mut out = Vec::with_capacity(n);
    out.push(windows.iter().map(|(a, b)| 0.5 * (a + b)).collect());
    let corners = if windows.len() <= 4 { 1usize << windows.len() } else { 16 };
    for c in 0..corners {
        if out.len() >= n {
            break;
        }
        let corner: Point = windows
            .iter()
            .enumerate()
            .map(|(i, (a, b))| if (c >> (i % 64)) & 1 == 0 { *a } else { *b })
            .collect();
        if !out.contains(&corner) {
            out.push(corner);
        }
    }
    while out.len() < n {
        out.push(
            windows
                .iter()
                .map(|&(a, b)| if a == b { a } else { rng.gen_range(a..=b) })
                .collect(),
        );
    }
    out
}

/// Axis-aligned box; the 0-dimensional box is the one-point space.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBox {
    intervals: Vec<Interval>,
}

impl HyperBox {
    /// Mode boxes need nondegenerate intervals.
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        for iv in &intervals {
            if !(iv.lo < iv.hi) {
                return Err(Error::InvalidInterval { lo: iv.lo, hi: iv.hi });
            }
        }
        Ok(HyperBox { intervals })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let ivs = bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        HyperBox::new(ivs)
    }

    pub fn point() -> Self {
        HyperBox { intervals: vec![] }
    }

    pub fn real_space(dim: usize) -> Self {
        HyperBox {
            intervals: vec![Interval::real_line(); dim],
        }
    }

    pub fn unit(dim: usize) -> Self {
        HyperBox {
            intervals: vec![Interval::unit(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(self.contains_unchecked(x, tol))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64], tol: f64) -> bool {
        self.intervals
            .iter()
            .zip(x)
            .all(|(iv, &v)| iv.contains(v, tol))
    }

    /// Largest distance by which `x` leaves the box (0 inside).
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.intervals
            .iter()
            .zip(x)
            .map(|(iv, &v)| (iv.lo - v).max(v - iv.hi).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn concat(boxes: &[&HyperBox]) -> HyperBox {
        HyperBox {
            intervals: boxes.iter().flat_map(|b| b.intervals.iter().copied()).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        sample_intervals(&self.intervals, n, rng)
    }

    /// True when every interval is unbounded.
    pub fn is_whole_space(&self) -> bool {
        self.intervals
            .iter()
            .all(|iv| iv.lo == f64::NEG_INFINITY && iv.hi == f64::INFINITY)
    }
}

impl fmt::Display for HyperBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "pt");
        }
        for (i, iv) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

pub fn box_contains(b: &HyperBox, x: &[f64], tol: f64) -> Result<bool> {
    b.contains(x, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub base: Point,
    pub vec: Vec<f64>,
}

impl Tangent {
    pub fn new(base: Point, vec: Vec<f64>) -> Result<Self> {
        Error::check_dim(base.len(), vec.len())?;
        Ok(Tangent { base, vec })
    }
}

type EvalFn = dyn Fn(&[f64]) -> Point + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum Body {
    Affine {
        mat: DMatrix<f64>,
        off: DVector<f64>,
    },
    Exprs {
        vars: Vec<String>,
        outs: Vec<Expr>,
        compiled: Vec<CompiledExpr>,
    },
    Compose {
        outer: SmoothFn,
        inner: SmoothFn,
    },
    Product(Vec<SmoothFn>),
    Pairing(Vec<SmoothFn>),
    Closure {
        eval: Arc<EvalFn>,
        jac: Option<Arc<JacFn>>,
    },
}

/// A smooth map between boxes.
#[derive(Clone)]
pub struct SmoothFn {
    dom: HyperBox,
    cod: HyperBox,
    body: Arc<Body>,
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &*self.body {
            Body::Affine { .. } => "affine",
            Body::Exprs { .. } => "exprs",
            Body::Compose { .. } => "compose",
            Body::Product(_) => "product",
            Body::Pairing(_) => "pairing",
            Body::Closure { .. } => "closure",
        };
        write!(f, "SmoothFn<{kind}>({} -> {})", self.dom, self.cod)
    }
}

impl SmoothFn {
    pub fn affine(dom: HyperBox, cod: HyperBox, mat: DMatrix<f64>, off: DVector<f64>) -> Result<Self> {
        if mat.ncols() != dom.dim() || mat.nrows() != cod.dim() || off.len() != cod.dim() {
            return Err(Error::structural(format!(
                "affine map {}x{} (+{}) does not fit {} -> {}",
                mat.nrows(),
                mat.ncols(),
                off.len(),
                dom.dim(),
                cod.dim()
            )));
        }
        Ok(SmoothFn {
            dom,
            cod,
            body: Arc::new(Body::Affine { mat, off }),
        })
    }

    pub fn identity(b: &HyperBox) -> Self {
        let n = b.dim();
        SmoothFn {
            dom: b.clone(),
            cod: b.clone(),
            body: Arc::new(Body::Affine {
                mat: DMatrix::identity(n, n),
                off: DVector::zeros(n),
            }),
        }
    }

    /// `x ↦ (x[coords[0]], x[coords[1]], …)`.
    pub fn coordinate_projection(dom: &HyperBox, coords: &[usize], cod: HyperBox) -> Result<Self> {
        Error::check_dim(coords.len(), cod.dim())?;
        let mut mat = DMatrix::zeros(coords.len(), dom.dim());
        for (row, &c) in coords.iter().enumerate() {
            if c >= dom.dim() {
                return Err(Error::structural(format!("coordinate {c} out of range")));
            }
            mat[(row, c)] = 1.0;
        }
        SmoothFn::affine(dom.clone(), cod, mat, DVector::zeros(coords.len()))
    }

    pub fn constant(dom: &HyperBox, cod: HyperBox, value: &[f64]) -> Result<Self> {
        Error::check_dim(cod.dim(), value.len())?;
        let mat = DMatrix::zeros(cod.dim(), dom.dim());
        SmoothFn::affine(dom.clone(), cod, mat, DVector::from_column_slice(value))
    }

    /// One expression per output coordinate over the variables `vars`
    /// naming the domain coordinates.
    pub fn from_exprs(dom: HyperBox, cod: HyperBox, vars: &[String], outs: Vec<Expr>) -> Result<Self> {
        Error::check_dim(dom.dim(), vars.len())?;
        Error::check_dim(cod.dim(), outs.len())?;
        let compiled = outs.iter().map(|e| e.bind(vars)).collect::<Result<Vec<_>>>()?;
        if let Some(rows) = outs.iter().map(|e| e.affine_in(vars)).collect::<Option<Vec<_>>>() {
            let mat = DMatrix::from_fn(rows.len(), vars.len(), |r, c| rows[r].0[c]);
            let off = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            return SmoothFn::affine(dom, cod, mat, off);
        }
        Ok(SmoothFn {
            dom,
            cod,
            body: Arc::new(Body::Exprs {
                vars: vars.to_vec(),
                outs,
                compiled,
            }),
        })
    }

    pub fn from_closure(
        dom: HyperBox,
        cod: HyperBox,
        eval: impl Fn(&[f64]) -> Point + Send + Sync + 'static,
        jac: Option<Arc<JacFn>>,
    ) -> Self {
        SmoothFn {
            dom,
            cod,
            body: Arc::new(Body::Closure {
                eval: Arc::new(eval),
                jac,
            }),
        }
    }

    /// `outer ∘ inner`; affine composites stay affine and identities vanish.
    pub fn compose(outer: &SmoothFn, inner: &SmoothFn) -> Result<SmoothFn> {
        if outer.dom.dim() != inner.cod.dim() {
            return Err(Error::DimensionMismatch {
                expected: outer.dom.dim(),
                got: inner.cod.dim(),
            });
        }
        if let (Some((a, b)), Some((c, d))) = (outer.as_affine(), inner.as_affine()) {
            return SmoothFn::affine(inner.dom.clone(), outer.cod.clone(), a * c, a * d + b);
        }
        if inner.is_identity() {
            return Ok(SmoothFn {
                dom: inner.dom.clone(),
                cod: outer.cod.clone(),
                body: outer.body.clone(),
            });
        }
        if outer.is_identity() {
            return Ok(SmoothFn {
                dom: inner.dom.clone(),
                cod: outer.cod.clone(),
                body: inner.body.clone(),
            });
        }
        Ok(SmoothFn {
            dom: inner.dom.clone(),
            cod: outer.cod.clone(),
            body: Arc::new(Body::Compose {
                outer: outer.clone(),
                inner: inner.clone(),
            }),
        })
    }

    /// `f₁ × ⋯ × fₙ` acting blockwise on concatenated coordinates.
    pub fn product(fs: &[SmoothFn]) -> SmoothFn {
        let dom = HyperBox::concat(&fs.iter().map(|f| &f.dom).collect::<Vec<_>>());
        let cod = HyperBox::concat(&fs.iter().map(|f| &f.cod).collect::<Vec<_>>());
        if fs.iter().all(|f| f.as_affine().is_some()) {
            let mut mat = DMatrix::zeros(cod.dim(), dom.dim());
            let mut off = DVector::zeros(cod.dim());
            let (mut r0, mut c0) = (0, 0);
            for f in fs {
                let (a, b) = f.as_affine().unwrap();
                mat.view_mut((r0, c0), (a.nrows(), a.ncols())).copy_from(a);
                off.rows_mut(r0, b.len()).copy_from(b);
                r0 += a.nrows();
                c0 += a.ncols();
            }
            return SmoothFn {
                dom,
                cod,
                body: Arc::new(Body::Affine { mat, off }),
            };
        }
        SmoothFn {
            dom,
            cod,
            body: Arc::new(Body::Product(fs.to_vec())),
        }
    }

    /// `x ↦ (f₁(x), …, fₙ(x))` for maps with a common domain dimension.
    pub fn pairing(dom: &HyperBox, fs: &[SmoothFn]) -> Result<SmoothFn> {
        for f in fs {
            Error::check_dim(dom.dim(), f.dom.dim())?;
        }
        let cod = HyperBox::concat(&fs.iter().map(|f| &f.cod).collect::<Vec<_>>());
        if fs.iter().all(|f| f.as_affine().is_some()) {
            let mut mat = DMatrix::zeros(cod.dim(), dom.dim());
            let mut off = DVector::zeros(cod.dim());
            let mut r0 = 0;
            for f in fs {
                let (a, b) = f.as_affine().unwrap();
                mat.view_mut((r0, 0), (a.nrows(), a.ncols())).copy_from(a);
                off.rows_mut(r0, b.len()).copy_from(b);
                r0 += a.nrows();
            }
            return SmoothFn::affine(dom.clone(), cod, mat, off);
        }
        Ok(SmoothFn {
            dom: dom.clone(),
            cod,
            body: Arc::new(Body::Pairing(fs.to_vec())),
        })
    }

    /// `x ↦ α·f(x) + β·g(x)`.
    pub fn linear_combination(alpha: f64, f: &SmoothFn, beta: f64, g: &SmoothFn) -> Result<SmoothFn> {
        Error::check_dim(f.cod.dim(), g.cod.dim())?;
        let n = f.cod.dim();
        let both = SmoothFn::pairing(&f.dom, &[f.clone(), g.clone()])?;
        let mut mat = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            mat[(i, i)] = alpha;
            mat[(i, n + i)] = beta;
        }
        let combine = SmoothFn::affine(both.cod.clone(), f.cod.clone(), mat, DVector::zeros(n))?;
        SmoothFn::compose(&combine, &both)
    }

    /// Same map with a different (dimension-compatible) domain or codomain box.
    pub fn with_boxes(&self, dom: HyperBox, cod: HyperBox) -> Result<SmoothFn> {
        Error::check_dim(self.dom.dim(), dom.dim())?;
        Error::check_dim(self.cod.dim(), cod.dim())?;
        Ok(SmoothFn {
            dom,
            cod,
            body: self.body.clone(),
        })
    }

    pub fn dom(&self) -> &HyperBox {
        &self.dom
    }

    pub fn cod(&self) -> &HyperBox {
        &self.cod
    }

    pub fn as_affine(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &*self.body {
            Body::Affine { mat, off } => Some((mat, off)),
            _ => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        match self.as_affine() {
            Some((a, b)) => {
                a.is_square() && *a == DMatrix::identity(a.nrows(), a.ncols()) && b.iter().all(|&v| v == 0.0)
            }
            None => false,
        }
    }

    /// Output coordinates when the map is a coordinate projection.
    pub fn projection_coords(&self) -> Option<Vec<usize>> {
        let (a, b) = self.as_affine()?;
        if b.iter().any(|&v| v != 0.0) {
            return None;
        }
        let mut coords = Vec::with_capacity(a.nrows());
        for r in 0..a.nrows() {
            let row = a.row(r);
            let ones: Vec<usize> = (0..a.ncols()).filter(|&c| row[c] != 0.0).collect();
            match ones.as_slice() {
                [c] if row[*c] == 1.0 => coords.push(*c),
                _ => return None,
            }
        }
        Some(coords)
    }

    /// Evaluates without checking domain membership.
    pub fn eval(&self, x: &[f64]) -> Point {
        match &*self.body {
            Body::Affine { mat, off } => {
                let mut y = off.as_slice().to_vec();
                for r in 0..mat.nrows() {
                    let mut acc = 0.0;
                    for c in 0..mat.ncols() {
                        let a = mat[(r, c)];
                        if a != 0.0 {
                            acc += a * x[c];
                        }
                    }
                    y[r] += acc;
                }
                y
            }
            Body::Exprs { compiled, .. } => compiled.iter().map(|e| e.eval(x)).collect(),
            Body::Compose { outer, inner } => outer.eval(&inner.eval(x)),
            Body::Product(fs) => {
                let mut out = Vec::with_capacity(self.cod.dim());
                let mut start = 0;
                for f in fs {
                    let n = f.dom.dim();
                    out.extend(f.eval(&x[start..start + n]));
                    start += n;
                }
                out
            }
            Body::Pairing(fs) => fs.iter().flat_map(|f| f.eval(x)).collect(),
            Body::Closure { eval, .. } => eval(x),
        }
    }

    /// Evaluates at a point of the domain.
    pub fn apply(&self, x: &[f64], tol: f64) -> Result<Point> {
        if !self.dom.contains(x, tol)? {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(self.eval(x))
    }

    /// Analytic Jacobian when every part of the map provides one.
    pub fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &*self.body {
            Body::Affine { mat, .. } => Some(mat.clone()),
            Body::Exprs { compiled, .. } => {
                let mut j = DMatrix::zeros(compiled.len(), x.len());
                for (r, e) in compiled.iter().enumerate() {
                    for (c, g) in e.gradient(x).into_iter().enumerate() {
                        j[(r, c)] = g;
                    }
                }
                Some(j)
            }
            Body::Compose { outer, inner } => {
                let ji = inner.jacobian(x)?;
                let jo = outer.jacobian(&inner.eval(x))?;
                Some(jo * ji)
            }
            Body::Product(fs) => {
                let mut j = DMatrix::zeros(self.cod.dim(), self.dom.dim());
                let (mut r0, mut c0) = (0, 0);
                for f in fs {
                    let n = f.dom.dim();
                    let jf = f.jacobian(&x[c0..c0 + n])?;
                    j.view_mut((r0, c0), (jf.nrows(), jf.ncols())).copy_from(&jf);
                    r0 += jf.nrows();
                    c0 += n;
                }
                Some(j)
            }
            Body::Pairing(fs) => {
                let mut j = DMatrix::zeros(self.cod.dim(), self.dom.dim());
                let mut r0 = 0;
                for f in fs {
                    let jf = f.jacobian(x)?;
                    j.view_mut((r0, 0), (jf.nrows(), jf.ncols())).copy_from(&jf);
                    r0 += jf.nrows();
                }
                Some(j)
            }
            Body::Closure { jac, .. } => jac.as_ref().map(|j| j(x)),
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        match &*self.body {
            Body::Affine { .. } | Body::Exprs { .. } => true,
            Body::Compose { outer, inner } => outer.has_analytic_jacobian() && inner.has_analytic_jacobian(),
            Body::Product(fs) | Body::Pairing(fs) => fs.iter().all(SmoothFn::has_analytic_jacobian),
            Body::Closure { jac, .. } => jac.is_some(),
        }
    }

    /// Finite-difference Jacobian: central differences with step
    /// `1e-6·(1+|xᵢ|)`, one-sided where the step would leave the domain.
    pub fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.cod.dim();
        let mut j = DMatrix::zeros(m, x.len());
        let mut xp = x.to_vec();
        for c in 0..x.len() {
            let h = 1e-6 * (1.0 + x[c].abs());
            let iv = self.dom.intervals()[c];
            let (lo_ok, hi_ok) = (x[c] - h >= iv.lo, x[c] + h <= iv.hi);
            let (a, b) = match (lo_ok, hi_ok) {
                (true, true) | (false, false) => (x[c] - h, x[c] + h),
                (false, true) => (x[c], x[c] + h),
                (true, false) => (x[c] - h, x[c]),
            };
            xp[c] = b;
            let fb = self.eval(&xp);
            xp[c] = a;
            let fa = self.eval(&xp);
            xp[c] = x[c];
            for r in 0..m {
                j[(r, c)] = (fb[r] - fa[r]) / (b - a);
            }
        }
        j
    }

    /// Convert to one expression per output over `vars`, if the map is
    /// built from affine pieces and expressions only.
    pub fn to_exprs(&self, vars: &[String]) -> Option<Vec<Expr>> {
        let args: Vec<Expr> = vars.iter().map(|v| Expr::Var(v.clone())).collect();
        self.exprs_of(&args)
    }

    fn exprs_of(&self, args: &[Expr]) -> Option<Vec<Expr>> {
        match &*self.body {
            Body::Affine { mat, off } => Some(
                (0..mat.nrows())
                    .map(|r| affine_row_expr(mat.row(r).iter().copied(), off[r], args))
                    .collect(),
            ),
            Body::Exprs { vars, outs, .. } => Some(
                outs.iter()
                    .map(|e| {
                        e.substitute(&|v| vars.iter().position(|n| n == v).map(|i| args[i].clone()))
                    })
                    .collect(),
            ),
            Body::Compose { outer, inner } => outer.exprs_of(&inner.exprs_of(args)?),
            Body::Product(fs) => {
                let mut out = Vec::new();
                let mut start = 0;
                for f in fs {
                    let n = f.dom.dim();
                    out.extend(f.exprs_of(&args[start..start + n])?);
                    start += n;
                }
                Some(out)
            }
            Body::Pairing(fs) => {
                let mut out = Vec::new();
                for f in fs {
                    out.extend(f.exprs_of(args)?);
                }
                Some(out)
            }
            Body::Closure { .. } => None,
        }
    }
}

fn affine_row_expr(row: impl Iterator<Item = f64>, off: f64, args: &[Expr]) -> Expr {
    use crate::expr::BinOp;
    let mut acc: Option<Expr> = None;
    for (c, a) in row.enumerate() {
        if a == 0.0 {
            continue;
        }
        let term = if a == 1.0 {
            args[c].clone()
        } else if a == -1.0 {
            Expr::Neg(Box::new(args[c].clone()))
        } else {
            Expr::bin(BinOp::Mul, Expr::Num(a), args[c].clone())
        };
        acc = Some(match acc {
            None => term,
            Some(prev) => Expr::bin(BinOp::Add, prev, term),
        });
    }
    match acc {
        None => Expr::Num(off),
        Some(e) if off == 0.0 => e,
        Some(e) => Expr::bin(BinOp::Add, e, Expr::Num(off)),
    }
}

/// Jacobian of `f` at `x`: analytic when available, otherwise finite differences.
pub fn differential(f: &SmoothFn, x: &[f64]) -> Result<DMatrix<f64>> {
    if !f.dom().contains(x, default_tol())? {
        return Err(Error::OutsideDomain { point: x.to_vec() });
    }
    Ok(f.jacobian(x).unwrap_or_else(|| f.fd_jacobian(x)))
}

pub fn pushforward(f: &SmoothFn, v: &Tangent) -> Result<Tangent> {
    Error::check_dim(v.base.len(), v.vec.len())?;
    let j = differential(f, &v.base)?;
    let out = &j * DVector::from_column_slice(&v.vec);
    Ok(Tangent {
        base: f.eval(&v.base),
        vec: out.as_slice().to_vec(),
    })
}

/// Worst `‖J − J_fd‖∞ / (1 + ‖J_fd‖∞)` over the given points; `None` when
/// the map has no analytic Jacobian.
pub fn jacobian_fd_discrepancy(f: &SmoothFn, points: &[Point]) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for x in points {
        let j = f.jacobian(x)?;
        let fd = f.fd_jacobian(x);
        let diff = (&j - &fd).abs().max();
        worst = worst.max(diff / (1.0 + fd.abs().max()));
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> HyperBox {
        HyperBox::unit(1)
    }

    #[test]
    fn box_contains_examples() {
        assert!(box_contains(&unit_box(), &[0.5], 1e-9).unwrap());
        assert!(box_contains(&unit_box(), &[1.0 + 1e-12], 1e-9).unwrap());
        assert!(box_contains(&HyperBox::point(), &[], 0.0).unwrap());
        assert!(!box_contains(&unit_box(), &[1.1], 1e-9).unwrap());
        assert!(box_contains(&unit_box(), &[0.5, 0.5], 1e-9).is_err());
    }

    #[test]
    fn box_rejects_degenerate_intervals() {
        assert!(HyperBox::from_bounds(&[(1.0, 1.0)]).is_err());
        assert!(HyperBox::from_bounds(&[(2.0, 1.0)]).is_err());
        assert!(HyperBox::from_bounds(&[(f64::NEG_INFINITY, f64::INFINITY)]).is_ok());
    }

    #[test]
    fn differential_examples() {
        let b2 = HyperBox::real_space(2);
        let id = SmoothFn::identity(&b2);
        assert_eq!(differential(&id, &[0.3, -2.0]).unwrap(), DMatrix::identity(2, 2));

        let dom = HyperBox::from_bounds(&[(0.0, 2.0)]).unwrap();
        let sq = SmoothFn::from_closure(dom.clone(), HyperBox::real_space(1), |x| vec![x[0] * x[0]], None);
        let d = differential(&sq, &[1.0]).unwrap();
        assert!((d[(0, 0)] - 2.0).abs() < 1e-6);
        // one-sided at the boundary
        let d = differential(&sq, &[2.0]).unwrap();
        assert!((d[(0, 0)] - 4.0).abs() < 1e-5);

        let proj = SmoothFn::coordinate_projection(&b2, &[0], HyperBox::real_space(1)).unwrap();
        assert_eq!(differential(&proj, &[1.0, 5.0]).unwrap(), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));

        assert!(differential(&sq, &[3.0]).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let r = HyperBox::real_space(1);
        let v = Tangent::new(vec![1.0], vec![3.0]).unwrap();
        assert_eq!(pushforward(&SmoothFn::identity(&r), &v).unwrap(), v);

        let double = SmoothFn::affine(r.clone(), r.clone(), DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
        assert_eq!(
            pushforward(&double, &v).unwrap(),
            Tangent::new(vec![2.0], vec![6.0]).unwrap()
        );

        let b2 = HyperBox::real_space(2);
        let proj = SmoothFn::coordinate_projection(&b2, &[0], r).unwrap();
        let v = Tangent::new(vec![1.0, 5.0], vec![2.0, 7.0]).unwrap();
        assert_eq!(pushforward(&proj, &v).unwrap(), Tangent::new(vec![1.0], vec![2.0]).unwrap());
    }

    #[test]
    fn affine_constructions_stay_affine() {
        let b = HyperBox::real_space(2);
        let p0 = SmoothFn::coordinate_projection(&b, &[0], HyperBox::real_space(1)).unwrap();
        let p1 = SmoothFn::coordinate_projection(&b, &[1], HyperBox::real_space(1)).unwrap();
        let swap = SmoothFn::pairing(&b, &[p1, p0]).unwrap();
        assert_eq!(swap.projection_coords(), Some(vec![1, 0]));
        let twice = SmoothFn::compose(&swap, &swap).unwrap();
        assert!(twice.is_identity());
        let prod = SmoothFn::product(&[swap.clone(), SmoothFn::identity(&HyperBox::point())]);
        assert_eq!(prod.projection_coords(), Some(vec![1, 0]));
    }

    #[test]
    fn expression_maps_export_through_composites() {
        let b = HyperBox::real_space(2);
        let vars = vec!["x".to_string(), "y".to_string()];
        let f = SmoothFn::from_exprs(b.clone(), HyperBox::real_space(1), &vars, vec![parse("x * sin(y)").unwrap()]).unwrap();
        let swap = SmoothFn::coordinate_projection(&b, &[1, 0], b.clone()).unwrap();
        let g = SmoothFn::compose(&f, &swap).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let exprs = g.to_exprs(&names).unwrap();
        let back = SmoothFn::from_exprs(b, HyperBox::real_space(1), &names, exprs).unwrap();
        for x in [[0.3, 1.2], [-2.0, 0.5]] {
            assert_eq!(back.eval(&x), g.eval(&x));
        }
    }

    #[test]
    fn chain_rule_on_composites() {
        let b = HyperBox::real_space(2);
        let vars = vec!["x".to_string(), "y".to_string()];
        let f = SmoothFn::from_exprs(
            b.clone(),
            b.clone(),
            &vars,
            vec![parse("x * y").unwrap(), parse("exp(x) - y").unwrap()],
        )
        .unwrap();
        let g = SmoothFn::from_exprs(
            b.clone(),
            b.clone(),
            &vars,
            vec![parse("sin(x) + y^2").unwrap(), parse("tanh(x * y)").unwrap()],
        )
        .unwrap();
        let gf = SmoothFn::compose(&g, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for x in b.sample(20, &mut rng) {
            let v = Tangent::new(x.clone(), vec![0.7, -1.3]).unwrap();
            let direct = pushforward(&gf, &v).unwrap();
            let chained = pushforward(&g, &pushforward(&f, &v).unwrap()).unwrap();
            for (a, c) in direct.vec.iter().zip(&chained.vec) {
                assert!((a - c).abs() <= 1e-6 * (1.0 + c.abs()));
            }
        }
        let pts = b.sample(20, &mut rng);
        assert!(jacobian_fd_discrepancy(&gf, &pts).unwrap() <= 1e-5);
    }

    #[test]
    fn containment_is_monotone_in_tolerance() {
        let b = HyperBox::unit(2);
        let x = [1.0 + 1e-6, -3e-7];
        let mut prev = false;
        for tol in [0.0, 1e-9, 5e-7, 2e-6, 1.0] {
            let now = b.contains(&x, tol).unwrap();
            assert!(!prev || now);
            prev = now;
        }
        assert!(prev);
    }
}
