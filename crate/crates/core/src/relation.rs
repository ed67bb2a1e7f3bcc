//! Relations between boxes as finite unions of guarded partial maps.
//!
//! A [`Relation`] `R ⊆ X × Y` is `⋃ {(x, f(x)) : x ∈ guard}` over its
//! branches. Guards are sub-boxes of the source (pinned coordinates allowed)
//! plus, after composition through a non-affine map, constraints of the form
//! `g(x) ∈ region` that are only checked at membership time.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{sample_intervals, HyperBox, Interval, Point, SmoothFn};

/// Constraint `map(x) ∈ region` kept unevaluated until membership tests.
#[derive(Debug, Clone)]
pub struct LazyConstraint {
    pub map: SmoothFn,
    pub region: Vec<Interval>,
}

impl LazyConstraint {
    fn holds(&self, x: &[f64], tol: f64) -> bool {
        self.map
            .eval(x)
            .iter()
            .zip(&self.region)
            .all(|(&v, iv)| iv.contains(v, tol))
    }
}

#[derive(Debug, Clone)]
pub struct Guard {
    sub: Vec<Interval>,
    lazy: Vec<LazyConstraint>,
}

impl Guard {
    /// Whole source box (the guard of a total map).
    pub fn full(source: &HyperBox) -> Guard {
        Guard {
            sub: source.intervals().to_vec(),
            lazy: vec![],
        }
    }

    /// Sub-box guard. Each interval must lie inside the source interval.
    pub fn new(source: &HyperBox, sub: Vec<Interval>) -> Result<Guard> {
        Error::check_dim(source.dim(), sub.len())?;
        for (i, (s, b)) in sub.iter().zip(source.intervals()).enumerate() {
            if !s.is_subset_of(b) {
                return Err(Error::structural(format!(
                    "guard interval {s} on coordinate {i} is not inside {b}"
                )));
            }
        }
        Ok(Guard { sub, lazy: vec![] })
    }

    /// Pin the listed coordinates, leaving the rest free.
    pub fn pinned(source: &HyperBox, pins: &[(usize, f64)]) -> Result<Guard> {
        let mut sub = source.intervals().to_vec();
        for &(i, v) in pins {
            if i >= sub.len() {
                return Err(Error::structural(format!("pinned coordinate {i} out of range")));
            }
            sub[i] = Interval::pin(v);
        }
        Guard::new(source, sub)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.sub
    }

    pub fn lazy_constraints(&self) -> &[LazyConstraint] {
        &self.lazy
    }

    pub fn pinned_coords(&self) -> Vec<usize> {
        (0..self.sub.len()).filter(|&i| self.sub[i].is_degenerate()).collect()
    }

    pub fn is_full(&self, source: &HyperBox) -> bool {
        self.lazy.is_empty() && self.sub == source.intervals()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.sub.iter().zip(x).all(|(iv, &v)| iv.contains(v, tol))
            && self.lazy.iter().all(|c| c.holds(x, tol))
    }

    /// Sample points of the guard. Lazy constraints are enforced by
    /// rejection, so fewer than `n` points may come back.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        let mut pts = sample_intervals(&self.sub, n, rng);
        if !self.lazy.is_empty() {
            let extra = sample_intervals(&self.sub, 20 * n, rng);
            pts.extend(extra);
            pts.retain(|x| self.lazy.iter().all(|c| c.holds(x, 1e-9)));
            pts.truncate(n);
        }
        pts
    }

    /// Guard of `x` such that `map(x) ∈ other`, intersected with `self`.
    /// Returns `None` when the result is provably empty.
    fn pull_back_and_meet(&self, map: &SmoothFn, other: &Guard, target: &HyperBox) -> Option<Guard> {
        let mut sub = self.sub.clone();
        let mut lazy = self.lazy.clone();
        for c in &other.lazy {
            lazy.push(LazyConstraint {
                map: SmoothFn::compose(&c.map, map).ok()?,
                region: c.region.clone(),
            });
        }
        match map.as_affine() {
            Some((mat, off)) => {
                let mut residual = vec![];
                for (j, iv) in other.sub.iter().enumerate() {
                    if *iv == target.intervals()[j] {
                        continue;
                    }
                    let nz: Vec<usize> = (0..mat.ncols()).filter(|&k| mat[(j, k)] != 0.0).collect();
                    match nz.as_slice() {
                        [] => {
                            if !iv.contains(off[j], 0.0) {
                                return None;
                            }
                        }
                        [k] => {
                            let a = mat[(j, *k)];
                            let (p, q) = ((iv.lo - off[j]) / a, (iv.hi - off[j]) / a);
                            let pre = Interval {
                                lo: p.min(q),
                                hi: p.max(q),
                            };
                            sub[*k] = sub[*k].intersect(&pre)?;
                        }
                        _ => residual.push(j),
                    }
                }
                for j in residual {
                    // interval propagation of the row over the current guard box
                    let (mut lo, mut hi) = (off[j], off[j]);
                    for (k, iv) in sub.iter().enumerate() {
                        let a = mat[(j, k)];
                        if a == 0.0 {
                            continue;
                        }
                        let (p, q) = (a * iv.lo, a * iv.hi);
                        lo += p.min(q);
                        hi += p.max(q);
                    }
                    let iv = other.sub[j];
                    if hi < iv.lo || lo > iv.hi {
                        return None;
                    }
                    let mut region = target.intervals().to_vec();
                    region[j] = iv;
                    lazy.push(LazyConstraint {
                        map: map.clone(),
                        region,
                    });
                }
            }
            None => {
                if other.sub != target.intervals() {
                    lazy.push(LazyConstraint {
                        map: map.clone(),
                        region: other.sub.clone(),
                    });
                }
            }
        }
        Some(Guard { sub, lazy })
    }
}

/// One guarded partial map of a relation.
#[derive(Debug, Clone)]
pub struct Branch {
    pub guard: Guard,
    pub map: SmoothFn,
}

#[derive(Debug, Clone)]
pub struct Relation {
    source: HyperBox,
    target: HyperBox,
    branches: Vec<Branch>,
}

impl Relation {
    pub fn new(source: HyperBox, target: HyperBox, branches: Vec<Branch>) -> Result<Relation> {
        for (i, b) in branches.iter().enumerate() {
            Error::check_dim(source.dim(), b.guard.sub.len())?;
            if b.map.dom().dim() != source.dim() || b.map.cod().dim() != target.dim() {
                return Err(Error::BoxMismatch(format!(
                    "branch {i} maps R^{} -> R^{}, relation is {} -> {}",
                    b.map.dom().dim(),
                    b.map.cod().dim(),
                    source,
                    target
                )));
            }
        }
        Ok(Relation {
            source,
            target,
            branches,
        })
    }

    pub fn empty(source: HyperBox, target: HyperBox) -> Relation {
        Relation {
            source,
            target,
            branches: vec![],
        }
    }

    /// The partial map `guard ∋ x ↦ map(x)`.
    pub fn partial_map(guard: Guard, map: SmoothFn) -> Result<Relation> {
        let (s, t) = (map.dom().clone(), map.cod().clone());
        Relation::new(s, t, vec![Branch { guard, map }])
    }

    pub fn source(&self) -> &HyperBox {
        &self.source
    }

    pub fn target(&self) -> &HyperBox {
        &self.target
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn member(&self, x: &[f64], y: &[f64], tol: f64) -> Result<bool> {
        Error::check_dim(self.source.dim(), x.len())?;
        Error::check_dim(self.target.dim(), y.len())?;
        Ok(self.branches.iter().any(|b| {
            b.guard.contains(x, tol)
                && b.map
                    .eval(x)
                    .iter()
                    .zip(y)
                    .all(|(a, c)| (a - c).abs() <= tol)
        }))
    }

    /// Smallest `‖map(x) − y‖∞` over branches whose guard contains `x`
    /// (infinite when no guard does).
    pub fn distance(&self, x: &[f64], y: &[f64], tol: f64) -> f64 {
        self.branches
            .iter()
            .filter(|b| b.guard.contains(x, tol))
            .map(|b| {
                b.map
                    .eval(x)
                    .iter()
                    .zip(y)
                    .map(|(a, c)| (a - c).abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Branches whose guard contains `x`.
    pub fn enabled_branches(&self, x: &[f64], tol: f64) -> Vec<usize> {
        (0..self.branches.len())
            .filter(|&i| self.branches[i].guard.contains(x, tol))
            .collect()
    }
}

fn same_box(a: &HyperBox, b: &HyperBox) -> bool {
    a == b
}

pub fn identity_rel(b: &HyperBox) -> Relation {
    Relation {
        source: b.clone(),
        target: b.clone(),
        branches: vec![Branch {
            guard: Guard::full(b),
            map: SmoothFn::identity(b),
        }],
    }
}

/// `S ∘ R`: first `r`, then `s`.
pub fn compose(s: &Relation, r: &Relation) -> Result<Relation> {
    if !same_box(&r.target, &s.source) {
        return Err(Error::BoxMismatch(format!(
            "cannot compose: target {} vs source {}",
            r.target, s.source
        )));
    }
    let mut branches = Vec::new();
    for br in &r.branches {
        for bs in &s.branches {
            if let Some(guard) = br.guard.pull_back_and_meet(&br.map, &bs.guard, &r.target) {
                branches.push(Branch {
                    guard,
                    map: SmoothFn::compose(&bs.map, &br.map)?.with_boxes(r.source.clone(), s.target.clone())?,
                });
            }
        }
    }
    Ok(Relation {
        source: r.source.clone(),
        target: s.target.clone(),
        branches,
    })
}

/// Lift a lazy constraint on one factor to the concatenated coordinates.
fn lift_constraint(c: &LazyConstraint, total: &HyperBox, offset: usize, factor: &HyperBox) -> LazyConstraint {
    let coords: Vec<usize> = (offset..offset + factor.dim()).collect();
    let proj = SmoothFn::coordinate_projection(total, &coords, factor.clone())
        .expect("factor coordinates lie inside the product");
    LazyConstraint {
        map: SmoothFn::compose(&c.map, &proj).expect("dimensions agree"),
        region: c.region.clone(),
    }
}

/// Monoidal product: `(m, q) R×S (n, p)` iff `m R n` and `q S p`.
pub fn rel_product(r: &Relation, s: &Relation) -> Relation {
    let source = HyperBox::concat(&[&r.source, &s.source]);
    let target = HyperBox::concat(&[&r.target, &s.target]);
    let mut branches = Vec::new();
    for br in &r.branches {
        for bs in &s.branches {
            let mut sub = br.guard.sub.clone();
            sub.extend(bs.guard.sub.iter().copied());
            let mut lazy: Vec<LazyConstraint> = br
                .guard
                .lazy
                .iter()
                .map(|c| lift_constraint(c, &source, 0, &r.source))
                .collect();
            lazy.extend(
                bs.guard
                    .lazy
                    .iter()
                    .map(|c| lift_constraint(c, &source, r.source.dim(), &s.source)),
            );
            branches.push(Branch {
                guard: Guard { sub, lazy },
                map: SmoothFn::product(&[br.map.clone(), bs.map.clone()]),
            });
        }
    }
    Relation {
        source,
        target,
        branches,
    }
}

/// Product of a list of relations (identity on the 0-dimensional box when empty).
pub fn rel_product_all(rs: &[&Relation]) -> Relation {
    match rs.split_first() {
        None => identity_rel(&HyperBox::point()),
        Some((first, rest)) => rest.iter().fold((*first).clone(), |acc, r| rel_product(&acc, r)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> HyperBox {
        HyperBox::unit(1)
    }

    fn pin_map(v: f64) -> Relation {
        Relation::partial_map(Guard::pinned(&unit(), &[(0, v)]).unwrap(), SmoothFn::identity(&unit())).unwrap()
    }

    #[test]
    fn thermostat_reset_membership() {
        let f = pin_map(0.0);
        assert!(f.member(&[0.0], &[0.0], 1e-9).unwrap());
        assert!(!f.member(&[0.5], &[0.5], 1e-9).unwrap());
        let e = Relation::empty(unit(), unit());
        assert!(!e.member(&[0.0], &[0.0], 1.0).unwrap());
        assert!(f.member(&[0.0, 1.0], &[0.0], 1e-9).is_err());
    }

    #[test]
    fn thermostat_resets_do_not_compose() {
        let (f, g) = (pin_map(0.0), pin_map(1.0));
        assert!(compose(&g, &f).unwrap().is_empty());
        assert!(compose(&f, &g).unwrap().is_empty());
    }

    #[test]
    fn identity_laws() {
        let f = pin_map(0.0);
        let id = identity_rel(&unit());
        for r in [compose(&f, &id).unwrap(), compose(&id, &f).unwrap()] {
            assert_eq!(r.branches().len(), 1);
            assert_eq!(r.branches()[0].guard.intervals(), f.branches()[0].guard.intervals());
            assert!(r.branches()[0].map.is_identity());
        }
        assert!(id.member(&[0.3], &[0.3], 0.0).unwrap());
        assert!(!id.member(&[0.3], &[0.4], 1e-9).unwrap());
    }

    #[test]
    fn two_room_composite_pins_both_coordinates() {
        let f = pin_map(0.0);
        let id = identity_rel(&unit());
        let first = rel_product(&id, &f);
        let second = rel_product(&f, &id);
        let both = compose(&second, &first).unwrap();
        assert_eq!(both.branches().len(), 1);
        assert_eq!(both.branches()[0].guard.intervals(), &[Interval::pin(0.0), Interval::pin(0.0)]);
        assert!(both.member(&[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap());
        assert!(!both.member(&[0.0, 0.3], &[0.0, 0.3], 1e-9).unwrap());
    }

    #[test]
    fn product_membership() {
        let f = pin_map(0.0);
        let id = identity_rel(&unit());
        let p = rel_product(&f, &id);
        assert!(p.member(&[0.0, 0.3], &[0.0, 0.3], 1e-9).unwrap());
        assert!(rel_product(&Relation::empty(unit(), unit()), &id).is_empty());
        let ii = rel_product(&id, &id);
        assert_eq!(ii.branches().len(), 1);
        assert!(ii.branches()[0].map.is_identity());
        assert!(ii.branches()[0].guard.is_full(&HyperBox::unit(2)));
    }

    #[test]
    fn composition_through_nonlinear_map_is_lazy() {
        let b = HyperBox::from_bounds(&[(-2.0, 2.0)]).unwrap();
        let sq = SmoothFn::from_closure(b.clone(), b.clone(), |x| vec![x[0] * x[0]], None);
        let r = Relation::partial_map(Guard::full(&b), sq).unwrap();
        let s = Relation::partial_map(Guard::pinned(&b, &[(0, 1.0)]).unwrap(), SmoothFn::identity(&b)).unwrap();
        let c = compose(&s, &r).unwrap();
        assert_eq!(c.branches().len(), 1);
        assert!(c.member(&[-1.0], &[1.0], 1e-9).unwrap());
        assert!(c.member(&[1.0], &[1.0], 1e-9).unwrap());
        assert!(!c.member(&[0.5], &[0.25], 1e-9).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = c.branches()[0].guard.sample(5, &mut rng);
        assert!(pts.iter().all(|x| (x[0].abs() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn mismatched_boxes_do_not_compose() {
        let f = pin_map(0.0);
        let g = identity_rel(&HyperBox::unit(2));
        assert!(matches!(compose(&g, &f), Err(Error::BoxMismatch(_))));
    }
}
