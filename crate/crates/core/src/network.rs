//! Networks of hybrid open systems and maps between them.
//!
//! A network is a list of submersions `τ` indexed by node names together
//! with an interconnection `ψ: b → Π(τ)`. Feeding one open system per node
//! through `ψ` yields an open system on `b`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hyph::{compose_map, HyPhMap, Product};
use crate::opensys::{
    crl_check, crl_product, crl_related, max_diff, pullback, submersion_product, validate_interconnection,
    validate_submersion, validate_submersion_map, HybridSubmersion, InterconnectionMap, OpenSystem,
    SubmersionMap, SubmersionProduct,
};
use crate::report::Report;

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<String>,
    pub tau: Vec<Arc<HybridSubmersion>>,
    pub pi: SubmersionProduct,
    pub psi: InterconnectionMap,
}

impl Network {
    /// `psi` must map into the product of `tau` built by [`submersion_product`].
    pub fn new(nodes: Vec<String>, tau: Vec<Arc<HybridSubmersion>>, psi: InterconnectionMap) -> Result<Self> {
        Error::check_dim(nodes.len(), tau.len())?;
        let pi = submersion_product(&tau)?;
        if !psi.cod().tot().same_shape(pi.sub.tot()) || !psi.cod().st().same_shape(pi.sub.st()) {
            return Err(Error::structural("interconnection does not land in the product of the nodes"));
        }
        Ok(Network { nodes, tau, pi, psi })
    }

    pub fn base(&self) -> &Arc<HybridSubmersion> {
        self.psi.dom()
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.nodes.iter().position(|n| n == name).ok_or_else(|| Error::Unknown {
            kind: "node",
            name: name.to_string(),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.base().is_identity()
    }
}

/// `Π(φ, Φ): Π(μ) → Π(τ)` with `x`-th component `Φ_x ∘ π_{φ(x)}`.
pub fn pi_map(phi: &[usize], maps: &[HyPhMap], from: &Product, to: &Product) -> Result<HyPhMap> {
    Error::check_dim(to.factors.len(), phi.len())?;
    Error::check_dim(phi.len(), maps.len())?;
    let parts = phi
        .iter()
        .zip(maps)
        .map(|(&y, m)| {
            let pr = from
                .projections
                .get(y)
                .ok_or_else(|| Error::structural(format!("index {y} is not a factor")))?;
            compose_map(m, pr)
        })
        .collect::<Result<Vec<_>>>()?;
    to.pair(&parts)
}

/// The same construction on both levels of submersion products.
pub fn pi_submersion_map(
    phi: &[usize],
    maps: &[SubmersionMap],
    from: &SubmersionProduct,
    to: &SubmersionProduct,
) -> Result<SubmersionMap> {
    let tots: Vec<HyPhMap> = maps.iter().map(|m| m.tot.clone()).collect();
    let sts: Vec<HyPhMap> = maps.iter().map(|m| m.st.clone()).collect();
    SubmersionMap::new(
        from.sub.clone(),
        to.sub.clone(),
        pi_map(phi, &tots, &from.tot, &to.tot)?,
        pi_map(phi, &sts, &from.st, &to.st)?,
    )
}

pub fn validate_network(n: &Network, nsamples: usize, tol: f64) -> Report {
    let mut r = Report::new("network");
    for (name, t) in n.nodes.iter().zip(&n.tau) {
        r.absorb(&format!("node {name}"), validate_submersion(t, nsamples));
    }
    r.absorb("base", validate_submersion(n.base(), nsamples));
    r.absorb("psi", validate_interconnection(&n.psi, nsamples, tol));
    r
}

/// `ψ*(w₁ × ⋯ × wₙ)`.
pub fn apply_interconnection(n: &Network, w: &[&OpenSystem]) -> Result<OpenSystem> {
    Error::check_dim(n.nodes.len(), w.len())?;
    let prod = crl_product(&n.pi, w)?;
    pullback(&n.psi, &prod)
}

/// `((φ, Φ), f)` from `(τ, ψ)` over nodes `X` to `(μ, ν)` over nodes `Y`:
/// `φ: X → Y`, `Φ_x: μ(φ(x)) → τ(x)` and `f: c → b`.
#[derive(Debug, Clone)]
pub struct NetworkMap {
    pub phi: Vec<usize>,
    pub maps: Vec<SubmersionMap>,
    pub f: SubmersionMap,
}

impl NetworkMap {
    pub fn new(src: &Network, dst: &Network, phi: Vec<usize>, maps: Vec<SubmersionMap>, f: SubmersionMap) -> Result<Self> {
        Error::check_dim(src.nodes.len(), phi.len())?;
        Error::check_dim(src.nodes.len(), maps.len())?;
        for (x, (&y, m)) in phi.iter().zip(&maps).enumerate() {
            if y >= dst.nodes.len() {
                return Err(Error::structural(format!("node {} maps to an unknown node", src.nodes[x])));
            }
            if !m.dom.tot().same_shape(dst.tau[y].tot()) || !m.cod.tot().same_shape(src.tau[x].tot()) {
                return Err(Error::structural(format!(
                    "component at node {} does not run from node {} to node {}",
                    src.nodes[x], dst.nodes[y], src.nodes[x]
                )));
            }
        }
        if !f.dom.tot().same_shape(dst.base().tot()) || !f.cod.tot().same_shape(src.base().tot()) {
            return Err(Error::structural("base map does not run between the bases"));
        }
        Ok(NetworkMap { phi, maps, f })
    }

    pub fn pi(&self, src: &Network, dst: &Network) -> Result<SubmersionMap> {
        pi_submersion_map(&self.phi, &self.maps, &dst.pi, &src.pi)
    }
}

/// The square `Π(φ, Φ) ∘ ν = ψ ∘ f`, sampled on total and state spaces,
/// plus validity of each component.
pub fn validate_network_map(m: &NetworkMap, src: &Network, dst: &Network, nsamples: usize, tol: f64) -> Report {
    let mut r = Report::new("network map");
    for (x, h) in m.maps.iter().enumerate() {
        r.absorb(&format!("component {}", src.nodes[x]), validate_submersion_map(h, nsamples, tol));
    }
    r.absorb("f", validate_submersion_map(&m.f, nsamples, tol));
    let pi = match m.pi(src, dst) {
        Ok(p) => p,
        Err(e) => {
            r.structural(format!("Π(φ, Φ): {e}"));
            return r;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a0a4e);
    for (level, left, right) in [
        ("tot", (&pi.tot, &dst.psi.map.tot), (&src.psi.map.tot, &m.f.tot)),
        ("st", (&pi.st, &dst.psi.map.st), (&src.psi.map.st, &m.f.st)),
    ] {
        let lhs = match compose_map(left.0, left.1) {
            Ok(h) => h,
            Err(e) => {
                r.structural(format!("{level}: {e}"));
                continue;
            }
        };
        let rhs = match compose_map(right.0, right.1) {
            Ok(h) => h,
            Err(e) => {
                r.structural(format!("{level}: {e}"));
                continue;
            }
        };
        for (c, mode) in lhs.dom().modes().iter().enumerate() {
            if lhs.obj()[c] != rhs.obj()[c] {
                r.fail(format!("{level} mode {}", mode.name), "square does not commute on modes", None);
                continue;
            }
            for q in mode.space.sample(nsamples, &mut rng) {
                let d = max_diff(&lhs.comp(c).eval(&q), &rhs.comp(c).eval(&q));
                r.residual(d);
                if !(d <= tol) {
                    r.fail(format!("{level} mode {} at {q:?}", mode.name), "square does not commute", Some(d));
                }
            }
        }
    }
    r
}

/// Verdict of the induced-map check: the hypotheses (square and
/// componentwise relatedness) and the conclusion (relatedness of the
/// interconnected systems along `f`) are reported separately.
#[derive(Debug, Clone)]
pub struct InducedMap {
    pub hypotheses: Report,
    pub conclusion: Option<Report>,
    /// Interconnected system on `c` (from `u`) and on `b` (from `w`).
    pub systems: Option<(OpenSystem, OpenSystem)>,
}

impl InducedMap {
    pub fn passed(&self) -> bool {
        self.hypotheses.passed() && self.conclusion.as_ref().is_some_and(Report::passed)
    }
}

/// With `w` one open system per node of `src` and `u` one per node of
/// `dst`: if the square commutes and every `u_{φ(x)}` is `Φ_x`-related to
/// `w_x`, checks that `f` relates `ν*(∏u)` to `ψ*(∏w)`. The conclusion is
/// only attempted when the hypotheses hold.
pub fn induced_system_map(
    m: &NetworkMap,
    src: &Network,
    dst: &Network,
    w: &[&OpenSystem],
    u: &[&OpenSystem],
    nsamples: usize,
    tol: f64,
) -> InducedMap {
    let mut hyp = Report::new("hypotheses");
    if w.len() != src.nodes.len() || u.len() != dst.nodes.len() {
        hyp.structural("one open system per node is needed on both networks");
        return InducedMap {
            hypotheses: hyp,
            conclusion: None,
            systems: None,
        };
    }
    hyp.absorb("square", validate_network_map(m, src, dst, nsamples, tol));
    for (x, o) in w.iter().enumerate() {
        hyp.absorb(&format!("w[{}]", src.nodes[x]), crl_check(o, nsamples, tol));
    }
    for (y, o) in u.iter().enumerate() {
        hyp.absorb(&format!("u[{}]", dst.nodes[y]), crl_check(o, nsamples, tol));
    }
    for (x, h) in m.maps.iter().enumerate() {
        hyp.absorb(
            &format!("related at {}", src.nodes[x]),
            crl_related(h, u[m.phi[x]], w[x], nsamples, tol),
        );
    }
    if !hyp.passed() {
        return InducedMap {
            hypotheses: hyp,
            conclusion: None,
            systems: None,
        };
    }
    let mut concl = Report::new("conclusion");
    let built = apply_interconnection(dst, u).and_then(|big_u| Ok((big_u, apply_interconnection(src, w)?)));
    match built {
        Ok((big_u, big_w)) => {
            concl.absorb("f", crl_related(&m.f, &big_u, &big_w, nsamples, tol));
            InducedMap {
                hypotheses: hyp,
                conclusion: Some(concl),
                systems: Some((big_u, big_w)),
            }
        }
        Err(e) => {
            concl.structural(e.to_string());
            InducedMap {
                hypotheses: hyp,
                conclusion: Some(concl),
                systems: None,
            }
        }
    }
}
