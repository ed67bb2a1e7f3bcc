//! Worked examples: the thermostat, two rooms, and small networks built
//! from them.

use std::sync::Arc;

use crate::config::{Document, Named, NetworkEntry, NetworkMapEntry, SimulationEntry};
use crate::error::{Error, Result};
use crate::expr::parse;
use crate::geometry::{HyperBox, SmoothFn};
use crate::hyds::{product_system, HybridDynamicalSystem};
use crate::hyph::{compose_map, product, product2, HyPhMap, HybridPhaseSpace, Mode, Path, Product};
use crate::network::{apply_interconnection, Network, NetworkMap};
use crate::opensys::{
    submersion_product, HybridSubmersion, InterconnectionMap, OpenSystem, SubmersionMap, SubmersionProduct,
};
use crate::relation::{Guard, Relation};
use crate::simulate::{JumpPolicy, SimConfig};

/// Builds a map `dom → ℝⁿ` from expressions over `vars`.
pub fn field_from(dom: &HyperBox, vars: &[String], outs: &[&str]) -> Result<SmoothFn> {
    let exprs = outs.iter().map(|s| parse(s)).collect::<std::result::Result<Vec<_>, _>>()?;
    SmoothFn::from_exprs(dom.clone(), HyperBox::real_space(outs.len()), vars, exprs)
}

/// Modes `off` and `on` over `x ∈ [0, 1]`; `f: off → on` fires at `x = 0`
/// and `g: on → off` at `x = 1`, both keeping `x`.
pub fn thermostat_space() -> HybridPhaseSpace {
    let b = HyperBox::unit(1);
    let x = vec!["x".to_string()];
    let rel = |at: f64| {
        Relation::partial_map(Guard::pinned(&b, &[(0, at)]).expect("pin inside box"), SmoothFn::identity(&b))
            .expect("identity reset")
    };
    HybridPhaseSpace::builder()
        .push_mode(Mode::with_vars("off", b.clone(), x.clone()).expect("one var"))
        .push_mode(Mode::with_vars("on", b.clone(), x).expect("one var"))
        .arrow("f", "off", "on", rel(0.0))
        .arrow("g", "on", "off", rel(1.0))
        .build()
        .expect("well-formed thermostat")
}

/// `ẋ = -1` in `off`, `ẋ = 1` in `on`.
pub fn thermostat() -> HybridDynamicalSystem {
    thermostat_with(Arc::new(thermostat_space()))
}

fn thermostat_with(t: Arc<HybridPhaseSpace>) -> HybridDynamicalSystem {
    let field = t
        .modes()
        .iter()
        .map(|m| field_from(&m.space, &m.vars, &[if m.name == "off" { "-1" } else { "1" }]).expect("constant field"))
        .collect();
    HybridDynamicalSystem::new(t, field).expect("field matches modes")
}

/// Two independent thermostats on the product space.
pub fn two_rooms() -> (HybridDynamicalSystem, Product) {
    let h = thermostat();
    product_system(&[&h, &h])
}

/// Two rooms with the temperature of each leaking into the other:
/// `ẋᵢ = ±1 + 0.1·x_j`.
pub fn coupled_rooms(p: &Product) -> Result<HybridDynamicalSystem> {
    let field = (0..p.space.modes().len())
        .map(|i| {
            let t = p.mode_tuple(i);
            let m = p.space.mode(i);
            let sign = |k: usize| if p.factors[k].mode(t[k]).name == "off" { "-1" } else { "1" };
            let a = format!("{} + 0.1*{}", sign(0), m.vars[1]);
            let b = format!("{} + 0.1*{}", sign(1), m.vars[0]);
            field_from(&m.space, &m.vars, &[&a, &b])
        })
        .collect::<Result<Vec<_>>>()?;
    HybridDynamicalSystem::new(p.space.clone(), field)
}

/// One mode `u` over `v ∈ ℝ` and no arrows.
pub fn input_space() -> HybridPhaseSpace {
    HybridPhaseSpace::builder()
        .push_mode(Mode::with_vars("u", HyperBox::real_space(1), vec!["v".into()]).expect("one var"))
        .build()
        .expect("single mode")
}

/// `s: m → u`, reading off the temperature.
pub fn sensor(m: &Arc<HybridPhaseSpace>, u: &Arc<HybridPhaseSpace>) -> Result<HyPhMap> {
    let comps = m
        .modes()
        .iter()
        .map(|md| SmoothFn::coordinate_projection(&md.space, &[0], u.space(0).clone()))
        .collect::<Result<Vec<_>>>()?;
    HyPhMap::new(
        m.clone(),
        u.clone(),
        vec![0; m.modes().len()],
        vec![Path::identity(0); m.arrows().len()],
        comps,
    )
}

/// Building blocks shared by the network examples: the thermostat space
/// `m`, the input space `u`, the sensor `s`, the submersion
/// `μ: m × u → m` and the open thermostat `w` driven by `v`.
#[derive(Debug, Clone)]
pub struct Parts {
    pub m: Arc<HybridPhaseSpace>,
    pub u: Arc<HybridPhaseSpace>,
    pub s: HyPhMap,
    pub mu_prod: Product,
    pub mu: Arc<HybridSubmersion>,
    pub w: OpenSystem,
}

pub fn parts() -> Result<Parts> {
    let m = Arc::new(thermostat_space());
    let u = Arc::new(input_space());
    let s = sensor(&m, &u)?;
    let mu_prod = product2(&m, &u);
    let mu = Arc::new(HybridSubmersion::projection(&mu_prod, 0));
    let w = open_thermostat(&mu, 0.1)?;
    Ok(Parts { m, u, s, mu_prod, mu, w })
}

/// `ẋ = ±1 + k·v` on `μ`.
pub fn open_thermostat(mu: &Arc<HybridSubmersion>, k: f64) -> Result<OpenSystem> {
    let tot = mu.tot();
    let field = tot
        .modes()
        .iter()
        .map(|md| {
            let sign = if md.name.starts_with("(off") { "-1" } else { "1" };
            field_from(&md.space, &md.vars, &[&format!("{sign} + {k}*{}", md.vars[1])])
        })
        .collect::<Result<Vec<_>>>()?;
    OpenSystem::new(mu.clone(), field)
}

/// The map `m → m × u`, `x ↦ (x, s(x))`.
fn feed_back(p: &Parts) -> Result<HyPhMap> {
    p.mu_prod.pair(&[HyPhMap::identity(&p.m), p.s.clone()])
}

/// A single thermostat reading its own temperature: base `id: m → m`,
/// `ν_tot = (id, s)`, `ν_st = id`.
pub fn single_node_loop(p: &Parts) -> Result<Network> {
    let base = Arc::new(HybridSubmersion::identity(&p.m));
    let pi = submersion_product(std::slice::from_ref(&p.mu))?;
    let tot = pi.tot.pair(&[feed_back(p)?])?;
    let st = pi.st.pair(&[HyPhMap::identity(&p.m)])?;
    let nu = SubmersionMap::new(base, pi.sub.clone(), tot, st)?;
    Network::new(vec!["*".into()], vec![p.mu.clone()], InterconnectionMap::new(nu, None)?)
}

/// Node wiring of the three-room network: room `i` reads room `READS[i]`.
pub const READS: [usize; 3] = [1, 0, 1];

/// Three thermostats over `m³`, room `i` driven by the temperature of room
/// `READS[i]`.
pub fn three_node_network(p: &Parts) -> Result<(Network, SubmersionProduct)> {
    let ids: Vec<_> = std::iter::repeat_n(Arc::new(HybridSubmersion::identity(&p.m)), 3).collect();
    let b = submersion_product(&ids)?;
    let pi = submersion_product(&vec![p.mu.clone(); 3])?;
    let tot = READS
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let reading = compose_map(&p.s, &b.tot.projections[j])?;
            p.mu_prod.pair(&[b.tot.projections[i].clone(), reading])
        })
        .collect::<Result<Vec<_>>>()?;
    let st = pi.st.pair(&b.st.projections)?;
    let psi = SubmersionMap::new(b.sub.clone(), pi.sub.clone(), pi.tot.pair(&tot)?, st)?;
    let net = Network::new(
        vec!["1".into(), "2".into(), "3".into()],
        vec![p.mu.clone(); 3],
        InterconnectionMap::new(psi, None)?,
    )?;
    Ok((net, b))
}

/// From the three-node network to the single loop: every node goes to the
/// single node with identity components, and `f: m → m³` is the diagonal.
pub fn three_node_map(p: &Parts, three: &Network, b: &SubmersionProduct, single: &Network) -> Result<NetworkMap> {
    let id = HyPhMap::identity(&p.m);
    let f = SubmersionMap::new(
        single.base().clone(),
        three.base().clone(),
        b.tot.pair(&[id.clone(), id.clone(), id.clone()])?,
        b.st.pair(&[id.clone(), id.clone(), id])?,
    )?;
    NetworkMap::new(three, single, vec![0; 3], vec![SubmersionMap::identity(&p.mu); 3], f)
}

/// Two rooms as a network over `P = m × m` with nodes `τᵢ: P → m` the
/// projections, base `id_P`, `ψ_tot` the diagonal `P → P × P` and `ψ_st`
/// the identity. Also returns the open rooms `X₁`, `X₂` and the product.
pub fn product_as_network() -> Result<(Network, [OpenSystem; 2], Product)> {
    let t = Arc::new(thermostat_space());
    let p = product2(&t, &t);
    let tau: Vec<Arc<HybridSubmersion>> = (0..2).map(|k| Arc::new(HybridSubmersion::projection(&p, k))).collect();
    let pi = submersion_product(&tau)?;
    let id = HyPhMap::identity(&p.space);
    let base = Arc::new(HybridSubmersion::identity(&p.space));
    let psi = SubmersionMap::new(base, pi.sub.clone(), pi.tot.pair(&[id.clone(), id])?, pi.st.pair(&p.projections)?)?;
    let net = Network::new(vec!["1".into(), "2".into()], tau.clone(), InterconnectionMap::new(psi, None)?)?;
    let rooms = [0usize, 1].map(|k| {
        let field = (0..p.space.modes().len())
            .map(|i| {
                let md = p.space.mode(i);
                let own = p.factors[k].mode(p.mode_tuple(i)[k]);
                let sign = if own.name == "off" { "-1" } else { "1" };
                field_from(&md.space, &md.vars, &[&format!("{sign} + 0.1*{}", md.vars[1 - k])])
            })
            .collect::<Result<Vec<_>>>()?;
        OpenSystem::new(tau[k].clone(), field)
    });
    let [a, b] = rooms;
    Ok((net, [a?, b?], p))
}

/// All three rooms, sharing one product of thermostat spaces.
pub fn three_rooms() -> Product {
    let t = Arc::new(thermostat_space());
    product(&[t.clone(), t.clone(), t])
}

/// The built-in examples, each a complete document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Thermostat,
    TwoRooms,
    ProductAsNetwork,
    SingleNodeLoop,
    ThreeNodeNetwork,
    ThreeNodeMap,
}

impl Demo {
    pub const ALL: [Demo; 6] = [
        Demo::Thermostat,
        Demo::TwoRooms,
        Demo::ProductAsNetwork,
        Demo::SingleNodeLoop,
        Demo::ThreeNodeNetwork,
        Demo::ThreeNodeMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Demo::Thermostat => "thermostat",
            Demo::TwoRooms => "two-rooms",
            Demo::ProductAsNetwork => "product-as-network",
            Demo::SingleNodeLoop => "single-node-loop",
            Demo::ThreeNodeNetwork => "three-node-network",
            Demo::ThreeNodeMap => "three-node-map",
        }
    }

    pub fn from_name(name: &str) -> Result<Demo> {
        Demo::ALL.into_iter().find(|d| d.name() == name).ok_or_else(|| Error::Unknown {
            kind: "demo",
            name: name.to_string(),
        })
    }

    pub fn build(self) -> Result<Document> {
        let mut doc = Document::default();
        match self {
            Demo::Thermostat => {
                let h = thermostat();
                doc.spaces.push(entry("thermostat", h.space().clone()));
                doc.maps.push(entry("id", HyPhMap::identity(h.space())));
                doc.simulations.push(entry("default", run(&h, "thermostat", "off", &[1.0], 10.5)?));
                doc.systems.push(entry("thermostat", h));
            }
            Demo::TwoRooms => {
                let h = thermostat();
                let (two, p) = product_system(&[&h, &h]);
                doc.spaces.push(entry("thermostat", h.space().clone()));
                doc.spaces.push(entry("two-rooms", two.space().clone()));
                doc.maps.push(entry("first", p.projections[0].clone()));
                doc.maps.push(entry("second", p.projections[1].clone()));
                doc.simulations.push(entry("default", run(&two, "two-rooms", "(off,on)", &[1.0, 0.5], 5.0)?));
                doc.systems.push(entry("thermostat", h));
                doc.systems.push(entry("two-rooms", two));
            }
            Demo::ProductAsNetwork => {
                let (net, [x1, x2], p) = product_as_network()?;
                doc.spaces.push(entry("thermostat", p.factors[0].clone()));
                doc.spaces.push(entry("rooms", p.space.clone()));
                doc.submersions.push(entry("room1", net.tau[0].clone()));
                doc.submersions.push(entry("room2", net.tau[1].clone()));
                doc.open_systems.push(entry("X1", x1));
                doc.open_systems.push(entry("X2", x2));
                doc.networks.push(entry(
                    "rooms",
                    NetworkEntry {
                        network: net,
                        systems: vec!["X1".into(), "X2".into()],
                    },
                ));
                let direct = coupled_rooms(&p)?;
                doc.simulations.push(entry("default", run(&direct, "coupled", "(off,on)", &[1.0, 0.5], 5.0)?));
                doc.systems.push(entry("coupled", direct));
            }
            Demo::SingleNodeLoop => {
                let p = parts()?;
                add_parts(&mut doc, &p);
                add_network(&mut doc, "loop", single_node_loop(&p)?, 1, &p)?;
            }
            Demo::ThreeNodeNetwork => {
                let p = parts()?;
                add_parts(&mut doc, &p);
                add_network(&mut doc, "three", three_node_network(&p)?.0, 3, &p)?;
            }
            Demo::ThreeNodeMap => {
                let p = parts()?;
                add_parts(&mut doc, &p);
                let single = single_node_loop(&p)?;
                let (three, b) = three_node_network(&p)?;
                let map = three_node_map(&p, &three, &b, &single)?;
                add_network(&mut doc, "three", three, 3, &p)?;
                add_network(&mut doc, "loop", single, 1, &p)?;
                doc.network_maps.push(entry(
                    "collapse",
                    NetworkMapEntry {
                        map,
                        src: "three".into(),
                        dst: "loop".into(),
                    },
                ));
            }
        }
        Ok(doc)
    }
}

fn entry<T>(name: &str, value: T) -> Named<T> {
    Named {
        name: name.to_string(),
        value,
    }
}

fn run(h: &HybridDynamicalSystem, system: &str, mode: &str, x: &[f64], t_max: f64) -> Result<SimulationEntry> {
    let sp = h.space();
    Ok(SimulationEntry {
        system: system.to_string(),
        init: crate::hyph::UnderlyingPoint::new(sp, sp.mode_id(mode)?, x.to_vec(), 0.0)?,
        policy: JumpPolicy::Priority,
        config: SimConfig {
            t_max,
            ..SimConfig::default()
        },
    })
}

fn add_parts(doc: &mut Document, p: &Parts) {
    doc.spaces.push(entry("m", p.m.clone()));
    doc.spaces.push(entry("u", p.u.clone()));
    doc.maps.push(entry("s", p.s.clone()));
    doc.submersions.push(entry("mu", p.mu.clone()));
    doc.open_systems.push(entry("w", p.w.clone()));
}

/// Adds a network carrying `w` on every node, together with its closed
/// system `<name>-closed` and a simulation from a diagonal point.
fn add_network(doc: &mut Document, name: &str, net: Network, n: usize, p: &Parts) -> Result<()> {
    let closed = apply_interconnection(&net, &vec![&p.w; n])?.to_system()?;
    let sys = format!("{name}-closed");
    let off = vec!["off"; n].join(",");
    let mode = if n == 1 { off } else { format!("({off})") };
    doc.simulations.push(entry(name, run(&closed, &sys, &mode, &vec![0.5; n], 5.0)?));
    doc.systems.push(entry(&sys, closed));
    doc.networks.push(entry(
        name,
        NetworkEntry {
            network: net,
            systems: vec!["w".into(); n],
        },
    ));
    Ok(())
}
