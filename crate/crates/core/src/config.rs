//! Config documents.
//!
//! One TOML format declares phase spaces, maps, systems, submersions,
//! submersion maps, interconnections, open systems, networks, network maps
//! and simulation settings. Objects refer to each other by name and may
//! appear in any order.
//!
//! ```text
//! document      = "version = 1" , { section } ;
//! section       = phase_space | map | system | submersion | submersion_map
//!               | interconnection | open_system | network | network_map
//!               | simulation ;
//! phase_space   = "[[phase_space]]" , name , ( product | { mode } , { arrow } ) ;
//! product       = "product = [" , space_name , { "," , space_name } , "]" ;
//! mode          = "[[phase_space.mode]]" , name , [ vars ] , bounds ;
//! bounds        = "bounds = [" , "[" lo "," hi "]" , { "," , "[" lo "," hi "]" } , "]" ;
//! arrow         = "[[phase_space.arrow]]" , name , src , dst , "branch = [" , branch , { "," branch } , "]" ;
//! branch        = "{ guard = {" , { var "=" ( value | "[" lo "," hi "]" ) } , "}" , [ ", reset = [" exprs "]" ] , "}" ;
//! map           = "[[map]]" , name , [ "kind =" ( "explicit" | "identity" | "terminal"
//!                 | "projection" | "pair" | "compose" ) ] , fields ;
//! ```
//!
//! Explicit maps list `obj` (mode ↦ mode), `arr` (arrow ↦ list of arrow
//! names) and `comps` (mode ↦ expressions over the domain variables).
//! Omitted entries default to the only target mode or the target mode of
//! the same name, the target arrow of the same name or the empty path, and
//! the identity. `compose` lists maps in the order they are applied.
//!
//! Every submersion `S` also names its spaces `S.tot` and `S.st`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path as FsPath;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::geometry::{HyperBox, Interval, SmoothFn};
use crate::hyds::{product_system, HybridDynamicalSystem};
use crate::hyph::{compose_map, product, terminal, HyPhMap, HybridPhaseSpace, Mode, Product, UnderlyingPoint};
use crate::network::{Network, NetworkMap};
use crate::opensys::{
    crl_product, pullback, submersion_product, HybridSubmersion, InterconnectionMap, OpenSystem, SubmersionMap,
    SubmersionProduct,
};
use crate::relation::{Branch, Guard, Relation};
use crate::simulate::{Integrator, JumpPolicy, SimConfig};

pub const CONFIG_VERSION: u32 = 1;

// ---------- file schema ----------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default, rename = "phase_space", skip_serializing_if = "Vec::is_empty")]
    pub phase_spaces: Vec<SpaceDef>,
    #[serde(default, rename = "map", skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<MapDef>,
    #[serde(default, rename = "system", skip_serializing_if = "Vec::is_empty")]
    pub systems: Vec<SystemDef>,
    #[serde(default, rename = "submersion", skip_serializing_if = "Vec::is_empty")]
    pub submersions: Vec<SubmersionDef>,
    #[serde(default, rename = "submersion_map", skip_serializing_if = "Vec::is_empty")]
    pub submersion_maps: Vec<SubmersionMapDef>,
    #[serde(default, rename = "interconnection", skip_serializing_if = "Vec::is_empty")]
    pub interconnections: Vec<InterconnectionDef>,
    #[serde(default, rename = "open_system", skip_serializing_if = "Vec::is_empty")]
    pub open_systems: Vec<OpenSystemDef>,
    #[serde(default, rename = "network", skip_serializing_if = "Vec::is_empty")]
    pub networks: Vec<NetworkDef>,
    #[serde(default, rename = "network_map", skip_serializing_if = "Vec::is_empty")]
    pub network_maps: Vec<NetworkMapDef>,
    #[serde(default, rename = "simulation", skip_serializing_if = "Vec::is_empty")]
    pub simulations: Vec<SimulationDef>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<Vec<String>>,
    #[serde(default, rename = "mode", skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeDef>,
    #[serde(default, rename = "arrow", skip_serializing_if = "Vec::is_empty")]
    pub arrows: Vec<ArrowDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vars: Option<Vec<String>>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrowDef {
    pub name: String,
    pub src: String,
    pub dst: String,
    #[serde(default, rename = "branch")]
    pub branches: Vec<BranchDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDef {
    #[serde(default)]
    pub guard: BTreeMap<String, GuardSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<Vec<String>>,
}

/// A pinned value or a closed range for one guard coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GuardSpec {
    Pin(f64),
    Range((f64, f64)),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    #[default]
    Explicit,
    Identity,
    Terminal,
    Projection,
    Pair,
    Compose,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDef {
    pub name: String,
    #[serde(default)]
    pub kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dom: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cod: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub obj: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arr: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub comps: BTreeMap<String, Vec<String>>,
    /// Space of an identity or terminal map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
    /// Product space of a projection or pairing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub field: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionRef {
    pub product: String,
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmersionDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmersionMapDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dom: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cod: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectionDef {
    pub name: String,
    pub map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st_inverse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullbackRef {
    pub interconnection: String,
    pub system: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSystemDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submersion: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub field: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pullback: Option<PullbackRef>,
    /// A closed system on `id: a → a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDef {
    pub name: String,
    pub nodes: Vec<String>,
    pub tau: Vec<String>,
    pub psi: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub systems: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkMapDef {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub phi: BTreeMap<String, String>,
    pub components: BTreeMap<String, String>,
    pub f: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDef {
    pub name: String,
    pub system: String,
    /// `MODE:c0,c1,…`
    pub init: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_jumps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

// ---------- resolved document ----------

#[derive(Debug, Clone)]
pub struct Named<T> {
    pub name: String,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct NetworkEntry {
    pub network: Network,
    /// Names of the open systems sitting on the nodes, if given.
    pub systems: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct NetworkMapEntry {
    pub map: NetworkMap,
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone)]
pub struct SimulationEntry {
    pub system: String,
    pub init: UnderlyingPoint,
    pub policy: JumpPolicy,
    pub config: SimConfig,
}

#[derive(Debug, Clone, Default)]
pub struct Document {
    pub spaces: Vec<Named<Arc<HybridPhaseSpace>>>,
    pub maps: Vec<Named<HyPhMap>>,
    pub systems: Vec<Named<HybridDynamicalSystem>>,
    pub submersions: Vec<Named<Arc<HybridSubmersion>>>,
    pub submersion_maps: Vec<Named<SubmersionMap>>,
    pub interconnections: Vec<Named<InterconnectionMap>>,
    pub open_systems: Vec<Named<OpenSystem>>,
    pub networks: Vec<Named<NetworkEntry>>,
    pub network_maps: Vec<Named<NetworkMapEntry>>,
    pub simulations: Vec<Named<SimulationEntry>>,
}

pub fn lookup<'a, T>(items: &'a [Named<T>], kind: &'static str, name: &str) -> Result<&'a T> {
    items
        .iter()
        .find(|n| n.name == name)
        .map(|n| &n.value)
        .ok_or_else(|| Error::Unknown {
            kind,
            name: name.to_string(),
        })
}

fn named<T>(name: &str, value: T) -> Named<T> {
    Named {
        name: name.to_string(),
        value,
    }
}

impl Document {
    pub fn space(&self, name: &str) -> Result<&Arc<HybridPhaseSpace>> {
        lookup(&self.spaces, "phase space", name)
    }

    pub fn map(&self, name: &str) -> Result<&HyPhMap> {
        lookup(&self.maps, "map", name)
    }

    pub fn system(&self, name: &str) -> Result<&HybridDynamicalSystem> {
        lookup(&self.systems, "system", name)
    }

    pub fn open_system(&self, name: &str) -> Result<&OpenSystem> {
        lookup(&self.open_systems, "open system", name)
    }

    pub fn network(&self, name: &str) -> Result<&NetworkEntry> {
        lookup(&self.networks, "network", name)
    }

    pub fn network_map(&self, name: &str) -> Result<&NetworkMapEntry> {
        lookup(&self.network_maps, "network map", name)
    }

    pub fn simulation(&self, name: &str) -> Result<&SimulationEntry> {
        lookup(&self.simulations, "simulation", name)
    }

    /// Open systems on the nodes of a network, when the document names them.
    pub fn node_systems(&self, net: &NetworkEntry) -> Result<Vec<&OpenSystem>> {
        net.systems.iter().map(|s| self.open_system(s)).collect()
    }
}

// ---------- loading ----------

pub fn load_str(src: &str) -> Result<Document> {
    let file: ConfigFile = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
    resolve(&file)
}

pub fn load_file(path: &FsPath) -> Result<Document> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    load_str(&src).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `MODE:c0,c1,…`, e.g. `off:1.0`.
pub fn parse_init(space: &HybridPhaseSpace, spec: &str, tol: f64) -> Result<UnderlyingPoint> {
    let (mode, coords) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("initial state `{spec}` is not MODE:coords")))?;
    let m = space.mode_id(mode.trim())?;
    let point = if coords.trim().is_empty() {
        vec![]
    } else {
        coords
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("initial state `{spec}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Error::check_dim(space.space(m).dim(), point.len())?;
    UnderlyingPoint::new(space, m, point, tol)
}

fn in_ctx<T>(kind: &str, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Unknown { .. } | Error::Config(_) => Error::Config(format!("{kind} `{name}`: {e}")),
        Error::Parse(p) => Error::Config(format!("{kind} `{name}`: {p}")),
        Error::Structural(s) => Error::Structural(format!("{kind} `{name}`: {s}")),
        other => Error::Config(format!("{kind} `{name}`: {other}")),
    })
}

fn parse_exprs(what: &str, srcs: &[String]) -> Result<Vec<Expr>> {
    srcs.iter()
        .enumerate()
        .map(|(i, s)| parse(s).map_err(|e| Error::Config(format!("{what}, expression {i} `{s}`: {e}"))))
        .collect()
}

#[derive(Default)]
struct Resolved {
    spaces: BTreeMap<String, Arc<HybridPhaseSpace>>,
    products: BTreeMap<String, Product>,
    maps: BTreeMap<String, HyPhMap>,
    systems: BTreeMap<String, HybridDynamicalSystem>,
    subs: BTreeMap<String, Arc<HybridSubmersion>>,
    sub_products: BTreeMap<String, SubmersionProduct>,
    smaps: BTreeMap<String, SubmersionMap>,
    inters: BTreeMap<String, InterconnectionMap>,
    opens: BTreeMap<String, OpenSystem>,
    nets: BTreeMap<String, NetworkEntry>,
}

struct Loader<'a> {
    file: &'a ConfigFile,
    done: Resolved,
    busy: BTreeSet<(&'static str, String)>,
}

fn find<'a, T>(items: &'a [T], name: &str, key: impl Fn(&T) -> &str) -> Option<&'a T> {
    items.iter().find(|d| key(d) == name)
}

fn check_unique<T>(kind: &str, items: &[T], key: impl Fn(&T) -> &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for d in items {
        if !seen.insert(key(d)) {
            return Err(Error::Config(format!("{kind} `{}` is defined twice", key(d))));
        }
    }
    Ok(())
}

fn split_suffix(name: &str) -> Option<(&str, bool)> {
    if let Some(p) = name.strip_suffix(".tot") {
        Some((p, true))
    } else {
        name.strip_suffix(".st").map(|p| (p, false))
    }
}

impl<'a> Loader<'a> {
    fn enter(&mut self, kind: &'static str, name: &str) -> Result<()> {
        if !self.busy.insert((kind, name.to_string())) {
            return Err(Error::Config(format!("{kind} `{name}` refers to itself")));
        }
        Ok(())
    }

    fn leave(&mut self, kind: &'static str, name: &str) {
        self.busy.remove(&(kind, name.to_string()));
    }

    fn unknown(kind: &'static str, name: &str) -> Error {
        Error::Unknown {
            kind,
            name: name.to_string(),
        }
    }

    fn space(&mut self, name: &str) -> Result<Arc<HybridPhaseSpace>> {
        if let Some(a) = self.done.spaces.get(name) {
            return Ok(a.clone());
        }
        let a = if let Some(d) = find(&self.file.phase_spaces, name, |d| &d.name) {
            self.enter("phase space", name)?;
            let r = self.build_space(d);
            self.leave("phase space", name);
            in_ctx("phase space", name, r)?
        } else if let Some((sub, tot)) = split_suffix(name) {
            if find(&self.file.submersions, sub, |d| &d.name).is_none() {
                return Err(Self::unknown("phase space", name));
            }
            let s = self.submersion(sub)?;
            if tot {
                s.tot().clone()
            } else {
                s.st().clone()
            }
        } else {
            return Err(Self::unknown("phase space", name));
        };
        self.done.spaces.insert(name.to_string(), a.clone());
        Ok(a)
    }

    fn product_of(&mut self, name: &str) -> Result<Product> {
        self.space(name)?;
        if let Some(p) = self.done.products.get(name) {
            return Ok(p.clone());
        }
        if let Some((sub, tot)) = split_suffix(name) {
            if let Some(sp) = self.done.sub_products.get(sub) {
                return Ok(if tot { sp.tot.clone() } else { sp.st.clone() });
            }
        }
        Err(Error::Config(format!("phase space `{name}` is not declared as a product")))
    }

    fn build_space(&mut self, d: &SpaceDef) -> Result<Arc<HybridPhaseSpace>> {
        if let Some(fs) = &d.product {
            if !d.modes.is_empty() || !d.arrows.is_empty() {
                return Err(Error::Config("a product lists no modes or arrows of its own".into()));
            }
            let factors = fs.iter().map(|f| self.space(f)).collect::<Result<Vec<_>>>()?;
            let p = product(&factors);
            let a = p.space.clone();
            self.done.products.insert(d.name.clone(), p);
            return Ok(a);
        }
        let mut modes = Vec::with_capacity(d.modes.len());
        for md in &d.modes {
            let b = HyperBox::from_bounds(&md.bounds).map_err(|e| Error::Config(format!("mode `{}`: {e}", md.name)))?;
            modes.push(match &md.vars {
                Some(v) => Mode::with_vars(md.name.clone(), b, v.clone())?,
                None => Mode::new(md.name.clone(), b),
            });
        }
        let mut builder = HybridPhaseSpace::builder();
        for m in &modes {
            builder = builder.push_mode(m.clone());
        }
        for ad in &d.arrows {
            let mode = |n: &str| {
                modes
                    .iter()
                    .find(|m| m.name == n)
                    .ok_or_else(|| Error::Config(format!("arrow `{}`: unknown mode `{n}`", ad.name)))
            };
            let (src, dst) = (mode(&ad.src)?, mode(&ad.dst)?);
            let mut branches = vec![];
            for (bi, bd) in ad.branches.iter().enumerate() {
                let what = format!("arrow `{}` branch {bi}", ad.name);
                let mut sub = src.space.intervals().to_vec();
                for (var, spec) in &bd.guard {
                    let i = src
                        .vars
                        .iter()
                        .position(|v| v == var)
                        .ok_or_else(|| Error::Config(format!("{what}: unknown variable `{var}`")))?;
                    sub[i] = match *spec {
                        GuardSpec::Pin(v) => Interval::pin(v),
                        GuardSpec::Range((lo, hi)) => {
                            Interval::new(lo, hi).map_err(|e| Error::Config(format!("{what}: {e}")))?
                        }
                    };
                }
                let guard = Guard::new(&src.space, sub).map_err(|e| Error::Config(format!("{what}: {e}")))?;
                let map = match &bd.reset {
                    Some(outs) => SmoothFn::from_exprs(
                        src.space.clone(),
                        dst.space.clone(),
                        &src.vars,
                        parse_exprs(&format!("{what} reset"), outs)?,
                    )
                    .map_err(|e| Error::Config(format!("{what} reset: {e}")))?,
                    None => SmoothFn::identity(&src.space)
                        .with_boxes(src.space.clone(), dst.space.clone())
                        .map_err(|e| Error::Config(format!("{what}: default identity reset: {e}")))?,
                };
                branches.push(Branch { guard, map });
            }
            let rel = Relation::new(src.space.clone(), dst.space.clone(), branches)?;
            builder = builder.arrow(ad.name.clone(), &ad.src, &ad.dst, rel);
        }
        Ok(Arc::new(builder.build()?))
    }

    fn map(&mut self, name: &str) -> Result<HyPhMap> {
        if let Some(m) = self.done.maps.get(name) {
            return Ok(m.clone());
        }
        let d = find(&self.file.maps, name, |d| &d.name).ok_or_else(|| Self::unknown("map", name))?;
        self.enter("map", name)?;
        let r = self.build_map(d);
        self.leave("map", name);
        let m = in_ctx("map", name, r)?;
        self.done.maps.insert(name.to_string(), m.clone());
        Ok(m)
    }

    fn need<'b>(field: &'b Option<String>, what: &str) -> Result<&'b str> {
        field.as_deref().ok_or_else(|| Error::Config(format!("missing `{what}`")))
    }

    fn build_map(&mut self, d: &MapDef) -> Result<HyPhMap> {
        match d.kind {
            MapKind::Identity => Ok(HyPhMap::identity(&self.space(Self::need(&d.space, "space")?)?)),
            MapKind::Terminal => HyPhMap::to_terminal(&self.space(Self::need(&d.space, "space")?)?, &terminal()),
            MapKind::Projection => {
                let p = self.product_of(Self::need(&d.product, "product")?)?;
                let k = d.index.ok_or_else(|| Error::Config("missing `index`".into()))?;
                p.projections
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("product has no factor {k}")))
            }
            MapKind::Pair => {
                let p = self.product_of(Self::need(&d.product, "product")?)?;
                let parts = d.maps.iter().map(|m| self.map(m)).collect::<Result<Vec<_>>>()?;
                p.pair(&parts)
            }
            MapKind::Compose => {
                let mut it = d.maps.iter();
                let first = it.next().ok_or_else(|| Error::Config("`compose` needs at least one map".into()))?;
                let mut acc = self.map(first)?;
                for m in it {
                    acc = compose_map(&self.map(m)?, &acc)?;
                }
                Ok(acc)
            }
            MapKind::Explicit => self.build_explicit(d),
        }
    }

    fn build_explicit(&mut self, d: &MapDef) -> Result<HyPhMap> {
        let a = self.space(Self::need(&d.dom, "dom")?)?;
        let b = self.space(Self::need(&d.cod, "cod")?)?;
        for k in d.obj.keys().chain(d.comps.keys()) {
            a.mode_id(k)?;
        }
        for k in d.arr.keys() {
            a.arrow_id(k)?;
        }
        let mut obj = Vec::with_capacity(a.modes().len());
        for m in a.modes() {
            let y = match d.obj.get(&m.name) {
                Some(t) => b.mode_id(t)?,
                None if b.modes().len() == 1 => 0,
                None => b
                    .mode_id(&m.name)
                    .map_err(|_| Error::Config(format!("mode `{}` needs an image", m.name)))?,
            };
            obj.push(y);
        }
        let mut arr = Vec::with_capacity(a.arrows().len());
        for g in a.arrows() {
            let (s, t) = (obj[g.src], obj[g.dst]);
            let path = match d.arr.get(&g.name) {
                Some(names) => {
                    let names: Vec<&str> = names.iter().map(String::as_str).collect();
                    b.path_from_names(s, &names)?
                }
                None => match b.arrow_id(&g.name) {
                    Ok(h) if b.arrow(h).src == s && b.arrow(h).dst == t => b.single(h),
                    _ if s == t => crate::hyph::Path::identity(s),
                    _ => return Err(Error::Config(format!("arrow `{}` needs an image", g.name))),
                },
            };
            arr.push(path);
        }
        let mut comps = Vec::with_capacity(a.modes().len());
        for (i, m) in a.modes().iter().enumerate() {
            let target = b.space(obj[i]).clone();
            let c = match d.comps.get(&m.name) {
                Some(outs) => SmoothFn::from_exprs(
                    m.space.clone(),
                    target,
                    &m.vars,
                    parse_exprs(&format!("component at `{}`", m.name), outs)?,
                )
                .map_err(|e| Error::Config(format!("component at `{}`: {e}", m.name)))?,
                None => SmoothFn::identity(&m.space)
                    .with_boxes(m.space.clone(), target)
                    .map_err(|e| Error::Config(format!("component at `{}` needs expressions: {e}", m.name)))?,
            };
            comps.push(c);
        }
        HyPhMap::new(a, b, obj, arr, comps)
    }

    fn system(&mut self, name: &str) -> Result<HybridDynamicalSystem> {
        if let Some(s) = self.done.systems.get(name) {
            return Ok(s.clone());
        }
        let d = find(&self.file.systems, name, |d| &d.name).ok_or_else(|| Self::unknown("system", name))?;
        self.enter("system", name)?;
        let r = self.build_system(d);
        self.leave("system", name);
        let s = in_ctx("system", name, r)?;
        self.done.systems.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn build_system(&mut self, d: &SystemDef) -> Result<HybridDynamicalSystem> {
        if let Some(parts) = &d.product {
            if !d.field.is_empty() {
                return Err(Error::Config("a product system lists no field of its own".into()));
            }
            let hs = parts.iter().map(|p| self.system(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&HybridDynamicalSystem> = hs.iter().collect();
            let (h, _) = product_system(&refs);
            return match &d.space {
                Some(s) => {
                    let a = self.space(s)?;
                    if !a.same_shape(h.space()) {
                        return Err(Error::Config(format!("phase space `{s}` is not the product of the factors")));
                    }
                    HybridDynamicalSystem::new(a, h.fields().to_vec())
                }
                None => Ok(h),
            };
        }
        let a = self.space(Self::need(&d.space, "space")?)?;
        for k in d.field.keys() {
            a.mode_id(k)?;
        }
        let field = a
            .modes()
            .iter()
            .map(|m| {
                let outs = d
                    .field
                    .get(&m.name)
                    .ok_or_else(|| Error::Config(format!("no field on mode `{}`", m.name)))?;
                let what = format!("field on `{}`", m.name);
                SmoothFn::from_exprs(m.space.clone(), HyperBox::real_space(m.space.dim()), &m.vars, parse_exprs(&what, outs)?)
                    .map_err(|e| Error::Config(format!("{what}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        HybridDynamicalSystem::new(a, field)
    }

    fn submersion(&mut self, name: &str) -> Result<Arc<HybridSubmersion>> {
        if let Some(s) = self.done.subs.get(name) {
            return Ok(s.clone());
        }
        let d = find(&self.file.submersions, name, |d| &d.name).ok_or_else(|| Self::unknown("submersion", name))?;
        self.enter("submersion", name)?;
        let r = self.build_submersion(d);
        self.leave("submersion", name);
        let s = in_ctx("submersion", name, r)?;
        self.done.subs.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn build_submersion(&mut self, d: &SubmersionDef) -> Result<Arc<HybridSubmersion>> {
        let given = [d.identity.is_some(), d.projection.is_some(), d.product.is_some(), d.map.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Error::Config(
                "give exactly one of `identity`, `projection`, `product`, `map`".into(),
            ));
        }
        if let Some(s) = &d.identity {
            return Ok(Arc::new(HybridSubmersion::identity(&self.space(s)?)));
        }
        if let Some(p) = &d.projection {
            let prod = self.product_of(&p.product)?;
            if p.index >= prod.factors.len() {
                return Err(Error::Config(format!("product has no factor {}", p.index)));
            }
            return Ok(Arc::new(HybridSubmersion::projection(&prod, p.index)));
        }
        if let Some(parts) = &d.product {
            let subs = parts.iter().map(|s| self.submersion(s)).collect::<Result<Vec<_>>>()?;
            let sp = submersion_product(&subs)?;
            let s = sp.sub.clone();
            self.done.sub_products.insert(d.name.clone(), sp);
            return Ok(s);
        }
        let m = self.map(d.map.as_deref().expect("checked above"))?;
        Ok(Arc::new(HybridSubmersion::new(m)?))
    }

    fn submersion_map(&mut self, name: &str) -> Result<SubmersionMap> {
        if let Some(s) = self.done.smaps.get(name) {
            return Ok(s.clone());
        }
        let d = find(&self.file.submersion_maps, name, |d| &d.name)
            .ok_or_else(|| Self::unknown("submersion map", name))?;
        self.enter("submersion map", name)?;
        let r = (|| {
            if let Some(s) = &d.identity {
                return Ok(SubmersionMap::identity(&self.submersion(s)?));
            }
            let dom = self.submersion(Self::need(&d.dom, "dom")?)?;
            let cod = self.submersion(Self::need(&d.cod, "cod")?)?;
            let tot = self.map(Self::need(&d.tot, "tot")?)?;
            let st = self.map(Self::need(&d.st, "st")?)?;
            SubmersionMap::new(dom, cod, tot, st)
        })();
        self.leave("submersion map", name);
        let s = in_ctx("submersion map", name, r)?;
        self.done.smaps.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn interconnection(&mut self, name: &str) -> Result<InterconnectionMap> {
        if let Some(s) = self.done.inters.get(name) {
            return Ok(s.clone());
        }
        let d = find(&self.file.interconnections, name, |d| &d.name)
            .ok_or_else(|| Self::unknown("interconnection", name))?;
        self.enter("interconnection", name)?;
        let r = (|| {
            let m = self.submersion_map(&d.map)?;
            let inv = d.st_inverse.as_deref().map(|n| self.map(n)).transpose()?;
            InterconnectionMap::new(m, inv)
        })();
        self.leave("interconnection", name);
        let s = in_ctx("interconnection", name, r)?;
        self.done.inters.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn open_system(&mut self, name: &str) -> Result<OpenSystem> {
        if let Some(s) = self.done.opens.get(name) {
            return Ok(s.clone());
        }
        let d = find(&self.file.open_systems, name, |d| &d.name).ok_or_else(|| Self::unknown("open system", name))?;
        self.enter("open system", name)?;
        let r = self.build_open(d);
        self.leave("open system", name);
        let s = in_ctx("open system", name, r)?;
        self.done.opens.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn build_open(&mut self, d: &OpenSystemDef) -> Result<OpenSystem> {
        let given = [d.submersion.is_some(), d.product.is_some(), d.pullback.is_some(), d.closed.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Error::Config(
                "give exactly one of `submersion`, `product`, `pullback`, `closed`".into(),
            ));
        }
        if let Some(parts) = &d.product {
            let os = parts.iter().map(|p| self.open_system(p)).collect::<Result<Vec<_>>>()?;
            let sp = submersion_product(&os.iter().map(|o| o.carrier().clone()).collect::<Vec<_>>())?;
            return crl_product(&sp, &os.iter().collect::<Vec<_>>());
        }
        if let Some(pb) = &d.pullback {
            let psi = self.interconnection(&pb.interconnection)?;
            let g = self.open_system(&pb.system)?;
            return pullback(&psi, &g);
        }
        if let Some(s) = &d.closed {
            return Ok(OpenSystem::from_system(&self.system(s)?));
        }
        let sub = self.submersion(d.submersion.as_deref().expect("checked above"))?;
        let tot = sub.tot().clone();
        for k in d.field.keys() {
            tot.mode_id(k)?;
        }
        let field = tot
            .modes()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let outs = d
                    .field
                    .get(&m.name)
                    .ok_or_else(|| Error::Config(format!("no field on mode `{}`", m.name)))?;
                let what = format!("field on `{}`", m.name);
                SmoothFn::from_exprs(m.space.clone(), HyperBox::real_space(sub.st_dim(i)), &m.vars, parse_exprs(&what, outs)?)
                    .map_err(|e| Error::Config(format!("{what}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        OpenSystem::new(sub, field)
    }

    fn network(&mut self, name: &str) -> Result<NetworkEntry> {
        if let Some(n) = self.done.nets.get(name) {
            return Ok(n.clone());
        }
        let d = find(&self.file.networks, name, |d| &d.name).ok_or_else(|| Self::unknown("network", name))?;
        let r = (|| {
            let tau = d.tau.iter().map(|t| self.submersion(t)).collect::<Result<Vec<_>>>()?;
            let psi = self.interconnection(&d.psi)?;
            let network = Network::new(d.nodes.clone(), tau, psi)?;
            if !d.systems.is_empty() {
                if d.systems.len() != d.nodes.len() {
                    return Err(Error::Config(format!(
                        "{} open systems for {} nodes",
                        d.systems.len(),
                        d.nodes.len()
                    )));
                }
                for (node, s) in d.nodes.iter().zip(&d.systems) {
                    let o = self.open_system(s)?;
                    let k = network.node_index(node)?;
                    if !o.carrier().tot().same_shape(network.tau[k].tot()) {
                        return Err(Error::Config(format!("open system `{s}` does not sit on node `{node}`")));
                    }
                }
            }
            Ok(NetworkEntry {
                network,
                systems: d.systems.clone(),
            })
        })();
        let n = in_ctx("network", name, r)?;
        self.done.nets.insert(name.to_string(), n.clone());
        Ok(n)
    }

    fn network_map(&mut self, d: &NetworkMapDef) -> Result<NetworkMapEntry> {
        let r = (|| {
            let src = self.network(&d.src)?.network;
            let dst = self.network(&d.dst)?.network;
            for k in d.phi.keys().chain(d.components.keys()) {
                src.node_index(k)?;
            }
            let mut phi = vec![];
            let mut maps = vec![];
            for x in &src.nodes {
                let y = d
                    .phi
                    .get(x)
                    .ok_or_else(|| Error::Config(format!("node `{x}` has no image")))?;
                phi.push(dst.node_index(y)?);
                let c = d
                    .components
                    .get(x)
                    .ok_or_else(|| Error::Config(format!("node `{x}` has no component map")))?;
                maps.push(self.submersion_map(c)?);
            }
            let f = self.submersion_map(&d.f)?;
            Ok(NetworkMapEntry {
                map: NetworkMap::new(&src, &dst, phi, maps, f)?,
                src: d.src.clone(),
                dst: d.dst.clone(),
            })
        })();
        in_ctx("network map", &d.name, r)
    }

    fn simulation(&mut self, d: &SimulationDef) -> Result<SimulationEntry> {
        let r = (|| {
            let h = self.system(&d.system)?;
            let init = parse_init(h.space(), &d.init, 1e-9)?;
            let mut config = SimConfig::default();
            if let Some(v) = d.step {
                config.step = v;
            }
            if let Some(v) = d.t_max {
                config.t_max = v;
            }
            if let Some(v) = d.max_jumps {
                config.max_jumps = v;
            }
            if let Some(v) = d.event_tol {
                config.event_tol = v;
            }
            if let Some(v) = d.guard_tol {
                config.guard_tol = v;
            }
            if let Some(v) = d.chain_depth {
                config.chain_depth = v;
            }
            if let Some(i) = &d.integrator {
                config.integrator = i.parse::<Integrator>()?;
            }
            config.check()?;
            let policy = JumpPolicy::parse(d.policy.as_deref().unwrap_or("priority"), d.seed.unwrap_or(0))?;
            Ok(SimulationEntry {
                system: d.system.clone(),
                init,
                policy,
                config,
            })
        })();
        in_ctx("simulation", &d.name, r)
    }
}

/// Resolves every declaration of a parsed file.
pub fn resolve(file: &ConfigFile) -> Result<Document> {
    if file.version != CONFIG_VERSION {
        return Err(Error::Config(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            file.version
        )));
    }
    check_unique("phase space", &file.phase_spaces, |d| &d.name)?;
    check_unique("map", &file.maps, |d| &d.name)?;
    check_unique("system", &file.systems, |d| &d.name)?;
    check_unique("submersion", &file.submersions, |d| &d.name)?;
    check_unique("submersion map", &file.submersion_maps, |d| &d.name)?;
    check_unique("interconnection", &file.interconnections, |d| &d.name)?;
    check_unique("open system", &file.open_systems, |d| &d.name)?;
    check_unique("network", &file.networks, |d| &d.name)?;
    check_unique("network map", &file.network_maps, |d| &d.name)?;
    check_unique("simulation", &file.simulations, |d| &d.name)?;
    let mut l = Loader {
        file,
        done: Resolved::default(),
        busy: BTreeSet::new(),
    };
    let mut doc = Document::default();
    for d in &file.phase_spaces {
        doc.spaces.push(named(&d.name, l.space(&d.name)?));
    }
    for d in &file.maps {
        doc.maps.push(named(&d.name, l.map(&d.name)?));
    }
    for d in &file.systems {
        doc.systems.push(named(&d.name, l.system(&d.name)?));
    }
    for d in &file.submersions {
        doc.submersions.push(named(&d.name, l.submersion(&d.name)?));
    }
    for d in &file.submersion_maps {
        doc.submersion_maps.push(named(&d.name, l.submersion_map(&d.name)?));
    }
    for d in &file.interconnections {
        doc.interconnections.push(named(&d.name, l.interconnection(&d.name)?));
    }
    for d in &file.open_systems {
        doc.open_systems.push(named(&d.name, l.open_system(&d.name)?));
    }
    for d in &file.networks {
        doc.networks.push(named(&d.name, l.network(&d.name)?));
    }
    for d in &file.network_maps {
        doc.network_maps.push(named(&d.name, l.network_map(d)?));
    }
    for d in &file.simulations {
        doc.simulations.push(named(&d.name, l.simulation(d)?));
    }
    Ok(doc)
}

// ---------- export ----------

struct Exporter {
    file: ConfigFile,
    spaces: Vec<(String, Arc<HybridPhaseSpace>)>,
    subs: Vec<(String, Arc<HybridSubmersion>)>,
    used: BTreeSet<String>,
}

fn same_submersion(a: &HybridSubmersion, b: &HybridSubmersion) -> bool {
    a.tot().same_shape(b.tot())
        && a.st().same_shape(b.st())
        && a.p().obj() == b.p().obj()
        && a.p().arr().iter().zip(b.p().arr()).all(|(x, y)| x == y)
        && a.p()
            .comps()
            .iter()
            .zip(b.p().comps())
            .all(|(x, y)| x.projection_coords() == y.projection_coords())
}

fn exprs_of(f: &SmoothFn, vars: &[String], what: &str) -> Result<Vec<String>> {
    f.to_exprs(vars)
        .map(|es| es.iter().map(|e| e.to_string()).collect())
        .ok_or_else(|| Error::Config(format!("{what} has no expression form and cannot be exported")))
}

impl Exporter {
    fn fresh(&mut self, hint: &str) -> String {
        let mut name = hint.to_string();
        let mut k = 2;
        while self.used.contains(&name) {
            name = format!("{hint}.{k}");
            k += 1;
        }
        self.used.insert(name.clone());
        name
    }

    fn space_ref(&mut self, a: &Arc<HybridPhaseSpace>, hint: &str) -> Result<String> {
        if let Some((n, _)) = self.spaces.iter().find(|(_, b)| Arc::ptr_eq(a, b)) {
            return Ok(n.clone());
        }
        if let Some((n, _)) = self.spaces.iter().find(|(_, b)| a.same_shape(b)) {
            return Ok(n.clone());
        }
        let name = self.fresh(hint);
        self.write_space(&name, a)?;
        Ok(name)
    }

    fn write_space(&mut self, name: &str, a: &Arc<HybridPhaseSpace>) -> Result<()> {
        self.spaces.push((name.to_string(), a.clone()));
        let modes = a
            .modes()
            .iter()
            .map(|m| ModeDef {
                name: m.name.clone(),
                vars: Some(m.vars.clone()),
                bounds: m.space.intervals().iter().map(|i| (i.lo, i.hi)).collect(),
            })
            .collect();
        let mut arrows = vec![];
        for g in a.arrows() {
            let src = a.mode(g.src);
            let mut branches = vec![];
            for (bi, br) in g.rel.branches().iter().enumerate() {
                let what = format!("phase space `{name}` arrow `{}` branch {bi}", g.name);
                if !br.guard.lazy_constraints().is_empty() {
                    return Err(Error::Config(format!("{what} has a non-box guard and cannot be exported")));
                }
                let mut guard = BTreeMap::new();
                for (i, (iv, full)) in br.guard.intervals().iter().zip(src.space.intervals()).enumerate() {
                    if iv == full {
                        continue;
                    }
                    let spec = if iv.is_degenerate() {
                        GuardSpec::Pin(iv.lo)
                    } else {
                        GuardSpec::Range((iv.lo, iv.hi))
                    };
                    guard.insert(src.vars[i].clone(), spec);
                }
                branches.push(BranchDef {
                    guard,
                    reset: Some(exprs_of(&br.map, &src.vars, &what)?),
                });
            }
            arrows.push(ArrowDef {
                name: g.name.clone(),
                src: src.name.clone(),
                dst: a.mode(g.dst).name.clone(),
                branches,
            });
        }
        self.file.phase_spaces.push(SpaceDef {
            name: name.to_string(),
            product: None,
            modes,
            arrows,
        });
        Ok(())
    }

    fn map_def(&mut self, name: &str, f: &HyPhMap) -> Result<MapDef> {
        let dom = self.space_ref(f.dom(), &format!("{name}.dom"))?;
        let cod = self.space_ref(f.cod(), &format!("{name}.cod"))?;
        let (a, b) = (f.dom(), f.cod());
        let obj = a
            .modes()
            .iter()
            .zip(f.obj())
            .map(|(m, &y)| (m.name.clone(), b.mode(y).name.clone()))
            .collect();
        let arr = a
            .arrows()
            .iter()
            .zip(f.arr())
            .map(|(g, p)| (g.name.clone(), p.arrows.iter().map(|&h| b.arrow(h).name.clone()).collect()))
            .collect();
        let comps = a
            .modes()
            .iter()
            .zip(f.comps())
            .map(|(m, c)| Ok((m.name.clone(), exprs_of(c, &m.vars, &format!("map `{name}` at `{}`", m.name))?)))
            .collect::<Result<_>>()?;
        Ok(MapDef {
            name: name.to_string(),
            dom: Some(dom),
            cod: Some(cod),
            obj,
            arr,
            comps,
            ..MapDef::default()
        })
    }

    fn write_map(&mut self, name: &str, f: &HyPhMap) -> Result<()> {
        let def = self.map_def(name, f)?;
        self.file.maps.push(def);
        Ok(())
    }

    /// Name of an identical map already written, or of a new one.
    fn map_ref(&mut self, f: &HyPhMap, hint: &str) -> Result<String> {
        let def = self.map_def("", f)?;
        if let Some(m) = self.file.maps.iter().find(|m| MapDef { name: String::new(), ..(*m).clone() } == def) {
            return Ok(m.name.clone());
        }
        let name = self.fresh(hint);
        self.file.maps.push(MapDef { name: name.clone(), ..def });
        Ok(name)
    }

    fn sub_ref(&mut self, s: &Arc<HybridSubmersion>, hint: &str) -> Result<String> {
        if let Some((n, _)) = self.subs.iter().find(|(_, t)| Arc::ptr_eq(s, t)) {
            return Ok(n.clone());
        }
        if let Some((n, _)) = self.subs.iter().find(|(_, t)| same_submersion(s, t)) {
            return Ok(n.clone());
        }
        let name = self.fresh(hint);
        self.write_sub(&name, s)?;
        Ok(name)
    }

    fn write_sub(&mut self, name: &str, s: &Arc<HybridSubmersion>) -> Result<()> {
        self.subs.push((name.to_string(), s.clone()));
        let p = self.map_ref(s.p(), &format!("{name}.p"))?;
        self.file.submersions.push(SubmersionDef {
            name: name.to_string(),
            map: Some(p),
            ..SubmersionDef::default()
        });
        Ok(())
    }

    fn smap_def(&mut self, name: &str, m: &SubmersionMap) -> Result<SubmersionMapDef> {
        Ok(SubmersionMapDef {
            name: name.to_string(),
            dom: Some(self.sub_ref(&m.dom, &format!("{name}.dom"))?),
            cod: Some(self.sub_ref(&m.cod, &format!("{name}.cod"))?),
            tot: Some(self.map_ref(&m.tot, &format!("{name}.tot"))?),
            st: Some(self.map_ref(&m.st, &format!("{name}.st"))?),
            ..SubmersionMapDef::default()
        })
    }

    fn write_smap(&mut self, name: &str, m: &SubmersionMap) -> Result<()> {
        let def = self.smap_def(name, m)?;
        self.file.submersion_maps.push(def);
        Ok(())
    }

    fn smap_ref(&mut self, m: &SubmersionMap, hint: &str) -> Result<String> {
        let def = self.smap_def(hint, m)?;
        let blank = |d: &SubmersionMapDef| SubmersionMapDef { name: String::new(), ..d.clone() };
        if let Some(d) = self.file.submersion_maps.iter().find(|d| blank(d) == blank(&def)) {
            return Ok(d.name.clone());
        }
        let name = self.fresh(hint);
        self.file.submersion_maps.push(SubmersionMapDef { name: name.clone(), ..def });
        Ok(name)
    }

    fn inter_def(&mut self, name: &str, psi: &InterconnectionMap) -> Result<InterconnectionDef> {
        let map = self.smap_ref(&psi.map, &format!("{name}.map"))?;
        let st_inverse = match &psi.st_inverse {
            Some(inv) => Some(self.map_ref(inv, &format!("{name}.inverse"))?),
            None => None,
        };
        Ok(InterconnectionDef {
            name: name.to_string(),
            map,
            st_inverse,
        })
    }

    fn write_inter(&mut self, name: &str, psi: &InterconnectionMap) -> Result<()> {
        let def = self.inter_def(name, psi)?;
        self.file.interconnections.push(def);
        Ok(())
    }

    fn inter_ref(&mut self, psi: &InterconnectionMap, hint: &str) -> Result<String> {
        let def = self.inter_def(hint, psi)?;
        let blank = |d: &InterconnectionDef| InterconnectionDef { name: String::new(), ..d.clone() };
        if let Some(d) = self.file.interconnections.iter().find(|d| blank(d) == blank(&def)) {
            return Ok(d.name.clone());
        }
        let name = self.fresh(hint);
        self.file.interconnections.push(InterconnectionDef { name: name.clone(), ..def });
        Ok(name)
    }

    fn write_open(&mut self, name: &str, o: &OpenSystem) -> Result<()> {
        let sub = self.sub_ref(o.carrier(), &format!("{name}.carrier"))?;
        let tot = o.carrier().tot();
        let field = tot
            .modes()
            .iter()
            .zip(o.fields())
            .map(|(m, f)| Ok((m.name.clone(), exprs_of(f, &m.vars, &format!("open system `{name}` at `{}`", m.name))?)))
            .collect::<Result<_>>()?;
        self.file.open_systems.push(OpenSystemDef {
            name: name.to_string(),
            submersion: Some(sub),
            field,
            ..OpenSystemDef::default()
        });
        Ok(())
    }
}

/// Writes every object of a document in explicit form.
pub fn export(doc: &Document) -> Result<ConfigFile> {
    let mut ex = Exporter {
        file: ConfigFile {
            version: CONFIG_VERSION,
            ..ConfigFile::default()
        },
        spaces: vec![],
        subs: vec![],
        used: BTreeSet::new(),
    };
    let all_names = doc
        .spaces
        .iter()
        .map(|n| &n.name)
        .chain(doc.maps.iter().map(|n| &n.name))
        .chain(doc.systems.iter().map(|n| &n.name))
        .chain(doc.submersions.iter().map(|n| &n.name))
        .chain(doc.submersion_maps.iter().map(|n| &n.name))
        .chain(doc.interconnections.iter().map(|n| &n.name))
        .chain(doc.open_systems.iter().map(|n| &n.name))
        .chain(doc.networks.iter().map(|n| &n.name))
        .chain(doc.network_maps.iter().map(|n| &n.name))
        .chain(doc.simulations.iter().map(|n| &n.name));
    ex.used.extend(all_names.cloned());
    for n in &doc.spaces {
        ex.write_space(&n.name, &n.value)?;
    }
    for n in &doc.maps {
        ex.write_map(&n.name, &n.value)?;
    }
    for n in &doc.submersions {
        ex.write_sub(&n.name, &n.value)?;
    }
    for n in &doc.systems {
        let h = &n.value;
        let space = ex.space_ref(h.space(), &format!("{}.space", n.name))?;
        let field = h
            .space()
            .modes()
            .iter()
            .zip(h.fields())
            .map(|(m, f)| Ok((m.name.clone(), exprs_of(f, &m.vars, &format!("system `{}` at `{}`", n.name, m.name))?)))
            .collect::<Result<_>>()?;
        ex.file.systems.push(SystemDef {
            name: n.name.clone(),
            space: Some(space),
            field,
            product: None,
        });
    }
    for n in &doc.submersion_maps {
        ex.write_smap(&n.name, &n.value)?;
    }
    for n in &doc.interconnections {
        ex.write_inter(&n.name, &n.value)?;
    }
    for n in &doc.open_systems {
        ex.write_open(&n.name, &n.value)?;
    }
    for n in &doc.networks {
        let net = &n.value.network;
        let tau = net
            .tau
            .iter()
            .zip(&net.nodes)
            .map(|(t, node)| ex.sub_ref(t, &format!("{}.node.{node}", n.name)))
            .collect::<Result<Vec<_>>>()?;
        let psi = ex.inter_ref(&net.psi, &format!("{}.psi", n.name))?;
        ex.file.networks.push(NetworkDef {
            name: n.name.clone(),
            nodes: net.nodes.clone(),
            tau,
            psi,
            systems: n.value.systems.clone(),
        });
    }
    for n in &doc.network_maps {
        let e = &n.value;
        let src = doc.network(&e.src)?;
        let dst = doc.network(&e.dst)?;
        let mut phi = BTreeMap::new();
        let mut components = BTreeMap::new();
        for (x, node) in src.network.nodes.iter().enumerate() {
            phi.insert(node.clone(), dst.network.nodes[e.map.phi[x]].clone());
            let c = ex.smap_ref(&e.map.maps[x], &format!("{}.component.{node}", n.name))?;
            components.insert(node.clone(), c);
        }
        let f = ex.smap_ref(&e.map.f, &format!("{}.f", n.name))?;
        ex.file.network_maps.push(NetworkMapDef {
            name: n.name.clone(),
            src: e.src.clone(),
            dst: e.dst.clone(),
            phi,
            components,
            f,
        });
    }
    for n in &doc.simulations {
        let s = &n.value;
        let h = doc.system(&s.system)?;
        let coords: Vec<String> = s.init.point.iter().map(|c| format!("{c}")).collect();
        let (policy, seed) = match s.policy {
            JumpPolicy::Priority => ("priority", None),
            JumpPolicy::FirstEnabled => ("first-enabled", None),
            JumpPolicy::SeededRandom(k) => ("seeded-random", Some(k)),
        };
        ex.file.simulations.push(SimulationDef {
            name: n.name.clone(),
            system: s.system.clone(),
            init: format!("{}:{}", h.space().mode(s.init.mode).name, coords.join(",")),
            step: Some(s.config.step),
            t_max: Some(s.config.t_max),
            max_jumps: Some(s.config.max_jumps),
            event_tol: Some(s.config.event_tol),
            guard_tol: Some(s.config.guard_tol),
            chain_depth: Some(s.config.chain_depth),
            integrator: Some(s.config.integrator.to_string()),
            policy: Some(policy.to_string()),
            seed,
        });
    }
    Ok(ex.file)
}

pub fn to_toml(doc: &Document) -> Result<String> {
    let file = export(doc)?;
    toml::to_string(&file).map_err(|e| Error::Config(format!("serializing config: {e}")))
}
