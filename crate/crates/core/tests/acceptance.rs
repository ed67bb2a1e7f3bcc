//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails.

use std::collections::BTreeSet;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hycomp::corpus::{self, Parts};
use hycomp::geometry::{HyperBox, SmoothFn};
use hycomp::hyds::{check_hds_map, product_system, pushforward_execution, validate_execution, HybridDynamicalSystem};
use hycomp::hyph::{compose_map, product, terminal, HyPhMap, HybridPhaseSpace, Mode, UnderlyingPoint};
use hycomp::network::{apply_interconnection, induced_system_map, pi_map, Network, NetworkMap};
use hycomp::opensys::{
    crl_related, pullback, submersion_product, HybridSubmersion, InterconnectionMap, OpenSystem, SubmersionMap,
};
use hycomp::relation::{Guard, Relation};
use hycomp::simulate::{simulate, JumpPolicy, SimConfig, Status};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("thermostat jump times", c1_thermostat),
        ("two-room product counts", c2_two_rooms),
        ("product of maps over a node map", c3_pi_construction),
        ("interconnection semantics", c4_interconnection),
        ("three-node network semantics", c5_network),
        ("system maps send executions to executions", c6_executions),
        ("network maps relate interconnected systems", c7_network_maps),
        ("pullbacks along interconnection squares", c8_squares),
        ("diagonal invariance through jumps", c9_diagonal),
        ("analytic and numerical derivatives", c10_numerics),
        ("reproducible traces", c11_reproducible),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}; {secs:.2}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn plain(dim: usize) -> Arc<HybridPhaseSpace> {
    Arc::new(
        HybridPhaseSpace::builder()
            .push_mode(Mode::new("m", HyperBox::real_space(dim)))
            .build()
            .expect("one mode"),
    )
}

fn exprs_fn(dom: &HyperBox, cod: HyperBox, vars: &[String], outs: &[String]) -> SmoothFn {
    let es = outs.iter().map(|s| hycomp::expr::parse(s).expect("generated expression parses")).collect();
    SmoothFn::from_exprs(dom.clone(), cod, vars, es).expect("generated map")
}

// 1 ----------------------------------------------------------------------

fn c1_thermostat() -> Outcome {
    let h = corpus::thermostat();
    let sp = h.space();
    let init = UnderlyingPoint::new(sp, sp.mode_id("off").map_err(e2s)?, vec![1.0], 0.0).map_err(e2s)?;
    let cfg = SimConfig {
        step: 1e-3,
        t_max: 10.5,
        ..SimConfig::default()
    };
    let s = simulate(&h, &init, JumpPolicy::Priority, &cfg).map_err(e2s)?;
    let times = s.execution.jump_times();
    ensure(times.len() >= 10, || format!("only {} jumps", times.len()))?;
    let mut worst: f64 = 0.0;
    for (k, t) in times.iter().take(10).enumerate() {
        // from x = 1 the room cools for one unit, then each leg takes one unit
        let want = (k + 1) as f64;
        worst = worst.max((t - want).abs());
    }
    ensure(worst <= 1e-6, || format!("jump time off by {worst:.3e}"))?;
    let modes = s.execution.modes();
    ensure(modes.windows(2).all(|w| w[0] != w[1]), || "modes do not alternate".into())?;
    Ok(format!("max jump-time error {worst:.2e}"))
}

// 2 ----------------------------------------------------------------------

fn c2_two_rooms() -> Outcome {
    let t = Arc::new(corpus::thermostat_space());
    let p = product(&[t.clone(), t.clone()]);
    let a = &p.space;
    ensure(a.modes().len() == 4, || format!("{} modes", a.modes().len()))?;
    ensure(a.arrows().len() == 8, || format!("{} arrows", a.arrows().len()))?;

    // Oracle: each generator moves one room along f or g. A room that has
    // jumped sits at its landing value; a second jump in that room needs its
    // guard pin to equal that value.
    let pins: Vec<(usize, usize, f64)> = t
        .arrows()
        .iter()
        .map(|g| (g.src, g.dst, g.rel.branches()[0].guard.intervals()[0].lo))
        .collect();
    let mut oracle = BTreeSet::new();
    for m0 in [0, 1] {
        for m1 in [0, 1] {
            let start = [m0, m1];
            let mut frontier = vec![(start, [None::<f64>; 2])];
            for _ in 0..2 {
                let mut next = vec![];
                for (at, landed) in &frontier {
                    for k in 0..2 {
                        for &(s, d, pin) in &pins {
                            if at[k] != s || landed[k].is_some_and(|v| v != pin) {
                                continue;
                            }
                            let mut to = *at;
                            to[k] = d;
                            let mut l = *landed;
                            l[k] = Some(pin);
                            oracle.insert((start, to));
                            next.push((to, l));
                        }
                    }
                }
                frontier = next;
            }
        }
    }
    let got: BTreeSet<_> = a
        .connected_pairs(2)
        .into_iter()
        .map(|(x, y)| {
            let (tx, ty) = (p.mode_tuple(x), p.mode_tuple(y));
            ([tx[0], tx[1]], [ty[0], ty[1]])
        })
        .collect();
    ensure(oracle.len() == 12, || format!("oracle counts {}", oracle.len()))?;
    ensure(got == oracle, || format!("library finds {} pairs, oracle 12", got.len()))?;
    Ok("4 modes, 8 generators, 12 connected pairs".into())
}

// 3 ----------------------------------------------------------------------

fn c3_pi_construction() -> Outcome {
    let p = corpus::parts().map_err(e2s)?;
    let m3 = product(&[p.m.clone(), p.m.clone(), p.m.clone()]);
    let u3 = product(&[p.u.clone(), p.u.clone(), p.u.clone()]);
    let phi = [1usize, 0, 1];
    let maps = vec![p.s.clone(), p.s.clone(), p.s.clone()];
    let big = pi_map(&phi, &maps, &m3, &u3).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let modes: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
        let a: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let i = m3.mode_index(&modes);
        let out = big.comp(i).eval(&a);
        // s reads the temperature, so the image is (a₂, a₁, a₂)
        let want = [a[1], a[0], a[1]];
        ensure(out == want, || format!("at {a:?} got {out:?}, expected {want:?}"))?;
        ensure(big.obj()[i] == 0, || "image mode is not the single mode of u³".into())?;
    }
    Ok("100 triples, exact".into())
}

// 4 ----------------------------------------------------------------------

fn c4_interconnection() -> Outcome {
    // (φ*F)(m) = F(h(m), m) with φ_tot = (h, id), φ_st = id on N × M → M
    let p = corpus::parts().map_err(e2s)?;
    let um = hycomp::hyph::product2(&p.u, &p.m);
    let carrier = Arc::new(HybridSubmersion::projection(&um, 1));
    let field = um
        .space
        .modes()
        .iter()
        .map(|md| {
            let sign = if md.name.ends_with("off)") { "-1" } else { "1" };
            exprs_fn(&md.space, HyperBox::real_space(1), &md.vars, &[format!("{sign} + 0.3*v*x - 0.2*sin(v)")])
        })
        .collect();
    let big_f = OpenSystem::new(carrier.clone(), field).map_err(e2s)?;
    let tot = um.pair(&[p.s.clone(), HyPhMap::identity(&p.m)]).map_err(e2s)?;
    let base = Arc::new(HybridSubmersion::identity(&p.m));
    let phi = InterconnectionMap::new(
        SubmersionMap::new(base, carrier, tot.clone(), HyPhMap::identity(&p.m)).map_err(e2s)?,
        None,
    )
    .map_err(e2s)?;
    let pulled = pullback(&phi, &big_f).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let m = rng.gen_range(0..2);
        let x = rng.gen::<f64>();
        let got = pulled.field(m).eval(&[x]);
        let want = big_f.field(tot.obj()[m]).eval(&[x, x]);
        ensure(got == want, || format!("(φ*F) at {x}: {got:?} vs {want:?}"))?;
    }

    // φ*(X₁ × X₂) = (X₁, X₂) along the diagonal, and the closed system of
    // the product-as-network equals the direct field
    let (net, [x1, x2], prod) = corpus::product_as_network().map_err(e2s)?;
    let closed = apply_interconnection(&net, &[&x1, &x2]).map_err(e2s)?;
    let direct = corpus::coupled_rooms(&prod).map_err(e2s)?;
    for _ in 0..100 {
        let i = rng.gen_range(0..prod.space.modes().len());
        let q = [rng.gen::<f64>(), rng.gen::<f64>()];
        let got = closed.field(i).eval(&q);
        let mut want = x1.field(i).eval(&q);
        want.extend(x2.field(i).eval(&q));
        ensure(got == want, || format!("φ*(X₁×X₂) at {q:?}: {got:?} vs {want:?}"))?;
        let d = direct.field(i).eval(&q);
        ensure(got == d, || format!("network field {got:?} vs direct {d:?}"))?;
    }
    Ok("300 points, exact".into())
}

// 5 ----------------------------------------------------------------------

fn mu_mode(p: &Parts, m_mode: usize) -> usize {
    p.mu_prod.mode_index(&[m_mode, 0])
}

fn c5_network() -> Outcome {
    let p = corpus::parts().map_err(e2s)?;
    let (net, b) = corpus::three_node_network(&p).map_err(e2s)?;
    let closed = apply_interconnection(&net, &[&p.w, &p.w, &p.w]).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let modes: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let i = b.tot.mode_index(&modes);
        let got = closed.field(i).eval(&x);
        // (w₁(m₁, s(m₂)), w₂(m₂, s(m₁)), w₃(m₃, s(m₂)))
        let reads = [1usize, 0, 1];
        let want: Vec<f64> = (0..3)
            .map(|k| p.w.field(mu_mode(&p, modes[k])).eval(&[x[k], x[reads[k]]])[0])
            .collect();
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst == 0.0, || format!("max deviation {worst:.3e}"))?;
    Ok("100 points, max deviation 0".into())
}

// 6 ----------------------------------------------------------------------

/// Thermostat on `[lo, hi]` cooling at rate `a` and heating at rate `b`.
fn thermo(a: f64, b: f64, lo: f64, hi: f64) -> HybridDynamicalSystem {
    let bx = HyperBox::from_bounds(&[(lo, hi)]).expect("lo < hi");
    let x = vec!["x".to_string()];
    let rel = |at: f64| Relation::partial_map(Guard::pinned(&bx, &[(0, at)]).unwrap(), SmoothFn::identity(&bx)).unwrap();
    let sp = Arc::new(
        HybridPhaseSpace::builder()
            .push_mode(Mode::with_vars("off", bx.clone(), x.clone()).unwrap())
            .push_mode(Mode::with_vars("on", bx.clone(), x.clone()).unwrap())
            .arrow("f", "off", "on", rel(lo))
            .arrow("g", "on", "off", rel(hi))
            .build()
            .unwrap(),
    );
    let field = vec![
        exprs_fn(&bx, HyperBox::real_space(1), &x, &[format!("-{a}")]),
        exprs_fn(&bx, HyperBox::real_space(1), &x, &[format!("{b}")]),
    ];
    HybridDynamicalSystem::new(sp, field).unwrap()
}

fn rate(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(0.5..2.0f64) * 1000.0).round() / 1000.0
}

fn c6_executions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SimConfig {
        step: 1e-3,
        t_max: 3.0,
        ..SimConfig::default()
    };
    let tol = 10.0 * cfg.validation_tol();
    let (mut runs, mut worst) = (0, 0.0f64);
    for k in 0..50 {
        let (f, src, dst) = match k % 4 {
            0 => {
                let (h1, h2) = (thermo(rate(&mut rng), rate(&mut rng), 0.0, 1.0), thermo(rate(&mut rng), rate(&mut rng), 0.0, 1.0));
                let (two, p) = product_system(&[&h1, &h2]);
                let j = rng.gen_range(0..2);
                let dst = if j == 0 { h1 } else { h2 };
                (p.projections[j].clone(), two, dst)
            }
            1 => {
                let h = thermo(rate(&mut rng), rate(&mut rng), 0.0, 1.0);
                let (two, p) = product_system(&[&h, &h]);
                let id = HyPhMap::identity(h.space());
                (p.pair(&[id.clone(), id]).map_err(e2s)?, h, two)
            }
            2 => {
                let (a, b) = (rate(&mut rng), rate(&mut rng));
                let (c, d) = (rng.gen_range(0.5..3.0f64), rng.gen_range(-1.0..1.0f64));
                let src = thermo(a, b, 0.0, 1.0);
                let dst = thermo(c * a, c * b, d, c + d);
                let comps = src
                    .space()
                    .modes()
                    .iter()
                    .map(|m| {
                        SmoothFn::affine(
                            m.space.clone(),
                            dst.space().space(0).clone(),
                            DMatrix::from_element(1, 1, c),
                            DVector::from_element(1, d),
                        )
                    })
                    .collect::<hycomp::Result<Vec<_>>>()
                    .map_err(e2s)?;
                let f = HyPhMap::new(
                    src.space().clone(),
                    dst.space().clone(),
                    vec![0, 1],
                    vec![dst.space().single(0), dst.space().single(1)],
                    comps,
                )
                .map_err(e2s)?;
                (f, src, dst)
            }
            _ => {
                let src = thermo(rate(&mut rng), rate(&mut rng), 0.0, 1.0);
                let dst = HybridDynamicalSystem::zero(terminal());
                (HyPhMap::to_terminal(src.space(), &terminal()).map_err(e2s)?, src, dst)
            }
        };
        let hyp = check_hds_map(&f, &src, &dst, 16, 1e-9);
        ensure(hyp.passed(), || format!("generated triple {k} is not a system map: {hyp}"))?;
        let modes = src.space().modes();
        for _ in 0..5 {
            let m = rng.gen_range(0..modes.len());
            let x: Vec<f64> = (0..modes[m].space.dim()).map(|_| rng.gen_range(0.05..0.95)).collect();
            let init = UnderlyingPoint::new(src.space(), m, x, 0.0).map_err(e2s)?;
            let sim = simulate(&src, &init, JumpPolicy::Priority, &cfg).map_err(e2s)?;
            ensure(sim.status != Status::Stuck, || format!("triple {k}: simulation stuck"))?;
            let pushed = pushforward_execution(&f, &sim.execution).map_err(e2s)?;
            let r = validate_execution(&pushed, &dst, tol);
            ensure(r.passed(), || format!("triple {k}: pushed execution fails: {r}"))?;
            worst = worst.max(r.worst_residual);
            runs += 1;
        }
    }
    Ok(format!("50 maps, {runs} executions, worst residual {worst:.2e} at tolerance {tol:.0e}"))
}

// 7 ----------------------------------------------------------------------

/// `n` open thermostats on `m × u`, room `i` reading room `reads[i]`.
fn ring(p: &Parts, reads: &[usize]) -> Result<(Network, hycomp::opensys::SubmersionProduct), String> {
    let n = reads.len();
    let b = submersion_product(&std::iter::repeat_n(Arc::new(HybridSubmersion::identity(&p.m)), n).collect::<Vec<_>>()).map_err(e2s)?;
    let pi = submersion_product(&vec![p.mu.clone(); n]).map_err(e2s)?;
    let tot = reads
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let reading = compose_map(&p.s, &b.tot.projections[j])?;
            p.mu_prod.pair(&[b.tot.projections[i].clone(), reading])
        })
        .collect::<hycomp::Result<Vec<_>>>()
        .map_err(e2s)?;
    let psi = SubmersionMap::new(
        b.sub.clone(),
        pi.sub.clone(),
        pi.tot.pair(&tot).map_err(e2s)?,
        pi.st.pair(&b.st.projections).map_err(e2s)?,
    )
    .map_err(e2s)?;
    let nodes = (1..=n).map(|i| i.to_string()).collect();
    let net = Network::new(nodes, vec![p.mu.clone(); n], InterconnectionMap::new(psi, None).map_err(e2s)?).map_err(e2s)?;
    Ok((net, b))
}

/// `ẋ = ±r + e·v + c·sin(x·v)` on `μ`.
fn template(p: &Parts, rng: &mut ChaCha8Rng) -> Result<OpenSystem, String> {
    let (r_off, r_on) = (rate(rng), rate(rng));
    let (e, c) = (rng.gen_range(-0.5..0.5f64), rng.gen_range(-0.5..0.5f64));
    let field = p
        .mu
        .tot()
        .modes()
        .iter()
        .map(|md| {
            let r = if md.name.starts_with("(off") { -r_off } else { r_on };
            exprs_fn(&md.space, HyperBox::real_space(1), &md.vars, &[format!("{r} + {e}*v + {c}*sin(x*v)")])
        })
        .collect();
    OpenSystem::new(p.mu.clone(), field).map_err(e2s)
}

fn c7_network_maps() -> Outcome {
    let p = corpus::parts().map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..25 {
        let n = rng.gen_range(2..=4);
        let reads: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let (src, b) = ring(&p, &reads)?;
        let (map, dst, w, u) = if k % 2 == 0 {
            // every room collapses onto one room reading itself
            let (dst, c) = ring(&p, &[0])?;
            let shared = template(&p, &mut rng)?;
            let id = HyPhMap::identity(&p.m);
            let f = SubmersionMap::new(
                dst.base().clone(),
                src.base().clone(),
                b.tot.pair(&vec![compose_map(&id, &c.tot.projections[0]).map_err(e2s)?; n]).map_err(e2s)?,
                b.st.pair(&vec![compose_map(&id, &c.st.projections[0]).map_err(e2s)?; n]).map_err(e2s)?,
            )
            .map_err(e2s)?;
            let map = NetworkMap::new(&src, &dst, vec![0; n], vec![SubmersionMap::identity(&p.mu); n], f).map_err(e2s)?;
            (map, dst, vec![shared.clone(); n], vec![shared])
        } else {
            // relabel the rooms by a permutation σ
            let mut sigma: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                sigma.swap(i, rng.gen_range(0..=i));
            }
            let mut inv = vec![0; n];
            for (x, &y) in sigma.iter().enumerate() {
                inv[y] = x;
            }
            let reads2: Vec<usize> = (0..n).map(|y| sigma[reads[inv[y]]]).collect();
            let (dst, c) = ring(&p, &reads2)?;
            let f = SubmersionMap::new(
                dst.base().clone(),
                src.base().clone(),
                b.tot.pair(&sigma.iter().map(|&y| c.tot.projections[y].clone()).collect::<Vec<_>>()).map_err(e2s)?,
                b.st.pair(&sigma.iter().map(|&y| c.st.projections[y].clone()).collect::<Vec<_>>()).map_err(e2s)?,
            )
            .map_err(e2s)?;
            let map =
                NetworkMap::new(&src, &dst, sigma.clone(), vec![SubmersionMap::identity(&p.mu); n], f).map_err(e2s)?;
            let w = (0..n).map(|_| template(&p, &mut rng)).collect::<Result<Vec<_>, _>>()?;
            let u = (0..n).map(|y| w[inv[y]].clone()).collect();
            (map, dst, w, u)
        };
        let wr: Vec<&OpenSystem> = w.iter().collect();
        let ur: Vec<&OpenSystem> = u.iter().collect();
        let ind = induced_system_map(&map, &src, &dst, &wr, &ur, 100, 1e-9);
        ensure(ind.hypotheses.passed(), || format!("instance {k}: hypotheses fail: {}", ind.hypotheses))?;
        let c = ind.conclusion.as_ref().ok_or_else(|| format!("instance {k}: no conclusion"))?;
        ensure(c.passed() && c.worst_residual <= 1e-9, || format!("instance {k}: conclusion fails: {c}"))?;
        worst = worst.max(c.worst_residual);
    }
    Ok(format!("25 instances, worst conclusion residual {worst:.2e}"))
}

// 8 ----------------------------------------------------------------------

type Aff = (DMatrix<f64>, DVector<f64>);

fn rand_invertible(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| if r == c { 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn after(outer: &Aff, inner: &Aff) -> Aff {
    (&outer.0 * &inner.0, &outer.0 * &inner.1 + &outer.1)
}

fn invert(a: &Aff) -> Aff {
    let inv = a.0.clone().try_inverse().expect("invertible by construction");
    let off = -(&inv * &a.1);
    (inv, off)
}

fn aff_map(dom: &Arc<HybridPhaseSpace>, cod: &Arc<HybridPhaseSpace>, a: &Aff) -> Result<HyPhMap, String> {
    let f = SmoothFn::affine(dom.space(0).clone(), cod.space(0).clone(), a.0.clone(), a.1.clone()).map_err(e2s)?;
    HyPhMap::new(dom.clone(), cod.clone(), vec![0], vec![], vec![f]).map_err(e2s)
}

fn open_sub(n: usize, k: usize) -> Result<Arc<HybridSubmersion>, String> {
    let (tot, st) = (plain(n + k), plain(n));
    let coords: Vec<usize> = (0..n).collect();
    let c = SmoothFn::coordinate_projection(tot.space(0), &coords, st.space(0).clone()).map_err(e2s)?;
    let p = HyPhMap::new(tot, st, vec![0], vec![], vec![c]).map_err(e2s)?;
    Ok(Arc::new(HybridSubmersion::new(p).map_err(e2s)?))
}

fn c8_squares() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for k in 0..25 {
        let n = rng.gen_range(1..=2);
        let ki = rng.gen_range(1..=2);
        let (a, a2) = (Arc::new(HybridSubmersion::identity(&plain(n))), Arc::new(HybridSubmersion::identity(&plain(n))));
        let (b, b2) = (open_sub(n, ki)?, open_sub(n, ki)?);

        // φ_tot(x) = (Ax + d, Kx + c), φ_st(x) = Ax + d
        let phi_st: Aff = (rand_invertible(&mut rng, n), rand_vec(&mut rng, n));
        let kk = rand_mat(&mut rng, ki, n);
        let cc = rand_vec(&mut rng, ki);
        let mut pm = DMatrix::zeros(n + ki, n);
        pm.view_mut((0, 0), (n, n)).copy_from(&phi_st.0);
        pm.view_mut((n, 0), (ki, n)).copy_from(&kk);
        let mut po = DVector::zeros(n + ki);
        po.rows_mut(0, n).copy_from(&phi_st.1);
        po.rows_mut(n, ki).copy_from(&cc);
        let phi_tot: Aff = (pm, po);

        // g_tot(y, v) = (By + e, My + Lv), g_st(y) = By + e
        let g_st: Aff = (rand_invertible(&mut rng, n), rand_vec(&mut rng, n));
        let mm = rand_mat(&mut rng, ki, n);
        let ll = rand_invertible(&mut rng, ki);
        let mut gm = DMatrix::zeros(n + ki, n + ki);
        gm.view_mut((0, 0), (n, n)).copy_from(&g_st.0);
        gm.view_mut((n, 0), (ki, n)).copy_from(&mm);
        gm.view_mut((n, n), (ki, ki)).copy_from(&ll);
        let mut go = DVector::zeros(n + ki);
        go.rows_mut(0, n).copy_from(&g_st.1);
        let g_tot: Aff = (gm, go);

        // f = Fx + h on both levels; φ' closes the square
        let f_aff: Aff = (rand_invertible(&mut rng, n), rand_vec(&mut rng, n));
        let f_inv = invert(&f_aff);
        let phi2_tot = after(&after(&g_tot, &phi_tot), &f_inv);
        let phi2_st = after(&after(&g_st, &phi_st), &f_inv);

        // G on b, and G' = B·G∘g_tot⁻¹ on b', g-related by construction
        let tot_b = b.tot().clone();
        let vars = tot_b.mode(0).vars.clone();
        let outs: Vec<String> = (0..n)
            .map(|i| {
                let (c1, c2, c3) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let j = rng.gen_range(0..n);
                let l = n + rng.gen_range(0..ki);
                format!("{c1}*sin({}) + {c2}*{}*{} + {c3}", vars[j], vars[l], vars[i])
            })
            .collect();
        let g_field = exprs_fn(tot_b.space(0), HyperBox::real_space(n), &vars, &outs);
        let big_g = OpenSystem::new(b.clone(), vec![g_field.clone()]).map_err(e2s)?;
        let g_inv = invert(&g_tot);
        let back = SmoothFn::affine(HyperBox::real_space(n + ki), HyperBox::real_space(n + ki), g_inv.0, g_inv.1).map_err(e2s)?;
        let lin = SmoothFn::affine(HyperBox::real_space(n), HyperBox::real_space(n), g_st.0.clone(), DVector::zeros(n)).map_err(e2s)?;
        let g2_field = SmoothFn::compose(&lin, &SmoothFn::compose(&g_field, &back).map_err(e2s)?).map_err(e2s)?;
        let big_g2 = OpenSystem::new(b2.clone(), vec![g2_field]).map_err(e2s)?;

        let (pa, pa2) = (a.tot().clone(), a2.tot().clone());
        let phi = InterconnectionMap::new(
            SubmersionMap::new(a.clone(), b.clone(), aff_map(&pa, b.tot(), &phi_tot)?, aff_map(&pa, b.st(), &phi_st)?)
                .map_err(e2s)?,
            None,
        )
        .map_err(e2s)?;
        let phi2 = InterconnectionMap::new(
            SubmersionMap::new(a2.clone(), b2.clone(), aff_map(&pa2, b2.tot(), &phi2_tot)?, aff_map(&pa2, b2.st(), &phi2_st)?)
                .map_err(e2s)?,
            None,
        )
        .map_err(e2s)?;
        let g_map = SubmersionMap::new(b.clone(), b2.clone(), aff_map(b.tot(), b2.tot(), &g_tot)?, aff_map(b.st(), b2.st(), &g_st)?)
            .map_err(e2s)?;
        let f_map = SubmersionMap::new(a.clone(), a2.clone(), aff_map(&pa, &pa2, &f_aff)?, aff_map(&pa, &pa2, &f_aff)?)
            .map_err(e2s)?;

        let hyp = crl_related(&g_map, &big_g, &big_g2, 100, 1e-9);
        ensure(hyp.passed(), || format!("square {k}: G and G' are not g-related: {hyp}"))?;
        let pulled = pullback(&phi, &big_g).map_err(e2s)?;
        let pulled2 = pullback(&phi2, &big_g2).map_err(e2s)?;
        let r = crl_related(&f_map, &pulled, &pulled2, 100, 1e-9);
        ensure(r.passed(), || format!("square {k}: pullbacks are not f-related: {r}"))?;
        worst = worst.max(r.worst_residual);
    }
    Ok(format!("25 squares, worst residual {worst:.2e}"))
}

// 9 ----------------------------------------------------------------------

fn c9_diagonal() -> Outcome {
    let p = corpus::parts().map_err(e2s)?;
    let (net, _) = corpus::three_node_network(&p).map_err(e2s)?;
    let h = apply_interconnection(&net, &[&p.w, &p.w, &p.w])
        .and_then(|o| o.to_system())
        .map_err(e2s)?;
    let sp = h.space();
    let init = UnderlyingPoint::new(sp, sp.mode_id("(off,off,off)").map_err(e2s)?, vec![0.5; 3], 0.0).map_err(e2s)?;
    let cfg = SimConfig {
        t_max: 5.0,
        ..SimConfig::default()
    };
    let s = simulate(&h, &init, JumpPolicy::Priority, &cfg).map_err(e2s)?;
    ensure(s.status == Status::Completed, || format!("status {}", s.status))?;
    let e = &s.execution;
    ensure(!e.jumps.is_empty(), || "no jumps in [0, 5]".into())?;
    let mut worst: f64 = 0.0;
    for seg in &e.segments {
        let name = &sp.mode(seg.mode).name;
        let parts: Vec<&str> = name.trim_matches(|c| c == '(' || c == ')').split(',').collect();
        ensure(parts.iter().all(|m| *m == parts[0]), || format!("left the diagonal: mode {name}"))?;
        for (_, x) in &seg.samples {
            worst = worst.max((x[0] - x[1]).abs()).max((x[0] - x[2]).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("cross-component deviation {worst:.3e}"))?;
    Ok(format!("{} jumps, deviation {worst:.2e}", e.jumps.len()))
}

// 10 ---------------------------------------------------------------------

fn random_expr(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            format!("x{}", rng.gen_range(0..n))
        } else {
            format!("{:.3}", rng.gen_range(-2.0..2.0f64))
        };
    }
    let mut sub = || random_expr(rng, n, depth - 1);
    let (a, b) = (sub(), sub());
    match rng.gen_range(0..12) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 => format!("({a} * {b})"),
        3 => format!("({a} / (1.5 + ({b})^2))"),
        4 => format!("sin({a})"),
        5 => format!("cos({a})"),
        6 => format!("tanh({a})"),
        7 => format!("exp(0.3 * tanh({a}))"),
        8 => format!("log(2 + ({a})^2)"),
        9 => format!("abs({a})"),
        10 => format!("min({a}, {b})"),
        _ => format!("max({a}, {b})"),
    }
}

fn c10_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut jac_worst, mut dual_worst, mut skipped, mut checked) = (0.0f64, 0.0f64, 0, 0);
    for k in 0..100 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let vars: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let outs: Vec<String> = (0..m).map(|_| random_expr(&mut rng, n, 3)).collect();
        let dom = HyperBox::from_bounds(&vec![(-1.0, 1.0); n]).map_err(e2s)?;
        let f = exprs_fn(&dom, HyperBox::real_space(m), &vars, &outs);
        let compiled: Vec<_> = outs
            .iter()
            .map(|s| hycomp::expr::parse(s).map_err(e2s)?.bind(&vars).map_err(e2s))
            .collect::<Result<Vec<_>, String>>()?;
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect();
            if compiled.iter().any(|c| c.kink_margin(&x) < 1e-3) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let j = f.jacobian(&x).ok_or_else(|| format!("function {k} has no analytic Jacobian"))?;
            let fd = f.fd_jacobian(&x);
            let d = (&j - &fd).abs().max();
            let bound = 1e-5 * (1.0 + fd.norm());
            ensure(d <= bound, || format!("function {k} `{outs:?}` at {x:?}: |J - FD| = {d:.3e}"))?;
            jac_worst = jac_worst.max(d / (1.0 + fd.norm()));
            // central differences of each expression against dual numbers
            let h = 1e-6;
            for (c, src) in compiled.iter().zip(&outs) {
                let g = c.gradient(&x);
                for i in 0..n {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += h;
                    xm[i] -= h;
                    let cd = (c.eval(&xp) - c.eval(&xm)) / (2.0 * h);
                    let err = (g[i] - cd).abs();
                    ensure(err <= 1e-6 * (1.0 + cd.abs()), || {
                        format!("`{src}` d/dx{i} at {x:?}: dual {} vs central {cd}", g[i])
                    })?;
                    dual_worst = dual_worst.max(err / (1.0 + cd.abs()));
                }
            }
        }
    }
    Ok(format!(
        "100 functions, {checked} points ({skipped} near kinks skipped), Jacobian rel {jac_worst:.1e}, dual rel {dual_worst:.1e}"
    ))
}

// 11 ---------------------------------------------------------------------

fn c11_reproducible() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hycomp");
    let dir = tempfile::tempdir().map_err(e2s)?;
    let run = |args: &[&str]| -> Result<(), String> {
        let st = Command::new(bin).args(args).output().map_err(e2s)?;
        ensure(st.status.success(), || {
            format!("`hycomp {}` failed: {}", args.join(" "), String::from_utf8_lossy(&st.stderr))
        })
    };
    let mut compared = 0;
    for (demo, system) in [("two-rooms", "two-rooms"), ("three-node-map", "three-closed")] {
        let cfg = dir.path().join(format!("{demo}.toml"));
        let cfg_s = cfg.to_str().expect("utf-8 path");
        run(&["demo", demo, "--out", cfg_s])?;
        for format in ["csv", "json"] {
            let mut outs = vec![];
            for rep in 0..2 {
                let out = dir.path().join(format!("{demo}.{rep}.{format}"));
                let out_s = out.to_str().expect("utf-8 path").to_string();
                run(&[
                    "simulate", cfg_s, "--system", system, "--policy", "seeded-random", "--seed", "42", "--t-max", "4",
                    "--format", format, "--out", &out_s,
                ])?;
                outs.push(std::fs::read(&out).map_err(e2s)?);
            }
            ensure(!outs[0].is_empty() && outs[0] == outs[1], || format!("{demo} {format} traces differ"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} trace pairs byte-identical"))
}
