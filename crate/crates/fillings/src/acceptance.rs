//! The acceptance suite: one runner per criterion, each returning a
//! pass/fail line. Shared by the `acceptance` test target and the CLI's
//! `fixtures run`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bestvina_brady::{k3, octahedron, raag_commutes, raag_image, rarea_sample, BbContext, BoundedFilling};
use crate::bounds::{compose_bounds, BoundExpr, BoundKind};
use crate::constructors::{amalgam_presentation, k32_cross_relators, k32_presentations, k32_witness};
use crate::oracle::{
    area_exact, cayley_distance, low_noise_search, null_homotopy_search, raag_equal_by, AreaVerdict, CayleyVerdict, DirectProductSpec, SearchBudget,
};
use crate::pulldown::{standard_product, PulldownContext};
use crate::rewriting::{validate_expression, verify_scheme, Expression, Presentation, Scheme, SchemeRow, SchemeStrategy, Term};
use crate::words::{commutator, Letter, Word};

/// Runtime limit for the ℤ² area law, in seconds.
pub const AREA_LAW_SECONDS: u64 = 60;
/// Runtime limit for the Bestvina-Brady checks, in seconds.
pub const BB_SECONDS: u64 = 300;
/// Word-length cap for the Tietze evidence searches.
pub const TIETZE_MAX_LEN: usize = 40;
/// `C_A'` for free-group factors.
pub const FREE_FACTOR_AREA_CONSTANT: u64 = 7;
/// Heights of relator fillings for free-group factors.
pub const FREE_FACTOR_HEIGHT: u64 = 2;

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub millis: u128,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!("[{}] {:>2} {} ({} ms): {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.millis, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct AcceptanceConfig {
    pub seed: u64,
    pub phi_trials: usize,
    pub flatten_trials: usize,
    pub pipeline_trials: usize,
}

impl Default for AcceptanceConfig {
    fn default() -> AcceptanceConfig {
        AcceptanceConfig { seed: 2024, phi_trials: 1000, flatten_trials: 500, pipeline_trials: 200 }
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "area law for [x^l, y^l]"),
    (2, "three-row scheme fixture"),
    (3, "Phi identities"),
    (4, "word flattening"),
    (5, "letter, conjugation and relator emitters"),
    (6, "pulldown pipeline"),
    (7, "amalgam lower bound"),
    (8, "Tietze evidence between the two presentations"),
    (9, "Bestvina-Brady relator families"),
    (10, "bounded noise"),
    (11, "bound calculators"),
];

pub fn run_all(cfg: &AcceptanceConfig) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|&(id, _)| run_criterion(id, cfg).expect("known id")).collect()
}

pub fn run_criterion(id: u8, cfg: &AcceptanceConfig) -> Option<CriterionResult> {
    let name = CRITERIA.iter().find(|c| c.0 == id)?.1;
    let t = Instant::now();
    let (pass, detail) = match id {
        1 => area_law(),
        2 => scheme_fixture(),
        3 => phi_identities(cfg),
        4 => flattening(cfg),
        5 => emitters(cfg),
        6 => pipeline(cfg),
        7 => amalgam_lower_bound(),
        8 => tietze_evidence(),
        9 => bestvina_brady(),
        10 => bounded_noise(),
        11 => bound_calculators(),
        _ => return None,
    };
    Some(CriterionResult { id, name, pass, detail, millis: t.elapsed().as_millis() })
}

pub fn z2() -> Presentation {
    Presentation::from_strs(&["x", "y"], &["x y x' y'"])
}

fn xy_power_commutator(l: i64) -> Word {
    commutator(&Word::parse("x").unwrap().pow(l), &Word::parse("y").unwrap().pow(l))
}

const SCHEME_ROWS: [(&str, u64); 3] = [("x x y x' y x y x' x' y' y' y'", 2), ("x x y x' y x' y' y'", 1), ("x x y x' x' y'", 2)];

pub fn fixture_scheme() -> Scheme {
    Scheme {
        rows: SCHEME_ROWS.iter().map(|&(w, a)| SchemeRow { word: Word::parse(w).unwrap(), area: a, heights: None }).collect(),
        target: Word::empty(),
    }
}

fn area_law() -> (bool, String) {
    let t = Instant::now();
    let p = z2();
    let mut areas = Vec::new();
    for l in 1..=3i64 {
        let w = xy_power_commutator(l);
        areas.push(area_exact(&p, &w, &SearchBudget::default().with_max_len(w.len())).area());
    }
    let ok = areas.iter().zip(1..=3u64).all(|(a, l)| *a == Some(l * l));
    let fast = t.elapsed().as_secs() < AREA_LAW_SECONDS;
    let shown: Vec<String> = areas.iter().map(|a| a.map_or("?".to_string(), |a| a.to_string())).collect();
    (ok && fast, format!("areas [{}], expected [1, 4, 9], within {AREA_LAW_SECONDS} s: {fast}", shown.join(", ")))
}

fn scheme_fixture() -> (bool, String) {
    let p = z2();
    let s = fixture_scheme();
    let rep = verify_scheme(&p, &s, &SchemeStrategy::ByOracle(SearchBudget::default()));
    let exact = area_exact(&p, &s.rows[0].word, &SearchBudget::default()).area();
    let ok = rep.pass && s.total() == 5 && exact.is_some_and(|a| a <= 5);
    let shown = exact.map_or("unsettled".to_string(), |a| a.to_string());
    (ok, format!("scheme total {}, rows pass {}, exact area {shown}", s.total(), rep.pass))
}

fn random_word(rng: &mut impl Rng, gens: &[crate::words::Symbol], max_len: usize) -> Word {
    let len = rng.gen_range(0..=max_len);
    Word::from_letters(
        (0..len)
            .map(|_| {
                let g = gens[rng.gen_range(0..gens.len())];
                if rng.gen() {
                    g.letter()
                } else {
                    g.inv()
                }
            })
            .collect(),
    )
}

fn phi_identities(cfg: &AcceptanceConfig) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctxs = [standard_product(3, 2, 1).unwrap(), standard_product(3, 2, 2).unwrap()];
    let mut failures = Vec::new();
    for trial in 0..cfg.phi_trials {
        let c = &ctxs[trial % 2];
        let gens = c.spec().generators();
        let w = random_word(&mut rng, &gens, 10);
        let h = rng.gen_range(-3..=3);
        let k = rng.gen_range(0..c.rank());
        let w2 = if rng.gen_bool(0.5) {
            let pos = rng.gen_range(0..=w.len());
            let x = random_word(&mut rng, &gens, 1);
            let mut l = w.letters().to_vec();
            l.splice(pos..pos, x.concat(&x.inverse()).into_letters());
            Word::from_letters(l)
        } else {
            random_word(&mut rng, &gens, 10)
        };
        let r = c.check_phi_properties(k, &w, &w2, h).unwrap();
        if r != [true; 6] {
            failures.push(format!("w={w} h={h} k={k}: {r:?}"));
        }
    }
    (failures.is_empty(), format!("{} trials, {} failures {}", cfg.phi_trials, failures.len(), failures.first().cloned().unwrap_or_default()))
}

fn charge_zero_word(rng: &mut impl Rng, c: &PulldownContext, max_len: usize) -> Word {
    let gens = c.spec().generators();
    let w = random_word(rng, &gens, max_len);
    let charge = c.theta().charge(&w).unwrap();
    let mut fix = Vec::new();
    for (i, &q) in charge.iter().enumerate() {
        let g = c.a(0, i);
        for _ in 0..q.unsigned_abs() {
            fix.push(if q > 0 { g.inv() } else { g.letter() });
        }
    }
    let mut l = w.into_letters();
    let pos = rng.gen_range(0..=l.len());
    l.splice(pos..pos, fix);
    Word::from_letters(l)
}

fn flattening(cfg: &AcceptanceConfig) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 4);
    let ctxs = [standard_product(3, 2, 1).unwrap(), standard_product(3, 2, 2).unwrap()];
    let mut failures = Vec::new();
    let mut longest = 0;
    for trial in 0..cfg.flatten_trials {
        let c = &ctxs[trial % 2];
        let w = charge_zero_word(&mut rng, c, 6);
        let f = c.flatten_word(&w).unwrap();
        let r = c.rank() as u32;
        let bound = 8u64.pow(r) * (w.len() as u64).pow(r + 1);
        longest = longest.max(f.len());
        let eq = crate::oracle::dp_equal(c.spec(), &f, &w).unwrap();
        let flat = c.theta().heights(&f).unwrap().max() <= 1;
        if !eq || !flat || f.len() as u64 > bound {
            failures.push(format!("w={w}: equal {eq}, flat {flat}, |w'|={} > {bound}", f.len()));
        }
    }
    (failures.is_empty(), format!("{} words, longest output {longest}, {} failures {}", cfg.flatten_trials, failures.len(), failures.first().cloned().unwrap_or_default()))
}

fn emitters(cfg: &AcceptanceConfig) -> (bool, String) {
    let mut failures = Vec::new();
    let mut checked = 0;
    let c = standard_product(3, 2, 2).unwrap();
    for g in c.spec().generators() {
        for l in [g.letter(), g.inv()] {
            for k in 0..c.rank() {
                for h in -3..=3i64 {
                    let r = c.letter_sequence(k, l, h).unwrap();
                    let (area, hv) = c.measure(&r.sequence).unwrap();
                    let hh = letter_height(&c, l, k, h);
                    let heights_ok = (0..c.rank()).all(|i| hv.get(i) <= if i == k { hh + 1 } else { 1 });
                    checked += 1;
                    if area > 2 * (hh + 1).pow(2) || area > r.scheme.total() || !heights_ok || !r.overruns().is_empty() {
                        failures.push(format!("letter {l} k={k} h={h}: area {area}, heights {hv:?}"));
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 5);
    let gens = c.spec().generators();
    for _ in 0..100 {
        let w = random_word(&mut rng, &gens, 6);
        let k = rng.gen_range(0..c.rank());
        let h = rng.gen_range(-3..=3i64);
        let s = c.conjugation_scheme(k, &w, h).unwrap();
        let (area, hv) = c.measure(&s).unwrap();
        let hw = c.theta().heights(&w).unwrap();
        let end_ok = s.end(c.presentation()).unwrap() == c.conjugation_target(k, &w, h).unwrap();
        let ab = 2 * w.len() as u64 * (hw.get(k) + h.unsigned_abs() + 1).pow(2);
        let heights_ok = (0..c.rank()).all(|i| hv.get(i) <= if i == k { hw.get(k) + h.unsigned_abs() + 1 } else { hw.get(i) + 1 });
        checked += 1;
        if !end_ok || area > ab || !heights_ok {
            failures.push(format!("conjugation w={w} k={k} h={h}: area {area} > {ab} or heights {hv:?}"));
        }
    }
    let c3 = standard_product(3, 3, 1).unwrap();
    for s in c3.spec().commutator_relators() {
        for s in [s.clone(), s.inverse()] {
            for h in -3..=3i64 {
                let r = match c3.relator_filling(0, &s, h) {
                    Ok(r) => r,
                    Err(e) => {
                        failures.push(format!("relator {s} h={h}: {e}"));
                        continue;
                    }
                };
                let (area, hv) = c3.measure(&r.sequence).unwrap();
                let null = r.sequence.end(c3.presentation()).unwrap().is_empty();
                checked += 1;
                if !null
                    || area > r.scheme.total()
                    || area > FREE_FACTOR_AREA_CONSTANT * (h.unsigned_abs() + 1).pow(2)
                    || hv.max() > FREE_FACTOR_HEIGHT
                    || !r.overruns().is_empty()
                {
                    failures.push(format!("relator {s} h={h}: area {area} (table {}), heights {hv:?}", r.scheme.total()));
                }
            }
        }
    }
    let case5 = c3.relator_scheme(0, &Word::parse("b1 b2 b1' b2'").unwrap(), 2).map(|s| s.total()).ok();
    if case5 != Some(53) {
        failures.push(format!("table total at h=2 is {case5:?}, expected 53"));
    }
    (failures.is_empty(), format!("{checked} sequences, {} failures {}", failures.len(), failures.first().cloned().unwrap_or_default()))
}

fn letter_height(c: &PulldownContext, l: Letter, k: usize, h: i64) -> u64 {
    if l.is_inverse() {
        h.unsigned_abs().max((h - c.theta_k(l.gen(), k)).unsigned_abs())
    } else {
        h.unsigned_abs()
    }
}

fn random_expression(rng: &mut impl Rng, c: &PulldownContext) -> Expression {
    let p = c.presentation();
    let gens = c.spec().generators();
    let terms = rng.gen_range(1..=4);
    let mut e = Expression::default();
    for _ in 0..terms {
        let conj = random_word(rng, &gens, 8);
        e.terms.push(Term { conj, rel: rng.gen_range(0..p.relators().len()), sign: if rng.gen() { 1 } else { -1 } });
    }
    e
}

fn pipeline(cfg: &AcceptanceConfig) -> (bool, String) {
    let mut failures = Vec::new();
    let mut worst = 0f64;
    for (n, r) in [(3usize, 1usize), (4, 2)] {
        let c = standard_product(n, 2, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (6 + r as u64));
        for _ in 0..cfg.pipeline_trials {
            let e = random_expression(&mut rng, &c);
            let w = e.boundary(c.presentation());
            let out = match c.flatten_expression(&e, &w) {
                Ok(o) => o,
                Err(err) => {
                    failures.push(format!("r={r} w={w}: {err}"));
                    continue;
                }
            };
            let valid = validate_expression(c.presentation(), &out, &w, Some(c.theta())).is_ok();
            let hb = c.flatten_height_bound(&w).unwrap();
            let ho = out.heights(c.theta()).unwrap();
            let ab = c.flatten_area_bound(&e, &w).unwrap();
            worst = worst.max(out.area() as f64 / ab.max(1) as f64);
            if !valid || !ho.dominated_by(&hb) || out.area() > ab {
                failures.push(format!("r={r} w={w}: valid {valid}, heights {ho:?} vs {hb:?}, area {} vs {ab}", out.area()));
            }
        }
    }
    (
        failures.is_empty(),
        format!("{} expressions, worst area/bound {worst:.3}, {} failures {}", 2 * cfg.pipeline_trials, failures.len(), failures.first().cloned().unwrap_or_default()),
    )
}

/// Exact area of the amalgam witness at `l = 1`, with the search confined
/// to words of length at most `|w| + slack`.
pub fn witness_area(n: u32, slack: usize) -> AreaVerdict {
    let p = amalgam_presentation();
    let wt = k32_witness(1, n);
    area_exact(&p, &wt.word, &SearchBudget::default().with_max_len(wt.word.len() + slack).with_max_states(20_000_000))
}

pub fn edge_group_distance(l: u32) -> CayleyVerdict {
    let spec = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"]]);
    let nf = |x: &Word| spec.normal_form(x).unwrap();
    let b: Vec<Word> = crate::constructors::amalgam_edge_generators().into_iter().map(|(_, w)| w).collect();
    cayley_distance(&b, &k32_witness(l, 1).h, &nf, &SearchBudget::default())
}

fn amalgam_lower_bound() -> (bool, String) {
    let d1 = match edge_group_distance(1) {
        CayleyVerdict::Distance { n, .. } => n,
        CayleyVerdict::NotReached { .. } => return (false, "h_1 not reached".into()),
    };
    let d2 = match edge_group_distance(2) {
        CayleyVerdict::Distance { n, .. } => Some(n),
        CayleyVerdict::NotReached { radius } if radius >= 4 => None,
        CayleyVerdict::NotReached { radius } => return (false, format!("h_2 search stopped at radius {radius}")),
    };
    let mut ok = d2.is_none_or(|d| d >= 4);
    let mut parts = vec![format!("d_B(1,h1)={d1}, d_B(1,h2)={}", d2.map_or(">= 4".into(), |d| d.to_string()))];
    for (n, slack) in [(1u32, 4usize), (2, 0)] {
        let v = witness_area(n, slack);
        let need = 2 * n as u64 * d1;
        match v.area() {
            Some(a) => {
                ok &= a >= need;
                parts.push(format!("n={n}: area {a} >= {need}"));
            }
            None => {
                ok = false;
                parts.push(format!("n={n}: {v:?}"));
            }
        }
    }
    (ok, parts.join(", "))
}

fn tietze_evidence() -> (bool, String) {
    let k = k32_presentations();
    let (extra2, extra1) = k32_cross_relators();
    let budget = SearchBudget::default().with_max_len(TIETZE_MAX_LEN);
    let mut areas = Vec::new();
    let mut ok = extra2.len() == 4 && extra1.len() == 3;
    for (p, rels) in [(&k.q1, &extra2), (&k.q2, &extra1)] {
        for r in rels {
            match null_homotopy_search(p, r, &budget) {
                AreaVerdict::Area { area, .. } => areas.push(area),
                _ => {
                    ok = false;
                    areas.push(u64::MAX);
                }
            }
        }
    }
    (ok, format!("{} verdicts, areas {areas:?}", areas.len()))
}

fn bb_fillings_ok(ctx: &BbContext, bound: i64) -> Result<(usize, Vec<String>), String> {
    let mut count = 0;
    let mut bad = Vec::new();
    let check = |f: &BoundedFilling, label: String, bad: &mut Vec<String>| {
        if !f.within_bound() || !f.realized.overruns().is_empty() || !f.realized.sequence.end(&ctx.pres).map(|e| e.is_empty()).unwrap_or(false) {
            bad.push(format!("{label}: area {} bound {}", f.area(), f.bound));
        }
    };
    for n in -bound..=bound {
        for r in ctx.pres.relators() {
            let f = ctx.relator_filling(r, n).map_err(|e| e.to_string())?;
            check(&f, format!("{r} n={n}"), &mut bad);
            count += 1;
        }
        for e in ctx.complex.directed_edges() {
            let f = ctx.stable_filling(e, n).map_err(|e| e.to_string())?;
            check(&f, format!("stable {} n={n}", ctx.complex.edge_symbol(e)), &mut bad);
            count += 1;
        }
    }
    Ok((count, bad))
}

fn bestvina_brady() -> (bool, String) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cx) in [("K3", k3()), ("octahedron", octahedron())] {
        let ctx = match BbContext::new(cx) {
            Ok(c) => c,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let comm = raag_commutes(&ctx.complex);
        let fam = ctx.indexed_families(2);
        let trivial = fam.iter().all(|m| raag_image(&ctx.complex, &m.word).map(|w| raag_equal_by(&comm, &w, &Word::empty())).unwrap_or(false));
        let (count, bad) = match bb_fillings_ok(&ctx, 2) {
            Ok(x) => x,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let table = match rarea_sample(&ctx, 2, &SearchBudget::default().with_max_states(50_000), 6) {
            Ok(t) => t,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let lead = table.quadratic_coefficient().unwrap_or(0.0);
        let fits = table.fits_envelope() && lead <= (3 * ctx.k_constant() + 4) as f64;
        ok &= trivial && bad.is_empty() && fits;
        parts.push(format!(
            "{name}: L={} K={} {} members trivial {trivial}, {count} fillings ({} over), RArea {:?} quadratic coefficient {lead}",
            ctx.diameter(),
            ctx.k_constant(),
            fam.len(),
            bad.len(),
            table.rows.iter().map(|r| r.scheme_max).collect::<Vec<_>>()
        ));
    }
    let l4 = compose_bounds(BoundKind::Penetration, &[BoundExpr::parse("l^2").unwrap(), BoundExpr::l(), BoundExpr::parse("l^2").unwrap()]).map(|b| b.canonical());
    ok &= l4.as_deref() == Ok("l^4");
    let secs = t.elapsed().as_secs();
    ok &= secs < BB_SECONDS;
    parts.push(format!("composed bound {}", l4.unwrap_or_else(|e| e.to_string())));
    (ok, parts.join("; "))
}

/// Words with known area for the bounded-noise check.
pub fn noise_fixtures() -> Vec<(Presentation, Word)> {
    let z = z2();
    let mut v: Vec<(Presentation, Word)> = (1..=3).map(|l| (z.clone(), xy_power_commutator(l))).collect();
    v.push((z.clone(), Word::parse(SCHEME_ROWS[0].0).unwrap()));
    v.push((z, Word::parse("x y y x' y' y'").unwrap()));
    let dl = crate::bestvina_brady::dicks_leary_presentation(&k3());
    for w in ["a_b b_c c_a", "a_b a_b b_c b_c c_a c_a", "a_b b_a c_b b_c"] {
        v.push((dl.clone(), Word::parse(w).unwrap()));
    }
    v
}

fn bounded_noise() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, w) in noise_fixtures() {
        match low_noise_search(&p, &w, &SearchBudget::default().with_max_len(w.len())) {
            Ok(r) => {
                ok &= r.noise <= r.bound;
                parts.push(format!("{}/{}", r.noise, r.bound));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{w}: {e}"));
            }
        }
    }
    (ok, format!("noise/bound {}", parts.join(" ")))
}

fn bound_calculators() -> (bool, String) {
    let b = |s: &str| BoundExpr::parse(s).unwrap();
    let cases = [
        (BoundKind::AreaRadius, vec![b("l^2"), b("l"), b("1")], "l^4"),
        (BoundKind::Split, vec![b("l^2"), b("l^2")], "l^5"),
        (BoundKind::Penetration, vec![b("l^2"), b("l"), b("l^2")], "l^4"),
    ];
    let mut ok = true;
    let mut got = Vec::new();
    for (k, args, want) in cases {
        let c = compose_bounds(k, &args).map(|e| e.canonical()).unwrap_or_else(|e| e.to_string());
        ok &= c == want;
        got.push(format!("{} -> {c}", k.name()));
    }
    (ok, got.join(", "))
}
