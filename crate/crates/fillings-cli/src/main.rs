use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use fillings::acceptance::{run_criterion, AcceptanceConfig, CRITERIA};
use fillings::bestvina_brady::{dicks_leary_presentation, raag_presentation, rarea_sample, BbContext, ComplexFile};
use fillings::bounds::{compose_bounds, BoundExpr, BoundKind};
use fillings::constructors::{
    cyclic_infinite_presentation, depth_coabelian, fiber_presentation, k32_presentations, knmr_charge, knmr_generators, FiberSpecFile, KnmrSpec, PnfFile,
    ThetaFile,
};
use fillings::oracle::{
    area_exact, dehn_sample, distortion_sample, null_homotopy_search, AreaVerdict, DirectProductSpec, OracleError, SearchBudget,
};
use fillings::pulldown::{standard_product, PulldownContext};
use fillings::rewriting::{verify_scheme, SchemeStrategy};
use fillings::{ChargeMap, Presentation, Scheme, Sequence, Word};

#[derive(Parser)]
#[command(name = "fillings", version, about = "Areas, heights and fillings of words in finitely presented groups")]
struct Cli {
    /// State cap for exhaustive searches.
    #[arg(long, global = true)]
    budget_states: Option<usize>,
    /// Word-length cap for exhaustive searches.
    #[arg(long, global = true)]
    budget_len: Option<usize>,
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Trial count for randomized suites.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Include wall-clock timings in the report.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Freely reduce a word.
    Reduce {
        #[arg(long)]
        word: String,
    },
    /// Exact area of a null-homotopic word.
    Area {
        #[arg(long)]
        presentation: PathBuf,
        #[arg(long)]
        word: String,
        /// Best-first search for an upper bound instead of the exact area.
        #[arg(long)]
        heuristic: bool,
    },
    /// Dehn function samples for lengths 1..=max-length.
    Dehn {
        #[arg(long)]
        presentation: PathBuf,
        #[arg(long)]
        max_length: usize,
    },
    /// Check every row of a scheme.
    VerifyScheme {
        #[arg(long)]
        presentation: PathBuf,
        #[arg(long)]
        scheme: PathBuf,
        /// JSON array of sequences, one per row; otherwise rows are checked by search.
        #[arg(long)]
        sequences: Option<PathBuf>,
    },
    /// Apply Φ_k(·, h) and replay the conjugation sequence.
    Pulldown {
        #[arg(long)]
        word: String,
        /// Direction, 1-based.
        #[arg(long)]
        k: usize,
        #[arg(long, allow_hyphen_values = true)]
        h: i64,
        #[command(flatten)]
        product: ProductArgs,
    },
    /// Flatten a charge-zero word to heights at most 1.
    Flatten {
        #[arg(long)]
        word: String,
        #[command(flatten)]
        product: ProductArgs,
    },
    /// Presentation constructors.
    #[command(subcommand)]
    Construct(Construct),
    /// Bestvina-Brady groups of a flag complex.
    Bb {
        #[arg(long)]
        complex: PathBuf,
        #[command(subcommand)]
        action: BbAction,
    },
    /// Distortion samples of a coabelian subgroup.
    Distort {
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Subgroup generator (repeatable); used with --theta. The words must
        /// generate the whole kernel, since membership is tested by charge.
        #[arg(long = "sub")]
        sub: Vec<String>,
        /// Use the generators of K^n_m(r) instead of --theta/--sub, as "n,m,r".
        #[arg(long)]
        knmr: Option<String>,
        #[arg(long)]
        radius: usize,
    },
    /// Depth of the kernel of a charge map.
    Depth {
        #[arg(long)]
        theta: PathBuf,
    },
    /// Compose isoperimetric bounds.
    Bounds {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        rho: Option<String>,
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        beta1: Option<String>,
        #[arg(long)]
        beta2: Option<String>,
        #[arg(long)]
        pi: Option<String>,
        #[arg(long)]
        rarea: Option<String>,
        #[arg(long)]
        delta: Option<String>,
    },
    /// Acceptance fixtures.
    #[command(subcommand)]
    Fixtures(Fixtures),
}

#[derive(Args)]
struct ProductArgs {
    /// Number of free factors.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Rank of each free factor.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Rank of the charge map.
    #[arg(long, default_value_t = 1)]
    r: usize,
}

#[derive(Subcommand)]
enum Construct {
    /// Generators of K^n_m(r), or one of the named presentations for n=3, m=2.
    Knmr {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        present: Option<String>,
    },
    /// Presentation of a fiber product.
    Fiber {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Indexed relators of a cyclic extension kernel.
    Cyclic {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index_bound: u64,
    },
}

#[derive(Subcommand)]
enum BbAction {
    /// RAAG and Dicks-Leary presentations.
    Present,
    /// Indexed relator families.
    Families {
        #[arg(long)]
        index_bound: u64,
    },
    /// Relational areas of the indexed relators.
    Rarea {
        #[arg(long)]
        index_bound: u64,
        /// Attempt exact areas for members at most this long.
        #[arg(long, default_value_t = 6)]
        exact_len: usize,
    },
}

#[derive(Subcommand)]
enum Fixtures {
    /// Run the acceptance suite.
    Run {
        /// Run only these criteria.
        #[arg(long, num_args = 1..)]
        only: Vec<u8>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Verdict {
    Pass,
    Fail,
    BudgetExhausted,
}

impl Verdict {
    fn code(self) -> u8 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::BudgetExhausted => 3,
        }
    }
}

struct Outcome {
    verdict: Verdict,
    text: String,
    result: Value,
}

impl Outcome {
    fn pass(text: String, result: Value) -> Outcome {
        Outcome { verdict: Verdict::Pass, text, result }
    }
}

/// Input problems: unreadable files, malformed words. Exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Usage(e.to_string()))
}

struct Inputs {
    digest: Sha256,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<String> {
        let s = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        self.digest.update(path.display().to_string().as_bytes());
        self.digest.update(s.as_bytes());
        Ok(s)
    }

    fn word(&mut self, s: &str) -> Result<Word> {
        self.digest.update(s.as_bytes());
        Word::parse(s).map_err(|e| usage(format!("word `{s}`: {e}")))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let s = self.read(path)?;
        serde_json::from_str(&s).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    fn presentation(&mut self, path: &Path) -> Result<Presentation> {
        let s = self.read(path)?;
        Presentation::from_json(&s).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    fn finish(self) -> String {
        self.digest.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn budget(cli: &Cli) -> SearchBudget {
    let mut b = SearchBudget::default();
    if let Some(s) = cli.budget_states {
        b = b.with_max_states(s);
    }
    if let Some(l) = cli.budget_len {
        b = b.with_max_len(l);
    }
    b
}

fn presentation_value(p: &Presentation) -> Value {
    serde_json::from_str(&p.to_json()).expect("valid json")
}

fn product(a: &ProductArgs) -> Result<PulldownContext> {
    standard_product(a.n, a.m, a.r).map_err(usage)
}

fn words_text(ws: &[Word]) -> String {
    ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("\n")
}

fn run(cli: &Cli, inp: &mut Inputs) -> Result<Outcome> {
    let b = budget(cli);
    Ok(match &cli.cmd {
        Cmd::Reduce { word } => {
            let r = inp.word(word)?.free_reduce();
            Outcome::pass(r.to_string(), json!({ "reduced": r }))
        }
        Cmd::Area { presentation, word, heuristic } => {
            let p = inp.presentation(presentation)?;
            let w = inp.word(word)?;
            let v = if *heuristic { null_homotopy_search(&p, &w, &b) } else { area_exact(&p, &w, &b) };
            let kind = if *heuristic { "upper-bound" } else { "exact" };
            match v {
                AreaVerdict::Area { area, witness } => {
                    Outcome::pass(format!("area {area} ({kind})"), json!({ "area": area, "kind": kind, "witness": witness }))
                }
                AreaVerdict::NotNullHomotopic => Outcome { verdict: Verdict::Fail, text: format!("`{w}` is not null-homotopic"), result: json!({ "null": false }) },
                AreaVerdict::BudgetExhausted { lower_bound } => Outcome {
                    verdict: Verdict::BudgetExhausted,
                    text: format!("budget exhausted; area >= {lower_bound}"),
                    result: json!({ "lower_bound": lower_bound }),
                },
            }
        }
        Cmd::Dehn { presentation, max_length } => {
            let p = inp.presentation(presentation)?;
            let mut rows = Vec::new();
            let mut text = vec!["l\tdelta(l)\tnull words\twitness".to_string()];
            for l in 1..=*max_length {
                match dehn_sample(&p, l, &b, None) {
                    Ok(s) => {
                        text.push(format!("{l}\t{}\t{}\t{}", s.value, s.null_words, s.witness.as_ref().map(|w| w.to_string()).unwrap_or_else(|| "-".into())));
                        rows.push(serde_json::to_value(&s)?);
                    }
                    Err(OracleError::BudgetExhausted { lower_bound }) => {
                        text.push(format!("{l}\t>= {lower_bound}\tbudget exhausted"));
                        return Ok(Outcome { verdict: Verdict::BudgetExhausted, text: text.join("\n"), result: json!({ "rows": rows, "exhausted_at": l }) });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Outcome::pass(text.join("\n"), json!({ "rows": rows }))
        }
        Cmd::VerifyScheme { presentation, scheme, sequences } => {
            let p = inp.presentation(presentation)?;
            let s: Scheme = {
                let t = inp.read(scheme)?;
                Scheme::from_json(&t).map_err(usage)?
            };
            let strategy = match sequences {
                Some(f) => SchemeStrategy::BySequence(inp.json::<Vec<Sequence>>(f)?),
                None => SchemeStrategy::ByOracle(b.clone()),
            };
            let rep = verify_scheme(&p, &s, &strategy);
            let exhausted = rep.rows.iter().any(|r| matches!(r.status, fillings::rewriting::RowStatus::BudgetExhausted { .. }));
            let mut text = vec![format!("claimed total {}", rep.total_claimed)];
            for r in &rep.rows {
                text.push(format!("row {}: claimed {}, {}", r.index, r.claimed, r.status));
            }
            let verdict = if rep.pass {
                Verdict::Pass
            } else if exhausted && rep.rows.iter().all(|r| matches!(r.status, fillings::rewriting::RowStatus::Pass { .. } | fillings::rewriting::RowStatus::BudgetExhausted { .. })) {
                Verdict::BudgetExhausted
            } else {
                Verdict::Fail
            };
            Outcome { verdict, text: text.join("\n"), result: serde_json::to_value(&rep)? }
        }
        Cmd::Pulldown { word, k, h, product: pa } => {
            let c = product(pa)?;
            let w = inp.word(word)?;
            if *k == 0 || *k > c.rank() {
                return Err(usage(format!("--k must be in 1..={}", c.rank())));
            }
            let k0 = k - 1;
            let phi = c.phi(k0, &w, *h)?;
            let seq = c.conjugation_scheme(k0, &w, *h)?;
            let (area, heights) = c.measure(&seq)?;
            let hw = c.theta().heights(&w)?;
            let bound = 2 * w.len() as u64 * (hw.get(k0) + h.unsigned_abs() + 1).pow(2);
            let ok = area <= bound && seq.end(c.presentation())? == c.conjugation_target(k0, &w, *h)?;
            Outcome {
                verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                text: format!("phi: {phi}\ntarget: {}\narea {area} (bound {bound}), heights {:?}", c.conjugation_target(k0, &w, *h)?, heights.0),
                result: json!({ "phi": phi, "area": area, "area_bound": bound, "heights": heights.0, "sequence": seq }),
            }
        }
        Cmd::Flatten { word, product: pa } => {
            let c = product(pa)?;
            let w = inp.word(word)?;
            let f = c.flatten_word(&w).map_err(usage)?;
            let r = c.rank() as u32;
            let bound = 8u64.pow(r) * (w.len() as u64).pow(r + 1);
            let heights = c.theta().heights(&f)?;
            let eq = fillings::oracle::dp_equal(c.spec(), &f, &w)?;
            let ok = eq && heights.max() <= 1 && f.len() as u64 <= bound;
            Outcome {
                verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                text: format!("{f}\nlength {} (bound {bound}), heights {:?}", f.len(), heights.0),
                result: json!({ "word": f, "length": f.len(), "length_bound": bound, "heights": heights.0, "equal": eq }),
            }
        }
        Cmd::Construct(c) => construct(c, inp)?,
        Cmd::Bb { complex, action } => {
            let cx = inp.json::<ComplexFile>(complex)?.into_complex().map_err(usage)?;
            let warnings = cx.connectivity_warnings();
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            match action {
                BbAction::Present => {
                    let raag = raag_presentation(&cx);
                    let dl = dicks_leary_presentation(&cx);
                    Outcome::pass(
                        format!("RAAG:\n{}\nDicks-Leary:\n{}", raag.to_json(), dl.to_json()),
                        json!({ "raag": presentation_value(&raag), "dicks_leary": presentation_value(&dl), "warnings": warnings }),
                    )
                }
                BbAction::Families { index_bound } => {
                    let ctx = BbContext::new(cx)?;
                    let fam = ctx.indexed_families(*index_bound);
                    let text = fam.iter().map(|m| format!("{}\t{:?}\t{}", m.index, m.tag, m.word)).collect::<Vec<_>>().join("\n");
                    Outcome::pass(text, json!({ "diameter": ctx.diameter(), "k": ctx.k_constant(), "families": fam, "warnings": warnings }))
                }
                BbAction::Rarea { index_bound, exact_len } => {
                    let ctx = BbContext::new(cx)?;
                    let t = rarea_sample(&ctx, *index_bound, &b, *exact_len)?;
                    let mut text = vec![format!("L={} K={}", t.l, t.k), "n\tmembers\tscheme max\texact max\tunsettled\tenvelope".into()];
                    for r in &t.rows {
                        text.push(format!(
                            "{}\t{}\t{}\t{}\t{}\t{}",
                            r.index,
                            r.members,
                            r.scheme_max,
                            r.exact_max.map_or("-".into(), |x| x.to_string()),
                            r.unsettled,
                            r.envelope
                        ));
                    }
                    Outcome {
                        verdict: if t.fits_envelope() { Verdict::Pass } else { Verdict::Fail },
                        text: text.join("\n"),
                        result: json!({ "table": t, "warnings": warnings }),
                    }
                }
            }
        }
        Cmd::Distort { theta, sub, knmr, radius } => {
            let (spec, charges, gens) = match (knmr, theta) {
                (Some(s), None) => {
                    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse()).collect::<std::result::Result<_, _>>().map_err(usage)?;
                    let [n, m, r] = v[..] else { return Err(usage("--knmr takes n,m,r")) };
                    let ks = KnmrSpec::new(n, m, r).map_err(usage)?;
                    (ks.direct_product(), knmr_charge(&ks), knmr_generators(&ks)?)
                }
                (None, Some(t)) => {
                    let (spec, ch) = inp.json::<ThetaFile>(t)?.into_parts().map_err(usage)?;
                    if sub.is_empty() {
                        return Err(usage("--theta needs at least one --sub"));
                    }
                    let gens = sub.iter().map(|s| inp.word(s)).collect::<Result<Vec<_>>>()?;
                    for g in &gens {
                        if ch.charge(g).map_err(usage)?.iter().any(|&c| c != 0) {
                            return Err(usage(format!("`{g}` has nonzero charge")));
                        }
                    }
                    (spec, ch, gens)
                }
                _ => return Err(usage("give exactly one of --knmr or --theta")),
            };
            distort(&spec, &charges, &gens, *radius, &b)?
        }
        Cmd::Depth { theta } => {
            let (spec, ch) = inp.json::<ThetaFile>(theta)?.into_parts().map_err(usage)?;
            let d = depth_coabelian(&spec, &ch)?;
            Outcome::pass(format!("depth {d}"), json!({ "depth": d, "factors": spec.factor_count() }))
        }
        Cmd::Bounds { kind, alpha, rho, r, beta1, beta2, pi, rarea, delta } => {
            let k: BoundKind = kind.parse().map_err(usage)?;
            let names: &[(&str, &Option<String>)] = match k {
                BoundKind::AreaRadius => &[("alpha", alpha), ("rho", rho), ("r", r)],
                BoundKind::Split => &[("beta1", beta1), ("beta2", beta2)],
                BoundKind::Penetration => &[("alpha", alpha), ("pi", pi), ("rarea", rarea)],
                BoundKind::SplitDistortion => &[("beta1", beta1), ("beta2", beta2), ("delta", delta)],
            };
            let args = names
                .iter()
                .map(|(n, v)| {
                    let s = v.as_ref().ok_or_else(|| usage(format!("--{n} is required for {}", k.name())))?;
                    inp.digest.update(s.as_bytes());
                    BoundExpr::parse(s).map_err(usage)
                })
                .collect::<Result<Vec<_>>>()?;
            let out = compose_bounds(k, &args).map_err(usage)?.canonical();
            Outcome::pass(out.clone(), json!({ "kind": k.name(), "bound": out }))
        }
        Cmd::Fixtures(Fixtures::Run { only }) => {
            let mut cfg = AcceptanceConfig { seed: cli.seed, ..AcceptanceConfig::default() };
            if let Some(t) = cli.trials {
                cfg.phi_trials = t;
                cfg.flatten_trials = t;
                cfg.pipeline_trials = t;
            }
            let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only.clone() };
            let mut lines = Vec::new();
            let mut rows = Vec::new();
            let mut all = true;
            for id in ids {
                let r = run_criterion(id, &cfg).ok_or_else(|| usage(format!("no criterion {id}")))?;
                all &= r.pass;
                lines.push(r.line());
                rows.push(json!({ "id": r.id, "name": r.name, "pass": r.pass, "detail": r.detail }));
            }
            Outcome { verdict: if all { Verdict::Pass } else { Verdict::Fail }, text: lines.join("\n"), result: json!({ "criteria": rows }) }
        }
    })
}

fn construct(c: &Construct, inp: &mut Inputs) -> Result<Outcome> {
    Ok(match c {
        Construct::Knmr { n, m, r, present } => {
            let spec = KnmrSpec::new(*n, *m, *r).map_err(usage)?;
            if let Some(name) = present {
                if (*n, *m) != (3, 2) {
                    return Err(usage("named presentations exist for n=3, m=2 only"));
                }
                let ps = k32_presentations();
                let p = ps.by_name(name).ok_or_else(|| usage(format!("unknown presentation `{name}` (p1, p2, p3, q1, q2)")))?;
                return Ok(Outcome::pass(p.to_json(), json!({ "name": name, "presentation": presentation_value(p) })));
            }
            let gens = knmr_generators(&spec)?;
            let charge = knmr_charge(&spec);
            let mut names: Vec<_> = charge.generators().collect();
            names.sort_by_key(|g| g.name());
            let charges: Vec<Value> = names.into_iter().map(|g| json!({ "generator": g.name(), "charge": charge.of_symbol(g).unwrap_or(&[]) })).collect();
            Outcome::pass(words_text(&gens), json!({ "generators": gens, "charges": charges }))
        }
        Construct::Fiber { spec } => {
            let (s, peiffer) = inp.json::<FiberSpecFile>(spec)?.into_spec().map_err(usage)?;
            let fp = fiber_presentation(&s, peiffer.as_deref())?;
            if !fp.complete {
                eprintln!("warning: no Peiffer data; the last relator family is omitted");
            }
            Outcome::pass(
                format!("{}\nfamily sizes {:?}, complete {}", fp.presentation.to_json(), fp.family_sizes, fp.complete),
                json!({ "presentation": presentation_value(&fp.presentation), "family_sizes": fp.family_sizes, "complete": fp.complete }),
            )
        }
        Construct::Cyclic { data, index_bound } => {
            let d = inp.json::<PnfFile>(data)?.into_data().map_err(usage)?;
            let rels = cyclic_infinite_presentation(&d, *index_bound)?;
            let text = rels.iter().map(|m| format!("{}\t{:?}\t{}", m.index, m.tag, m.word)).collect::<Vec<_>>().join("\n");
            Outcome::pass(text, json!({ "relators": rels }))
        }
    })
}

fn distort(spec: &DirectProductSpec, charges: &ChargeMap, gens: &[Word], radius: usize, b: &SearchBudget) -> Result<Outcome> {
    let ambient: Vec<Word> = spec.generators().into_iter().map(|s| Word::letter(s.letter())).collect();
    let nf = |w: &Word| spec.normal_form(w).expect("alphabet checked");
    let member = |w: &Word| charges.charge(w).map(|c| c.iter().all(|&x| x == 0)).unwrap_or(false);
    for g in gens {
        if !member(g) {
            return Err(usage(format!("subgroup generator `{g}` has nonzero charge")));
        }
    }
    let mut rows = Vec::new();
    let mut text = vec!["l\tDelta(l)\twitness".to_string()];
    for l in 1..=radius {
        match distortion_sample(gens, &ambient, l, &nf, Some(&member), b) {
            Ok(s) => {
                text.push(format!("{l}\t{}\t{}", s.value, s.witness.as_ref().map_or("-".into(), |w| w.to_string())));
                rows.push(serde_json::to_value(&s)?);
            }
            Err(OracleError::BudgetExhausted { lower_bound }) => {
                text.push(format!("{l}\t>= {lower_bound}\tbudget exhausted"));
                return Ok(Outcome { verdict: Verdict::BudgetExhausted, text: text.join("\n"), result: json!({ "rows": rows }) });
            }
            Err(OracleError::MembershipUndecidable) => {
                text.push(format!("{l}\tsubgroup generators do not reach every kernel element in the ball"));
                return Ok(Outcome { verdict: Verdict::Fail, text: text.join("\n"), result: json!({ "rows": rows, "unreached_at": l }) });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Outcome::pass(text.join("\n"), json!({ "rows": rows })))
}

fn command_echo() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let t = Instant::now();
    let mut inp = Inputs { digest: Sha256::new() };
    let out = run(&cli, &mut inp);
    let digest = inp.finish();
    let (code, report) = match out {
        Ok(o) => {
            let _ = writeln!(std::io::stdout(), "{}", o.text);
            let mut rep = json!({
                "version": 1,
                "command": command_echo(),
                "inputs_digest": digest,
                "seed": cli.seed,
                "verdict": o.verdict,
                "result": o.result,
            });
            if cli.timing {
                rep["timing_ms"] = json!(t.elapsed().as_millis() as u64);
            }
            (o.verdict.code(), rep)
        }
        Err(e) => {
            let usage_error = e.downcast_ref::<Usage>().is_some();
            eprintln!("error: {e:#}");
            let code = if usage_error { 2 } else { 1 };
            (code, json!({ "version": 1, "command": command_echo(), "inputs_digest": digest, "verdict": "error", "error": format!("{e:#}") }))
        }
    };
    if let Some(path) = &cli.json {
        if let Err(e) = write_report(path, &report) {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}

fn write_report(path: &Path, report: &Value) -> Result<()> {
    let s = serde_json::to_string_pretty(report).context("serializing report")?;
    std::fs::write(path, s + "\n").with_context(|| format!("writing {}", path.display()))
}
