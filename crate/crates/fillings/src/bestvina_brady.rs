//! Bestvina-Brady groups of finite flag complexes: RAAG and Dicks-Leary
//! presentations, tree words `p_n(u, v)`, the lifts `Φ_n` of the powers of
//! the conjugation automorphism, the indexed relator families and
//! replay-validated fillings of every family member over the Dicks-Leary
//! presentation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructors::{rational_rank, IndexedRelator, RelatorFamily};
use crate::oracle::{area_exact, AreaVerdict, SearchBudget};
use crate::rewriting::{
    mirror_sequence, realize_scheme_with, replay_sequence, Presentation, RealizedScheme, RewriteError, Scheme, SchemeRow, SeqBuilder, Sequence,
};
use crate::words::{commutator, Letter, Symbol, Word, WordError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BbError {
    #[error("not a simple graph: {0}")]
    NotSimpleGraph(String),
    #[error("declared simplices disagree with the flag completion: {0}")]
    SimplexMismatch(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("`{0}` is not a directed edge")]
    UnknownEdge(String),
    #[error("no combinatorial null-homotopy found for the cycle of edge `{0}`")]
    MissingNullHomotopy(String),
    #[error("invalid null-homotopy at move {0}")]
    InvalidHomotopy(usize),
    #[error("`{0}` is not a relator of the Dicks-Leary presentation")]
    NotARelator(Word),
    #[error("the complex has no vertices")]
    Empty,
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Word(#[from] WordError),
}

type Result<T> = std::result::Result<T, BbError>;

/// A finite flag complex stored by its 1-skeleton.
#[derive(Clone, Debug)]
pub struct FlagComplex {
    vertices: Vec<Symbol>,
    index: HashMap<Symbol, usize>,
    edges: Vec<(usize, usize)>,
    adj: Vec<BTreeSet<usize>>,
    triangles: Vec<[usize; 3]>,
    base: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComplexFile {
    pub vertices: Vec<String>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub base: Option<String>,
    #[serde(default)]
    pub simplices: Option<Vec<Vec<String>>>,
}

impl ComplexFile {
    pub fn into_complex(self) -> Result<FlagComplex> {
        let s = |n: &String| Symbol::new(n).map_err(BbError::from);
        let vertices = self.vertices.iter().map(s).collect::<Result<Vec<_>>>()?;
        let edges = self.edges.iter().map(|(a, b)| Ok((s(a)?, s(b)?))).collect::<Result<Vec<_>>>()?;
        let base = self.base.as_ref().map(s).transpose()?;
        let declared = self.simplices.map(|v| v.iter().map(|f| f.iter().map(s).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()).transpose()?;
        check_flag(&vertices, &edges, base, declared.as_deref())
    }
}

/// Validates a simple graph and derives its triangles. Declared simplices
/// of dimension at most 2, if given, must match the flag completion.
pub fn check_flag(vertices: &[Symbol], edges: &[(Symbol, Symbol)], base: Option<Symbol>, declared: Option<&[Vec<Symbol>]>) -> Result<FlagComplex> {
    let mut index = HashMap::new();
    for (i, &v) in vertices.iter().enumerate() {
        if index.insert(v, i).is_some() {
            return Err(BbError::NotSimpleGraph(format!("vertex `{v}` listed twice")));
        }
    }
    let look = |v: Symbol| index.get(&v).copied().ok_or_else(|| BbError::UnknownVertex(v.name().to_string()));
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        let (i, j) = (look(a)?, look(b)?);
        if i == j {
            return Err(BbError::NotSimpleGraph(format!("loop at `{a}`")));
        }
        if !set.insert((i.min(j), i.max(j))) {
            return Err(BbError::NotSimpleGraph(format!("edge `{a}`-`{b}` listed twice")));
        }
    }
    let edges: Vec<(usize, usize)> = set.into_iter().collect();
    let mut adj = vec![BTreeSet::new(); vertices.len()];
    for &(i, j) in &edges {
        adj[i].insert(j);
        adj[j].insert(i);
    }
    let mut triangles = Vec::new();
    for &(i, j) in &edges {
        for &k in adj[i].intersection(&adj[j]) {
            if k > j {
                triangles.push([i, j, k]);
            }
        }
    }
    triangles.sort();
    let base = match base {
        Some(b) => look(b)?,
        None if vertices.is_empty() => 0,
        None => (0..vertices.len()).min_by_key(|&i| vertices[i].name()).expect("nonempty"),
    };
    let c = FlagComplex { vertices: vertices.to_vec(), index, edges, adj, triangles, base };
    if let Some(decl) = declared {
        let mut tri = BTreeSet::new();
        for s in decl {
            let mut ix = s.iter().map(|&v| c.vertex(v)).collect::<Result<Vec<_>>>()?;
            ix.sort();
            for a in 0..ix.len() {
                for b in a + 1..ix.len() {
                    if !c.adj[ix[a]].contains(&ix[b]) {
                        return Err(BbError::SimplexMismatch(format!("{s:?} spans a non-edge")));
                    }
                }
            }
            if ix.len() == 3 {
                tri.insert([ix[0], ix[1], ix[2]]);
            }
        }
        let derived: BTreeSet<[usize; 3]> = c.triangles.iter().copied().collect();
        if tri != derived {
            return Err(BbError::SimplexMismatch(format!("{} declared triangles, {} derived", tri.len(), derived.len())));
        }
    }
    Ok(c)
}

/// Directed edge: `(ι, τ)` as vertex indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirEdge {
    pub from: usize,
    pub to: usize,
}

impl DirEdge {
    pub fn rev(self) -> DirEdge {
        DirEdge { from: self.to, to: self.from }
    }
}

impl FlagComplex {
    pub fn vertices(&self) -> &[Symbol] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn vertex(&self, v: Symbol) -> Result<usize> {
        self.index.get(&v).copied().ok_or_else(|| BbError::UnknownVertex(v.name().to_string()))
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i].contains(&j)
    }

    /// Directed edges, two per 1-simplex.
    pub fn directed_edges(&self) -> Vec<DirEdge> {
        self.edges.iter().flat_map(|&(i, j)| [DirEdge { from: i, to: j }, DirEdge { from: j, to: i }]).collect()
    }

    pub fn edge_symbol(&self, e: DirEdge) -> Symbol {
        Symbol::intern(&format!("{}_{}", self.vertices[e.from], self.vertices[e.to]))
    }

    pub fn edge_letter(&self, e: DirEdge) -> Letter {
        self.edge_symbol(e).letter()
    }

    /// Inverse of `edge_symbol`.
    pub fn edge_of(&self, s: Symbol) -> Result<DirEdge> {
        let (a, b) = s.name().split_once('_').ok_or_else(|| BbError::UnknownEdge(s.name().to_string()))?;
        let (i, j) = (
            *self.index.get(&Symbol::intern(a)).ok_or_else(|| BbError::UnknownEdge(s.name().to_string()))?,
            *self.index.get(&Symbol::intern(b)).ok_or_else(|| BbError::UnknownEdge(s.name().to_string()))?,
        );
        if !self.adjacent(i, j) {
            return Err(BbError::UnknownEdge(s.name().to_string()));
        }
        Ok(DirEdge { from: i, to: j })
    }

    /// Graph distances from `s`.
    pub fn distances(&self, s: usize) -> Vec<Option<usize>> {
        let mut d = vec![None; self.vertices.len()];
        d[s] = Some(0);
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &self.adj[u] {
                if d[v].is_none() {
                    d[v] = Some(d[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        d
    }

    pub fn is_connected(&self) -> bool {
        self.vertices.is_empty() || self.distances(0).iter().all(Option::is_some)
    }

    /// `L`: the largest distance between two vertices.
    pub fn diameter(&self) -> usize {
        (0..self.vertices.len()).map(|s| self.distances(s).into_iter().map(|d| d.unwrap_or(0)).max().unwrap_or(0)).max().unwrap_or(0)
    }

    /// The directed 3-cycles `e·f·g` around triangles.
    pub fn triangle_cycles(&self) -> Vec<[DirEdge; 3]> {
        let mut out = Vec::new();
        for &[a, b, c] in &self.triangles {
            for [x, y, z] in [[a, b, c], [b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]] {
                out.push([DirEdge { from: x, to: y }, DirEdge { from: y, to: z }, DirEdge { from: z, to: x }]);
            }
        }
        out
    }

    /// Rank of `H_1` of the 2-skeleton over `Q`.
    pub fn first_betti(&self) -> usize {
        let e_ix: HashMap<(usize, usize), usize> = self.edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let rows: Vec<Vec<i64>> = self
            .triangles
            .iter()
            .map(|&[a, b, c]| {
                let mut r = vec![0; self.edges.len()];
                r[e_ix[&(a, b)]] += 1;
                r[e_ix[&(b, c)]] += 1;
                r[e_ix[&(a, c)]] -= 1;
                r
            })
            .collect();
        let components = {
            let mut seen = vec![false; self.vertices.len()];
            let mut k = 0;
            for s in 0..self.vertices.len() {
                if !seen[s] {
                    k += 1;
                    for (v, d) in self.distances(s).iter().enumerate() {
                        if d.is_some() {
                            seen[v] = true;
                        }
                    }
                }
            }
            k
        };
        let cycles = self.edges.len() + components - self.vertices.len();
        cycles - rational_rank(&rows)
    }

    /// Necessary conditions for simple connectivity that are cheap to test.
    pub fn connectivity_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.is_connected() {
            w.push("complex is disconnected".to_string());
        }
        let b1 = self.first_betti();
        if b1 > 0 {
            w.push(format!("H_1 has rank {b1}; the complex is not simply connected"));
        }
        w
    }
}

/// One generator per vertex, one commutator per edge.
pub fn raag_presentation(c: &FlagComplex) -> Presentation {
    let rels = c.edges.iter().map(|&(i, j)| commutator(&Word::letter(c.vertices[i].letter()), &Word::letter(c.vertices[j].letter()))).collect();
    Presentation::new(c.vertices.clone(), rels).expect("closed alphabet")
}

/// `⟨Edge(Δ) | e ē, efg, e⁻¹f⁻¹g⁻¹⟩`.
pub fn dicks_leary_presentation(c: &FlagComplex) -> Presentation {
    let gens: Vec<Symbol> = c.directed_edges().into_iter().map(|e| c.edge_symbol(e)).collect();
    let mut rels = Vec::new();
    for e in c.directed_edges() {
        rels.push(Word::from_letters(vec![c.edge_letter(e), c.edge_letter(e.rev())]));
    }
    for cyc in c.triangle_cycles() {
        let w = Word::from_letters(cyc.iter().map(|&e| c.edge_letter(e)).collect());
        rels.push(w.clone());
        rels.push(Word::from_letters(w.letters().iter().map(|l| l.inverse()).collect()));
    }
    Presentation::new(gens, rels).expect("closed alphabet")
}

/// Image of an edge word in the RAAG under `e ↦ ιe (τe)⁻¹`.
pub fn raag_image(c: &FlagComplex, w: &Word) -> Result<Word> {
    let mut out = Vec::new();
    for &l in w.letters() {
        let e = c.edge_of(l.gen())?;
        let (a, b) = (c.vertices[e.from].letter(), c.vertices[e.to].inv());
        if l.is_inverse() {
            out.extend([b.inverse(), a.inverse()]);
        } else {
            out.extend([a, b]);
        }
    }
    Ok(Word::from_letters(out))
}

pub fn raag_commutes(c: &FlagComplex) -> impl Fn(Symbol, Symbol) -> bool + '_ {
    move |a, b| match (c.index.get(&a), c.index.get(&b)) {
        (Some(&i), Some(&j)) => c.adjacent(i, j),
        _ => false,
    }
}

/// Breadth-first spanning tree from the base vertex, neighbours visited
/// in name order.
#[derive(Clone, Debug)]
pub struct SpanningTree {
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl SpanningTree {
    pub fn bfs(c: &FlagComplex) -> Result<SpanningTree> {
        let n = c.vertices.len();
        if n == 0 {
            return Err(BbError::Empty);
        }
        let mut parent = vec![None; n];
        let mut depth = vec![usize::MAX; n];
        depth[c.base] = 0;
        let mut q = VecDeque::from([c.base]);
        while let Some(u) = q.pop_front() {
            let mut nb: Vec<usize> = c.adj[u].iter().copied().collect();
            nb.sort_by_key(|&v| c.vertices[v].name());
            for v in nb {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    parent[v] = Some(u);
                    q.push_back(v);
                }
            }
        }
        if let Some(v) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(BbError::NotSimpleGraph(format!("vertex `{}` unreachable from the base", c.vertices[v])));
        }
        Ok(SpanningTree { parent, depth })
    }

    pub fn tree_edges(&self) -> Vec<(usize, usize)> {
        self.parent.iter().enumerate().filter_map(|(v, p)| p.map(|p| (p, v))).collect()
    }

    /// The tree path from `u` to `v` as directed edges.
    pub fn path(&self, u: usize, v: usize) -> Vec<DirEdge> {
        let (mut a, mut b) = (u, v);
        let mut up = Vec::new();
        let mut down = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] {
                let p = self.parent[a].expect("non-root");
                up.push(DirEdge { from: a, to: p });
                a = p;
            } else {
                let p = self.parent[b].expect("non-root");
                down.push(DirEdge { from: p, to: b });
                b = p;
            }
        }
        down.reverse();
        up.extend(down);
        up
    }
}

/// A sequence of 1-cycles from a cycle to the empty cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinatorialNullHomotopy {
    pub start: Vec<DirEdge>,
    pub moves: Vec<CellMove>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum CellMove {
    /// Insert `e·ē` at position `pos`.
    Expand1 { pos: usize, edge: DirEdge },
    /// Remove `e·ē` at `pos`.
    Collapse1 { pos: usize },
    /// Insert the triangle cycle `e·f·g` at `pos`.
    Expand2 { pos: usize, cycle: [DirEdge; 3] },
    /// Remove the triangle cycle at `pos`.
    Collapse2 { pos: usize },
}

impl CombinatorialNullHomotopy {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// The intermediate cycles, checking every move.
    pub fn cycles(&self, c: &FlagComplex) -> Result<Vec<Vec<DirEdge>>> {
        let mut cur = self.start.clone();
        let mut out = vec![cur.clone()];
        for (i, m) in self.moves.iter().enumerate() {
            cur = apply_cell_move(c, &cur, m).ok_or(BbError::InvalidHomotopy(i))?;
            out.push(cur.clone());
        }
        if !cur.is_empty() {
            return Err(BbError::InvalidHomotopy(self.moves.len()));
        }
        Ok(out)
    }
}

fn is_triangle_cycle(c: &FlagComplex, t: &[DirEdge]) -> bool {
    t.len() == 3
        && t[0].to == t[1].from
        && t[1].to == t[2].from
        && t[2].to == t[0].from
        && t.iter().all(|e| c.adjacent(e.from, e.to))
        && t[0].from != t[1].from
        && t[1].from != t[2].from
        && t[0].from != t[2].from
}

fn vertex_at(cur: &[DirEdge], pos: usize) -> Option<usize> {
    if cur.is_empty() {
        None
    } else if pos < cur.len() {
        Some(cur[pos].from)
    } else {
        Some(cur[cur.len() - 1].to)
    }
}

fn apply_cell_move(c: &FlagComplex, cur: &[DirEdge], m: &CellMove) -> Option<Vec<DirEdge>> {
    let mut v = cur.to_vec();
    match *m {
        CellMove::Expand1 { pos, edge } => {
            if pos > v.len() || !c.adjacent(edge.from, edge.to) || vertex_at(cur, pos).is_some_and(|x| x != edge.from) {
                return None;
            }
            v.splice(pos..pos, [edge, edge.rev()]);
        }
        CellMove::Collapse1 { pos } => {
            if pos + 1 >= v.len() || v[pos + 1] != v[pos].rev() {
                return None;
            }
            v.drain(pos..pos + 2);
        }
        CellMove::Expand2 { pos, cycle } => {
            if pos > v.len() || !is_triangle_cycle(c, &cycle) || vertex_at(cur, pos).is_some_and(|x| x != cycle[0].from) {
                return None;
            }
            v.splice(pos..pos, cycle);
        }
        CellMove::Collapse2 { pos } => {
            if pos + 3 > v.len() || !is_triangle_cycle(c, &v[pos..pos + 3]) {
                return None;
            }
            v.drain(pos..pos + 3);
        }
    }
    Some(v)
}

/// Shortest combinatorial null-homotopy with cycles of length at most
/// `cap`, by breadth-first search.
pub fn find_null_homotopy(c: &FlagComplex, start: &[DirEdge], cap: usize, max_states: usize) -> Option<CombinatorialNullHomotopy> {
    let mut parent: HashMap<Vec<DirEdge>, Option<(Vec<DirEdge>, CellMove)>> = HashMap::new();
    parent.insert(start.to_vec(), None);
    let mut q = VecDeque::from([start.to_vec()]);
    let dedges = c.directed_edges();
    let cycles = c.triangle_cycles();
    while let Some(cur) = q.pop_front() {
        if cur.is_empty() {
            let mut moves = Vec::new();
            let mut k = cur;
            while let Some(Some((prev, m))) = parent.get(&k).cloned() {
                moves.push(m);
                k = prev;
            }
            moves.reverse();
            return Some(CombinatorialNullHomotopy { start: start.to_vec(), moves });
        }
        let mut cands = Vec::new();
        for pos in 0..cur.len() {
            cands.push(CellMove::Collapse1 { pos });
            cands.push(CellMove::Collapse2 { pos });
        }
        for pos in 0..=cur.len() {
            if cur.len() + 2 <= cap {
                for &e in &dedges {
                    cands.push(CellMove::Expand1 { pos, edge: e });
                }
            }
            if cur.len() + 3 <= cap {
                for &t in &cycles {
                    cands.push(CellMove::Expand2 { pos, cycle: t });
                }
            }
        }
        for m in cands {
            if let Some(next) = apply_cell_move(c, &cur, &m) {
                if !parent.contains_key(&next) {
                    parent.insert(next.clone(), Some((cur.clone(), m)));
                    if parent.len() > max_states {
                        return None;
                    }
                    q.push_back(next);
                }
            }
        }
    }
    None
}

/// Which Dicks-Leary relator a word is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelatorKind {
    EdgeInverse,
    Triangle,
    InverseTriangle,
}

/// Everything needed to write down and fill the indexed relators.
#[derive(Clone, Debug)]
pub struct BbContext {
    pub complex: FlagComplex,
    pub tree: SpanningTree,
    pub pres: Presentation,
    homotopies: BTreeMap<DirEdge, CombinatorialNullHomotopy>,
    l: u64,
    k: u64,
}

fn pow_letter(l: Letter, n: i64) -> Word {
    Word::letter(l).pow(n)
}

fn cat(parts: &[Word]) -> Word {
    Word::from_letters(parts.iter().flat_map(|w| w.letters().iter().copied()).collect())
}

fn lens(parts: &[Word]) -> Vec<usize> {
    let mut off = vec![0];
    for p in parts {
        off.push(off.last().unwrap() + p.len());
    }
    off
}

fn row(word: Word, area: u64) -> SchemeRow {
    SchemeRow { word, area, heights: None }
}

/// A replay-checked filling with its bound.
#[derive(Clone, Debug)]
pub struct BoundedFilling {
    pub realized: RealizedScheme,
    pub bound: u64,
}

impl BoundedFilling {
    pub fn area(&self) -> u64 {
        self.realized.area()
    }

    pub fn within_bound(&self) -> bool {
        self.area() <= self.bound
    }
}

impl BbContext {
    /// Builds the tree, the presentation and one shortest combinatorial
    /// null-homotopy per directed edge.
    pub fn new(complex: FlagComplex) -> Result<BbContext> {
        let tree = SpanningTree::bfs(&complex)?;
        let pres = dicks_leary_presentation(&complex);
        let q = complex.base;
        let results: Vec<(DirEdge, Option<CombinatorialNullHomotopy>)> = complex
            .directed_edges()
            .into_par_iter()
            .map(|e| {
                let mut cyc = tree.path(q, e.from);
                cyc.push(e);
                cyc.extend(tree.path(e.to, q));
                let cap = cyc.len() + 4;
                (e, find_null_homotopy(&complex, &cyc, cap, 2_000_000))
            })
            .collect();
        let mut homotopies = BTreeMap::new();
        for (e, h) in results {
            match h {
                Some(h) => {
                    homotopies.insert(e, h);
                }
                None => return Err(BbError::MissingNullHomotopy(complex.edge_symbol(e).name().to_string())),
            }
        }
        let k = 3 * homotopies.values().map(|h| h.len() as u64).max().unwrap_or(0);
        let l = complex.diameter() as u64;
        Ok(BbContext { complex, tree, pres, homotopies, l, k })
    }

    pub fn from_names(vertices: &[&str], edges: &[(&str, &str)], base: &str) -> Result<BbContext> {
        let v: Vec<Symbol> = vertices.iter().map(|s| Symbol::intern(s)).collect();
        let e: Vec<(Symbol, Symbol)> = edges.iter().map(|(a, b)| (Symbol::intern(a), Symbol::intern(b))).collect();
        BbContext::new(check_flag(&v, &e, Some(Symbol::intern(base)), None)?)
    }

    /// `L`.
    pub fn diameter(&self) -> u64 {
        self.l
    }

    /// `K = 3 max m(e)`.
    pub fn k_constant(&self) -> u64 {
        self.k
    }

    pub fn null_homotopy(&self, e: DirEdge) -> &CombinatorialNullHomotopy {
        &self.homotopies[&e]
    }

    fn letter(&self, e: DirEdge) -> Letter {
        self.complex.edge_letter(e)
    }

    /// `p_n(u, v)`.
    pub fn tree_word(&self, n: i64, u: usize, v: usize) -> Word {
        cat(&self.tree.path(u, v).into_iter().map(|e| pow_letter(self.letter(e), n)).collect::<Vec<_>>())
    }

    pub fn tree_word_named(&self, n: i64, u: Symbol, v: Symbol) -> Result<Word> {
        Ok(self.tree_word(n, self.complex.vertex(u)?, self.complex.vertex(v)?))
    }

    fn q(&self) -> usize {
        self.complex.base
    }

    /// `Φ_n(e) = p_n(q, ιe) e^{n+1} p_n(τe, q)`.
    fn phi_edge(&self, n: i64, e: DirEdge) -> Word {
        cat(&[self.tree_word(n, self.q(), e.from), pow_letter(self.letter(e), n + 1), self.tree_word(n, e.to, self.q())])
    }

    pub fn phi(&self, n: i64, w: &Word) -> Result<Word> {
        let mut out = Vec::new();
        for &l in w.letters() {
            let img = self.phi_edge(n, self.complex.edge_of(l.gen())?);
            out.extend(if l.is_inverse() { img.inverse() } else { img }.into_letters());
        }
        Ok(Word::from_letters(out))
    }

    /// `w_e = p(q, ιe) e p(ιe, q)`.
    pub fn w_e(&self, e: DirEdge) -> Word {
        cat(&[self.tree_word(1, self.q(), e.from), Word::letter(self.letter(e)), self.tree_word(1, e.from, self.q())])
    }

    /// The positive normal form presentation of the RAAG over edges and `t`.
    pub fn extension_presentation(&self) -> Presentation {
        let t = Symbol::intern("t");
        let mut gens = self.pres.generators().to_vec();
        gens.push(t);
        let mut rels = self.pres.relators().to_vec();
        for e in self.complex.directed_edges() {
            let ew = Word::letter(self.letter(e));
            rels.push(crate::words::conjugate(&ew, &Word::letter(t.letter())).concat(&self.w_e(e).inverse()));
        }
        Presentation::new(gens, rels).expect("closed alphabet")
    }

    pub fn classify(&self, r: &Word) -> Result<(RelatorKind, Vec<DirEdge>)> {
        let edges = r.letters().iter().map(|l| self.complex.edge_of(l.gen())).collect::<Result<Vec<_>>>()?;
        let signs: Vec<bool> = r.letters().iter().map(|l| l.is_inverse()).collect();
        if edges.len() == 2 && edges[1] == edges[0].rev() && !signs[0] && !signs[1] {
            return Ok((RelatorKind::EdgeInverse, edges));
        }
        if edges.len() == 3 && is_triangle_cycle(&self.complex, &edges) {
            if signs.iter().all(|s| !s) {
                return Ok((RelatorKind::Triangle, edges));
            }
            if signs.iter().all(|&s| s) {
                return Ok((RelatorKind::InverseTriangle, edges));
            }
        }
        Err(BbError::NotARelator(r.clone()))
    }

    /// `R̄ ∪ S̄` members of index at most `bound`, smallest index kept.
    pub fn indexed_families(&self, bound: u64) -> Vec<IndexedRelator> {
        let b = bound as i64;
        let mut ks: Vec<i64> = (-b..=b).collect();
        ks.sort_by_key(|k| (k.unsigned_abs(), *k < 0));
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for &k in &ks {
            for (i, r) in self.pres.relators().iter().enumerate() {
                let w = self.phi(k, r).expect("edge word");
                if seen.insert(w.clone()) {
                    out.push(IndexedRelator { word: w, index: k.unsigned_abs(), tag: RelatorFamily::R { relator: i, k } });
                }
            }
            for e in self.complex.directed_edges() {
                let w = self.stable_word(e, k);
                if seen.insert(w.clone()) {
                    out.push(IndexedRelator {
                        word: w,
                        index: k.unsigned_abs(),
                        tag: RelatorFamily::S { letter: self.complex.edge_symbol(e).name().to_string(), k },
                    });
                }
            }
        }
        out
    }

    /// `Φ_{n+1}(e) Φ_n(w_e)⁻¹`.
    pub fn stable_word(&self, e: DirEdge, n: i64) -> Word {
        self.phi_edge(n + 1, e).concat(&self.phi(n, &self.w_e(e)).expect("edge word").inverse())
    }

    // Sequence primitives over the Dicks-Leary presentation.

    /// Rewrites `[lo, lo + |target|)` letter by letter, each differing pair
    /// `a`, `c` costing the single relator `a c⁻¹`.
    fn letterwise(&self, b: &mut SeqBuilder, lo: usize, target: &Word) -> Result<()> {
        for (i, &t) in target.letters().iter().enumerate() {
            let a = b.letter_at(lo + i);
            if a != t {
                b.replace(lo + i, &Word::letter(a), &Word::letter(t))?;
            }
        }
        Ok(())
    }

    /// Null sequence for `e^n f^n g^n` around a triangle cycle.
    pub fn triangle_power_sequence(&self, cyc: [DirEdge; 3], n: i64) -> Result<Sequence> {
        let [e, f, g] = cyc.map(|x| self.letter(x));
        let start = cat(&[pow_letter(e, n), pow_letter(f, n), pow_letter(g, n)]);
        let mut b = SeqBuilder::new(&self.pres, &start);
        let k = n.unsigned_abs() as usize;
        let ef = Word::from_letters(vec![e, f]);
        let repl = if n > 0 { ef.inverse() } else { ef };
        let base = 2 * k;
        for i in (0..k).rev() {
            let at = base + i;
            let cur = b.letter_at(at);
            b.replace(at, &Word::letter(cur), &repl)?;
        }
        let target = cat(&[pow_letter(f, -n), pow_letter(e, -n)]);
        let comm = move |x: Letter, y: Letter| {
            let (a, c) = (x.gen(), y.gen());
            a != c && [a, c].contains(&e.gen()) && [a, c].contains(&f.gen())
        };
        b.commute_transition(base, base + 2 * k, &target, &comm)?;
        b.free_to(&Word::empty())?;
        Ok(b.finish())
    }

    /// `W_n(C)`.
    pub fn cycle_word(&self, cyc: &[DirEdge], n: i64) -> Word {
        cat(&cyc.iter().map(|&e| pow_letter(self.letter(e), n)).collect::<Vec<_>>())
    }

    /// Null sequence for `W_n(C_0)` following a combinatorial null-homotopy.
    pub fn null_homotopy_to_sequence(&self, nh: &CombinatorialNullHomotopy, n: i64) -> Result<Sequence> {
        let cycles = nh.cycles(&self.complex)?;
        let k = n.unsigned_abs() as usize;
        let mut b = SeqBuilder::new(&self.pres, &self.cycle_word(&nh.start, n));
        for (i, m) in nh.moves.iter().enumerate() {
            let cur = &cycles[i];
            match *m {
                CellMove::Collapse1 { pos } => {
                    let e = cur[pos];
                    let lo = pos * k;
                    self.letterwise(&mut b, lo + k, &pow_letter(self.letter(e), -n))?;
                    b.free_segment_to(lo, lo + 2 * k, &Word::empty())?;
                }
                CellMove::Expand1 { pos, edge } => {
                    let lo = pos * k;
                    b.insert_trivial(lo, &pow_letter(self.letter(edge), n))?;
                    self.letterwise(&mut b, lo + k, &pow_letter(self.letter(edge.rev()), n))?;
                }
                CellMove::Collapse2 { pos } => {
                    let s = self.triangle_power_sequence([cur[pos], cur[pos + 1], cur[pos + 2]], n)?;
                    b.embed(pos * k, &s)?;
                }
                CellMove::Expand2 { pos, cycle } => {
                    let s = self.triangle_power_sequence(cycle, n)?;
                    b.embed(pos * k, &crate::rewriting::reverse_sequence(&self.pres, &s)?)?;
                }
            }
        }
        if !b.is_empty() {
            return Err(BbError::InvalidHomotopy(nh.moves.len()));
        }
        Ok(b.finish())
    }

    /// Null sequence for `p_n(q, ιe) e^n p_n(τe, q)`.
    pub fn edge_cycle_sequence(&self, e: DirEdge, n: i64) -> Result<Sequence> {
        self.null_homotopy_to_sequence(&self.homotopies[&e], n)
    }

    /// Sequence from `p_n(τe, q) p_n(q, ιe)` to `e^{-n}`.
    fn rotated_cycle(&self, e: DirEdge, n: i64) -> Result<Sequence> {
        let q = self.q();
        let v = self.tree_word(n, e.to, q);
        let u = self.tree_word(n, q, e.from).concat(&pow_letter(self.letter(e), n));
        let y = self.tree_word(n, e.to, q).concat(&self.tree_word(n, q, e.from));
        let en = pow_letter(self.letter(e), n);
        let mut b = SeqBuilder::new(&self.pres, &y);
        b.insert_trivial(y.len(), &en)?;
        b.insert_trivial(0, &u.inverse())?;
        debug_assert_eq!(b.current().slice(u.len(), 2 * u.len() + v.len()), self.cycle_word(&self.homotopies[&e].start, n));
        b.embed(u.len(), &self.edge_cycle_sequence(e, n)?)?;
        b.free_to(&en.inverse())?;
        Ok(b.finish())
    }

    /// `Φ_n(p(u, v))` to `p_n(q, u) p_{n+1}(u, v) p_n(q, v)⁻¹`.
    fn phi_path_sequence(&self, n: i64, u: usize, v: usize) -> Result<Sequence> {
        let q = self.q();
        let path = self.tree.path(u, v);
        let parts: Vec<Word> = path.iter().flat_map(|&e| [self.tree_word(n, q, e.from), pow_letter(self.letter(e), n + 1), self.tree_word(n, e.to, q)]).collect();
        let mut b = SeqBuilder::new(&self.pres, &cat(&parts));
        let off = lens(&parts);
        for (i, &e) in path.iter().enumerate() {
            self.letterwise(&mut b, off[3 * i + 2], &self.tree_word(n, q, e.to).inverse())?;
        }
        b.free_to(&cat(&[self.tree_word(n, q, u), self.tree_word(n + 1, u, v), self.tree_word(n, q, v).inverse()]))?;
        Ok(b.finish())
    }

    /// Filling of `Φ_n(e ē)`.
    pub fn edge_inverse_filling(&self, e: DirEdge, n: i64) -> Result<BoundedFilling> {
        let q = self.q();
        let (l, a) = (self.l, n.unsigned_abs());
        let el = self.letter(e);
        let eb = self.letter(e.rev());
        let r1 = vec![
            self.tree_word(n, q, e.from),
            pow_letter(el, n + 1),
            self.tree_word(n, e.to, q),
            self.tree_word(n, q, e.to),
            pow_letter(eb, n + 1),
            self.tree_word(n, e.from, q),
        ];
        let r2 = vec![r1[0].clone(), r1[1].clone(), r1[4].clone(), r1[5].clone()];
        let r3 = vec![r1[0].clone(), r1[5].clone()];
        let scheme = Scheme { rows: vec![row(cat(&r1), l * a), row(cat(&r2), a + 1), row(cat(&r3), l * a)], target: Word::empty() };
        let step = |b: &mut SeqBuilder, i: usize, next: &Word| -> std::result::Result<(), RewriteError> {
            let map = |e: BbError| match e {
                BbError::Rewrite(r) => r,
                o => RewriteError::InvalidSequence(o.to_string()),
            };
            match i {
                0 => self.letterwise(b, lens(&r1)[2], &r1[3].inverse()).map_err(map)?,
                1 => self.letterwise(b, lens(&r2)[2], &pow_letter(el, -(n + 1))).map_err(map)?,
                _ => self.letterwise(b, lens(&r3)[1], &r3[0].inverse()).map_err(map)?,
            }
            b.free_to(next)
        };
        let realized = realize_scheme_with(&self.pres, &scheme, &step)?;
        Ok(BoundedFilling { realized, bound: edge_inverse_bound(l, n) })
    }

    /// Filling of `Φ_n(efg)`.
    pub fn triangle_filling(&self, cyc: [DirEdge; 3], n: i64) -> Result<BoundedFilling> {
        let q = self.q();
        let (l, a) = (self.l, n.unsigned_abs());
        let [e, f, g] = cyc;
        let p = |x: DirEdge| vec![self.tree_word(n, q, x.from), pow_letter(self.letter(x), n + 1), self.tree_word(n, x.to, q)];
        let r1: Vec<Word> = [p(e), p(f), p(g)].concat();
        let r2 = vec![r1[0].clone(), r1[1].clone(), r1[4].clone(), r1[7].clone(), r1[8].clone()];
        let r3 = vec![r1[0].clone(), r1[8].clone()];
        let m = (n + 1).unsigned_abs();
        let scheme = Scheme { rows: vec![row(cat(&r1), 2 * l * a), row(cat(&r2), 3 * m * m), row(cat(&r3), l * a)], target: Word::empty() };
        let seq2 = self.triangle_power_sequence(cyc, n + 1)?;
        let step = |b: &mut SeqBuilder, i: usize, next: &Word| -> std::result::Result<(), RewriteError> {
            let map = |e: BbError| match e {
                BbError::Rewrite(r) => r,
                o => RewriteError::InvalidSequence(o.to_string()),
            };
            match i {
                0 => {
                    let off = lens(&r1);
                    self.letterwise(b, off[5], &r1[6].inverse()).map_err(map)?;
                    self.letterwise(b, off[2], &r1[3].inverse()).map_err(map)?;
                }
                1 => b.embed(r2[0].len(), &seq2)?,
                _ => self.letterwise(b, r3[0].len(), &r3[0].inverse()).map_err(map)?,
            }
            b.free_to(next)
        };
        let realized = realize_scheme_with(&self.pres, &scheme, &step)?;
        Ok(BoundedFilling { realized, bound: triangle_bound(l, n) })
    }

    /// Filling of `Φ_n(e⁻¹f⁻¹g⁻¹)`.
    pub fn inverse_triangle_filling(&self, cyc: [DirEdge; 3], n: i64) -> Result<BoundedFilling> {
        let q = self.q();
        let (l, k, a) = (self.l, self.k, n.unsigned_abs());
        let [e, f, g] = cyc;
        let (le, lf, lg) = (self.letter(e), self.letter(f), self.letter(g));
        let tw = |m: i64, u: usize, v: usize| self.tree_word(m, u, v);
        let pinv = |x: DirEdge| vec![tw(n, x.to, q).inverse(), pow_letter(self.letter(x), -n - 1), tw(n, q, x.from).inverse()];
        let r1: Vec<Word> = [pinv(e), pinv(f), pinv(g)].concat();
        let r2: Vec<Word> = [e, f, g]
            .iter()
            .flat_map(|&x| [tw(n, q, x.to), pow_letter(self.letter(x), -n - 1), tw(n, x.from, q)])
            .collect();
        let pf = tw(n, q, f.from);
        let r3 = vec![
            pf.clone(),
            pow_letter(le, -n - 1),
            tw(n, g.to, q),
            tw(n, q, g.from),
            pow_letter(lf, -n - 1),
            tw(n, e.to, q),
            tw(n, q, e.from),
            pow_letter(lg, -n - 1),
            tw(n, f.to, q),
            tw(n, q, f.from),
            pf.inverse(),
        ];
        let r4 = vec![
            pf.clone(),
            pow_letter(le, -n - 1),
            pow_letter(lg, -n),
            pow_letter(lf, -n - 1),
            pow_letter(le, -n),
            pow_letter(lg, -n - 1),
            pow_letter(lf, -n),
            pf.inverse(),
        ];
        let efw = Word::from_letters(vec![le, lf]);
        let r5 = vec![
            pf.clone(),
            pow_letter(le, -n - 1),
            efw.pow(n),
            pow_letter(lf, -n - 1),
            pow_letter(le, -n),
            efw.pow(n + 1),
            pow_letter(lf, -n),
            pf.inverse(),
        ];
        let r6 = vec![
            pf.clone(),
            pow_letter(le, -n - 1),
            pow_letter(le, n),
            pow_letter(lf, n),
            pow_letter(lf, -n - 1),
            pow_letter(le, -n),
            pow_letter(le, n + 1),
            pow_letter(lf, n + 1),
            pow_letter(lf, -n),
            pf.inverse(),
        ];
        let r7 = vec![pf.clone(), Word::from_letters(vec![le.inverse(), lf.inverse(), le, lf]), pf.inverse()];
        let r8 = vec![pf.clone(), Word::from_letters(vec![lg, lg.inverse()]), pf.inverse()];
        let m = (n + 1).unsigned_abs();
        let scheme = Scheme {
            rows: vec![
                row(cat(&r1), 6 * l * a),
                row(cat(&r2), 0),
                row(cat(&r3), 3 * k * a * a),
                row(cat(&r4), 2 * a + 1),
                row(cat(&r5), 2 * a * a + 2 * m * m),
                row(cat(&r6), 0),
                row(cat(&r7), 2),
                row(cat(&r8), 0),
            ],
            target: Word::empty(),
        };
        let rot = [self.rotated_cycle(e, n)?, self.rotated_cycle(f, n)?, self.rotated_cycle(g, n)?];
        let step = |b: &mut SeqBuilder, i: usize, next: &Word| -> std::result::Result<(), RewriteError> {
            let map = |e: BbError| match e {
                BbError::Rewrite(r) => r,
                o => RewriteError::InvalidSequence(o.to_string()),
            };
            match i {
                0 => {
                    let off = lens(&r1);
                    for j in (0..9).rev() {
                        if j % 3 != 1 {
                            self.letterwise(b, off[j], &r2[j]).map_err(map)?;
                        }
                    }
                }
                1 => {}
                2 => {
                    let off = lens(&r3);
                    b.embed(off[8], &rot[1])?;
                    b.embed(off[5], &rot[0])?;
                    b.embed(off[2], &rot[2])?;
                }
                3 => {
                    let off = lens(&r4);
                    let rep = if n >= 0 { efw.clone() } else { efw.inverse() };
                    for (blk, cnt) in [(5usize, (n + 1).unsigned_abs()), (2, n.unsigned_abs())] {
                        for t in (0..cnt as usize).rev() {
                            let at = off[blk] + t;
                            let cur = b.letter_at(at);
                            let want = if cur.is_inverse() { efw.clone() } else { efw.inverse() };
                            debug_assert_eq!(want, rep);
                            b.replace(at, &Word::letter(cur), &want)?;
                        }
                    }
                }
                4 => {
                    let off = lens(&r5);
                    let comm = move |x: Letter, y: Letter| {
                        let (a, c) = (x.gen(), y.gen());
                        a != c && [a, c].contains(&le.gen()) && [a, c].contains(&lf.gen())
                    };
                    b.commute_transition(off[5], off[6], &cat(&[pow_letter(le, n + 1), pow_letter(lf, n + 1)]), &comm)?;
                    b.commute_transition(off[2], off[3], &cat(&[pow_letter(le, n), pow_letter(lf, n)]), &comm)?;
                }
                6 => {
                    let at = pf.len();
                    b.replace(at + 2, &efw, &Word::letter(lg.inverse()))?;
                    b.replace(at, &Word::from_letters(vec![le.inverse(), lf.inverse()]), &Word::letter(lg))?;
                }
                _ => {}
            }
            b.free_to(next)
        };
        let realized = realize_scheme_with(&self.pres, &scheme, &step)?;
        Ok(BoundedFilling { realized, bound: inverse_triangle_bound(l, k, n) })
    }

    /// Filling of `Φ_{n+1}(e) Φ_n(w_e)⁻¹`.
    pub fn stable_filling(&self, e: DirEdge, n: i64) -> Result<BoundedFilling> {
        let q = self.q();
        let (l, k, a) = (self.l, self.k, n.unsigned_abs());
        let u = e.from;
        let tw = |m: i64, x: usize, y: usize| self.tree_word(m, x, y);
        let le = self.letter(e);
        let head = vec![tw(n + 1, q, u), pow_letter(le, n + 2), tw(n + 1, e.to, q)];
        let x = self.phi(n, &tw(1, q, u))?;
        let y = self.phi_edge(n, e);
        let z = self.phi(n, &tw(1, u, q))?;
        let r1 = [head.clone(), vec![z.inverse(), y.inverse(), x.inverse()]].concat();
        let x2 = tw(n + 1, q, u).concat(&tw(n, q, u).inverse());
        let z2 = tw(n, q, u).concat(&tw(n + 1, u, q));
        let r2 = [head.clone(), vec![z2.inverse(), y.inverse(), x2.inverse()]].concat();
        let r3 = [head.clone(), vec![tw(n + 1, u, q).inverse(), tw(n, q, u).inverse(), tw(n, e.to, q).inverse(), pow_letter(le, -n - 1), tw(n + 1, q, u).inverse()]].concat();
        let r4 = [head.clone(), vec![tw(n + 1, q, u), tw(n, q, u).inverse(), tw(n, e.to, q).inverse(), pow_letter(le, -n - 1), tw(n + 1, q, u).inverse()]].concat();
        let r5 = vec![tw(n + 1, q, u), pow_letter(le, n + 2), pow_letter(le, -n - 1), pow_letter(le, n), pow_letter(le, -n - 1), tw(n + 1, q, u).inverse()];
        let m = (n + 1).unsigned_abs();
        let scheme = Scheme {
            rows: vec![
                row(cat(&r1), 2 * l * l * a),
                row(cat(&r2), 0),
                row(cat(&r3), l * m),
                row(cat(&r4), k * m * m + k * a * a),
                row(cat(&r5), 0),
            ],
            target: Word::empty(),
        };
        let sx = mirror_sequence(&self.pres, &self.phi_path_sequence(n, q, u)?)?;
        let sz = mirror_sequence(&self.pres, &self.phi_path_sequence(n, u, q)?)?;
        let rot1 = self.rotated_cycle(e, n + 1)?;
        let rot0 = mirror_sequence(&self.pres, &self.rotated_cycle(e, n)?)?;
        let step = |b: &mut SeqBuilder, i: usize, next: &Word| -> std::result::Result<(), RewriteError> {
            let map = |e: BbError| match e {
                BbError::Rewrite(r) => r,
                o => RewriteError::InvalidSequence(o.to_string()),
            };
            match i {
                0 => {
                    let off = lens(&r1);
                    b.embed(off[5], &sx)?;
                    b.embed(off[3], &sz)?;
                }
                1 => {}
                2 => self.letterwise(b, lens(&r3)[3], &r4[3]).map_err(map)?,
                3 => {
                    let off = lens(&r4);
                    b.embed(off[4], &rot0)?;
                    b.embed(off[2], &rot1)?;
                }
                _ => {}
            }
            b.free_to(next)
        };
        let realized = realize_scheme_with(&self.pres, &scheme, &step)?;
        Ok(BoundedFilling { realized, bound: stable_bound(l, k, n) })
    }

    /// Filling of `Φ_n(r)` for a Dicks-Leary relator `r`.
    pub fn relator_filling(&self, r: &Word, n: i64) -> Result<BoundedFilling> {
        let (kind, edges) = self.classify(r)?;
        match kind {
            RelatorKind::EdgeInverse => self.edge_inverse_filling(edges[0], n),
            RelatorKind::Triangle => self.triangle_filling([edges[0], edges[1], edges[2]], n),
            RelatorKind::InverseTriangle => self.inverse_triangle_filling([edges[0], edges[1], edges[2]], n),
        }
    }

    /// Filling of an indexed family member.
    pub fn family_filling(&self, m: &IndexedRelator) -> Result<BoundedFilling> {
        match &m.tag {
            RelatorFamily::R { relator, k } => self.relator_filling(self.pres.relator(*relator), *k),
            RelatorFamily::S { letter, k } => self.stable_filling(self.complex.edge_of(Symbol::intern(letter))?, *k),
        }
    }

    /// Largest stated bound at index `n` over all four families.
    pub fn envelope(&self, n: u64) -> u64 {
        let n = n as i64;
        [n, -n]
            .iter()
            .flat_map(|&m| {
                [
                    edge_inverse_bound(self.l, m),
                    triangle_bound(self.l, m),
                    inverse_triangle_bound(self.l, self.k, m),
                    stable_bound(self.l, self.k, m),
                ]
            })
            .max()
            .unwrap_or(0)
    }
}

pub fn edge_inverse_bound(l: u64, n: i64) -> u64 {
    (2 * l + 1) * n.unsigned_abs() + 1
}

pub fn triangle_power_bound(n: i64) -> u64 {
    let a = n.unsigned_abs();
    2 * a * a + a
}

pub fn triangle_bound(l: u64, n: i64) -> u64 {
    let a = n.unsigned_abs();
    3 * a * a + (3 * l + 6) * a + 3
}

pub fn inverse_triangle_bound(l: u64, k: u64, n: i64) -> u64 {
    let a = n.unsigned_abs();
    (3 * k + 4) * a * a + (6 * l + 6) * a + 5
}

/// The bound as stated; its proof table sums to the smaller
/// `2K n² + (2L² + L + 2K)|n| + L + K`.
pub fn stable_bound(l: u64, k: u64, n: i64) -> u64 {
    let a = n.unsigned_abs();
    2 * k * a * a + (3 * l * l + 2 * l + 2 * k) * a + l + k
}

/// Per-index maxima of relational area.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RAreaRow {
    pub index: u64,
    pub members: usize,
    /// Largest area among the replayed fillings.
    pub scheme_max: u64,
    /// Largest exact area among members the oracle settled.
    pub exact_max: Option<u64>,
    /// Members skipped or left open by the oracle.
    pub unsettled: usize,
    pub envelope: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RAreaTable {
    pub l: u64,
    pub k: u64,
    pub rows: Vec<RAreaRow>,
    /// Members whose filling exceeded its own stated bound.
    pub over_bound: Vec<String>,
}

impl RAreaTable {
    pub fn fits_envelope(&self) -> bool {
        self.over_bound.is_empty() && self.rows.iter().all(|r| r.scheme_max <= r.envelope)
    }

    /// Leading coefficient of the quadratic through the first three rows.
    pub fn quadratic_coefficient(&self) -> Option<f64> {
        let y: Vec<f64> = self.rows.iter().take(3).map(|r| r.scheme_max as f64).collect();
        (y.len() == 3).then(|| (y[2] - 2.0 * y[1] + y[0]) / 2.0)
    }
}

/// Relational areas of the indexed relators up to `bound`. Exact areas
/// are attempted for members no longer than `exact_len`.
pub fn rarea_sample(ctx: &BbContext, bound: u64, budget: &SearchBudget, exact_len: usize) -> Result<RAreaTable> {
    let fam = ctx.indexed_families(bound);
    let results: Vec<(u64, String, BoundedFilling, Option<AreaVerdict>)> = fam
        .par_iter()
        .map(|m| {
            let f = ctx.family_filling(m)?;
            let exact = (m.word.len() <= exact_len).then(|| {
                let b = budget.clone().with_max_area(f.area());
                area_exact(&ctx.pres, &m.word, &b)
            });
            Ok((m.index, format!("{:?}", m.tag), f, exact))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut over_bound = Vec::new();
    for idx in 0..=bound {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == idx).collect();
        if mine.is_empty() {
            continue;
        }
        let scheme_max = mine.iter().map(|r| r.2.area()).max().unwrap_or(0);
        let mut unsettled = 0;
        let mut exact_max: Option<u64> = None;
        for r in &mine {
            match &r.3 {
                Some(AreaVerdict::Area { area, .. }) => exact_max = Some(exact_max.unwrap_or(0).max(*area)),
                _ => unsettled += 1,
            }
        }
        rows.push(RAreaRow { index: idx, members: mine.len(), scheme_max, exact_max, unsettled, envelope: ctx.envelope(idx) });
        for r in &mine {
            if !r.2.within_bound() {
                over_bound.push(format!("{} (area {} > {})", r.1, r.2.area(), r.2.bound));
            }
        }
    }
    Ok(RAreaTable { l: ctx.l, k: ctx.k, rows, over_bound })
}

/// Replays a filling's sequence from scratch and checks it is null.
pub fn replay_area(ctx: &BbContext, f: &BoundedFilling) -> Result<u64> {
    let acc = replay_sequence(&ctx.pres, &f.realized.sequence, None)?;
    if !acc.end.is_empty() {
        return Err(BbError::Rewrite(RewriteError::NotNull(acc.end)));
    }
    Ok(acc.area)
}

/// The triangle `K_3` on `a`, `b`, `c`.
pub fn k3() -> FlagComplex {
    let s = Symbol::intern;
    check_flag(&[s("a"), s("b"), s("c")], &[(s("a"), s("b")), (s("b"), s("c")), (s("a"), s("c"))], Some(s("a")), None).expect("valid")
}

/// The octahedron: six vertices, every pair adjacent except antipodes.
pub fn octahedron() -> FlagComplex {
    let names = ["a", "b", "c", "d", "e", "f"];
    let v: Vec<Symbol> = names.iter().map(|n| Symbol::intern(n)).collect();
    let mut edges = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            if j != i + 3 {
                edges.push((v[i], v[j]));
            }
        }
    }
    check_flag(&v, &edges, Some(v[0]), None).expect("valid")
}

/// Times a closure in milliseconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, u128) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_millis())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{raag_equal_by, DirectProductSpec};

    fn c4() -> FlagComplex {
        let s = Symbol::intern;
        check_flag(
            &[s("a"), s("b"), s("c"), s("d")],
            &[(s("a"), s("b")), (s("b"), s("c")), (s("c"), s("d")), (s("d"), s("a"))],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn flag_examples() {
        assert_eq!(k3().triangles().len(), 1);
        assert_eq!(c4().triangles().len(), 0);
        assert_eq!(octahedron().triangles().len(), 8);
        assert_eq!(octahedron().diameter(), 2);
        let s = Symbol::intern;
        assert!(matches!(check_flag(&[s("a")], &[(s("a"), s("a"))], None, None), Err(BbError::NotSimpleGraph(_))));
        let t = vec![vec![s("a"), s("b"), s("c")]];
        assert!(check_flag(&[s("a"), s("b"), s("c")], &[(s("a"), s("b")), (s("b"), s("c")), (s("a"), s("c"))], None, Some(&t)).is_ok());
        assert!(matches!(check_flag(&[s("a"), s("b"), s("c")], &[(s("a"), s("b")), (s("b"), s("c")), (s("a"), s("c"))], None, Some(&[])), Err(BbError::SimplexMismatch(_))));
        assert_eq!(c4().first_betti(), 1);
        assert_eq!(octahedron().first_betti(), 0);
    }

    #[test]
    fn presentations() {
        let p = raag_presentation(&k3());
        assert_eq!((p.generators().len(), p.relators().len()), (3, 3));
        let d = dicks_leary_presentation(&k3());
        assert_eq!((d.generators().len(), d.relators().len()), (6, 18));
        let s = Symbol::intern;
        let single = check_flag(&[s("a"), s("b")], &[(s("a"), s("b"))], None, None).unwrap();
        assert_eq!(dicks_leary_presentation(&single).relators().len(), 2);
        let c = c4();
        assert_eq!(raag_presentation(&c).relators().len(), 4);
        let dp = DirectProductSpec::from_names(&[&["a", "c"], &["b", "d"]]);
        let comm = raag_commutes(&c);
        for w in ["a b a' b'", "a c a' c'", "a b c a' b' c'", "b d a c d' b' c' a'"] {
            let w = Word::parse(w).unwrap();
            assert_eq!(raag_equal_by(&comm, &w, &Word::empty()), crate::oracle::dp_equal(&dp, &w, &Word::empty()).unwrap());
        }
        for cx in [k3(), octahedron()] {
            let comm = raag_commutes(&cx);
            for r in dicks_leary_presentation(&cx).relators() {
                assert!(raag_equal_by(&comm, &raag_image(&cx, r).unwrap(), &Word::empty()));
            }
        }
    }

    #[test]
    fn tree_words() {
        let ctx = BbContext::new(octahedron()).unwrap();
        let c = &ctx.complex;
        let comm = raag_commutes(c);
        assert!(ctx.tree_word(3, 0, 0).is_empty());
        for u in 0..6 {
            for v in 0..6 {
                assert!(ctx.tree_word(0, u, v).is_empty());
                for n in -3..=3 {
                    let a = raag_image(c, &ctx.tree_word(n, u, v).inverse()).unwrap();
                    let b = raag_image(c, &ctx.tree_word(n, v, u)).unwrap();
                    assert!(raag_equal_by(&comm, &a, &b));
                }
                let img = raag_image(c, &ctx.tree_word(1, u, v)).unwrap();
                let uv = Word::from_letters(vec![c.vertices()[u].letter(), c.vertices()[v].inv()]);
                assert!(raag_equal_by(&comm, &img, &uv));
            }
        }
    }

    #[test]
    fn phi_examples() {
        let ctx = BbContext::new(k3()).unwrap();
        let w = Word::parse("a_b b_c c_a'").unwrap();
        assert_eq!(ctx.phi(0, &w).unwrap(), w);
        let e = ctx.complex.edge_of(Symbol::intern("b_c")).unwrap();
        assert_eq!(ctx.phi(1, &Word::parse("b_c").unwrap()).unwrap(), Word::parse("a_b b_c b_c c_a").unwrap());
        assert_eq!(ctx.phi_edge(1, e), Word::parse("a_b b_c b_c c_a").unwrap());
    }

    #[test]
    fn families_map_to_identity() {
        for cx in [k3(), octahedron()] {
            let ctx = BbContext::new(cx).unwrap();
            let comm = raag_commutes(&ctx.complex);
            let fam = ctx.indexed_families(2);
            assert!(fam.iter().any(|m| m.index == 2));
            for m in &fam {
                assert!(raag_equal_by(&comm, &raag_image(&ctx.complex, &m.word).unwrap(), &Word::empty()), "{:?}", m.tag);
            }
            let zero: Vec<_> = fam.iter().filter(|m| m.index == 0).collect();
            for r in ctx.pres.relators() {
                assert!(zero.iter().any(|m| &m.word == r));
            }
        }
    }

    #[test]
    fn null_homotopies_and_triangle_powers() {
        let ctx = BbContext::new(k3()).unwrap();
        assert_eq!(ctx.k_constant(), 3);
        for cyc in ctx.complex.triangle_cycles() {
            for n in -3..=3 {
                let s = ctx.triangle_power_sequence(cyc, n).unwrap();
                let acc = replay_sequence(&ctx.pres, &s, None).unwrap();
                assert!(acc.end.is_empty());
                assert!(acc.area <= triangle_power_bound(n), "n={n}: {}", acc.area);
            }
        }
        let e = ctx.complex.edge_of(Symbol::intern("b_c")).unwrap();
        let s = ctx.edge_cycle_sequence(e, 1).unwrap();
        assert!(s.area() <= ctx.k_constant());
        assert_eq!(ctx.edge_cycle_sequence(e, 0).unwrap().area(), 0);
        let nh = ctx.null_homotopy(e).clone();
        assert_eq!(nh.len(), 1);
        let s2 = ctx.null_homotopy_to_sequence(&nh, 2).unwrap();
        assert!(s2.area() <= 10);
    }

    #[test]
    fn family_fillings_within_bounds() {
        for cx in [k3(), octahedron()] {
            let ctx = BbContext::new(cx).unwrap();
            for n in -2..=2 {
                for r in ctx.pres.relators().to_vec() {
                    let f = ctx.relator_filling(&r, n).unwrap();
                    assert_eq!(replay_area(&ctx, &f).unwrap(), f.area());
                    assert!(f.within_bound(), "{r} n={n}: {} > {}", f.area(), f.bound);
                }
                for e in ctx.complex.directed_edges() {
                    let f = ctx.stable_filling(e, n).unwrap();
                    assert_eq!(f.realized.sequence.start, ctx.stable_word(e, n));
                    assert!(f.within_bound(), "stable n={n}: {} > {}", f.area(), f.bound);
                }
            }
        }
    }

    #[test]
    fn rarea_table_small() {
        let ctx = BbContext::new(k3()).unwrap();
        let t = rarea_sample(&ctx, 1, &SearchBudget::default().with_max_states(20_000), 6).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.fits_envelope());
        assert!(t.rows[0].exact_max.unwrap() <= t.rows[0].scheme_max);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::oracle::raag_equal_by;
    use proptest::prelude::*;

    const NAMES: [&str; 5] = ["p", "q", "r", "s", "t"];

    fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=5).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            let k = pairs.len();
            (Just(n), prop::collection::vec(any::<bool>(), k).prop_map(move |keep| {
                pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(&p, _)| p).collect()
            }))
        })
    }

    fn complex(n: usize, edges: &[(usize, usize)]) -> FlagComplex {
        let v: Vec<Symbol> = NAMES[..n].iter().map(|s| Symbol::intern(s)).collect();
        let e: Vec<(Symbol, Symbol)> = edges.iter().map(|&(i, j)| (v[i], v[j])).collect();
        check_flag(&v, &e, None, None).unwrap()
    }

    proptest! {
        #[test]
        fn flag_presentation_shape((n, edges) in graph()) {
            let c = complex(n, &edges);
            let has = |i: usize, j: usize| edges.contains(&(i.min(j), i.max(j)));
            let tri = (0..n).flat_map(|i| (i + 1..n).flat_map(move |j| (j + 1..n).map(move |k| (i, j, k))))
                .filter(|&(i, j, k)| has(i, j) && has(j, k) && has(i, k))
                .count();
            prop_assert_eq!(c.triangles().len(), tri);
            let d = dicks_leary_presentation(&c);
            prop_assert_eq!(d.generators().len(), 2 * edges.len());
            prop_assert_eq!(d.relators().len(), 2 * edges.len() + 12 * tri);
            let comm = raag_commutes(&c);
            for r in d.relators() {
                prop_assert!(raag_equal_by(&comm, &raag_image(&c, r).unwrap(), &Word::empty()));
            }
        }
    }
}
