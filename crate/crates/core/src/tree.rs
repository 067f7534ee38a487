//! Directed trees: finite explicit trees and generator-backed families with
//! a finite depth window.
//!
//! Every query takes a [`VertexAddress`]. Operations that enumerate
//! descendants refuse to leave the depth window and fail with
//! [`Error::WindowExhausted`] instead of truncating.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::address::{VertexAddress, SPINE_CHILD};
use crate::error::{Error, Result};

/// Default cap on the number of vertices a single enumeration may produce.
pub const DEFAULT_VERTEX_LIMIT: usize = 100_000;

/// Depth window of a generator-backed tree: `up` ancestor hops above the
/// anchor (unrooted trees only) and descent down to generation `down`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    #[serde(default)]
    pub up: u32,
    pub down: u32,
}

/// An explicit list of directed edges between named vertices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FiniteGraph {
    pub root: Option<String>,
    pub edges: Vec<(String, String)>,
}

impl FiniteGraph {
    pub fn new<S: Into<String>>(edges: impl IntoIterator<Item = (S, S)>) -> Self {
        FiniteGraph { root: None, edges: edges.into_iter().map(|(a, b)| (a.into(), b.into())).collect() }
    }

    pub fn with_root(mut self, root: impl Into<String>) -> Self {
        self.root = Some(root.into());
        self
    }

    fn vertices(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.edges.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
        if let Some(r) = &self.root {
            out.insert(r);
        }
        out
    }
}

/// One violated tree axiom, with a witness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "axiom", rename_all = "snake_case")]
pub enum Violation {
    DirectedCircuit { witness: Vec<String> },
    Indegree { vertex: String, parents: Vec<String> },
    Disconnected { witness: String },
    MultipleRoots { roots: Vec<String> },
    RootMismatch { declared: String, found: Vec<String> },
    NoVertices,
    InvalidFamily { reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the directed-tree axioms on an explicit edge list. Violations are
/// collected, not raised.
pub fn validate_graph(graph: &FiniteGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let vertices = graph.vertices();
    if vertices.is_empty() {
        violations.push(Violation::NoVertices);
        return ValidationReport { violations };
    }
    let edges: BTreeSet<(&str, &str)> = graph.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();

    let mut out: BTreeMap<&str, Vec<&str>> = vertices.iter().map(|v| (*v, Vec::new())).collect();
    let mut parents: BTreeMap<&str, Vec<&str>> = out.clone();
    for &(a, b) in &edges {
        out.get_mut(a).unwrap().push(b);
        parents.get_mut(b).unwrap().push(a);
    }

    for (v, ps) in &parents {
        if ps.len() >= 2 {
            violations.push(Violation::Indegree {
                vertex: v.to_string(),
                parents: ps.iter().map(|s| s.to_string()).collect(),
            });
        }
    }

    for cycle in find_circuits(&vertices, &out) {
        violations.push(Violation::DirectedCircuit { witness: cycle });
    }

    // Undirected connectivity.
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut components = 0usize;
    for &start in &vertices {
        if seen.contains(start) {
            continue;
        }
        components += 1;
        if components > 1 {
            violations.push(Violation::Disconnected { witness: start.to_string() });
        }
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(v) = queue.pop_front() {
            for &w in out[v].iter().chain(parents[v].iter()) {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
    }

    let roots: Vec<String> = parents.iter().filter(|(_, ps)| ps.is_empty()).map(|(v, _)| v.to_string()).collect();
    if roots.len() > 1 {
        violations.push(Violation::MultipleRoots { roots: roots.clone() });
    }
    if let Some(declared) = &graph.root {
        if !roots.iter().any(|r| r == declared) {
            violations.push(Violation::RootMismatch { declared: declared.clone(), found: roots });
        }
    }
    ValidationReport { violations }
}

fn find_circuits<'a>(vertices: &BTreeSet<&'a str>, out: &BTreeMap<&'a str, Vec<&'a str>>) -> Vec<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let mut mark: HashMap<&str, Mark> = vertices.iter().map(|v| (*v, Mark::White)).collect();
    let mut cycles = Vec::new();
    for &start in vertices {
        if mark[start] != Mark::White {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        mark.insert(start, Mark::Gray);
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = out[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::White => {
                        mark.insert(w, Mark::Gray);
                        stack.push((w, 0));
                    }
                    Mark::Gray => {
                        let from = stack.iter().position(|(x, _)| *x == w).unwrap();
                        cycles.push(stack[from..].iter().map(|(x, _)| x.to_string()).collect());
                    }
                    Mark::Black => {}
                }
            } else {
                mark.insert(v, Mark::Black);
                stack.pop();
            }
        }
    }
    cycles
}

/// A validated finite rooted tree. Children are ordered by vertex name.
#[derive(Clone, Debug)]
pub struct FiniteTree {
    names: Vec<String>,
    children: Vec<Vec<usize>>,
    addresses: Vec<VertexAddress>,
    index: HashMap<VertexAddress, usize>,
    height: u32,
}

impl FiniteTree {
    pub fn build(graph: &FiniteGraph) -> Result<Self> {
        let report = validate_graph(graph);
        if !report.is_valid() {
            return Err(Error::InvalidTree(serde_json::to_string(&report.violations).unwrap_or_default()));
        }
        let names: Vec<String> = graph.vertices().into_iter().map(String::from).collect();
        let id: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut children = vec![Vec::new(); names.len()];
        let mut has_parent = vec![false; names.len()];
        let edges: BTreeSet<(&str, &str)> = graph.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        for (a, b) in edges {
            children[id[a]].push(id[b]);
            has_parent[id[b]] = true;
        }
        // Names are sorted, so pushing in edge order already sorts children
        // when edges are visited in (parent, child) order.
        for c in &mut children {
            c.sort_unstable();
        }
        let root = has_parent.iter().position(|p| !p).expect("validated tree has a root");
        let mut addresses = vec![VertexAddress::base(); names.len()];
        let mut height = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for (i, &c) in children[v].iter().enumerate() {
                addresses[c] = addresses[v].child(i as u32);
                height = height.max(addresses[c].path().len() as u32);
                queue.push_back(c);
            }
        }
        let index = addresses.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        Ok(FiniteTree { names, children, addresses, index, height })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name_of(&self, v: &VertexAddress) -> Option<&str> {
        self.index.get(v).map(|&i| self.names[i].as_str())
    }

    pub fn address_of(&self, name: &str) -> Option<&VertexAddress> {
        self.names.iter().position(|n| n == name).map(|i| &self.addresses[i])
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

type OutdegreeFn = dyn Fn(&VertexAddress) -> u32 + Send + Sync;

/// A tree known only through its outdegree function. No structural metadata
/// is available, so free-end questions stay open.
#[derive(Clone)]
pub struct OpaqueGenerator {
    rooted: bool,
    outdegree: Arc<OutdegreeFn>,
}

impl OpaqueGenerator {
    pub fn new(rooted: bool, outdegree: impl Fn(&VertexAddress) -> u32 + Send + Sync + 'static) -> Self {
        OpaqueGenerator { rooted, outdegree: Arc::new(outdegree) }
    }
}

impl fmt::Debug for OpaqueGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpaqueGenerator").field("rooted", &self.rooted).finish()
    }
}

#[derive(Clone, Debug)]
pub enum Structure {
    Finite(FiniteTree),
    /// Every vertex has `k` children; the root is the base vertex.
    KaryRooted {
        k: u32,
    },
    /// Every vertex has `k` children and there is no root. `k = 1` is the
    /// bilateral line.
    KaryUnrooted {
        k: u32,
    },
    /// `(ℕ₀, {(n+1, n)})`: the anchor is the leaf `0`, `^n` is vertex `n`.
    UnilateralLeafLine,
    /// Rooted `k`-ary tree in which the subtree at `graft` is a unary tail.
    GraftedFreeEnd {
        k: u32,
        graft: VertexAddress,
    },
    Opaque(OpaqueGenerator),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Rooted,
    HasBranchVertex,
    BilateralLine,
    UnilateralLeafLine,
    OtherUnrooted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FreeEndVerdict {
    HasFreeEnd { witness: VertexAddress },
    NoFreeEnd,
    UnknownUpToDepth { depth: u32 },
}

/// Target set for [`TreeModel::dist_to_set`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VertexSet {
    Explicit(Vec<VertexAddress>),
    /// `{w : w ∈ child^n(parent^n(anchor)) for some n ≥ 1}`.
    SharedAncestor {
        anchor: VertexAddress,
    },
}

const CLASS_FULL: u64 = 0;
const CLASS_TAIL: u64 = 1;
const CLASS_PATH: u64 = 2;

#[derive(Clone, Debug)]
pub struct TreeModel {
    structure: Structure,
    window: Window,
    vertex_limit: usize,
}

impl TreeModel {
    fn with(structure: Structure, window: Window) -> Self {
        TreeModel { structure, window, vertex_limit: DEFAULT_VERTEX_LIMIT }
    }

    pub fn finite(graph: &FiniteGraph) -> Result<Self> {
        let tree = FiniteTree::build(graph)?;
        let window = Window { up: 0, down: tree.height() };
        Ok(Self::with(Structure::Finite(tree), window))
    }

    pub fn kary_rooted(k: u32, down: u32) -> Result<Self> {
        check_arity(k)?;
        Ok(Self::with(Structure::KaryRooted { k }, Window { up: 0, down }))
    }

    pub fn kary_unrooted(k: u32, window: Window) -> Result<Self> {
        check_arity(k)?;
        Ok(Self::with(Structure::KaryUnrooted { k }, window))
    }

    pub fn bilateral_line(window: Window) -> Self {
        Self::with(Structure::KaryUnrooted { k: 1 }, window)
    }

    pub fn unilateral_leaf_line(up: u32) -> Self {
        Self::with(Structure::UnilateralLeafLine, Window { up, down: 0 })
    }

    pub fn grafted_free_end(k: u32, graft: VertexAddress, down: u32) -> Result<Self> {
        check_arity(k)?;
        if graft.up() != 0 || graft.path().iter().any(|&i| i >= k) {
            return Err(Error::InvalidTree(format!(
                "graft address {graft} is not a vertex of the {k}-ary rooted tree"
            )));
        }
        Ok(Self::with(Structure::GraftedFreeEnd { k, graft }, Window { up: 0, down }))
    }

    pub fn opaque(generator: OpaqueGenerator, window: Window) -> Self {
        let window = if generator.rooted { Window { up: 0, ..window } } else { window };
        Self::with(Structure::Opaque(generator), window)
    }

    pub fn with_vertex_limit(mut self, limit: usize) -> Self {
        self.vertex_limit = limit;
        self
    }

    pub fn with_window(mut self, window: Window) -> Self {
        if !matches!(self.structure, Structure::Finite(_)) {
            self.window = if self.is_rooted() { Window { up: 0, ..window } } else { window };
        }
        self
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn vertex_limit(&self) -> usize {
        self.vertex_limit
    }

    pub fn is_rooted(&self) -> bool {
        match &self.structure {
            Structure::Finite(_) | Structure::KaryRooted { .. } | Structure::GraftedFreeEnd { .. } => true,
            Structure::KaryUnrooted { .. } | Structure::UnilateralLeafLine => false,
            Structure::Opaque(g) => g.rooted,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.structure, Structure::Finite(_))
    }

    pub fn finite_tree(&self) -> Option<&FiniteTree> {
        match &self.structure {
            Structure::Finite(t) => Some(t),
            _ => None,
        }
    }

    /// Fails unless `v` names a vertex of the tree.
    pub fn resolve(&self, v: &VertexAddress) -> Result<()> {
        let bad = || Error::UnresolvableAddress(v.to_string());
        if self.is_rooted() && v.up() != 0 {
            return Err(bad());
        }
        if v.clone().canonical() != *v {
            return Err(bad());
        }
        match &self.structure {
            Structure::Finite(t) => t.index.get(v).map(|_| ()).ok_or_else(bad),
            Structure::KaryRooted { k } | Structure::KaryUnrooted { k } => {
                if v.path().iter().all(|i| i < k) {
                    Ok(())
                } else {
                    Err(bad())
                }
            }
            Structure::UnilateralLeafLine => {
                if v.path().is_empty() {
                    Ok(())
                } else {
                    Err(bad())
                }
            }
            Structure::GraftedFreeEnd { .. } | Structure::Opaque(_) => {
                let mut cur = VertexAddress::ancestor_of_base(v.up());
                for &i in v.path() {
                    if i >= self.outdegree_unchecked(&cur) {
                        return Err(bad());
                    }
                    cur = cur.child(i);
                }
                Ok(())
            }
        }
    }

    fn outdegree_unchecked(&self, v: &VertexAddress) -> u32 {
        match &self.structure {
            Structure::Finite(t) => t.index.get(v).map_or(0, |&i| t.children[i].len() as u32),
            Structure::KaryRooted { k } | Structure::KaryUnrooted { k } => *k,
            Structure::UnilateralLeafLine => u32::from(v.up() > 0),
            Structure::GraftedFreeEnd { k, graft } => {
                if v.path().starts_with(graft.path()) {
                    1
                } else {
                    *k
                }
            }
            Structure::Opaque(g) => (g.outdegree)(v),
        }
    }

    pub fn outdegree(&self, v: &VertexAddress) -> Result<u32> {
        self.resolve(v)?;
        Ok(self.outdegree_unchecked(v))
    }

    pub fn children(&self, v: &VertexAddress) -> Result<Vec<VertexAddress>> {
        let d = self.outdegree(v)?;
        Ok((0..d).map(|i| v.child(i)).collect())
    }

    pub fn parent(&self, v: &VertexAddress) -> Result<Option<VertexAddress>> {
        self.resolve(v)?;
        Ok(v.parent(self.is_rooted()))
    }

    /// `parent^n(v)`, absent when `v` has no `n`-ancestor.
    pub fn parent_n(&self, v: &VertexAddress, n: u32) -> Result<Option<VertexAddress>> {
        self.resolve(v)?;
        Ok(self.ancestor(v, n))
    }

    fn ancestor(&self, v: &VertexAddress, n: u32) -> Option<VertexAddress> {
        let rooted = self.is_rooted();
        let len = v.path().len() as u32;
        if n <= len {
            Some(VertexAddress::new(v.up(), v.path()[..(len - n) as usize].to_vec()))
        } else if rooted {
            None
        } else {
            Some(VertexAddress::ancestor_of_base(v.up() + n - len))
        }
    }

    pub fn in_window(&self, v: &VertexAddress) -> bool {
        match &self.structure {
            Structure::Finite(t) => t.index.contains_key(v),
            _ => v.up() <= self.window.up && v.level() <= self.window.down as i64,
        }
    }

    fn ensure_descent(&self, u: &VertexAddress, n: u32) -> Result<()> {
        self.resolve(u)?;
        if self.is_finite() {
            return Ok(());
        }
        if !self.in_window(u) {
            return Err(Error::window(u, "vertex lies outside the depth window"));
        }
        // The leaf line has no vertex below generation 0, so nothing is cut.
        let bottomless = !matches!(self.structure, Structure::UnilateralLeafLine);
        if bottomless && u.level() + n as i64 > self.window.down as i64 {
            return Err(Error::window(
                u,
                format!("descending {n} generations passes window depth {}", self.window.down),
            ));
        }
        Ok(())
    }

    fn check_limit(&self, requested: u128) -> Result<()> {
        if requested > self.vertex_limit as u128 {
            Err(Error::WindowLimit { requested, limit: self.vertex_limit })
        } else {
            Ok(())
        }
    }

    /// `child^n(u)` in address order.
    pub fn children_n(&self, u: &VertexAddress, n: u32) -> Result<Vec<VertexAddress>> {
        self.ensure_descent(u, n)?;
        if let Some(count) = self.gamma_by_class(u, n)? {
            self.check_limit(count)?;
        }
        let mut frontier = vec![u.clone()];
        for _ in 0..n {
            let mut next = Vec::new();
            for v in &frontier {
                let d = self.outdegree_unchecked(v);
                next.extend((0..d).map(|i| v.child(i)));
            }
            self.check_limit(next.len() as u128)?;
            frontier = next;
        }
        frontier.sort();
        Ok(frontier)
    }

    /// `γ(u, n) = |child^n(u)|`.
    pub fn gamma(&self, u: &VertexAddress, n: u32) -> Result<u128> {
        self.ensure_descent(u, n)?;
        if let Some(count) = self.gamma_by_class(u, n)? {
            return Ok(count);
        }
        let mut visited = 0u128;
        self.count_descendants(u, n, &mut visited)
    }

    fn count_descendants(&self, u: &VertexAddress, n: u32, visited: &mut u128) -> Result<u128> {
        *visited += 1;
        self.check_limit(*visited)?;
        if n == 0 {
            return Ok(1);
        }
        let d = self.outdegree_unchecked(u);
        let mut total = 0u128;
        for i in 0..d {
            total += self.count_descendants(&u.child(i), n - 1, visited)?;
        }
        Ok(total)
    }

    /// Identifier of the isomorphism class of the subtree hanging from `v`,
    /// when the structure provides one.
    pub(crate) fn subtree_class(&self, v: &VertexAddress) -> Option<u64> {
        match &self.structure {
            Structure::Finite(t) => t.index.get(v).map(|&i| i as u64),
            Structure::KaryRooted { .. } | Structure::KaryUnrooted { .. } => Some(CLASS_FULL),
            Structure::UnilateralLeafLine => Some(v.up() as u64),
            Structure::GraftedFreeEnd { graft, .. } => {
                let gp = graft.path();
                if v.path().starts_with(gp) {
                    Some(CLASS_TAIL)
                } else if gp.starts_with(v.path()) {
                    Some(CLASS_PATH + v.path().len() as u64)
                } else {
                    Some(CLASS_FULL)
                }
            }
            Structure::Opaque(_) => None,
        }
    }

    fn class_children(&self, class: u64) -> Vec<u64> {
        match &self.structure {
            Structure::Finite(t) => t.children[class as usize].iter().map(|&c| c as u64).collect(),
            Structure::KaryRooted { k } | Structure::KaryUnrooted { k } => vec![CLASS_FULL; *k as usize],
            Structure::UnilateralLeafLine => {
                if class > 0 {
                    vec![class - 1]
                } else {
                    Vec::new()
                }
            }
            Structure::GraftedFreeEnd { k, graft } => match class {
                CLASS_FULL => vec![CLASS_FULL; *k as usize],
                CLASS_TAIL => vec![CLASS_TAIL],
                c => {
                    let i = (c - CLASS_PATH) as usize;
                    let gp = graft.path();
                    (0..*k)
                        .map(|j| {
                            if j != gp[i] {
                                CLASS_FULL
                            } else if i + 1 == gp.len() {
                                CLASS_TAIL
                            } else {
                                CLASS_PATH + i as u64 + 1
                            }
                        })
                        .collect()
                }
            },
            Structure::Opaque(_) => Vec::new(),
        }
    }

    /// Histogram of subtree classes over `child^d` of a starting histogram.
    pub(crate) fn advance_classes(&self, start: BTreeMap<u64, u128>, d: u32) -> Result<BTreeMap<u64, u128>> {
        let mut counts = start;
        for _ in 0..d {
            let mut next: BTreeMap<u64, u128> = BTreeMap::new();
            for (&c, &count) in &counts {
                for cc in self.class_children(c) {
                    let slot = next.entry(cc).or_insert(0);
                    *slot = slot.checked_add(count).ok_or_else(|| Error::Overflow("descendant count".into()))?;
                }
            }
            counts = next;
        }
        Ok(counts)
    }

    /// Class histogram of `child^d(u)`, or `None` without class metadata.
    pub(crate) fn descendant_classes(&self, u: &VertexAddress, d: u32) -> Result<Option<BTreeMap<u64, u128>>> {
        match self.subtree_class(u) {
            Some(c) => self.advance_classes(BTreeMap::from([(c, 1)]), d).map(Some),
            None => Ok(None),
        }
    }

    /// Floating-point class histogram of `child^d` of a starting histogram,
    /// for depths where exact counts would overflow.
    pub(crate) fn advance_classes_f64(&self, start: BTreeMap<u64, f64>, d: u32) -> BTreeMap<u64, f64> {
        let mut counts = start;
        for _ in 0..d {
            let mut next: BTreeMap<u64, f64> = BTreeMap::new();
            for (&c, &count) in &counts {
                for cc in self.class_children(c) {
                    *next.entry(cc).or_insert(0.0) += count;
                }
            }
            counts = next;
        }
        counts
    }

    /// `γ(v, n)` as a float for any vertex `v` of subtree class `class`.
    pub(crate) fn class_gamma_f64(&self, class: u64, n: u32) -> f64 {
        self.advance_classes_f64(BTreeMap::from([(class, 1.0)]), n).values().sum()
    }

    fn gamma_by_class(&self, u: &VertexAddress, n: u32) -> Result<Option<u128>> {
        Ok(self.descendant_classes(u, n)?.map(|h| h.values().sum()))
    }

    /// The vertex every window vertex descends from.
    fn window_top(&self) -> VertexAddress {
        VertexAddress::ancestor_of_base(if self.is_rooted() { 0 } else { self.window.up })
    }

    /// Every vertex of the window, in address order.
    pub fn vertices_in_window(&self) -> Result<Vec<VertexAddress>> {
        if let Structure::Finite(t) = &self.structure {
            self.check_limit(t.len() as u128)?;
            let mut all = t.addresses.clone();
            all.sort();
            return Ok(all);
        }
        let top = self.window_top();
        let span = (self.window.down as i64 - top.level()).max(0) as u32;
        if let Some(c) = self.subtree_class(&top) {
            let mut hist = BTreeMap::from([(c, 1u128)]);
            let mut total = 1u128;
            for _ in 0..span {
                hist = self.advance_classes(hist, 1)?;
                total += hist.values().sum::<u128>();
                self.check_limit(total)?;
            }
        }
        let mut out = vec![top.clone()];
        let mut frontier = vec![top];
        for _ in 0..span {
            let mut next = Vec::new();
            for v in &frontier {
                let d = self.outdegree_unchecked(v);
                next.extend((0..d).map(|i| v.child(i)));
            }
            self.check_limit((out.len() + next.len()) as u128)?;
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out.sort();
        Ok(out)
    }

    /// Vertices within undirected distance `radius` of `center`, restricted
    /// to the window, in address order.
    pub fn ball(&self, center: &VertexAddress, radius: u32) -> Result<Vec<VertexAddress>> {
        self.resolve(center)?;
        let rooted = self.is_rooted();
        let mut seen: BTreeSet<VertexAddress> = BTreeSet::from([center.clone()]);
        let mut frontier = vec![center.clone()];
        for _ in 0..radius {
            let mut next = Vec::new();
            for v in &frontier {
                let mut nbrs: Vec<VertexAddress> = (0..self.outdegree_unchecked(v)).map(|i| v.child(i)).collect();
                nbrs.extend(v.parent(rooted));
                for w in nbrs {
                    if self.in_window(&w) && seen.insert(w.clone()) {
                        next.push(w);
                    }
                }
            }
            self.check_limit(seen.len() as u128)?;
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }

    fn search_window(&self, pred: impl Fn(u32) -> bool) -> Result<Option<VertexAddress>> {
        Ok(self.vertices_in_window()?.into_iter().find(|v| pred(self.outdegree_unchecked(v))))
    }

    /// Some leaf, if the tree has one.
    pub fn leaf_witness(&self) -> Result<Option<VertexAddress>> {
        match &self.structure {
            Structure::Finite(_) | Structure::Opaque(_) => self.search_window(|d| d == 0),
            Structure::UnilateralLeafLine => Ok(Some(VertexAddress::base())),
            _ => Ok(None),
        }
    }

    /// True when metadata proves the tree has no leaves anywhere.
    pub fn leafless_certified(&self) -> bool {
        matches!(
            self.structure,
            Structure::KaryRooted { .. } | Structure::KaryUnrooted { .. } | Structure::GraftedFreeEnd { .. }
        )
    }

    /// Some vertex of outdegree at least 2, if the tree (or, for opaque
    /// generators, the window) has one.
    pub fn branch_witness(&self) -> Result<Option<VertexAddress>> {
        match &self.structure {
            Structure::Finite(_) | Structure::Opaque(_) => self.search_window(|d| d >= 2),
            Structure::KaryRooted { k } | Structure::KaryUnrooted { k } => Ok((*k >= 2).then(VertexAddress::base)),
            Structure::GraftedFreeEnd { k, graft } => Ok((*k >= 2 && !graft.is_base()).then(VertexAddress::base)),
            Structure::UnilateralLeafLine => Ok(None),
        }
    }

    pub fn classify_shape(&self) -> Result<ShapeClass> {
        if self.is_rooted() {
            return Ok(ShapeClass::Rooted);
        }
        if self.branch_witness()?.is_some() {
            return Ok(ShapeClass::HasBranchVertex);
        }
        Ok(match &self.structure {
            Structure::KaryUnrooted { .. } => ShapeClass::BilateralLine,
            Structure::UnilateralLeafLine => ShapeClass::UnilateralLeafLine,
            _ => ShapeClass::OtherUnrooted,
        })
    }

    /// Free-end verdict for a leafless tree. Exact for families with
    /// structural metadata; opaque generators only get a bounded leaf scan
    /// and an `UnknownUpToDepth` answer.
    pub fn free_end_verdict(&self, depth_bound: u32) -> Result<FreeEndVerdict> {
        match &self.structure {
            Structure::Finite(_) | Structure::UnilateralLeafLine => {
                let leaf = self.leaf_witness()?.expect("finite trees and the leaf line have leaves");
                Err(Error::NotLeafless(leaf.to_string()))
            }
            Structure::KaryRooted { k } | Structure::KaryUnrooted { k } => Ok(if *k >= 2 {
                FreeEndVerdict::NoFreeEnd
            } else {
                FreeEndVerdict::HasFreeEnd { witness: VertexAddress::base() }
            }),
            Structure::GraftedFreeEnd { k, graft } => {
                Ok(FreeEndVerdict::HasFreeEnd { witness: if *k >= 2 { graft.clone() } else { VertexAddress::base() } })
            }
            Structure::Opaque(_) => {
                let base = VertexAddress::base();
                let mut frontier = vec![base];
                let mut visited = 1u128;
                for _ in 0..depth_bound {
                    let mut next = Vec::new();
                    for v in &frontier {
                        let d = self.outdegree_unchecked(v);
                        if d == 0 {
                            return Err(Error::NotLeafless(v.to_string()));
                        }
                        next.extend((0..d).map(|i| v.child(i)));
                    }
                    visited += next.len() as u128;
                    if visited > self.vertex_limit as u128 {
                        break;
                    }
                    frontier = next;
                }
                Ok(FreeEndVerdict::UnknownUpToDepth { depth: depth_bound })
            }
        }
    }

    /// Undirected tree distance between two resolvable vertices.
    pub fn distance(&self, a: &VertexAddress, b: &VertexAddress) -> u32 {
        let top = a.up().max(b.up());
        let full = |v: &VertexAddress| -> Vec<u32> {
            std::iter::repeat(SPINE_CHILD).take((top - v.up()) as usize).chain(v.path().iter().copied()).collect()
        };
        let (pa, pb) = (full(a), full(b));
        let common = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
        (pa.len() - common + pb.len() - common) as u32
    }

    /// Membership in `{w : w ∈ child^n(parent^n(anchor)), n ≥ 1}` by the
    /// defining property.
    pub fn shares_ancestor_with(&self, w: &VertexAddress, anchor: &VertexAddress) -> Result<bool> {
        if w.level() != anchor.level() {
            return Ok(false);
        }
        for n in 1u32.. {
            let (Some(a), Some(b)) = (self.ancestor(w, n), self.ancestor(anchor, n)) else {
                return Ok(false);
            };
            if !self.is_finite() && a.up() > self.window.up {
                return Err(Error::window(w, "common ancestor lies above the window"));
            }
            if a == b {
                return Ok(true);
            }
        }
        unreachable!()
    }

    /// `dist(v, H)`: length of the shortest undirected path from `v` to `H`.
    pub fn dist_to_set(&self, v: &VertexAddress, set: &VertexSet) -> Result<u32> {
        self.resolve(v)?;
        match set {
            VertexSet::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::EmptySet);
                }
                for h in list {
                    self.resolve(h)?;
                }
                Ok(list.iter().map(|h| self.distance(v, h)).min().unwrap())
            }
            VertexSet::SharedAncestor { anchor } => self.dist_to_shared_set(v, anchor),
        }
    }

    fn dist_to_shared_set(&self, v: &VertexAddress, anchor: &VertexAddress) -> Result<u32> {
        self.resolve(anchor)?;
        if self.ancestor(anchor, 1).is_none() {
            return Err(Error::EmptySet);
        }
        let target = anchor.level();
        let mut best: Option<u32> = None;
        for j in 0u32.. {
            let Some(a) = self.ancestor(v, j) else { break };
            let gap = target - a.level();
            if gap >= 0 {
                // Every later ancestor costs at least 2j + target - level(v).
                if let Some(b) = best {
                    if j as i64 + gap >= b as i64 {
                        break;
                    }
                }
                if !self.is_finite() && a.up() > self.window.up {
                    return Err(Error::window(v, "distance to the set is not decided inside the window"));
                }
                if self.descendant_in_shared_set(&a, gap as u32, anchor)? {
                    let cand = j + gap as u32;
                    best = Some(best.map_or(cand, |b| b.min(cand)));
                }
            } else if !self.is_finite() && a.up() > self.window.up {
                return Err(Error::window(v, "distance to the set is not decided inside the window"));
            }
        }
        best.ok_or(Error::EmptySet)
    }

    fn descendant_in_shared_set(&self, a: &VertexAddress, depth: u32, anchor: &VertexAddress) -> Result<bool> {
        let mut stack = vec![(a.clone(), depth)];
        let mut visited = 0u128;
        while let Some((x, d)) = stack.pop() {
            visited += 1;
            self.check_limit(visited)?;
            if d == 0 {
                if self.shares_ancestor_with(&x, anchor)? {
                    return Ok(true);
                }
                continue;
            }
            let deg = self.outdegree_unchecked(&x);
            for i in (0..deg).rev() {
                stack.push((x.child(i), d - 1));
            }
        }
        Ok(false)
    }
}

fn check_arity(k: u32) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidTree("family arity k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Random recursive tree on `n` vertices `v0..v{n-1}`: vertex `i` picks its
/// parent uniformly among `v0..v{i-1}`.
pub fn random_recursive_tree(n: usize, seed: u64) -> FiniteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |i: usize| format!("v{i:05}");
    let edges = (1..n).map(|i| (name(rng.gen_range(0..i)), name(i))).collect();
    FiniteGraph { root: Some(name(0)), edges }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> VertexAddress {
        s.parse().unwrap()
    }

    #[test]
    fn path_graph_is_valid() {
        let g = FiniteGraph::new([("a", "b"), ("b", "c")]).with_root("a");
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn two_cycle_is_a_circuit() {
        let g = FiniteGraph::new([("a", "b"), ("b", "a")]);
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DirectedCircuit { witness } if witness.len() == 2)));
    }

    #[test]
    fn self_loop_is_a_circuit() {
        let g = FiniteGraph::new([("a", "a"), ("r", "a")]);
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DirectedCircuit { witness } if witness == &["a"])));
    }

    #[test]
    fn indegree_two_is_reported() {
        let g = FiniteGraph::new([("a", "c"), ("b", "c")]);
        let report = validate_graph(&g);
        assert!(report
            .violations
            .contains(&Violation::Indegree { vertex: "c".into(), parents: vec!["a".into(), "b".into()] }));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::MultipleRoots { .. })));
    }

    #[test]
    fn disconnected_and_root_mismatch() {
        let g = FiniteGraph::new([("a", "b"), ("c", "d")]).with_root("b");
        let report = validate_graph(&g);
        assert!(report.violations.contains(&Violation::Disconnected { witness: "c".into() }));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::RootMismatch { .. })));
        assert_eq!(validate_graph(&FiniteGraph::default()).violations, vec![Violation::NoVertices]);
    }

    #[test]
    fn finite_tree_addresses_follow_name_order() {
        let g = FiniteGraph::new([("r", "y"), ("r", "x"), ("x", "z")]);
        let m = TreeModel::finite(&g).unwrap();
        let t = m.finite_tree().unwrap();
        assert_eq!(t.address_of("x"), Some(&addr("0")));
        assert_eq!(t.address_of("y"), Some(&addr("1")));
        assert_eq!(t.name_of(&addr("0.0")), Some("z"));
        assert!(m.resolve(&addr("1.0")).is_err());
        assert_eq!(m.window(), Window { up: 0, down: 2 });
    }

    #[test]
    fn parent_n_examples() {
        let bin = TreeModel::kary_rooted(2, 10).unwrap();
        assert_eq!(bin.parent_n(&addr("0.1"), 1).unwrap(), Some(addr("0")));
        assert_eq!(bin.parent_n(&VertexAddress::base(), 1).unwrap(), None);
        let line = TreeModel::bilateral_line(Window { up: 5, down: 5 });
        assert_eq!(line.parent_n(&VertexAddress::base(), 3).unwrap(), Some(addr("^3")));
        assert!(bin.parent_n(&addr("0.2"), 1).is_err());
    }

    #[test]
    fn children_n_examples() {
        let bin = TreeModel::kary_rooted(2, 10).unwrap();
        let c = bin.children_n(&VertexAddress::base(), 2).unwrap();
        assert_eq!(c, ["0.0", "0.1", "1.0", "1.1"].map(addr).to_vec());
        let line = TreeModel::bilateral_line(Window { up: 3, down: 8 });
        assert_eq!(line.children_n(&addr("^2"), 5).unwrap(), vec![addr("0.0.0")]);
        let leafline = TreeModel::unilateral_leaf_line(4);
        assert!(leafline.children_n(&VertexAddress::base(), 1).unwrap().is_empty());
        assert!(bin.children_n(&addr("0.0"), 9).is_err());
    }

    #[test]
    fn gamma_examples() {
        let bin = TreeModel::kary_rooted(2, 12).unwrap();
        assert_eq!(bin.gamma(&VertexAddress::base(), 10).unwrap(), 1024);
        let line = TreeModel::bilateral_line(Window { up: 3, down: 30 });
        for n in 1..=20 {
            assert_eq!(line.gamma(&addr("^1"), n).unwrap(), 1);
        }
    }

    #[test]
    fn grafted_gamma_matches_enumeration() {
        let g = TreeModel::grafted_free_end(2, addr("1"), 12).unwrap();
        for u in g.vertices_in_window().unwrap() {
            let room = 12 - u.level() as u32;
            for n in 0..=room.min(6) {
                let by_class = g.gamma(&u, n).unwrap();
                let listed = g.children_n(&u, n).unwrap().len() as u128;
                assert_eq!(by_class, listed, "vertex {u}, n = {n}");
            }
        }
        assert_eq!(g.gamma(&addr("1"), 11).unwrap(), 1);
        assert_eq!(g.gamma(&VertexAddress::base(), 3).unwrap(), 4 + 1);
    }

    #[test]
    fn shape_classes() {
        assert_eq!(TreeModel::kary_rooted(2, 3).unwrap().classify_shape().unwrap(), ShapeClass::Rooted);
        let w = Window { up: 3, down: 3 };
        assert_eq!(TreeModel::bilateral_line(w).classify_shape().unwrap(), ShapeClass::BilateralLine);
        assert_eq!(TreeModel::unilateral_leaf_line(3).classify_shape().unwrap(), ShapeClass::UnilateralLeafLine);
        assert_eq!(TreeModel::kary_unrooted(2, w).unwrap().classify_shape().unwrap(), ShapeClass::HasBranchVertex);
        let opaque = TreeModel::opaque(OpaqueGenerator::new(false, |_| 1), w);
        assert_eq!(opaque.classify_shape().unwrap(), ShapeClass::OtherUnrooted);
    }

    #[test]
    fn free_end_examples() {
        let bin = TreeModel::kary_rooted(2, 5).unwrap();
        assert_eq!(bin.free_end_verdict(5).unwrap(), FreeEndVerdict::NoFreeEnd);
        let g = TreeModel::grafted_free_end(2, addr("1"), 5).unwrap();
        assert_eq!(g.free_end_verdict(5).unwrap(), FreeEndVerdict::HasFreeEnd { witness: addr("1") });
        let opaque = TreeModel::opaque(OpaqueGenerator::new(true, |_| 1), Window { up: 0, down: 60 });
        assert_eq!(opaque.free_end_verdict(50).unwrap(), FreeEndVerdict::UnknownUpToDepth { depth: 50 });
        assert!(TreeModel::unilateral_leaf_line(3).free_end_verdict(3).is_err());
    }

    #[test]
    fn window_vertices_are_counted_exactly() {
        let bin = TreeModel::kary_rooted(2, 4).unwrap();
        assert_eq!(bin.vertices_in_window().unwrap().len(), 31);
        let un = TreeModel::kary_unrooted(2, Window { up: 2, down: 1 }).unwrap();
        let all = un.vertices_in_window().unwrap();
        assert!(all.iter().all(|v| un.in_window(v) && un.resolve(v).is_ok()));
        // Descendants of ^2 down to level 1: 1 + 2 + 4 + 8.
        assert_eq!(all.len(), 15);
        let capped = TreeModel::kary_rooted(2, 20).unwrap().with_vertex_limit(1000);
        assert!(matches!(capped.vertices_in_window(), Err(Error::WindowLimit { .. })));
    }

    #[test]
    fn distance_to_explicit_set() {
        let bin = TreeModel::kary_rooted(2, 6).unwrap();
        let h = VertexSet::Explicit(vec![addr("0.0")]);
        assert_eq!(bin.dist_to_set(&addr("0.0"), &h).unwrap(), 0);
        assert_eq!(bin.dist_to_set(&addr("1"), &h).unwrap(), 3);
        assert_eq!(bin.dist_to_set(&addr("1"), &VertexSet::Explicit(vec![])), Err(Error::EmptySet));
    }

    /// Brute-force oracle: H membership by scanning `n = 1..=n_max` and
    /// distance by breadth-first search over a ball.
    fn brute_dist(m: &TreeModel, v: &VertexAddress, anchor: &VertexAddress, n_max: u32, radius: u32) -> u32 {
        let in_h = |w: &VertexAddress| {
            (1..=n_max).any(|n| {
                let a = m.parent_n(anchor, n).unwrap();
                a.is_some() && m.children_n(a.as_ref().unwrap(), n).unwrap().contains(w)
            })
        };
        let mut seen = BTreeSet::from([v.clone()]);
        let mut frontier = vec![v.clone()];
        for d in 0..=radius {
            if frontier.iter().any(in_h) {
                return d;
            }
            let mut next = Vec::new();
            for x in &frontier {
                let mut nb = m.children(x).unwrap();
                nb.extend(m.parent(x).unwrap());
                for y in nb {
                    if seen.insert(y.clone()) {
                        next.push(y);
                    }
                }
            }
            frontier = next;
        }
        panic!("no H vertex within radius {radius}");
    }

    #[test]
    fn shared_ancestor_distance_matches_brute_force() {
        let m = TreeModel::kary_unrooted(2, Window { up: 8, down: 8 }).unwrap();
        let anchor = VertexAddress::base();
        let set = VertexSet::SharedAncestor { anchor: anchor.clone() };
        for v in m.ball(&anchor, 3).unwrap() {
            let fast = m.dist_to_set(&v, &set).unwrap();
            assert_eq!(fast, brute_dist(&m, &v, &anchor, 3, 4), "vertex {v}");
            assert_eq!(fast as i64, v.level().abs());
        }
        // parent(w*) sits one generation above every member of H.
        assert_eq!(m.dist_to_set(&addr("^1"), &set).unwrap(), 1);
        assert_eq!(m.dist_to_set(&addr("^1/1"), &set).unwrap(), 0);
        assert_eq!(m.dist_to_set(&addr("0"), &set).unwrap(), 1);
    }

    #[test]
    fn shared_set_of_root_is_empty() {
        let bin = TreeModel::kary_rooted(2, 6).unwrap();
        let set = VertexSet::SharedAncestor { anchor: VertexAddress::base() };
        assert_eq!(bin.dist_to_set(&addr("0"), &set), Err(Error::EmptySet));
        let set = VertexSet::SharedAncestor { anchor: addr("0") };
        assert_eq!(bin.dist_to_set(&addr("1"), &set).unwrap(), 0);
        assert_eq!(bin.dist_to_set(&addr("1.1.0"), &set).unwrap(), 2);
    }

    #[test]
    fn random_tree_is_valid() {
        let g = random_recursive_tree(200, 7);
        assert!(validate_graph(&g).is_valid());
        assert_eq!(TreeModel::finite(&g).unwrap().finite_tree().unwrap().len(), 200);
    }
}
