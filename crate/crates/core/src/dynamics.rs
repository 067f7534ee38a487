//! Decay quantities `Ω`, `Θ`, their conjugate-weight and necessary-sum
//! variants, decay reports, and the hypercyclicity deciders for `S` and `B`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::operators::backward_bound;
use crate::space::{check_exponent, shallow_vertices, CompensatedSum, LevelLaw, WeightMap};
use crate::tree::{FreeEndVerdict, ShapeClass, Structure, TreeModel};

/// Default probe radius around the base vertex.
pub const DEFAULT_PROBE_DEPTH: u32 = 4;
/// Default largest `n` in decay grids.
pub const DEFAULT_N_MAX: u32 = 10;

const RATIO_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Omega,
    Theta,
    OmegaStar,
    NecessarySum,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Omega => "omega",
            Quantity::Theta => "theta",
            Quantity::OmegaStar => "omega_star",
            Quantity::NecessarySum => "necessary_sum",
        })
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omega" => Ok(Quantity::Omega),
            "theta" => Ok(Quantity::Theta),
            "omega_star" => Ok(Quantity::OmegaStar),
            "necessary_sum" => Ok(Quantity::NecessarySum),
            _ => Err(Error::InvalidArgument(format!(
                "unknown quantity {s:?} (expected omega, theta, omega_star or necessary_sum)"
            ))),
        }
    }
}

/// `γ(u, n)` and `Σ_{v ∈ child^n(u)} h(λ_v)`, by class counting when the
/// weights are generation-uniform and by enumeration otherwise.
fn descendant_sum(
    u: &VertexAddress,
    n: u32,
    weights: &WeightMap,
    model: &TreeModel,
    h: impl Fn(f64) -> f64,
) -> Result<(u128, f64)> {
    let gamma = model.gamma(u, n)?;
    if gamma == 0 {
        return Err(Error::LeafBelow(u.to_string()));
    }
    if let (Some(law), Some(_)) = (weights.level_law(model), model.descendant_classes(u, 0)?) {
        return Ok((gamma, gamma as f64 * h(law.at(u.level() + n as i64))));
    }
    let mut sum = CompensatedSum::default();
    for v in model.children_n(u, n)? {
        sum.add(h(weights.weight(model, &v)?));
    }
    Ok((gamma, sum.value()))
}

fn check_q(q: f64) -> Result<()> {
    check_exponent(q)
}

/// `Ω(u,n) = γ(u,n)^{-q} Σ_{v ∈ child^n(u)} λ_v`.
pub fn omega(u: &VertexAddress, n: u32, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    check_q(q)?;
    let (gamma, sum) = descendant_sum(u, n, weights, model, |x| x)?;
    let g = gamma as f64;
    if weights.level_law(model).is_some() && model.descendant_classes(u, 0)?.is_some() {
        // Every term equals the generation weight, so Ω = γ^{1-q} λ.
        return Ok(g.powf(1.0 - q) * (sum / g));
    }
    Ok(g.powf(-q) * sum)
}

/// `Θ(u,n) = γ(parent^n u, n)^{q-1} λ_{parent^n u}`.
pub fn theta(u: &VertexAddress, n: u32, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    check_q(q)?;
    let Some(a) = model.parent_n(u, n)? else {
        return Err(Error::NoAncestor { vertex: u.to_string(), n });
    };
    if !model.in_window(&a) {
        return Err(Error::window(&a, format!("{n}-ancestor of {u} lies outside the window")));
    }
    let gamma = model.gamma(&a, n)? as f64;
    Ok(gamma.powf(q - 1.0) * weights.weight(model, &a)?)
}

/// `Ω` computed with the conjugate weights `λ^{1-q}`.
pub fn omega_star(u: &VertexAddress, n: u32, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    omega(u, n, &weights.conjugate_weights(q), q, model)
}

/// `Σ_{v ∈ child^n(u)} λ_v^{-1/q}`.
pub fn necessary_sum(u: &VertexAddress, n: u32, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    check_q(q)?;
    Ok(descendant_sum(u, n, weights, model, |x| x.powf(-1.0 / q))?.1)
}

pub fn evaluate(
    quantity: Quantity,
    u: &VertexAddress,
    n: u32,
    weights: &WeightMap,
    q: f64,
    model: &TreeModel,
) -> Result<f64> {
    match quantity {
        Quantity::Omega => omega(u, n, weights, q, model),
        Quantity::Theta => theta(u, n, weights, q, model),
        Quantity::OmegaStar => omega_star(u, n, weights, q, model),
        Quantity::NecessarySum => necessary_sum(u, n, weights, q, model),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVerdict {
    DecaysToZero,
    DivergesToInfinity,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Every `n` of the grid.
    Full,
    /// A common strictly decreasing subsequence picked greedily.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub vertex: VertexAddress,
    /// One value per grid entry.
    pub values: Vec<f64>,
    /// Fitted per-step geometric ratio on the selected subsequence.
    pub ratio: f64,
    pub verdict: DecayVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub quantity: Quantity,
    pub q: f64,
    pub probes: Vec<VertexAddress>,
    pub n_grid: Vec<u32>,
    pub rows: Vec<DecayRow>,
    pub selection: Selection,
    pub subsequence: Vec<u32>,
    pub verdict: DecayVerdict,
    pub note: String,
}

impl DecayReport {
    /// `vertex,n,value` rows in probe then grid order.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut out = Vec::new();
        for row in &self.rows {
            for (n, v) in self.n_grid.iter().zip(&row.values) {
                out.push(format!("{},{},{:e}", row.vertex, n, v));
            }
        }
        out
    }
}

/// Least-squares slope of `ln value` against `n`, as a per-step ratio.
fn fitted_ratio(ns: &[u32], values: &[f64]) -> f64 {
    if ns.len() < 2 {
        return 1.0;
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxy / sxx).exp()
}

/// Verdict for one sequence: the longest tail of length at least
/// `max(3, ⌈len/2⌉)` that is monotone, with a fitted ratio clear of 1.
fn classify(ns: &[u32], values: &[f64]) -> (f64, DecayVerdict) {
    let len = values.len();
    let overall = fitted_ratio(ns, values);
    let min_tail = 3.max(len.div_ceil(2));
    if len < min_tail {
        return (overall, DecayVerdict::Inconclusive);
    }
    for start in 0..=len - min_tail {
        let tail = &values[start..];
        let ratio = fitted_ratio(&ns[start..], tail);
        if tail.windows(2).all(|w| w[1] <= w[0]) && ratio < 1.0 - RATIO_MARGIN {
            return (ratio, DecayVerdict::DecaysToZero);
        }
        if tail.windows(2).all(|w| w[1] >= w[0]) && ratio > 1.0 + RATIO_MARGIN {
            return (ratio, DecayVerdict::DivergesToInfinity);
        }
    }
    (overall, DecayVerdict::Inconclusive)
}

fn combine(verdicts: impl Iterator<Item = DecayVerdict> + Clone) -> DecayVerdict {
    if verdicts.clone().all(|v| v == DecayVerdict::DecaysToZero) {
        DecayVerdict::DecaysToZero
    } else if verdicts.clone().all(|v| v == DecayVerdict::DivergesToInfinity) {
        DecayVerdict::DivergesToInfinity
    } else {
        DecayVerdict::Inconclusive
    }
}

/// Longest index chain along which every series strictly decreases.
fn greedy_subsequence(series: &[&[f64]], len: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for start in 0..len {
        let mut chain = vec![start];
        for i in start + 1..len {
            let last = *chain.last().unwrap();
            if series.iter().all(|s| s[i] < s[last]) {
                chain.push(i);
            }
        }
        if chain.len() > best.len() {
            best = chain;
        }
    }
    best
}

/// Reports for several quantities over the same probes and grid. When the
/// full grid does not show decay for all of them, a common decreasing
/// subsequence is tried for all quantities jointly.
pub fn decay_reports(
    quantities: &[Quantity],
    probes: &[VertexAddress],
    n_grid: &[u32],
    weights: &WeightMap,
    q: f64,
    model: &TreeModel,
) -> Result<Vec<DecayReport>> {
    check_q(q)?;
    if probes.is_empty() || n_grid.is_empty() {
        return Err(Error::InvalidArgument("decay reports need at least one probe and one n".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(Error::InvalidArgument("the n-grid must be strictly increasing from n ≥ 1".into()));
    }
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
    for &quantity in quantities {
        let mut table = Vec::new();
        for u in probes {
            let row =
                n_grid.iter().map(|&n| evaluate(quantity, u, n, weights, q, model)).collect::<Result<Vec<_>>>()?;
            table.push(row);
        }
        tables.push(table);
    }

    let full: Vec<usize> = (0..n_grid.len()).collect();
    let all_decay = |selected: &[usize]| {
        tables.iter().flatten().all(|row| {
            let vs: Vec<f64> = selected.iter().map(|&i| row[i]).collect();
            let ns: Vec<u32> = selected.iter().map(|&i| n_grid[i]).collect();
            classify(&ns, &vs).1 == DecayVerdict::DecaysToZero
        })
    };
    let (selection, chosen) = if all_decay(&full) {
        (Selection::Full, full)
    } else {
        let series: Vec<&[f64]> = tables.iter().flatten().map(|r| r.as_slice()).collect();
        let greedy = greedy_subsequence(&series, n_grid.len());
        if greedy.len() >= 3 && all_decay(&greedy) {
            (Selection::Greedy, greedy)
        } else {
            (Selection::Full, full)
        }
    };
    let ns: Vec<u32> = chosen.iter().map(|&i| n_grid[i]).collect();

    let mut reports = Vec::new();
    for (&quantity, table) in quantities.iter().zip(tables) {
        let rows: Vec<DecayRow> = probes
            .iter()
            .zip(table)
            .map(|(u, values)| {
                let picked: Vec<f64> = chosen.iter().map(|&i| values[i]).collect();
                let (ratio, verdict) = classify(&ns, &picked);
                DecayRow { vertex: u.clone(), values, ratio, verdict }
            })
            .collect();
        let verdict = combine(rows.iter().map(|r| r.verdict));
        let note = format!(
            "{} probes; {} grid of {} points used; monotone tail of at least {} points and fitted ratio beyond 1 ± {RATIO_MARGIN:e} required",
            probes.len(),
            match selection {
                Selection::Full => "full",
                Selection::Greedy => "greedy subsequence",
            },
            ns.len(),
            3.max(ns.len().div_ceil(2)),
        );
        reports.push(DecayReport {
            quantity,
            q,
            probes: probes.to_vec(),
            n_grid: n_grid.to_vec(),
            rows,
            selection,
            subsequence: ns.clone(),
            verdict,
            note,
        });
    }
    Ok(reports)
}

pub fn decay_report(
    quantity: Quantity,
    probes: &[VertexAddress],
    n_grid: &[u32],
    weights: &WeightMap,
    q: f64,
    model: &TreeModel,
) -> Result<DecayReport> {
    Ok(decay_reports(&[quantity], probes, n_grid, weights, q, model)?.remove(0))
}

/// Default probes: vertices within `depth` of the root (rooted trees) or the
/// undirected ball of radius `depth` around the anchor (unrooted trees),
/// then `extra`, deduplicated in address order.
pub fn default_probes(model: &TreeModel, depth: u32, extra: &[VertexAddress]) -> Result<Vec<VertexAddress>> {
    let mut probes =
        if model.is_rooted() { shallow_vertices(model, depth)? } else { model.ball(&VertexAddress::base(), depth)? };
    for v in extra {
        model.resolve(v)?;
        probes.push(v.clone());
    }
    probes.sort();
    probes.dedup();
    Ok(probes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotHcReason {
    Rooted,
    Branching,
    Leaf,
    FreeEnd,
    NecessaryFails,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcReason {
    NoFreeEndUnweighted,
    SufficientConditionMet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SalasLine {
    BilateralLine,
    UnilateralLeafLine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason")]
pub enum Outcome {
    #[serde(rename = "NotHC")]
    NotHc(NotHcReason),
    #[serde(rename = "HC")]
    Hc(HcReason),
    ReducesToSalas(SalasLine),
    EvidenceOnly,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::NotHc(r) => write!(f, "NotHC({r:?})"),
            Outcome::Hc(r) => write!(f, "HC({r:?})"),
            Outcome::ReducesToSalas(l) => write!(f, "ReducesToSalas({l:?})"),
            Outcome::EvidenceOnly => write!(f, "EvidenceOnly"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypercyclicityVerdict {
    pub outcome: Outcome,
    /// The statement the verdict rests on.
    pub theorem: String,
    pub witness: Option<VertexAddress>,
    /// True when the verdict rests on finitely many probes.
    pub evidence_graded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<DecayReport>,
}

impl HypercyclicityVerdict {
    fn new(outcome: Outcome, theorem: &str, witness: Option<VertexAddress>) -> Self {
        HypercyclicityVerdict {
            outcome,
            theorem: theorem.to_string(),
            witness,
            evidence_graded: false,
            note: None,
            reports: Vec::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    fn with_reports(mut self, reports: Vec<DecayReport>) -> Self {
        self.reports = reports;
        self
    }

    fn graded(mut self) -> Self {
        self.evidence_graded = true;
        self
    }

    pub fn is_hc(&self) -> bool {
        matches!(self.outcome, Outcome::Hc(_))
    }
}

const THM_ROOTED: &str = "the forward shift on a rooted directed tree is not hypercyclic on any L^p(T, λ)";
const THM_BRANCHING: &str =
    "the forward shift on a directed tree with a vertex of outdegree at least 2 is not hypercyclic on any L^p(T, λ)";
const THM_SALAS: &str =
    "an unrooted tree with every outdegree at most 1 is a line, on which S is a classical weighted shift";
const THM_LEAF: &str = "B is not hypercyclic on L^q(T, λ) when T has a leaf";
const THM_IFF: &str =
    "on a rooted leafless tree with unit weights, B is hypercyclic on L^q(T) if and only if T has no free ends";
const THM_NECESSARY: &str =
    "if B is hypercyclic on a rooted tree then for every u, Σ_{v ∈ child^{n_k}(u)} λ_v^{-1/q} → ∞ along some n_k";
const THM_ROOTED_SUFFICIENT: &str =
    "B is hypercyclic on a rooted leafless tree if Ω(u, n_k) → 0 for every vertex u along some n_k";
const THM_UNROOTED_SUFFICIENT: &str =
    "B is hypercyclic on an unrooted leafless tree if Θ(u, n_k) → 0 and Ω(u, n_k) → 0 for every vertex u along some n_k";

const SALAS_NOTE: &str = "the weight condition for weighted shifts on ℤ or ℕ₀ is classical and is not evaluated here";

/// Decides hypercyclicity of the forward shift `S`. Never answers HC: the
/// line cases are only classified.
pub fn decide_forward(model: &TreeModel) -> Result<HypercyclicityVerdict> {
    if model.is_rooted() {
        return Ok(HypercyclicityVerdict::new(
            Outcome::NotHc(NotHcReason::Rooted),
            THM_ROOTED,
            Some(VertexAddress::base()),
        ));
    }
    if let Some(w) = model.branch_witness()? {
        return Ok(HypercyclicityVerdict::new(Outcome::NotHc(NotHcReason::Branching), THM_BRANCHING, Some(w)));
    }
    Ok(match model.classify_shape()? {
        ShapeClass::BilateralLine => {
            HypercyclicityVerdict::new(Outcome::ReducesToSalas(SalasLine::BilateralLine), THM_SALAS, None)
                .note(SALAS_NOTE)
        }
        ShapeClass::UnilateralLeafLine => {
            HypercyclicityVerdict::new(Outcome::ReducesToSalas(SalasLine::UnilateralLeafLine), THM_SALAS, None)
                .note(SALAS_NOTE)
        }
        _ => HypercyclicityVerdict::new(Outcome::EvidenceOnly, THM_SALAS, None).note(
            "no vertex of outdegree ≥ 2 inside the window, but the generator carries no metadata to certify a line",
        ),
    })
}

/// Eventual per-generation growth factor of the weights along a descent.
fn eventual_rate(law: &LevelLaw) -> f64 {
    match law {
        LevelLaw::Exp { rate } => *rate,
        LevelLaw::Tent { s, .. } => 1.0 / s,
        LevelLaw::Pow { inner, exponent } => eventual_rate(inner).powf(*exponent),
    }
}

fn grid(n_max: u32) -> Result<Vec<u32>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    Ok((1..=n_max).collect())
}

/// Decides hypercyclicity of the backward shift `B` on `L^q(T, λ)`.
///
/// `probes` are added to the default probe set; `n_max` bounds the grid
/// `1..=n_max` used for decay evidence.
pub fn decide_backward(
    model: &TreeModel,
    weights: &WeightMap,
    q: f64,
    probes: &[VertexAddress],
    n_max: u32,
) -> Result<HypercyclicityVerdict> {
    check_q(q)?;
    weights.check()?;
    let bound = backward_bound(weights, q, model)?;
    if bound.value.is_infinite() {
        return Err(Error::Unbounded("∞".into()));
    }
    let ns = grid(n_max)?;

    if let Some(leaf) = model.leaf_witness()? {
        return Ok(HypercyclicityVerdict::new(Outcome::NotHc(NotHcReason::Leaf), THM_LEAF, Some(leaf)));
    }
    let leaf_note = (!model.leafless_certified())
        .then_some("no leaf found inside the window; leaflessness beyond it is assumed, not certified");

    if model.is_rooted() {
        let depth = model.window().down;
        let free_end = model.free_end_verdict(depth)?;
        if weights.is_unit() && q > 1.0 {
            return Ok(match free_end {
                FreeEndVerdict::NoFreeEnd => HypercyclicityVerdict::new(
                    Outcome::Hc(HcReason::NoFreeEndUnweighted),
                    THM_IFF,
                    Some(VertexAddress::base()),
                )
                .note("structural metadata confirms that every branch keeps branching"),
                FreeEndVerdict::HasFreeEnd { witness } => {
                    HypercyclicityVerdict::new(Outcome::NotHc(NotHcReason::FreeEnd), THM_IFF, Some(witness))
                }
                FreeEndVerdict::UnknownUpToDepth { depth } => {
                    let probes = default_probes(model, DEFAULT_PROBE_DEPTH, probes)?;
                    let reports = decay_reports(&[Quantity::Omega], &probes, &ns, weights, q, model)?;
                    HypercyclicityVerdict::new(Outcome::EvidenceOnly, THM_IFF, None).with_reports(reports).note(
                        format!(
                            "free ends cannot be excluded: outdegrees were scanned to depth {depth} only{}",
                            leaf_note.map(|n| format!("; {n}")).unwrap_or_default()
                        ),
                    )
                }
            });
        }

        if let FreeEndVerdict::HasFreeEnd { witness } = &free_end {
            if let Some(law) = weights.level_law(model) {
                if eventual_rate(&law) >= 1.0 {
                    let report =
                        decay_report(Quantity::NecessarySum, std::slice::from_ref(witness), &ns, weights, q, model)?;
                    return Ok(HypercyclicityVerdict::new(
                        Outcome::NotHc(NotHcReason::NecessaryFails),
                        THM_NECESSARY,
                        Some(witness.clone()),
                    )
                    .with_reports(vec![report])
                    .note("the weights do not decrease along the free end, so the sum stays bounded"));
                }
            }
        }
        let probes = default_probes(model, DEFAULT_PROBE_DEPTH, probes)?;
        let reports = decay_reports(&[Quantity::Omega], &probes, &ns, weights, q, model)?;
        let decays = reports[0].verdict == DecayVerdict::DecaysToZero;
        let verdict = if decays {
            HypercyclicityVerdict::new(Outcome::Hc(HcReason::SufficientConditionMet), THM_ROOTED_SUFFICIENT, None)
                .graded()
        } else {
            HypercyclicityVerdict::new(Outcome::EvidenceOnly, THM_ROOTED_SUFFICIENT, None)
        };
        let mut verdict = verdict.with_reports(reports);
        verdict.note = leaf_note.map(String::from);
        return Ok(verdict);
    }

    let probes = default_probes(model, DEFAULT_PROBE_DEPTH, probes)?;
    let reports = decay_reports(&[Quantity::Theta, Quantity::Omega], &probes, &ns, weights, q, model)?;
    let decays = reports.iter().all(|r| r.verdict == DecayVerdict::DecaysToZero);
    let verdict = if decays {
        HypercyclicityVerdict::new(Outcome::Hc(HcReason::SufficientConditionMet), THM_UNROOTED_SUFFICIENT, None)
            .graded()
    } else {
        HypercyclicityVerdict::new(Outcome::EvidenceOnly, THM_UNROOTED_SUFFICIENT, None)
    };
    let mut verdict = verdict.with_reports(reports);
    verdict.note = leaf_note.map(String::from);
    Ok(verdict)
}

/// Weights `λ_u = s^{-dist(u, H)}` on the unrooted `r`-ary tree, with `H`
/// the generation of `anchor`. Needs `s > r^{q-1}`.
pub fn example_weights_rary(r: u32, s: f64, q: f64, anchor: &VertexAddress, model: &TreeModel) -> Result<WeightMap> {
    check_q(q)?;
    match model.structure() {
        Structure::KaryUnrooted { k } if *k == r => {}
        _ => {
            return Err(Error::InvalidArgument(format!("the model is not the unrooted {r}-ary tree")));
        }
    }
    model.resolve(anchor)?;
    let threshold = (r as f64).powf(q - 1.0);
    if !(s > threshold) {
        return Err(Error::InvalidArgument(format!(
            "s > r^(q-1) fails: s = {s}, r^(q-1) = {r}^{} = {threshold}",
            q - 1.0
        )));
    }
    let w = WeightMap::DistanceToH { s, anchor: anchor.clone() };
    w.check()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{OpaqueGenerator, Window};

    fn addr(s: &str) -> VertexAddress {
        s.parse().unwrap()
    }

    fn bin(down: u32) -> TreeModel {
        TreeModel::kary_rooted(2, down).unwrap()
    }

    #[test]
    fn omega_examples() {
        let m = bin(12);
        let root = VertexAddress::base();
        assert_eq!(omega(&root, 3, &WeightMap::Unit, 2.0, &m).unwrap(), 0.125);
        for n in 1..=8 {
            let g = m.gamma(&root, n).unwrap() as f64;
            assert_eq!(omega(&addr("1"), n, &WeightMap::Unit, 1.7, &m).unwrap(), g.powf(1.0 - 1.7));
        }
        let line = TreeModel::kary_rooted(1, 12).unwrap();
        let w = WeightMap::Geometric { base: 0.3 };
        let u = addr("0.0");
        assert_eq!(omega(&u, 4, &w, 2.0, &line).unwrap(), w.weight(&line, &addr("0.0.0.0.0.0")).unwrap());
    }

    #[test]
    fn omega_fast_path_matches_enumeration() {
        let m = TreeModel::grafted_free_end(2, addr("1.0"), 12).unwrap();
        let w = WeightMap::Geometric { base: 0.8 };
        for u in ["*", "0", "1", "1.0", "1.1"].map(addr) {
            for n in 1..=6 {
                let fast = omega(&u, n, &w, 2.5, &m).unwrap();
                let listed: f64 = m.children_n(&u, n).unwrap().iter().map(|v| w.weight(&m, v).unwrap()).sum();
                let g = m.gamma(&u, n).unwrap() as f64;
                let slow = listed / g.powf(2.5);
                assert!((fast - slow).abs() <= 1e-13 * slow, "{u} {n}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn theta_examples() {
        let z = TreeModel::bilateral_line(Window { up: 12, down: 12 });
        for n in 1..=10 {
            assert_eq!(theta(&VertexAddress::base(), n, &WeightMap::Unit, 2.0, &z).unwrap(), 1.0);
        }
        let m = TreeModel::kary_unrooted(2, Window { up: 8, down: 8 }).unwrap();
        let w = example_weights_rary(2, 3.0, 2.0, &VertexAddress::base(), &m).unwrap();
        let t = theta(&VertexAddress::base(), 4, &w, 2.0, &m).unwrap();
        assert!((t - 16.0 / 81.0).abs() < 1e-15);
        assert!(matches!(
            theta(&VertexAddress::base(), 1, &WeightMap::Unit, 2.0, &bin(3)),
            Err(Error::NoAncestor { .. })
        ));
        assert!(theta(&VertexAddress::base(), 9, &w, 2.0, &m).unwrap_err().is_window_failure());
    }

    #[test]
    fn omega_star_examples() {
        let m = bin(12);
        let root = VertexAddress::base();
        let w = WeightMap::Geometric { base: 0.5 };
        for n in 1..=10 {
            let direct: f64 = m.children_n(&root, n).unwrap().iter().map(|v| 1.0 / w.weight(&m, v).unwrap()).sum();
            let g = (1u64 << n) as f64;
            assert_eq!(direct / (g * g), 1.0);
            assert!((omega_star(&root, n, &w, 2.0, &m).unwrap() - 1.0).abs() < 1e-15);
        }
        assert_eq!(
            omega_star(&addr("0"), 3, &WeightMap::Unit, 3.0, &m).unwrap(),
            omega(&addr("0"), 3, &WeightMap::Unit, 3.0, &m).unwrap()
        );
    }

    #[test]
    fn necessary_sum_examples() {
        let m = bin(12);
        for n in 1..=10 {
            assert_eq!(
                necessary_sum(&VertexAddress::base(), n, &WeightMap::Unit, 2.0, &m).unwrap(),
                (1u64 << n) as f64
            );
        }
        let g = TreeModel::grafted_free_end(2, addr("1"), 40).unwrap();
        for n in 1..=30 {
            assert_eq!(necessary_sum(&addr("1"), n, &WeightMap::Unit, 2.0, &g).unwrap(), 1.0);
        }
    }

    #[test]
    fn forward_decider() {
        assert_eq!(decide_forward(&bin(3)).unwrap().outcome, Outcome::NotHc(NotHcReason::Rooted));
        let w = Window { up: 3, down: 3 };
        assert_eq!(
            decide_forward(&TreeModel::bilateral_line(w)).unwrap().outcome,
            Outcome::ReducesToSalas(SalasLine::BilateralLine)
        );
        assert_eq!(
            decide_forward(&TreeModel::unilateral_leaf_line(3)).unwrap().outcome,
            Outcome::ReducesToSalas(SalasLine::UnilateralLeafLine)
        );
        let branch = decide_forward(&TreeModel::kary_unrooted(3, w).unwrap()).unwrap();
        assert_eq!(branch.outcome, Outcome::NotHc(NotHcReason::Branching));
        assert!(branch.witness.is_some());
    }

    #[test]
    fn backward_decider_cascade() {
        let hc = decide_backward(&bin(12), &WeightMap::Unit, 2.0, &[], 10).unwrap();
        assert_eq!(hc.outcome, Outcome::Hc(HcReason::NoFreeEndUnweighted));
        let g = TreeModel::grafted_free_end(2, addr("1"), 12).unwrap();
        let not = decide_backward(&g, &WeightMap::Unit, 2.0, &[], 10).unwrap();
        assert_eq!(not.outcome, Outcome::NotHc(NotHcReason::FreeEnd));
        assert_eq!(not.witness, Some(addr("1")));
        let leaf = decide_backward(&TreeModel::unilateral_leaf_line(4), &WeightMap::Unit, 2.0, &[], 3).unwrap();
        assert_eq!(leaf.outcome, Outcome::NotHc(NotHcReason::Leaf));
        let opaque = TreeModel::opaque(OpaqueGenerator::new(true, |_| 1), Window { up: 0, down: 20 });
        let unknown = decide_backward(&opaque, &WeightMap::Unit, 2.0, &[], 5).unwrap();
        assert_eq!(unknown.outcome, Outcome::EvidenceOnly);
    }

    #[test]
    fn backward_decider_weighted_rooted() {
        let m = bin(16);
        let decay = decide_backward(&m, &WeightMap::Geometric { base: 0.9 }, 2.0, &[], 10).unwrap();
        assert_eq!(decay.outcome, Outcome::Hc(HcReason::SufficientConditionMet));
        assert!(decay.evidence_graded);
        let g = TreeModel::grafted_free_end(2, addr("1"), 16).unwrap();
        let nec = decide_backward(&g, &WeightMap::Geometric { base: 1.2 }, 2.0, &[], 10).unwrap();
        assert_eq!(nec.outcome, Outcome::NotHc(NotHcReason::NecessaryFails));
        let grow = decide_backward(&m, &WeightMap::Geometric { base: 4.0 }, 2.0, &[], 10).unwrap();
        assert_eq!(grow.outcome, Outcome::EvidenceOnly);
    }

    #[test]
    fn example_weights_inequality() {
        let m = TreeModel::kary_unrooted(2, Window { up: 4, down: 4 }).unwrap();
        assert!(example_weights_rary(2, 3.0, 2.0, &VertexAddress::base(), &m).is_ok());
        let err = example_weights_rary(2, 2.0, 2.0, &VertexAddress::base(), &m).unwrap_err();
        assert!(err.to_string().contains("s > r^(q-1)"));
        let w = example_weights_rary(2, 3.0, 2.0, &VertexAddress::base(), &m).unwrap();
        assert_eq!(w.weight(&m, &VertexAddress::base()).unwrap(), 1.0);
    }

    #[test]
    fn classification_thresholds() {
        let ns: Vec<u32> = (1..=10).collect();
        let down: Vec<f64> = ns.iter().map(|&n| 0.5f64.powi(n as i32)).collect();
        assert_eq!(classify(&ns, &down).1, DecayVerdict::DecaysToZero);
        let up: Vec<f64> = ns.iter().map(|&n| 2f64.powi(n as i32)).collect();
        assert_eq!(classify(&ns, &up).1, DecayVerdict::DivergesToInfinity);
        assert_eq!(classify(&ns, &vec![1.0; 10]).1, DecayVerdict::Inconclusive);
        let hump: Vec<f64> =
            ns.iter().map(|&n| if n < 4 { n as f64 } else { 4.0 * 0.5f64.powi(n as i32 - 4) }).collect();
        assert_eq!(classify(&ns, &hump).1, DecayVerdict::DecaysToZero);
        let zigzag: Vec<f64> = ns.iter().map(|&n| if n % 2 == 0 { 1.0 / n as f64 } else { 1.0 }).collect();
        assert_eq!(classify(&ns, &zigzag).1, DecayVerdict::Inconclusive);
    }

    #[test]
    fn greedy_subsequence_rescues_oscillation() {
        // Ω on a tree whose even and odd generations carry different weights.
        let m = bin(11);
        let entries = m
            .vertices_in_window()
            .unwrap()
            .into_iter()
            .map(|v| {
                let l = v.level();
                let x = if l % 2 == 0 { 0.5f64.powi(l as i32) } else { 4.0 };
                (v, x)
            })
            .collect();
        let w = WeightMap::table(entries, None).unwrap();
        let r = decay_report(Quantity::Omega, &[VertexAddress::base()], &(1..=10).collect::<Vec<_>>(), &w, 1.0, &m)
            .unwrap();
        assert_eq!(r.selection, Selection::Greedy);
        assert_eq!(r.verdict, DecayVerdict::DecaysToZero);
        assert!((2..=10).step_by(2).all(|n| r.subsequence.contains(&n)));
    }
}
