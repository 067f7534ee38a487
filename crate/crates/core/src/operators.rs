//! Forward shift `S`, its adjoint `S*`, the backward shift `B`, the right
//! inverses `T_n` of `B^n`, and the isometry `Φ`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::space::{norm_p, CompensatedSum, ComplexSum, LevelLaw, TreeFunction, WeightMap};
use crate::tree::{Structure, TreeModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    ForwardShift,
    AdjointShift,
    BackwardShift,
    RightInverse { n: u32 },
    PhiMap,
    PhiInverse,
}

impl OperatorKind {
    pub fn check(&self) -> Result<()> {
        match self {
            OperatorKind::RightInverse { n: 0 } => Err(Error::InvalidArgument("T_n needs n ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

/// Applies `kind` to `f`.
pub fn apply(kind: OperatorKind, f: &TreeFunction, weights: &WeightMap, model: &TreeModel) -> Result<TreeFunction> {
    kind.check()?;
    match kind {
        OperatorKind::ForwardShift => apply_s(f, model),
        OperatorKind::AdjointShift => apply_sstar(f, weights, model),
        OperatorKind::BackwardShift => apply_b(f, model),
        OperatorKind::RightInverse { n } => apply_t_n(f, n, model),
        OperatorKind::PhiMap => phi_map(f, weights, model),
        OperatorKind::PhiInverse => phi_inverse(f, weights, model),
    }
}

/// `(Sf)(v) = f(parent v)`, zero at the root.
pub fn apply_s(f: &TreeFunction, model: &TreeModel) -> Result<TreeFunction> {
    apply_s_pow(f, 1, model)
}

/// `(S^n f)(v) = f(parent^n v)`.
pub fn apply_s_pow(f: &TreeFunction, n: u32, model: &TreeModel) -> Result<TreeFunction> {
    if n == 0 {
        f.check_resolvable(model)?;
        return Ok(f.clone());
    }
    let mut out = TreeFunction::new();
    for (u, z) in f.iter() {
        for v in model.children_n(u, n)? {
            out.set(v, *z);
        }
    }
    Ok(out)
}

/// `(S*g)(u) = Σ_{v ∈ child(u)} g(v) λ_v / λ_u`.
pub fn apply_sstar(g: &TreeFunction, weights: &WeightMap, model: &TreeModel) -> Result<TreeFunction> {
    let mut acc: BTreeMap<VertexAddress, ComplexSum> = BTreeMap::new();
    let mut parent_weight: BTreeMap<VertexAddress, f64> = BTreeMap::new();
    for (v, z) in g.iter() {
        let Some(u) = model.parent(v)? else { continue };
        let lu = match parent_weight.get(&u) {
            Some(w) => *w,
            None => {
                let w = weights.weight(model, &u)?;
                parent_weight.insert(u.clone(), w);
                w
            }
        };
        let lv = weights.weight(model, v)?;
        acc.entry(u).or_default().add(z * (lv / lu));
    }
    Ok(TreeFunction::from_pairs(acc.into_iter().map(|(u, s)| (u, s.value()))))
}

/// `(Bf)(u) = Σ_{v ∈ child(u)} f(v)`.
pub fn apply_b(f: &TreeFunction, model: &TreeModel) -> Result<TreeFunction> {
    let mut acc: BTreeMap<VertexAddress, ComplexSum> = BTreeMap::new();
    for (v, z) in f.iter() {
        if let Some(u) = model.parent(v)? {
            acc.entry(u).or_default().add(*z);
        }
    }
    Ok(TreeFunction::from_pairs(acc.into_iter().map(|(u, s)| (u, s.value()))))
}

/// `B^n` as `n` successive applications of `B`.
pub fn apply_b_pow(f: &TreeFunction, n: u32, model: &TreeModel) -> Result<TreeFunction> {
    f.check_resolvable(model)?;
    let mut cur = f.clone();
    for _ in 0..n {
        if cur.is_empty() {
            break;
        }
        cur = apply_b(&cur, model)?;
    }
    Ok(cur)
}

/// `(B^n f)(u) = Σ_{v ∈ child^n(u)} f(v)` summed directly.
pub fn apply_b_pow_direct(f: &TreeFunction, n: u32, model: &TreeModel) -> Result<TreeFunction> {
    let mut acc: BTreeMap<VertexAddress, ComplexSum> = BTreeMap::new();
    for (v, z) in f.iter() {
        if let Some(u) = model.parent_n(v, n)? {
            acc.entry(u).or_default().add(*z);
        }
    }
    Ok(TreeFunction::from_pairs(acc.into_iter().map(|(u, s)| (u, s.value()))))
}

/// `(T_n g)(v) = g(parent^n v) / γ(parent^n v, n)`, zero off `V^n`.
pub fn apply_t_n(g: &TreeFunction, n: u32, model: &TreeModel) -> Result<TreeFunction> {
    OperatorKind::RightInverse { n }.check()?;
    let mut out = TreeFunction::new();
    for (u, z) in g.iter() {
        let gamma = model.gamma(u, n)?;
        if gamma == 0 {
            return Err(Error::LeafBelow(u.to_string()));
        }
        let value = z / gamma as f64;
        for v in model.children_n(u, n)? {
            out.set(v, value);
        }
    }
    Ok(out)
}

/// `(Φf)(u) = f(u) / λ_u`, an isometry from `L^q(μ)` onto `L^q(λ)` with
/// `μ = λ^{1-q}`.
pub fn phi_map(f: &TreeFunction, weights: &WeightMap, model: &TreeModel) -> Result<TreeFunction> {
    let mut out = TreeFunction::new();
    for (u, z) in f.iter() {
        out.set(u.clone(), z / weights.weight(model, u)?);
    }
    Ok(out)
}

pub fn phi_inverse(g: &TreeFunction, weights: &WeightMap, model: &TreeModel) -> Result<TreeFunction> {
    let mut out = TreeFunction::new();
    for (u, z) in g.iter() {
        out.set(u.clone(), z * weights.weight(model, u)?);
    }
    Ok(out)
}

/// `‖S*Φf − ΦBf‖_{q,λ}`.
pub fn check_unitary_equivalence(f: &TreeFunction, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    if !(q.is_finite() && q > 1.0) {
        return Err(Error::InvalidExponent(format!("unitary equivalence needs 1 < q < ∞, got {q}")));
    }
    let lhs = apply_sstar(&phi_map(f, weights, model)?, weights, model)?;
    let rhs = phi_map(&apply_b(f, model)?, weights, model)?;
    norm_p(&lhs.minus(&rhs), weights, model, q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exactness {
    /// The supremum over the whole tree.
    Exact,
    /// A supremum over the window only; a lower estimate of the true value.
    WindowLimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// May be `f64::INFINITY`.
    pub value: f64,
    pub exactness: Exactness,
}

/// Largest outdegree and the inclusive generation range where vertices of
/// that outdegree occur, for families whose outdegree is known in closed
/// form.
fn degree_profile(model: &TreeModel) -> Option<(u32, Option<i64>, Option<i64>)> {
    match model.structure() {
        Structure::KaryRooted { k } => Some((*k, Some(0), None)),
        Structure::KaryUnrooted { k } => Some((*k, None, None)),
        Structure::UnilateralLeafLine => Some((1, None, Some(-1))),
        Structure::GraftedFreeEnd { k, graft } => Some((if graft.is_base() { 1 } else { *k }, Some(0), None)),
        Structure::Finite(_) | Structure::Opaque(_) => None,
    }
}

fn overlaps(a: (Option<i64>, Option<i64>), b: (Option<i64>, Option<i64>)) -> bool {
    let lo = match (a.0, b.0) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    };
    let hi = match (a.1, b.1) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    match (lo, hi) {
        (Some(l), Some(h)) => l <= h,
        _ => true,
    }
}

/// `sup_u f(outdeg(u), λ_child/λ_u)` by closed form, when available.
fn closed_form_sup(weights: &WeightMap, model: &TreeModel, term: impl Fn(u32, f64) -> f64) -> Option<f64> {
    let (deg, lo, hi) = degree_profile(model)?;
    let law: LevelLaw = weights.level_law(model)?;
    law.ratio_regimes()
        .into_iter()
        .filter(|(rlo, rhi, _)| overlaps((*rlo, *rhi), (lo, hi)))
        .map(|(_, _, r)| term(deg, r))
        .reduce(f64::max)
}

/// `sup_u f(u)` over window vertices whose children all lie in the window.
fn enumerated_sup(weights: &WeightMap, model: &TreeModel, term: impl Fn(u32, f64, f64) -> f64) -> Result<NormReport> {
    let mut best = 0.0f64;
    for u in model.vertices_in_window()? {
        let children = model.children(&u)?;
        if children.is_empty() || !children.iter().all(|c| model.in_window(c)) {
            continue;
        }
        let lu = weights.weight(model, &u)?;
        let child_sum: CompensatedSum =
            children.iter().map(|c| weights.weight(model, c)).collect::<Result<Vec<_>>>()?.into_iter().collect();
        let inv_sum: CompensatedSum = children
            .iter()
            .map(|c| weights.weight(model, c).map(|lc| lu / lc))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        best = best.max(term(children.len() as u32, child_sum.value() / lu, inv_sum.value()));
    }
    let exactness = if model.is_finite() { Exactness::Exact } else { Exactness::WindowLimited };
    Ok(NormReport { value: best, exactness })
}

/// `‖S‖ = (sup_u Σ_{v ∈ child(u)} λ_v/λ_u)^{1/p}`.
pub fn shift_norm(weights: &WeightMap, p: f64, model: &TreeModel) -> Result<NormReport> {
    crate::space::check_exponent(p)?;
    if let Some(sup) = closed_form_sup(weights, model, |deg, r| deg as f64 * r) {
        return Ok(NormReport { value: sup.powf(1.0 / p), exactness: Exactness::Exact });
    }
    let r = enumerated_sup(weights, model, |_, ratio_sum, _| ratio_sum)?;
    Ok(NormReport { value: r.value.powf(1.0 / p), ..r })
}

/// `M = sup_{w ≠ root} γ(parent w)^{q-1} λ_{parent w} / λ_w`, with
/// `‖Bf‖_q ≤ M^{1/q} ‖f‖_q`. An upper bound for `‖B‖^q`, not claimed tight.
pub fn backward_bound(weights: &WeightMap, q: f64, model: &TreeModel) -> Result<NormReport> {
    crate::space::check_exponent(q)?;
    if let Some(sup) = closed_form_sup(weights, model, |deg, r| (deg as f64).powf(q - 1.0) / r) {
        return Ok(NormReport { value: sup, exactness: Exactness::Exact });
    }
    // For a fixed parent the sup over its children is the largest λ_u/λ_w.
    let mut best = 0.0f64;
    for u in model.vertices_in_window()? {
        let children = model.children(&u)?;
        if children.is_empty() || !children.iter().all(|c| model.in_window(c)) {
            continue;
        }
        let lu = weights.weight(model, &u)?;
        let factor = (children.len() as f64).powf(q - 1.0);
        for c in &children {
            best = best.max(factor * lu / weights.weight(model, c)?);
        }
    }
    let exactness = if model.is_finite() { Exactness::Exact } else { Exactness::WindowLimited };
    Ok(NormReport { value: best, exactness })
}

/// Point mass helper used by tests and oracles.
pub fn chi(v: VertexAddress) -> TreeFunction {
    TreeFunction::point_mass(v, Complex64::new(1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{dual_pairing, random_tree_function};
    use crate::tree::{random_recursive_tree, Window};

    fn addr(s: &str) -> VertexAddress {
        s.parse().unwrap()
    }

    fn bin(down: u32) -> TreeModel {
        TreeModel::kary_rooted(2, down).unwrap()
    }

    #[test]
    fn s_on_point_mass_fans_out() {
        let m = bin(6);
        let out = apply_s(&chi(addr("0")), &m).unwrap();
        assert_eq!(out, TreeFunction::from_pairs([(addr("0.0"), 1.0.into()), (addr("0.1"), 1.0.into())]));
        let two = apply_s_pow(&chi(VertexAddress::base()), 2, &m).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(apply_s_pow(&chi(addr("1")), 0, &m).unwrap(), chi(addr("1")));
        let line = TreeModel::bilateral_line(Window { up: 3, down: 3 });
        assert_eq!(apply_s(&chi(VertexAddress::base()), &line).unwrap(), chi(addr("0")));
        assert!(apply_s(&chi(addr("0.0.0.0.0.0")), &m).unwrap_err().is_window_failure());
    }

    #[test]
    fn s_pow_is_iterated_s() {
        let m = bin(10);
        for seed in 0..50 {
            let f = random_tree_function(&m, 3, 4, seed).unwrap();
            let n = (seed % 5) as u32 + 1;
            let mut it = f.clone();
            for _ in 0..n {
                it = apply_s(&it, &m).unwrap();
            }
            assert_eq!(apply_s_pow(&f, n, &m).unwrap(), it);
        }
    }

    #[test]
    fn forward_norm_witness() {
        let m = bin(6);
        let w = WeightMap::Geometric { base: 0.7 };
        let u = addr("1.0");
        for p in [1.0, 2.0, 3.0] {
            let lu = w.weight(&m, &u).unwrap();
            let fu = TreeFunction::point_mass(u.clone(), lu.powf(-1.0 / p));
            let sf = norm_p(&apply_s(&fu, &m).unwrap(), &w, &m, p).unwrap().powf(p);
            let direct: f64 = m.children(&u).unwrap().iter().map(|v| w.weight(&m, v).unwrap() / lu).sum();
            assert!((sf - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn sstar_examples() {
        let m = bin(6);
        let w = WeightMap::Geometric { base: 3.0 };
        let v = addr("1.1");
        let out = apply_sstar(&chi(v.clone()), &w, &m).unwrap();
        assert_eq!(out, TreeFunction::point_mass(addr("1"), 3.0));
        for seed in 0..20 {
            let g = random_tree_function(&m, 4, 6, seed).unwrap();
            assert_eq!(apply_sstar(&g, &WeightMap::Unit, &m).unwrap(), apply_b(&g, &m).unwrap());
        }
    }

    #[test]
    fn duality_on_random_tree() {
        let m = TreeModel::finite(&random_recursive_tree(200, 3)).unwrap();
        let entries = m
            .vertices_in_window()
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, 0.5 + (i % 7) as f64 * 0.25))
            .collect();
        let w = WeightMap::table(entries, None).unwrap();
        let height = m.window().down;
        for seed in 0..100u64 {
            let f = random_tree_function(&m, height.saturating_sub(1), 10, seed).unwrap();
            let f = TreeFunction::from_pairs(
                f.iter().filter(|(v, _)| (v.path().len() as u32) < height).map(|(v, z)| (v.clone(), *z)),
            );
            let g = random_tree_function(&m, height, 20, seed + 1000).unwrap();
            let lhs = dual_pairing(&apply_s(&f, &m).unwrap(), &g, &w, &m).unwrap();
            let rhs = dual_pairing(&f, &apply_sstar(&g, &w, &m).unwrap(), &w, &m).unwrap();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn b_examples() {
        let m = bin(8);
        assert_eq!(apply_b(&chi(addr("0.1")), &m).unwrap(), chi(addr("0")));
        let all = TreeFunction::from_pairs(
            m.children_n(&VertexAddress::base(), 2).unwrap().into_iter().map(|v| (v, 1.0.into())),
        );
        assert_eq!(apply_b_pow(&all, 2, &m).unwrap(), TreeFunction::point_mass(VertexAddress::base(), 4.0));
        let f = random_tree_function(&m, 3, 6, 9).unwrap();
        assert!(apply_b_pow(&f, 4, &m).unwrap().is_empty());
        assert_eq!(apply_b_pow_direct(&all, 2, &m).unwrap(), apply_b_pow(&all, 2, &m).unwrap());
    }

    #[test]
    fn t_n_examples() {
        let m = bin(12);
        for seed in 0..50u64 {
            let g = random_tree_function(&m, 3, 5, seed).unwrap();
            let n = (seed % 6) as u32 + 1;
            let back = apply_b_pow(&apply_t_n(&g, n, &m).unwrap(), n, &m).unwrap();
            assert_eq!(back.support().collect::<Vec<_>>(), g.support().collect::<Vec<_>>());
            for (v, z) in g.iter() {
                assert!((back.get(v) - z).norm() < 1e-14);
            }
        }
        let line = TreeModel::kary_rooted(1, 20).unwrap();
        assert_eq!(apply_t_n(&chi(addr("0")), 3, &line).unwrap(), chi(addr("0.0.0.0")));
        let leafy = TreeModel::unilateral_leaf_line(5);
        assert_eq!(apply_t_n(&chi(addr("^1")), 2, &leafy), Err(Error::LeafBelow("^1".into())));
        assert!(apply_t_n(&chi(addr("0")), 0, &m).is_err());
    }

    #[test]
    fn shift_norm_examples() {
        let r = shift_norm(&WeightMap::Unit, 2.0, &bin(5)).unwrap();
        assert_eq!(r.exactness, Exactness::Exact);
        assert!((r.value - 2f64.sqrt()).abs() < 1e-15);
        let line = TreeModel::kary_rooted(1, 5).unwrap();
        assert_eq!(shift_norm(&WeightMap::Geometric { base: 0.5 }, 1.0, &line).unwrap().value, 0.5);
        let z = TreeModel::bilateral_line(Window { up: 4, down: 4 });
        for p in [1.0, 2.0, 5.0] {
            assert_eq!(shift_norm(&WeightMap::Unit, p, &z).unwrap().value, 1.0);
        }
        let table = WeightMap::table(BTreeMap::new(), Some(2.0)).unwrap();
        let est = shift_norm(&table, 2.0, &bin(4)).unwrap();
        assert_eq!(est.exactness, Exactness::WindowLimited);
        assert!((est.value - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn backward_bound_examples() {
        for k in 1..=4 {
            let m = TreeModel::kary_rooted(k, 4).unwrap();
            assert!((backward_bound(&WeightMap::Unit, 2.0, &m).unwrap().value - k as f64).abs() < 1e-12);
        }
        let m = bin(6);
        let grow = WeightMap::Geometric { base: 1.5 };
        assert!(backward_bound(&grow, 1.0, &m).unwrap().value <= 1.0);
        // Closed form against enumeration over a finite copy of the window.
        let w = WeightMap::DistanceToH { s: 3.0, anchor: addr("0.0") };
        let closed = backward_bound(&w, 2.0, &m).unwrap().value;
        assert!((closed - 2.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_window_enumeration() {
        let m = bin(6);
        let law = WeightMap::DistanceToH { s: 3.0, anchor: addr("0.0") };
        let entries = m
            .vertices_in_window()
            .unwrap()
            .into_iter()
            .map(|v| {
                let x = law.weight(&m, &v).unwrap();
                (v, x)
            })
            .collect();
        let table = WeightMap::table(entries, None).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let a = shift_norm(&law, p, &m).unwrap().value;
            let b = shift_norm(&table, p, &m).unwrap().value;
            assert!((a - b).abs() < 1e-12, "p = {p}: {a} vs {b}");
            let a = backward_bound(&law, p, &m).unwrap().value;
            let b = backward_bound(&table, p, &m).unwrap().value;
            assert!((a - b).abs() < 1e-12, "q = {p}: {a} vs {b}");
        }
    }

    #[test]
    fn phi_round_trip_and_equivalence() {
        let m = bin(8);
        let w = WeightMap::Geometric { base: 0.6 };
        for seed in 0..30 {
            let f = random_tree_function(&m, 5, 6, seed).unwrap();
            let back = phi_inverse(&phi_map(&f, &w, &m).unwrap(), &w, &m).unwrap();
            for (v, z) in f.iter() {
                assert!((back.get(v) - z).norm() <= 1e-15 * z.norm());
            }
            assert!(check_unitary_equivalence(&f, &w, 2.0, &m).unwrap() < 1e-12);
        }
        let f = random_tree_function(&m, 5, 6, 1).unwrap();
        assert_eq!(phi_map(&f, &WeightMap::Unit, &m).unwrap(), f);
        assert_eq!(check_unitary_equivalence(&chi(addr("0.1")), &WeightMap::Unit, 2.0, &m).unwrap(), 0.0);
    }
}
