//! Orbit shadowing on rooted trees: a single vector `f` whose `B`-orbit
//! passes within `ε` of each of finitely many targets.
//!
//! `f = Σ_k T_{n_k} c_k` is spread over `γ(u, n_k)` vertices per support
//! point, which is far too many to list for the schedules needed here. The
//! vector is therefore kept in symbolic form: an explicit finite part plus
//! [`Spread`] terms, closed under `B^m` and with exact `q`-norms evaluated
//! by counting subtree classes.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::operators::apply_b_pow;
use crate::space::{check_exponent, CompensatedSum, TreeFunction, WeightMap};
use crate::tree::TreeModel;

/// The function `v ↦ coeff · γ(v, spread)` on `child^depth(anchor)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub anchor: VertexAddress,
    pub depth: u32,
    pub coeff: Complex64,
    pub spread: u32,
}

impl Spread {
    fn level(&self) -> i64 {
        self.anchor.level() + self.depth as i64
    }

    fn contains(&self, x: &VertexAddress) -> bool {
        x.level() == self.level() && x.descends_from(&self.anchor)
    }
}

/// `explicit + Σ spreads` with pairwise disjoint spread supports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShadowVector {
    pub explicit: TreeFunction,
    pub spreads: Vec<Spread>,
}

fn class_of(model: &TreeModel, v: &VertexAddress) -> Result<u64> {
    model
        .subtree_class(v)
        .ok_or_else(|| Error::InvalidArgument("shadowing needs a tree with subtree-class metadata".into()))
}

/// `γ(v, n)` as a float.
fn gamma_f64(model: &TreeModel, v: &VertexAddress, n: u32) -> Result<f64> {
    Ok(model.class_gamma_f64(class_of(model, v)?, n))
}

impl ShadowVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_function(f: TreeFunction) -> Self {
        ShadowVector { explicit: f, spreads: Vec::new() }
    }

    /// Adds `T_n c`.
    pub fn add_t_n(&mut self, c: &TreeFunction, n: u32, model: &TreeModel) -> Result<()> {
        for (u, z) in c.iter() {
            model.resolve(u)?;
            if u.level() + n as i64 > model.window().down as i64 {
                return Err(Error::window(u, format!("T_{n} reaches past window depth {}", model.window().down)));
            }
            let g = gamma_f64(model, u, n)?;
            if g == 0.0 {
                return Err(Error::LeafBelow(u.to_string()));
            }
            self.spreads.push(Spread { anchor: u.clone(), depth: n, coeff: z / g, spread: 0 });
        }
        Ok(())
    }

    /// `B^m` of this vector.
    pub fn b_pow(&self, m: u32, model: &TreeModel) -> Result<ShadowVector> {
        let mut explicit = apply_b_pow(&self.explicit, m, model)?;
        let mut spreads = Vec::new();
        for s in &self.spreads {
            if m < s.depth {
                spreads.push(Spread { depth: s.depth - m, spread: s.spread + m, ..s.clone() });
            } else {
                let value = s.coeff * gamma_f64(model, &s.anchor, s.spread + s.depth)?;
                if let Some(x) = model.parent_n(&s.anchor, m - s.depth)? {
                    explicit.add_at(x, value);
                }
            }
        }
        Ok(ShadowVector { explicit, spreads })
    }

    pub fn minus_function(&self, g: &TreeFunction) -> ShadowVector {
        ShadowVector { explicit: self.explicit.minus(g), spreads: self.spreads.clone() }
    }

    /// Value at one vertex.
    pub fn value_at(&self, x: &VertexAddress, model: &TreeModel) -> Result<Complex64> {
        let mut z = self.explicit.get(x);
        for s in self.spreads.iter().filter(|s| s.contains(x)) {
            z += s.coeff * gamma_f64(model, x, s.spread)?;
        }
        Ok(z)
    }

    fn check_disjoint(&self) -> Result<()> {
        for (i, a) in self.spreads.iter().enumerate() {
            for b in &self.spreads[i + 1..] {
                if a.level() == b.level() && (a.anchor.descends_from(&b.anchor) || b.anchor.descends_from(&a.anchor)) {
                    return Err(Error::InvalidArgument(format!(
                        "spread terms at {} and {} overlap",
                        a.anchor, b.anchor
                    )));
                }
            }
        }
        Ok(())
    }

    /// `Σ_{v ∈ support(s)} |s(v)|^q λ_v`.
    fn spread_power(s: &Spread, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
        let a = s.coeff.norm();
        if a == 0.0 {
            return Ok(0.0);
        }
        let mut sum = CompensatedSum::default();
        if let Some(law) = weights.level_law(model) {
            let w = law.at(s.level());
            let hist = model.advance_classes_f64(BTreeMap::from([(class_of(model, &s.anchor)?, 1.0)]), s.depth);
            for (class, count) in hist {
                sum.add(count * (a * model.class_gamma_f64(class, s.spread)).powf(q) * w);
            }
        } else {
            for v in model.children_n(&s.anchor, s.depth)? {
                sum.add((a * gamma_f64(model, &v, s.spread)?).powf(q) * weights.weight(model, &v)?);
            }
        }
        let total = sum.value();
        if !total.is_finite() {
            return Err(Error::Overflow(format!("norm of the spread term at {}", s.anchor)));
        }
        Ok(total)
    }

    /// `‖·‖_q^q` evaluated exactly over the whole support.
    pub fn norm_q_power(&self, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
        check_exponent(q)?;
        self.check_disjoint()?;
        let mut sum = CompensatedSum::default();
        for s in &self.spreads {
            sum.add(Self::spread_power(s, weights, q, model)?);
        }
        for (x, z) in self.explicit.iter() {
            let lx = weights.weight(model, x)?;
            match self.spreads.iter().find(|s| s.contains(x)) {
                Some(s) => {
                    let under = s.coeff * gamma_f64(model, x, s.spread)?;
                    sum.add(((z + under).norm().powf(q) - under.norm().powf(q)) * lx);
                }
                None => sum.add(z.norm().powf(q) * lx),
            }
        }
        Ok(sum.value().max(0.0))
    }

    pub fn norm_q(&self, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
        Ok(self.norm_q_power(weights, q, model)?.powf(1.0 / q))
    }

    /// The vector as an explicit function, when its support fits the vertex
    /// limit.
    pub fn materialize(&self, model: &TreeModel) -> Result<TreeFunction> {
        let mut out = self.explicit.clone();
        for s in &self.spreads {
            for v in model.children_n(&s.anchor, s.depth)? {
                let z = s.coeff * gamma_f64(model, &v, s.spread)?;
                out.add_at(v, z);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowPlan {
    pub q: f64,
    pub epsilon: f64,
    pub weights: WeightMap,
    pub targets: Vec<TreeFunction>,
    /// `n_1 < … < n_m`.
    pub schedule: Vec<u32>,
    /// `c_k = g_k − B^{n_k} f_{k−1}`.
    pub corrections: Vec<TreeFunction>,
    /// `cross_terms[j][k] = ‖B^{n_k} T_{n_j} c_j‖_q` for `k < j`.
    pub cross_terms: Vec<Vec<f64>>,
    /// `Σ_{j>k} cross_terms[j][k]`, a bound for the error at stage `k`.
    pub tail_bounds: Vec<f64>,
    /// Exact `‖B^{n_k} f − g_k‖_q`, filled by [`build_shadow_vector`].
    #[serde(default)]
    pub errors: Vec<f64>,
    #[serde(default)]
    pub norm_f: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowErrors {
    pub errors: Vec<f64>,
    pub norm_f: f64,
}

fn cross_term(c: &TreeFunction, n_j: u32, n_k: u32, weights: &WeightMap, q: f64, model: &TreeModel) -> Result<f64> {
    let mut t = ShadowVector::zero();
    t.add_t_n(c, n_j, model)?;
    t.b_pow(n_k, model)?.norm_q(weights, q, model)
}

/// Smallest `n` with `Ω(u, n) = ‖T_n χ_u‖_q^q ≤ target`, within the window.
fn omega_reaches(
    u: &VertexAddress,
    target: f64,
    weights: &WeightMap,
    q: f64,
    model: &TreeModel,
) -> Result<Option<u32>> {
    let room = model.window().down as i64 - u.level();
    for n in 1..=room.max(0) as u32 {
        let mut t = ShadowVector::zero();
        t.add_t_n(&TreeFunction::point_mass(u.clone(), 1.0), n, model)?;
        if t.norm_q_power(weights, q, model)? <= target {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Chooses `n_1 = 1 < n_2 < …` so that every cross term introduced at stage
/// `j` stays below `ε · 2^{-j}`, with `n_{k+1} − n_k` larger than the
/// support depths of `g_k` and `c_k`.
pub fn plan_schedule(
    targets: &[TreeFunction],
    weights: &WeightMap,
    q: f64,
    epsilon: f64,
    model: &TreeModel,
) -> Result<ShadowPlan> {
    check_exponent(q)?;
    weights.check()?;
    if !model.is_rooted() {
        return Err(Error::InvalidArgument("orbit shadowing is implemented for rooted trees only".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {epsilon}")));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("at least one target is needed".into()));
    }
    let mut union: Vec<VertexAddress> = targets.iter().flat_map(|g| g.support().cloned()).collect();
    union.sort();
    union.dedup();
    for u in &union {
        model.resolve(u)?;
        if omega_reaches(u, epsilon.powf(q), weights, q, model)?.is_none() {
            return Err(Error::ScheduleInfeasible {
                vertex: u.to_string(),
                detail: format!(
                    "Ω(u, n) stays above ε^q = {:e} for every n inside the window (depth {})",
                    epsilon.powf(q),
                    model.window().down
                ),
            });
        }
    }

    let down = model.window().down as i64;
    let mut schedule = vec![1u32];
    let mut corrections = vec![targets[0].clone()];
    let mut cross_terms = vec![Vec::new()];
    let mut f = ShadowVector::zero();
    f.add_t_n(&targets[0], 1, model)?;

    for (j, g) in targets.iter().enumerate().skip(1) {
        let prev = j - 1;
        let gap = targets[prev].depth() + corrections[prev].depth() + 1;
        let budget = epsilon * 0.5f64.powi(j as i32 + 1);
        let mut n = schedule[prev] + gap;
        let accepted = loop {
            if let Some(u) = g.support().find(|u| u.level() + n as i64 > down) {
                return Err(Error::ScheduleInfeasible {
                    vertex: u.to_string(),
                    detail: format!("stage {} needs n > {} but the window ends at depth {down}", j + 1, n - 1),
                });
            }
            let c = f.b_pow(n, model)?;
            if !c.spreads.is_empty() {
                return Err(Error::InvalidArgument("earlier stages still interfere at the chosen n".into()));
            }
            let c = g.minus(&c.explicit);
            let terms =
                schedule.iter().map(|&n_k| cross_term(&c, n, n_k, weights, q, model)).collect::<Result<Vec<_>>>()?;
            if terms.iter().all(|&t| t <= budget) {
                break (n, c, terms);
            }
            n += 1;
        };
        let (n, c, terms) = accepted;
        f.add_t_n(&c, n, model)?;
        schedule.push(n);
        corrections.push(c);
        cross_terms.push(terms);
    }

    let m = targets.len();
    let tail_bounds =
        (0..m).map(|k| (k + 1..m).map(|j| cross_terms[j][k]).collect::<CompensatedSum>().value()).collect();
    Ok(ShadowPlan {
        q,
        epsilon,
        weights: weights.clone(),
        targets: targets.to_vec(),
        schedule,
        corrections,
        cross_terms,
        tail_bounds,
        errors: Vec::new(),
        norm_f: None,
    })
}

fn check_plan(plan: &ShadowPlan) -> Result<()> {
    let m = plan.targets.len();
    if plan.schedule.len() != m || plan.corrections.len() != m {
        return Err(Error::InvalidArgument("plan lists differ in length".into()));
    }
    if plan.schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("schedule is not strictly increasing".into()));
    }
    Ok(())
}

/// Assembles `f = Σ_k T_{n_k} c_k`, recomputing each correction, and records
/// the exact orbit errors in the plan.
pub fn build_shadow_vector(plan: &mut ShadowPlan, model: &TreeModel) -> Result<ShadowVector> {
    check_plan(plan)?;
    let mut f = ShadowVector::zero();
    for k in 0..plan.targets.len() {
        let n = plan.schedule[k];
        let interference = f.b_pow(n, model)?;
        if !interference.spreads.is_empty() {
            return Err(Error::InvalidArgument(format!("stage {} is too close to the previous one", k + 1)));
        }
        let c = plan.targets[k].minus(&interference.explicit);
        if c != plan.corrections[k] {
            return Err(Error::InvalidArgument(format!("correction {} does not match the schedule", k + 1)));
        }
        f.add_t_n(&c, n, model)?;
    }
    let verified = verify_shadow(&f, plan, model)?;
    plan.errors = verified.errors;
    plan.norm_f = Some(verified.norm_f);
    Ok(f)
}

/// Exact `‖B^{n_k} f − g_k‖_q` for every stage, and `‖f‖_q`.
pub fn verify_shadow(f: &ShadowVector, plan: &ShadowPlan, model: &TreeModel) -> Result<ShadowErrors> {
    check_plan(plan)?;
    let errors = plan
        .targets
        .iter()
        .zip(&plan.schedule)
        .map(|(g, &n)| f.b_pow(n, model)?.minus_function(g).norm_q(&plan.weights, plan.q, model))
        .collect::<Result<Vec<_>>>()?;
    let norm_f = f.norm_q(&plan.weights, plan.q, model)?;
    Ok(ShadowErrors { errors, norm_f })
}

impl ShadowPlan {
    /// `k,n_k,error` rows.
    pub fn csv_rows(&self) -> Vec<String> {
        self.schedule
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let err = self.errors.get(k).map_or("nan".to_string(), |e| format!("{e:e}"));
                format!("{},{},{}", k + 1, n, err)
            })
            .collect()
    }
}
