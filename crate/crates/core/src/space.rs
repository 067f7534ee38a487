//! Weighted `L^p` spaces over a tree: weight maps, finitely supported
//! functions, norms and the bilinear pairing.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::tree::{TreeModel, VertexSet};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl ComplexSum {
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Checks `1 ≤ p < ∞`.
pub fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(format!("exponent must lie in [1, ∞), got {p}")))
    }
}

/// `p / (p - 1)` for `1 < p < ∞`.
pub fn conjugate(p: f64) -> Result<f64> {
    check_exponent(p)?;
    if p == 1.0 {
        return Err(Error::InvalidExponent("the conjugate of p = 1 is ∞, which is not supported".into()));
    }
    Ok(p / (p - 1.0))
}

/// Weight law that depends on a vertex only through its generation.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum LevelLaw {
    /// `rate^level`.
    Exp {
        rate: f64,
    },
    /// `s^{-|level - center|}`.
    Tent {
        s: f64,
        center: i64,
    },
    Pow {
        inner: Box<LevelLaw>,
        exponent: f64,
    },
}

impl LevelLaw {
    pub(crate) fn at(&self, level: i64) -> f64 {
        match self {
            LevelLaw::Exp { rate } => pow_i64(*rate, level),
            LevelLaw::Tent { s, center } => pow_i64(*s, -(level - center).abs()),
            LevelLaw::Pow { inner, exponent } => inner.at(level).powf(*exponent),
        }
    }

    /// Child-to-parent weight ratios `λ(l+1)/λ(l)`, as `(lo, hi, ratio)`
    /// over inclusive parent-level ranges.
    pub(crate) fn ratio_regimes(&self) -> Vec<(Option<i64>, Option<i64>, f64)> {
        match self {
            LevelLaw::Exp { rate } => vec![(None, None, *rate)],
            LevelLaw::Tent { s, center } => {
                vec![(None, Some(center - 1), *s), (Some(*center), None, 1.0 / s)]
            }
            LevelLaw::Pow { inner, exponent } => {
                inner.ratio_regimes().into_iter().map(|(lo, hi, r)| (lo, hi, r.powf(*exponent))).collect()
            }
        }
    }
}

fn pow_i64(base: f64, exp: i64) -> f64 {
    match i32::try_from(exp) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf(exp as f64),
    }
}

/// Strictly positive vertex weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMap {
    Unit,
    /// `λ_v = base^{level(v)}`.
    Geometric {
        base: f64,
    },
    /// `λ_v = s^{-dist(v, H)}` with `H` the vertices sharing an ancestor
    /// generation with `anchor`.
    #[serde(rename = "distance_to_H")]
    DistanceToH {
        s: f64,
        anchor: VertexAddress,
    },
    Table {
        entries: BTreeMap<VertexAddress, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<f64>,
    },
    /// `λ_v = (of_v)^exponent`.
    Power {
        of: Box<WeightMap>,
        exponent: f64,
    },
}

impl WeightMap {
    pub fn table(entries: BTreeMap<VertexAddress, f64>, default: Option<f64>) -> Result<Self> {
        let w = WeightMap::Table { entries, default };
        w.check()?;
        Ok(w)
    }

    /// `λ^{1-q}`: the weights that make `Φ` an isometry.
    pub fn conjugate_weights(&self, q: f64) -> WeightMap {
        WeightMap::Power { of: Box::new(self.clone()), exponent: 1.0 - q }
    }

    pub fn is_unit(&self) -> bool {
        match self {
            WeightMap::Unit => true,
            WeightMap::Geometric { base } => *base == 1.0,
            WeightMap::DistanceToH { s, .. } => *s == 1.0,
            WeightMap::Power { of, exponent } => *exponent == 0.0 || of.is_unit(),
            WeightMap::Table { .. } => false,
        }
    }

    /// Rejects non-positive or non-finite parameters.
    pub fn check(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidWeights(format!("{name} must be finite and > 0, got {x}")))
            }
        };
        match self {
            WeightMap::Unit => Ok(()),
            WeightMap::Geometric { base } => positive("base", *base),
            WeightMap::DistanceToH { s, .. } => positive("s", *s),
            WeightMap::Table { entries, default } => {
                for (v, x) in entries {
                    positive(&format!("weight at {v}"), *x)?;
                }
                default.map_or(Ok(()), |d| positive("default weight", d))
            }
            WeightMap::Power { of, exponent } => {
                if !exponent.is_finite() {
                    return Err(Error::InvalidWeights(format!("exponent {exponent} is not finite")));
                }
                of.check()
            }
        }
    }

    /// Level law of these weights on `model`, when one exists.
    pub(crate) fn level_law(&self, model: &TreeModel) -> Option<LevelLaw> {
        match self {
            WeightMap::Unit => Some(LevelLaw::Exp { rate: 1.0 }),
            WeightMap::Geometric { base } => Some(LevelLaw::Exp { rate: *base }),
            WeightMap::DistanceToH { s, anchor } => {
                // On a leafless tree `H` is the whole generation of the
                // anchor, so the distance is the generation gap.
                let has_parent = !model.is_rooted() || !anchor.is_base();
                (model.leafless_certified() && has_parent && model.resolve(anchor).is_ok())
                    .then(|| LevelLaw::Tent { s: *s, center: anchor.level() })
            }
            WeightMap::Power { of, exponent } => {
                of.level_law(model).map(|inner| LevelLaw::Pow { inner: Box::new(inner), exponent: *exponent })
            }
            WeightMap::Table { .. } => None,
        }
    }

    /// `λ_v`.
    pub fn weight(&self, model: &TreeModel, v: &VertexAddress) -> Result<f64> {
        model.resolve(v)?;
        if let Some(law) = self.level_law(model) {
            return Ok(law.at(v.level()));
        }
        match self {
            WeightMap::DistanceToH { s, anchor } => {
                let d = model.dist_to_set(v, &VertexSet::SharedAncestor { anchor: anchor.clone() })?;
                Ok(pow_i64(*s, -(d as i64)))
            }
            WeightMap::Table { entries, default } => entries
                .get(v)
                .copied()
                .or(*default)
                .ok_or_else(|| Error::InvalidWeights(format!("no weight given for vertex {v}"))),
            WeightMap::Power { of, exponent } => Ok(of.weight(model, v)?.powf(*exponent)),
            WeightMap::Unit | WeightMap::Geometric { .. } => unreachable!("level-uniform kinds"),
        }
    }
}

/// Finitely supported complex function on the vertices. Exact zeros are
/// never stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreeFunction {
    values: BTreeMap<VertexAddress, Complex64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    address: VertexAddress,
    re: f64,
    #[serde(default)]
    im: f64,
}

impl Serialize for TreeFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.values.iter().map(|(a, z)| Entry { address: a.clone(), re: z.re, im: z.im }))
    }
}

impl<'de> Deserialize<'de> for TreeFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        let mut f = TreeFunction::new();
        for e in entries {
            if !(e.re.is_finite() && e.im.is_finite()) {
                return Err(serde::de::Error::custom(format!("non-finite value at {}", e.address)));
            }
            f.add_at(e.address, Complex64::new(e.re, e.im));
        }
        Ok(f)
    }
}

impl TreeFunction {
    pub fn new() -> Self {
        Self::default()
    }

    /// `c · χ_v`.
    pub fn point_mass(v: VertexAddress, c: impl Into<Complex64>) -> Self {
        let mut f = Self::new();
        f.set(v, c.into());
        f
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (VertexAddress, Complex64)>) -> Self {
        let mut f = Self::new();
        for (v, z) in pairs {
            f.add_at(v, z);
        }
        f
    }

    pub fn set(&mut self, v: VertexAddress, z: Complex64) {
        if z == Complex64::new(0.0, 0.0) {
            self.values.remove(&v);
        } else {
            self.values.insert(v, z);
        }
    }

    pub fn add_at(&mut self, v: VertexAddress, z: Complex64) {
        let cur = self.get(&v);
        self.set(v, cur + z);
    }

    pub fn get(&self, v: &VertexAddress) -> Complex64 {
        self.values.get(v).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexAddress, &Complex64)> {
        self.values.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &VertexAddress> {
        self.values.keys()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Longest descent path in the support, for rooted addresses.
    pub fn depth(&self) -> u32 {
        self.values.keys().map(|v| v.path().len() as u32).max().unwrap_or(0)
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self::from_pairs(self.values.iter().map(|(v, z)| (v.clone(), z * a)))
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (v, z) in other.iter() {
            out.add_at(v.clone(), *z);
        }
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Largest `|f(v)|`.
    pub fn max_abs(&self) -> f64 {
        self.values.values().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn check_resolvable(&self, model: &TreeModel) -> Result<()> {
        self.values.keys().try_for_each(|v| model.resolve(v))
    }
}

/// `‖f‖_p = (Σ |f(v)|^p λ_v)^{1/p}`.
pub fn norm_p(f: &TreeFunction, weights: &WeightMap, model: &TreeModel, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let mut sum = CompensatedSum::default();
    for (v, z) in f.iter() {
        sum.add(z.norm().powf(p) * weights.weight(model, v)?);
    }
    Ok(sum.value().powf(1.0 / p))
}

/// `Σ f(v) g(v) λ_v`; bilinear, without conjugation.
pub fn dual_pairing(f: &TreeFunction, g: &TreeFunction, weights: &WeightMap, model: &TreeModel) -> Result<Complex64> {
    let mut sum = ComplexSum::default();
    for (v, z) in f.iter() {
        let w = g.get(v);
        if w != Complex64::new(0.0, 0.0) {
            sum.add(z * w * weights.weight(model, v)?);
        }
    }
    Ok(sum.value())
}

/// Window vertices within `depth` of the base (descent length and ancestor
/// hops both at most `depth`), in address order.
pub fn shallow_vertices(model: &TreeModel, depth: u32) -> Result<Vec<VertexAddress>> {
    let window = model.window();
    let top = if model.is_rooted() { 0 } else { depth.min(window.up) };
    let start = VertexAddress::ancestor_of_base(top);
    let mut out = vec![start.clone()];
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for v in &frontier {
            for c in model.children(v)? {
                if c.path().len() as u32 <= depth && model.in_window(&c) && c.level() <= window.down as i64 {
                    next.push(c);
                }
            }
        }
        if out.len() + next.len() > model.vertex_limit() {
            return Err(Error::WindowLimit {
                requested: (out.len() + next.len()) as u128,
                limit: model.vertex_limit(),
            });
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.sort();
    Ok(out)
}

/// Seeded random function with `support_size` distinct support vertices
/// drawn from [`shallow_vertices`], values uniform in `[-1, 1]²`.
pub fn random_tree_function(
    model: &TreeModel,
    support_depth: u32,
    support_size: usize,
    seed: u64,
) -> Result<TreeFunction> {
    if support_size == 0 {
        return Err(Error::InvalidArgument("support size must be at least 1".into()));
    }
    let pool = shallow_vertices(model, support_depth)?;
    if pool.len() < support_size {
        return Err(Error::window(
            &VertexAddress::base(),
            format!("only {} vertices within depth {support_depth}, {support_size} requested", pool.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, pool.len(), support_size).into_vec();
    picks.sort_unstable();
    let mut f = TreeFunction::new();
    for i in picks {
        let z = loop {
            let z = Complex64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            if z != Complex64::new(0.0, 0.0) {
                break z;
            }
        };
        f.set(pool[i].clone(), z);
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Window;

    fn addr(s: &str) -> VertexAddress {
        s.parse().unwrap()
    }

    fn bin() -> TreeModel {
        TreeModel::kary_rooted(2, 8).unwrap()
    }

    #[test]
    fn norm_examples() {
        let m = bin();
        let chi = TreeFunction::point_mass(addr("0.1"), 1.0);
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert_eq!(norm_p(&chi, &WeightMap::Unit, &m, p).unwrap(), 1.0);
        }
        let table = WeightMap::table(BTreeMap::from([(addr("0.1"), 8.0)]), None).unwrap();
        assert!((norm_p(&chi, &table, &m, 3.0).unwrap() - 2.0).abs() < 1e-15);
        let two = TreeFunction::from_pairs([(addr("0"), Complex64::new(0.0, 1.0)), (addr("1"), 1.0.into())]);
        assert!((norm_p(&two, &WeightMap::Unit, &m, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(norm_p(&two, &WeightMap::Unit, &m, 0.5).is_err());
    }

    #[test]
    fn pairing_examples() {
        let m = bin();
        let chi = TreeFunction::point_mass(addr("1"), 1.0);
        let table = WeightMap::table(BTreeMap::from([(addr("1"), 3.0)]), Some(1.0)).unwrap();
        assert_eq!(dual_pairing(&chi, &chi, &table, &m).unwrap(), Complex64::new(3.0, 0.0));
        let other = TreeFunction::point_mass(addr("0"), 2.0);
        assert_eq!(dual_pairing(&chi, &other, &table, &m).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(WeightMap::table(BTreeMap::from([(addr("1"), 0.0)]), None).is_err());
        assert!(WeightMap::Geometric { base: -2.0 }.check().is_err());
        let text = r#"{"kind":"geometric","base":0.5}"#;
        let w: WeightMap = serde_json::from_str(text).unwrap();
        assert_eq!(w, WeightMap::Geometric { base: 0.5 });
    }

    #[test]
    fn zeros_are_dropped() {
        let mut f = TreeFunction::point_mass(addr("0"), 1.0);
        f.add_at(addr("0"), Complex64::new(-1.0, 0.0));
        assert!(f.is_empty());
        assert!(TreeFunction::point_mass(addr("0"), 0.0).is_empty());
    }

    #[test]
    fn random_functions_are_deterministic() {
        let m = bin();
        let a = random_tree_function(&m, 3, 5, 11).unwrap();
        let b = random_tree_function(&m, 3, 5, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.support().all(|v| m.resolve(v).is_ok() && v.path().len() <= 3));
        let one = random_tree_function(&m, 3, 1, 2).unwrap();
        assert_eq!(one.len(), 1);
        assert!(random_tree_function(&m, 1, 4, 0).is_err());
    }

    #[test]
    fn unrooted_random_support_respects_window() {
        let m = TreeModel::kary_unrooted(2, Window { up: 2, down: 2 }).unwrap();
        let f = random_tree_function(&m, 3, 20, 5).unwrap();
        assert!(f.support().all(|v| m.in_window(v) && m.resolve(v).is_ok()));
    }

    #[test]
    fn distance_weights_match_explicit_distance() {
        let m = TreeModel::kary_unrooted(2, Window { up: 6, down: 6 }).unwrap();
        let anchor = VertexAddress::base();
        let w = WeightMap::DistanceToH { s: 3.0, anchor: anchor.clone() };
        let set = VertexSet::SharedAncestor { anchor };
        for v in m.ball(&VertexAddress::base(), 3).unwrap() {
            let d = m.dist_to_set(&v, &set).unwrap();
            assert_eq!(w.weight(&m, &v).unwrap(), 3f64.powi(-(d as i32)));
        }
        assert_eq!(w.weight(&m, &VertexAddress::base()).unwrap(), 1.0);
    }

    #[test]
    fn conjugate_exponents() {
        assert_eq!(conjugate(2.0).unwrap(), 2.0);
        assert_eq!(conjugate(1.5).unwrap(), 3.0);
        assert!(conjugate(1.0).is_err());
    }

    #[test]
    fn serialized_function_round_trips() {
        let f = TreeFunction::from_pairs([(addr("0.1"), Complex64::new(0.5, -1.0))]);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"[{"address":"0.1","re":0.5,"im":-1.0}]"#);
        assert_eq!(serde_json::from_str::<TreeFunction>(&text).unwrap(), f);
    }
}
