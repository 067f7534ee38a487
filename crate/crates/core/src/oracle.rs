//! Dense finite truncations of the operators, built straight from the tree
//! structure, with norm estimates used to cross-check closed forms.

use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::address::VertexAddress;
use crate::error::{Error, Result};
use crate::operators::OperatorKind;
use crate::space::{check_exponent, TreeFunction, WeightMap};
use crate::tree::{TreeModel, Window};

pub const POWER_TOLERANCE: f64 = 1e-6;
pub const POWER_MAX_ITERATIONS: usize = 10_000;
const POWER_SEED: u64 = 0x5eed;

/// An operator restricted to the vertices of a window.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub kind: OperatorKind,
    pub vertices: Vec<VertexAddress>,
    /// `matrix[[i, j]]` is the coefficient of `χ_{v_j}` in the image, at `v_i`.
    pub matrix: Array2<f64>,
    /// `λ` at each vertex.
    pub weights: Vec<f64>,
    /// Vertices with a neighbour outside the window; their rows are not
    /// faithful.
    pub boundary: Vec<bool>,
    index: HashMap<VertexAddress, usize>,
}

/// Builds the dense truncation of `kind` over the vertices of `window`.
pub fn truncate_operator(
    kind: OperatorKind,
    weights: &WeightMap,
    model: &TreeModel,
    window: Window,
) -> Result<TruncatedOperator> {
    kind.check()?;
    let outer = model.window();
    if !model.is_finite() && (window.up > outer.up || window.down > outer.down) {
        return Err(Error::InvalidArgument(format!("truncation window {window:?} exceeds the model window {outer:?}")));
    }
    let inner = model.clone().with_window(window);
    let vertices = inner.vertices_in_window()?;
    let index: HashMap<VertexAddress, usize> = vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let size = vertices.len();
    let lam = vertices.iter().map(|v| weights.weight(model, v)).collect::<Result<Vec<_>>>()?;
    let mut matrix = Array2::<f64>::zeros((size, size));
    let mut boundary = vec![false; size];

    for (j, v) in vertices.iter().enumerate() {
        let children = model.children(v)?;
        let parent = model.parent(v)?;
        boundary[j] =
            children.iter().any(|c| !index.contains_key(c)) || parent.as_ref().is_some_and(|p| !index.contains_key(p));
        match kind {
            OperatorKind::ForwardShift => {
                for c in &children {
                    if let Some(&i) = index.get(c) {
                        matrix[[i, j]] = 1.0;
                    }
                }
            }
            OperatorKind::BackwardShift => {
                if let Some(&i) = parent.as_ref().and_then(|p| index.get(p)) {
                    matrix[[i, j]] = 1.0;
                }
            }
            OperatorKind::AdjointShift => {
                if let Some(&i) = parent.as_ref().and_then(|p| index.get(p)) {
                    matrix[[i, j]] = lam[j] / lam[i];
                }
            }
            OperatorKind::RightInverse { n } => {
                // Walk n generations down without leaving the window.
                let mut layer = vec![v.clone()];
                let mut escaped = false;
                for _ in 0..n {
                    let mut next = Vec::new();
                    for x in &layer {
                        for c in model.children(x)? {
                            if index.contains_key(&c) {
                                next.push(c);
                            } else {
                                escaped = true;
                            }
                        }
                    }
                    layer = next;
                }
                if escaped {
                    boundary[j] = true;
                    continue;
                }
                let gamma = layer.len() as f64;
                for x in &layer {
                    matrix[[index[x], j]] = 1.0 / gamma;
                }
            }
            OperatorKind::PhiMap => matrix[[j, j]] = 1.0 / lam[j],
            OperatorKind::PhiInverse => matrix[[j, j]] = lam[j],
        }
    }
    Ok(TruncatedOperator { kind, vertices, matrix, weights: lam, boundary, index })
}

impl TruncatedOperator {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn position(&self, v: &VertexAddress) -> Option<usize> {
        self.index.get(v).copied()
    }

    /// `A f` for `f` supported inside the window.
    pub fn apply(&self, f: &TreeFunction) -> Result<TreeFunction> {
        let mut re = Array1::<f64>::zeros(self.len());
        let mut im = Array1::<f64>::zeros(self.len());
        for (v, z) in f.iter() {
            let j = self.position(v).ok_or_else(|| Error::window(v, "vertex lies outside the truncation window"))?;
            re[j] = z.re;
            im[j] = z.im;
        }
        let (re, im) = (self.matrix.dot(&re), self.matrix.dot(&im));
        Ok(TreeFunction::from_pairs(
            self.vertices.iter().enumerate().map(|(i, v)| (v.clone(), Complex64::new(re[i], im[i]))),
        ))
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "row")?;
        for v in &self.vertices {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
        for (i, v) in self.vertices.iter().enumerate() {
            write!(out, "{v}")?;
            for x in self.matrix.row(i) {
                write!(out, ",{x:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    fn weighted_norm(&self, x: &Array1<f64>, p: f64) -> f64 {
        x.iter().zip(&self.weights).map(|(a, l)| a.abs().powf(p) * l).sum::<f64>().powf(1.0 / p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
}

/// Largest singular value of the truncation as an operator on `L²(λ)`, by
/// power iteration on the Gram matrix of `D A D^{-1}` with `D = diag √λ`.
pub fn estimate_norm_p2(op: &TruncatedOperator) -> Result<NormEstimate> {
    let n = op.len();
    if n == 0 {
        return Ok(NormEstimate { value: 0.0, iterations: 0 });
    }
    let d: Array1<f64> = op.weights.iter().map(|l| l.sqrt()).collect();
    let apply = |x: &Array1<f64>| -> Array1<f64> { &op.matrix.dot(&(x / &d)) * &d };
    let apply_t = |y: &Array1<f64>| -> Array1<f64> { &op.matrix.t().dot(&(y * &d)) / &d };

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x: Array1<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    x /= x.dot(&x).sqrt();
    let mut estimate = 0.0f64;
    let mut gap = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERATIONS {
        let y = apply(&x);
        let sigma = y.dot(&y).sqrt();
        if sigma == 0.0 {
            return Ok(NormEstimate { value: 0.0, iterations: it });
        }
        gap = (sigma - estimate).abs();
        if gap <= POWER_TOLERANCE * sigma {
            return Ok(NormEstimate { value: sigma.max(estimate), iterations: it });
        }
        estimate = estimate.max(sigma);
        let z = apply_t(&y);
        let norm = z.dot(&z).sqrt();
        if norm == 0.0 {
            return Ok(NormEstimate { value: estimate, iterations: it });
        }
        x = z / norm;
    }
    Err(Error::NonConvergence { iterations: POWER_MAX_ITERATIONS, estimate, gap })
}

/// `max ‖Av‖_p / ‖v‖_p` over every point mass and `trials` seeded random
/// vectors. Always a lower bound for the operator norm.
pub fn lower_bound_norm_p(op: &TruncatedOperator, p: f64, trials: usize, seed: u64) -> Result<f64> {
    check_exponent(p)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is needed".into()));
    }
    let n = op.len();
    let mut best = 0.0f64;
    for j in 0..n {
        let col = op.matrix.column(j).to_owned();
        let num = op.weighted_norm(&col, p);
        let den = op.weights[j].powf(1.0 / p);
        best = best.max(num / den);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let v: Array1<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let den = op.weighted_norm(&v, p);
        if den > 0.0 {
            best = best.max(op.weighted_norm(&op.matrix.dot(&v), p) / den);
        }
    }
    Ok(best)
}
