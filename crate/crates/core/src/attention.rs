//! Single-head scaled dot-product attention over multi-view token sets.
//!
//! Target-view keys/values are concatenated with every reference view's
//! along the token axis, so each target query attends to all views at once.
//! For cross-modal sharing, the softmax map computed from the image branch's
//! queries and keys is applied unchanged to the geometry branch's values.
//!
//! Weights are always materialized so the shared map can be compared
//! bit-for-bit between branches. Everything runs in `f64`; tensors on disk
//! are `f32`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Matrix = Array2<f64>;

pub fn matrix_from_tensor(t: &Tensor) -> Result<Matrix> {
    let [rows, cols] = *t.dims() else {
        return Err(Error::Shape(format!("expected a 2-D tensor, got {:?}", t.dims())));
    };
    Ok(Matrix::from_shape_vec((rows, cols), t.data().iter().map(|&v| v as f64).collect())
        .expect("row-major shape matches"))
}

pub fn matrix_to_tensor(m: &Matrix) -> Result<Tensor> {
    Tensor::new(vec![m.nrows(), m.ncols()], m.iter().map(|&v| v as f32).collect())
}

fn check_finite(name: &str, m: ArrayView2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite values")))
    }
}

/// Keys and values of one view, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub keys: Matrix,
    pub values: Matrix,
}

impl ViewFeatures {
    pub fn new(keys: Matrix, values: Matrix) -> Result<Self> {
        if keys.nrows() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} key tokens vs {} value tokens",
                keys.nrows(),
                values.nrows()
            )));
        }
        Ok(Self { keys, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    /// First token index of each view's block in `keys`/`values`.
    pub view_offsets: Vec<usize>,
}

impl AttentionBundle {
    pub fn new(queries: Matrix, keys: Matrix, values: Matrix, view_offsets: Vec<usize>) -> Result<Self> {
        let (tq, dk) = queries.dim();
        let (tk, dk2) = keys.dim();
        let (tv, dv) = values.dim();
        if tq == 0 || tk == 0 || dk == 0 || dv == 0 {
            return Err(Error::Shape("attention dimensions must be at least 1".into()));
        }
        if dk != dk2 {
            return Err(Error::Shape(format!("query width {dk} vs key width {dk2}")));
        }
        if tk != tv {
            return Err(Error::Shape(format!("{tk} key tokens vs {tv} value tokens")));
        }
        let offsets_ok = view_offsets.first() == Some(&0)
            && view_offsets.windows(2).all(|w| w[0] < w[1])
            && view_offsets.last().is_some_and(|&l| l < tk);
        if !offsets_ok {
            return Err(Error::Shape(format!("bad view offsets {view_offsets:?} for {tk} tokens")));
        }
        Ok(Self {
            queries,
            keys,
            values,
            view_offsets,
        })
    }

    /// Builds a bundle from target queries and aggregated per-view features.
    pub fn aggregated(queries: Matrix, target: &ViewFeatures, references: &[ViewFeatures]) -> Result<Self> {
        let (keys, values, offsets) = aggregate_kv(target, references)?;
        Self::new(queries, keys, values, offsets)
    }

    pub fn key_width(&self) -> usize {
        self.keys.ncols()
    }
}

/// Row-stochastic attention map, queries x key tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Matrix);

impl AttentionWeights {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0
            })
            .collect()
    }
}

/// Concatenates `[target, ref_1, ..., ref_N]` along the token axis.
pub fn aggregate_kv(target: &ViewFeatures, references: &[ViewFeatures]) -> Result<(Matrix, Matrix, Vec<usize>)> {
    let dk = target.keys.ncols();
    let dv = target.values.ncols();
    let mut offsets = vec![0];
    let mut total = target.keys.nrows();
    for (n, r) in references.iter().enumerate() {
        if r.keys.ncols() != dk || r.values.ncols() != dv {
            return Err(Error::Shape(format!(
                "reference {n} widths ({}, {}) differ from target ({dk}, {dv})",
                r.keys.ncols(),
                r.values.ncols()
            )));
        }
        offsets.push(total);
        total += r.keys.nrows();
    }
    let keys: Vec<ArrayView2<f64>> = std::iter::once(&target.keys)
        .chain(references.iter().map(|r| &r.keys))
        .map(|m| m.view())
        .collect();
    let values: Vec<ArrayView2<f64>> = std::iter::once(&target.values)
        .chain(references.iter().map(|r| &r.values))
        .map(|m| m.view())
        .collect();
    let k = concatenate(Axis(0), &keys).map_err(|e| Error::Shape(e.to_string()))?;
    let v = concatenate(Axis(0), &values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((k, v, offsets))
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `softmax(Q K^T / sqrt(d_k))`.
pub fn attention_weights(queries: &Matrix, keys: &Matrix, d_k: usize) -> Result<AttentionWeights> {
    if queries.ncols() != d_k || keys.ncols() != d_k {
        return Err(Error::Shape(format!(
            "query/key widths ({}, {}) must equal d_k = {d_k}",
            queries.ncols(),
            keys.ncols()
        )));
    }
    if d_k == 0 || keys.nrows() == 0 {
        return Err(Error::Shape("attention needs at least one key and d_k >= 1".into()));
    }
    check_finite("queries", queries.view())?;
    check_finite("keys", keys.view())?;
    let logits = queries.dot(&keys.t()) / (d_k as f64).sqrt();
    check_finite("logits", logits.view())?;
    Ok(AttentionWeights(softmax_rows(&logits)))
}

pub fn apply_attention(weights: &AttentionWeights, values: &Matrix) -> Result<Matrix> {
    if weights.0.ncols() != values.nrows() {
        return Err(Error::Shape(format!(
            "{} weight columns vs {} value tokens",
            weights.0.ncols(),
            values.nrows()
        )));
    }
    check_finite("values", values.view())?;
    Ok(weights.0.dot(values))
}

pub fn attention(queries: &Matrix, keys: &Matrix, values: &Matrix) -> Result<Matrix> {
    let w = attention_weights(queries, keys, queries.ncols())?;
    apply_attention(&w, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstilledAttention {
    /// Map computed once from the image queries and keys.
    pub weights: AttentionWeights,
    pub image_output: Matrix,
    pub geometry_output: Matrix,
}

/// Attention for both branches with the geometry branch reusing the image
/// branch's map instead of computing its own.
pub fn cross_modal_attention(image: &AttentionBundle, geometry_values: &Matrix) -> Result<InstilledAttention> {
    if geometry_values.nrows() != image.keys.nrows() {
        return Err(Error::Shape(format!(
            "{} geometry value tokens vs {} image key tokens",
            geometry_values.nrows(),
            image.keys.nrows()
        )));
    }
    let weights = attention_weights(&image.queries, &image.keys, image.key_width())?;
    let image_output = apply_attention(&weights, &image.values)?;
    let geometry_output = apply_attention(&weights, geometry_values)?;
    Ok(InstilledAttention {
        weights,
        image_output,
        geometry_output,
    })
}

/// Gradients of a scalar loss with respect to attention inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

/// Backward pass of `softmax(Q K^T / sqrt(d)) V` given `dL/dOutput`.
pub fn attention_backward(queries: &Matrix, keys: &Matrix, values: &Matrix, grad_out: &Matrix) -> Result<AttentionGrads> {
    let d = queries.ncols();
    let p = attention_weights(queries, keys, d)?.0;
    if grad_out.dim() != (queries.nrows(), values.ncols()) {
        return Err(Error::Shape(format!(
            "output gradient {:?} vs output {:?}",
            grad_out.dim(),
            (queries.nrows(), values.ncols())
        )));
    }
    let dv = p.t().dot(grad_out);
    let dp = grad_out.dot(&values.t());
    let row_dot = (&p * &dp).sum_axis(Axis(1)).insert_axis(Axis(1));
    let ds = &p * &(&dp - &row_dot);
    let scale = 1.0 / (d as f64).sqrt();
    Ok(AttentionGrads {
        queries: ds.dot(keys) * scale,
        keys: ds.t().dot(queries) * scale,
        values: dv,
    })
}

/// Differentiable scalar loss over an attention output.
pub trait ScalarLoss {
    fn value(&self, output: &Matrix) -> f64;
    fn gradient(&self, output: &Matrix) -> Matrix;
}

/// `sum(W * O)`; linear in the output.
#[derive(Debug, Clone)]
pub struct WeightedSum(pub Matrix);

impl ScalarLoss for WeightedSum {
    fn value(&self, output: &Matrix) -> f64 {
        (&self.0 * output).sum()
    }

    fn gradient(&self, _output: &Matrix) -> Matrix {
        self.0.clone()
    }
}

/// `0.5 * ||O - T||^2`.
#[derive(Debug, Clone)]
pub struct SquaredError(pub Matrix);

impl ScalarLoss for SquaredError {
    fn value(&self, output: &Matrix) -> f64 {
        0.5 * (output - &self.0).mapv(|v| v * v).sum()
    }

    fn gradient(&self, output: &Matrix) -> Matrix {
        output - &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    /// Perturb queries, keys and values.
    All,
    /// Perturb values only; the attention map stays fixed.
    ValuesOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

impl AttentionInputs {
    fn forward(&self) -> Result<Matrix> {
        attention(&self.queries, &self.keys, &self.values)
    }

    fn loss(&self, loss: &dyn ScalarLoss) -> Result<f64> {
        Ok(loss.value(&self.forward()?))
    }
}

/// Entries whose gradients are both below this in magnitude are compared
/// absolutely rather than relatively.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

/// Central finite differences against [`attention_backward`]. Relative
/// error per entry is `|a - n| / max(|a|, |n|, GRAD_REL_FLOOR)`.
pub fn gradient_check(
    loss: &dyn ScalarLoss,
    point: &AttentionInputs,
    epsilon: f64,
    target: GradTarget,
) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&epsilon) {
        return Err(Error::Precondition(format!("epsilon {epsilon} outside [1e-5, 1e-2]")));
    }
    let out = point.forward()?;
    let analytic = attention_backward(&point.queries, &point.keys, &point.values, &loss.gradient(&out))?;

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let which: &[usize] = match target {
        GradTarget::All => &[0, 1, 2],
        GradTarget::ValuesOnly => &[2],
    };
    for &slot in which {
        let (rows, cols) = match slot {
            0 => point.queries.dim(),
            1 => point.keys.dim(),
            _ => point.values.dim(),
        };
        let grad = match slot {
            0 => &analytic.queries,
            1 => &analytic.keys,
            _ => &analytic.values,
        };
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = point.clone();
                let mut minus = point.clone();
                let (p, m) = match slot {
                    0 => (&mut plus.queries, &mut minus.queries),
                    1 => (&mut plus.keys, &mut minus.keys),
                    _ => (&mut plus.values, &mut minus.values),
                };
                p[(i, j)] += epsilon;
                m[(i, j)] -= epsilon;
                let numeric = (plus.loss(loss)? - minus.loss(loss)?) / (2.0 * epsilon);
                let a = grad[(i, j)];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
                max_rel = max_rel.max(rel);
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        entries_checked: checked,
    })
}

/// `(L(x + eps d) - L(x - eps d)) / (2 eps)` along `direction`.
pub fn directional_difference(
    loss: &dyn ScalarLoss,
    point: &AttentionInputs,
    direction: &AttentionInputs,
    epsilon: f64,
) -> Result<f64> {
    let shift = |sign: f64| AttentionInputs {
        queries: &point.queries + &(&direction.queries * (sign * epsilon)),
        keys: &point.keys + &(&direction.keys * (sign * epsilon)),
        values: &point.values + &(&direction.values * (sign * epsilon)),
    };
    Ok((shift(1.0).loss(loss)? - shift(-1.0).loss(loss)?) / (2.0 * epsilon))
}

/// Token block of view `n` within aggregated keys/values.
pub fn view_block(bundle: &AttentionBundle, view: usize) -> std::ops::Range<usize> {
    let start = bundle.view_offsets[view];
    let end = bundle
        .view_offsets
        .get(view + 1)
        .copied()
        .unwrap_or(bundle.keys.nrows());
    start..end
}

pub fn rows(m: &Matrix, range: std::ops::Range<usize>) -> Matrix {
    m.slice(s![range, ..]).to_owned()
}
