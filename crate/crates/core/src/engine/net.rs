//! Forward pass, softmax cross-entropy and exact backpropagation for
//! dense-ReLU stacks stored in a [`ParamSet`].

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Borrowed view over `len` examples: row-major inputs plus labels.
#[derive(Debug, Clone, Copy)]
pub struct Examples<'a> {
    inputs: &'a [f64],
    labels: &'a [u32],
    dim: usize,
}

impl<'a> Examples<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [u32], dim: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} input values for {} labels of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &'a [f64] {
        self.inputs
    }

    pub fn labels(&self) -> &'a [u32] {
        self.labels
    }

    pub fn range(&self, start: usize, end: usize) -> Examples<'a> {
        Examples {
            inputs: &self.inputs[start * self.dim..end * self.dim],
            labels: &self.labels[start..end],
            dim: self.dim,
        }
    }
}

struct Layer<'p> {
    weight: &'p [f64],
    bias: &'p [f64],
    fan_in: usize,
    fan_out: usize,
}

/// Reads the `(weight, bias)` pairs out of a parameter set.
fn layers(params: &ParamSet) -> Result<Vec<Layer<'_>>> {
    let entries = params.entries();
    if entries.is_empty() || !entries.len().is_multiple_of(2) {
        return Err(Error::Shape("expected (weight, bias) entry pairs".into()));
    }
    let mut out = Vec::with_capacity(entries.len() / 2);
    for pair in entries.chunks(2) {
        let (w, b) = (&pair[0], &pair[1]);
        let [fan_in, fan_out] = *w.tensor.shape() else {
            return Err(Error::Shape(format!("`{}` is not a matrix", w.name)));
        };
        if b.tensor.shape() != [fan_out] {
            return Err(Error::Shape(format!("`{}` does not match `{}`", b.name, w.name)));
        }
        if let Some(prev) = out.last() {
            let prev: &Layer = prev;
            if prev.fan_out != fan_in {
                return Err(Error::Shape(format!("`{}` expects {fan_in} inputs, previous layer emits {}", w.name, prev.fan_out)));
            }
        }
        out.push(Layer {
            weight: w.tensor.values(),
            bias: b.tensor.values(),
            fan_in,
            fan_out,
        });
    }
    Ok(out)
}

pub(crate) fn check_input(params: &ParamSet, examples: &Examples) -> Result<usize> {
    let ls = layers(params)?;
    if ls[0].fan_in != examples.dim() {
        return Err(Error::Shape(format!(
            "network expects {} inputs, batch has {}",
            ls[0].fan_in,
            examples.dim()
        )));
    }
    let classes = ls.last().map(|l| l.fan_out).unwrap_or(0);
    if let Some(&y) = examples.labels().iter().find(|&&y| y as usize >= classes) {
        return Err(Error::Shape(format!("label {y} out of range for {classes} classes")));
    }
    Ok(classes)
}

/// `c = beta * c + a * b` for an `m x k` by `k x n` product with arbitrary
/// strides on the operands and a dense row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above keep every addressed element in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Log-sum-exp of one logit row.
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Reusable activation buffers. One per training run.
#[derive(Debug, Default)]
pub struct Workspace {
    // acts[i] is the post-ReLU output of layer i; the last entry holds logits.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the network on `rows` examples and returns the logits.
    fn forward(&mut self, ls: &[Layer], x: &[f64], rows: usize) -> &[f64] {
        self.acts.resize_with(ls.len(), Vec::new);
        for (i, l) in ls.iter().enumerate() {
            let (before, rest) = self.acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &before[i - 1] };
            let out = &mut rest[0];
            out.clear();
            out.resize(rows * l.fan_out, 0.0);
            for r in 0..rows {
                out[r * l.fan_out..(r + 1) * l.fan_out].copy_from_slice(l.bias);
            }
            gemm(rows, l.fan_in, l.fan_out, input, (l.fan_in, 1), l.weight, (l.fan_out, 1), 1.0, out);
            if i + 1 < ls.len() {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        &self.acts[ls.len() - 1]
    }

    /// Mean cross-entropy and its exact gradient, written into `grads`.
    pub fn loss_and_gradient(&mut self, params: &ParamSet, examples: Examples, grads: &mut ParamSet) -> Result<f64> {
        let classes = check_input(params, &examples)?;
        params.check_congruent(grads)?;
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let ls = layers(params)?;
        let rows = examples.len();
        self.forward(&ls, examples.inputs(), rows);

        // dL/dlogits = (softmax - onehot) / rows
        let logits = &self.acts[ls.len() - 1];
        self.delta.clear();
        self.delta.resize(rows * classes, 0.0);
        let mut loss = 0.0;
        let inv = 1.0 / rows as f64;
        for r in 0..rows {
            let z = &logits[r * classes..(r + 1) * classes];
            let lse = log_sum_exp(z);
            let y = examples.labels()[r] as usize;
            loss += lse - z[y];
            let d = &mut self.delta[r * classes..(r + 1) * classes];
            for (dj, &zj) in d.iter_mut().zip(z) {
                *dj = (zj - lse).exp() * inv;
            }
            d[y] -= inv;
        }

        let grad_entries = grads.entries_mut();
        for i in (0..ls.len()).rev() {
            let l = &ls[i];
            let input: &[f64] = if i == 0 { examples.inputs() } else { &self.acts[i - 1] };
            let (gw, gb) = grad_entries[2 * i..2 * i + 2].split_at_mut(1);
            // dW = input^T * delta
            gemm(l.fan_in, rows, l.fan_out, input, (1, l.fan_in), &self.delta, (l.fan_out, 1), 0.0, gw[0].tensor.values_mut());
            let gb = gb[0].tensor.values_mut();
            gb.fill(0.0);
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&self.delta[r * l.fan_out..(r + 1) * l.fan_out]) {
                    *g += d;
                }
            }
            if i > 0 {
                // delta_prev = (delta * W^T) masked by the ReLU derivative
                self.delta_prev.clear();
                self.delta_prev.resize(rows * l.fan_in, 0.0);
                gemm(rows, l.fan_out, l.fan_in, &self.delta, (l.fan_out, 1), l.weight, (1, l.fan_out), 0.0, &mut self.delta_prev);
                for (d, &a) in self.delta_prev.iter_mut().zip(&self.acts[i - 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
        Ok(loss * inv)
    }
}

const EVAL_CHUNK: usize = 1000;

/// Mean softmax cross-entropy over the batch and the raw logits
/// (`len x classes`, row-major).
pub fn forward_loss(params: &ParamSet, examples: Examples) -> Result<(f64, Vec<f64>)> {
    let losses_and_logits = per_example(params, examples)?;
    let n = examples.len() as f64;
    let loss = losses_and_logits.0.iter().sum::<f64>() / n;
    Ok((loss, losses_and_logits.1))
}

/// Per-example losses and logits, computed in fixed-size chunks.
fn per_example(params: &ParamSet, examples: Examples) -> Result<(Vec<f64>, Vec<f64>)> {
    let classes = check_input(params, &examples)?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ls = layers(params)?;
    let mut ws = Workspace::new();
    let mut losses = Vec::with_capacity(examples.len());
    let mut all_logits = Vec::with_capacity(examples.len() * classes);
    for start in (0..examples.len()).step_by(EVAL_CHUNK) {
        let chunk = examples.range(start, (start + EVAL_CHUNK).min(examples.len()));
        let logits = ws.forward(&ls, chunk.inputs(), chunk.len());
        for (r, &y) in chunk.labels().iter().enumerate() {
            let z = &logits[r * classes..(r + 1) * classes];
            losses.push(log_sum_exp(z) - z[y as usize]);
        }
        all_logits.extend_from_slice(logits);
    }
    Ok((losses, all_logits))
}

/// Cross-entropy of every example, in order.
pub fn example_losses(params: &ParamSet, examples: Examples) -> Result<Vec<f64>> {
    Ok(per_example(params, examples)?.0)
}

/// Argmax class for every example, in order.
pub fn predictions(params: &ParamSet, examples: Examples) -> Result<Vec<usize>> {
    let classes = check_input(params, &examples)?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ls = layers(params)?;
    let mut ws = Workspace::new();
    let mut out = Vec::with_capacity(examples.len());
    for start in (0..examples.len()).step_by(EVAL_CHUNK) {
        let chunk = examples.range(start, (start + EVAL_CHUNK).min(examples.len()));
        let logits = ws.forward(&ls, chunk.inputs(), chunk.len());
        out.extend(logits.chunks(classes).map(argmax));
    }
    Ok(out)
}

/// Fraction of examples whose argmax prediction differs from the label.
pub fn error_rate(params: &ParamSet, examples: Examples) -> Result<f64> {
    let preds = predictions(params, examples)?;
    let wrong = preds
        .iter()
        .zip(examples.labels())
        .filter(|(&p, &y)| p != y as usize)
        .count();
    Ok(wrong as f64 / examples.len() as f64)
}

/// Gradient of the mean batch loss with respect to every parameter.
pub fn backward(params: &ParamSet, examples: Examples) -> Result<ParamSet> {
    let mut grads = params.zeros_like();
    Workspace::new().loss_and_gradient(params, examples, &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::arch::{init_params, Architecture};
    use crate::engine::params::{ParamEntry, Tensor};

    fn single_layer(weight: Vec<f64>, bias: Vec<f64>, fan_in: usize, fan_out: usize) -> ParamSet {
        ParamSet::new(
            vec![
                ParamEntry {
                    name: "fc1.weight".into(),
                    tensor: Tensor::new(vec![fan_in, fan_out], weight).unwrap(),
                    prunable: true,
                },
                ParamEntry {
                    name: "fc1.bias".into(),
                    tensor: Tensor::new(vec![fan_out], bias).unwrap(),
                    prunable: false,
                },
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let p = single_layer(vec![0.0; 30], vec![0.0; 10], 3, 10);
        let x = [0.2, -1.0, 4.0];
        let ex = Examples::new(&x, &[3], 3).unwrap();
        let (loss, logits) = forward_loss(&p, ex).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(logits.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn hand_computed_two_class_loss() {
        // logits = x W + b with x = [1, 2], W = [[1, 0], [0.5, -1]], b = [0, 0.5]
        // z = [2, -1.5]; label 1 → loss = ln(e^2 + e^-1.5) + 1.5
        let p = single_layer(vec![1.0, 0.0, 0.5, -1.0], vec![0.0, 0.5], 2, 2);
        let x = [1.0, 2.0];
        let ex = Examples::new(&x, &[1], 2).unwrap();
        let (loss, logits) = forward_loss(&p, ex).unwrap();
        assert_eq!(logits, vec![2.0, -1.5]);
        let expected = (2f64.exp() + (-1.5f64).exp()).ln() + 1.5;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn large_correct_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 100.0] {
            let p = single_layer(vec![0.0; 4], vec![margin, 0.0], 2, 2);
            let x = [0.0, 0.0];
            let (loss, _) = forward_loss(&p, Examples::new(&x, &[0], 2).unwrap()).unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn zero_weight_bias_gradient_is_softmax_minus_onehot() {
        let p = single_layer(vec![0.0; 8], vec![0.0; 4], 2, 4);
        let x = [1.0, -1.0];
        let g = backward(&p, Examples::new(&x, &[2], 2).unwrap()).unwrap();
        assert_eq!(g.entries()[1].tensor.values(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn duplicated_example_has_same_gradient() {
        let arch = Architecture::new("t", 3, vec![4], 3);
        let p = init_params(&arch, 3).unwrap();
        let x1 = [0.5, -0.2, 0.9];
        let x2 = [0.5, -0.2, 0.9, 0.5, -0.2, 0.9];
        let g1 = backward(&p, Examples::new(&x1, &[1], 3).unwrap()).unwrap();
        let g2 = backward(&p, Examples::new(&x2, &[1, 1], 3).unwrap()).unwrap();
        for (a, b) in g1.flat_values().zip(g2.flat_values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = init_params(&Architecture::new("t", 3, vec![], 2), 0).unwrap();
        let x = [0.0; 4];
        let ex = Examples::new(&x, &[0, 1], 2).unwrap();
        assert!(matches!(forward_loss(&p, ex), Err(Error::Shape(_))));
        assert!(matches!(backward(&p, ex), Err(Error::Shape(_))));
        let x = [0.0; 3];
        let bad_label = Examples::new(&x, &[5], 3).unwrap();
        assert!(forward_loss(&p, bad_label).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 10]), 0);
    }

    #[test]
    fn constant_logits_on_balanced_set_err_nine_tenths() {
        let p = single_layer(vec![0.0; 20], vec![0.0; 10], 2, 10);
        let x = vec![0.3; 200];
        let labels: Vec<u32> = (0..100).map(|i| i % 10).collect();
        let err = error_rate(&p, Examples::new(&x, &labels, 2).unwrap()).unwrap();
        assert!((err - 0.9).abs() < 1e-15);
    }

    #[test]
    fn memorizer_has_zero_error_on_its_data() {
        // identity weights: class = index of the hot input
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let p = single_layer(w, vec![0.0; 3], 3, 3);
        let x = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let err = error_rate(&p, Examples::new(&x, &[0, 1, 2], 3).unwrap()).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn chunked_evaluation_matches_single_pass() {
        let arch = Architecture::new("t", 4, vec![5], 3);
        let p = init_params(&arch, 9).unwrap();
        let n = 2 * EVAL_CHUNK + 17;
        let x: Vec<f64> = (0..n * 4).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let ex = Examples::new(&x, &y, 4).unwrap();
        let (_, logits) = forward_loss(&p, ex).unwrap();
        let mut ws = Workspace::new();
        let ls = layers(&p).unwrap();
        let direct = ws.forward(&ls, &x, n).to_vec();
        assert_eq!(logits, direct);
    }
}
