//! Feed-forward policy/value network with a shared tanh trunk.
//!
//! All weights live in one flat vector: for each hidden layer a row-major
//! `(out, in)` weight matrix followed by its bias, then the logits head and
//! the value head in the same format. Gradients use the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    offset: usize,
    out: usize,
    inp: usize,
}

impl LayerSpec {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.out * self.inp
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let w = self.offset + self.out * self.inp;
        w..w + self.out
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: `acts[0]` is the batch input, `acts[i]` the output of
    /// hidden layer `i`.
    pub acts: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl MlpParams {
    /// Zero-initialized network.
    pub fn zeros(input: usize, hidden: &[usize], actions: usize) -> Self {
        let mut p = Self { input, hidden: hidden.to_vec(), actions, data: Vec::new() };
        let n = p.specs().iter().map(|s| s.out * (s.inp + 1)).sum();
        p.data = vec![0.0; n];
        p
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)`; gain 1
    /// for the trunk and value head, 0.01 for the logits head; zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden, actions);
        let specs = p.specs();
        let logits_layer = specs.len() - 2;
        for (i, s) in specs.iter().enumerate() {
            let gain = if i == logits_layer { 0.01 } else { 1.0 };
            let sd = gain / (s.inp as f64).sqrt();
            for w in &mut p.data[s.weights()] {
                *w = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self { data: vec![0.0; self.data.len()], ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Hidden layers, then logits head, then value head.
    fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden.len() + 2);
        let mut offset = 0;
        let mut inp = self.input;
        let last = *self.hidden.last().unwrap_or(&self.input);
        for out in self.hidden.iter().copied().chain([self.actions, 1]) {
            let layer_in = if specs.len() >= self.hidden.len() { last } else { inp };
            specs.push(LayerSpec { offset, out, inp: layer_in });
            offset += out * (layer_in + 1);
            inp = out;
        }
        specs
    }

    fn weight_view(&self, s: LayerSpec) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = ArrayView2::from_shape((s.out, s.inp), &self.data[s.weights()]).expect("layer shape");
        let b = ArrayView1::from(&self.data[s.bias()]);
        (w, b)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(self.input, &self.hidden, self.actions).len();
        if self.data.len() != expected || self.actions == 0 || self.input == 0 {
            return Err(RlError::Checkpoint(format!(
                "network has {} parameters, shape ({}, {:?}, {}) needs {expected}",
                self.data.len(),
                self.input,
                self.hidden,
                self.actions
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// Forward pass on a batch of inputs (one row each).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input {
            return Err(RlError::Dimension(format!("input has {} columns, network expects {}", x.ncols(), self.input)));
        }
        let specs = self.specs();
        let n_hidden = self.hidden.len();
        let mut acts = Vec::with_capacity(n_hidden + 1);
        acts.push(x.to_owned());
        for s in &specs[..n_hidden] {
            let (w, b) = self.weight_view(*s);
            let mut h = acts.last().expect("input present").dot(&w.t());
            h += &b;
            h.mapv_inplace(f64::tanh);
            acts.push(h);
        }
        let top = acts.last().expect("trunk output");
        let (wp, bp) = self.weight_view(specs[n_hidden]);
        let mut logits = top.dot(&wp.t());
        logits += &bp;
        let (wv, bv) = self.weight_view(specs[n_hidden + 1]);
        let values = top.dot(&wv.row(0)) + bv[0];
        if logits.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("network activations (parameters corrupt)".into()));
        }
        Ok(ForwardCache { acts, logits, values })
    }

    /// Action probabilities and value for one input.
    pub fn forward(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let x = ArrayView2::from_shape((1, y.len()), y).expect("row vector");
        let cache = self.forward_batch(x)?;
        let probs = log_softmax(cache.logits.row(0)).into_iter().map(f64::exp).collect();
        Ok((probs, cache.values[0]))
    }

    /// Gradient of a scalar loss given its partials with respect to the
    /// logits `(n, A)` and values `(n)`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>, dvalues: ArrayView1<f64>) -> MlpParams {
        let mut grad = self.zeros_like();
        let specs = self.specs();
        let n_hidden = self.hidden.len();
        let top = &cache.acts[n_hidden];

        let ps = specs[n_hidden];
        let vs = specs[n_hidden + 1];
        {
            let mut gw = ArrayViewMut2::from_shape((ps.out, ps.inp), &mut grad.data[ps.weights()]).expect("shape");
            general_mat_mul(1.0, &dlogits.t(), top, 0.0, &mut gw);
        }
        for (g, d) in grad.data[ps.bias()].iter_mut().zip(dlogits.sum_axis(Axis(0))) {
            *g = d;
        }
        {
            let gv = top.t().dot(&dvalues);
            grad.data[vs.weights()].copy_from_slice(gv.as_slice().expect("contiguous"));
            grad.data[vs.bias()][0] = dvalues.sum();
        }
        let (wp, _) = self.weight_view(ps);
        let (wv, _) = self.weight_view(vs);
        let mut dh = dlogits.dot(&wp);
        for (mut row, dv) in dh.rows_mut().into_iter().zip(dvalues.iter()) {
            row.scaled_add(*dv, &wv.row(0));
        }

        for l in (0..n_hidden).rev() {
            let s = specs[l];
            let h = &cache.acts[l + 1];
            let dpre = &dh * &h.mapv(|v| 1.0 - v * v);
            {
                let mut gw = ArrayViewMut2::from_shape((s.out, s.inp), &mut grad.data[s.weights()]).expect("shape");
                general_mat_mul(1.0, &dpre.t(), &cache.acts[l], 0.0, &mut gw);
            }
            for (g, d) in grad.data[s.bias()].iter_mut().zip(dpre.sum_axis(Axis(0))) {
                *g = d;
            }
            if l > 0 {
                let (w, _) = self.weight_view(s);
                dh = dpre.dot(&w);
            }
        }
        grad
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}
