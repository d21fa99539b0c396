//! Flat parameter storage and dense-layer kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named tensors packed back to back into one `Vec<f64>`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.len;
        self.tensors.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset,
        });
        self.len += rows * cols;
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Dense layer `y = W x + b` with row-major `W` of shape `out x in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn register(layout: &mut ParamLayout, name: &str, input: usize, output: usize) -> Self {
        let w = layout.push(format!("{name}.weight"), output, input);
        let b = layout.push(format!("{name}.bias"), output, 1);
        Dense { w, b, input, output }
    }

    pub fn weight<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.w..self.w + self.input * self.output]
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input);
        let w = self.weight(params);
        let b = &params[self.b..self.b + self.output];
        y.clear();
        y.extend(
            w.chunks_exact(self.input)
                .zip(b)
                .map(|(row, &bias)| bias + dot(row, x)),
        );
    }

    /// Accumulates parameter gradients and, when requested, adds `W^T dy` into `dx`.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        debug_assert_eq!(self.b, self.w + self.input * self.output);
        let (gw, gb) = grad[self.w..self.b + self.output].split_at_mut(self.input * self.output);
        for ((row, g), &d) in gw.chunks_exact_mut(self.input).zip(gb.iter_mut()).zip(dy) {
            *g += d;
            if d != 0.0 {
                for (r, &xi) in row.iter_mut().zip(x) {
                    *r += d * xi;
                }
            }
        }
        if let Some(dx) = dx {
            let w = self.weight(params);
            for (row, &d) in w.chunks_exact(self.input).zip(dy) {
                if d != 0.0 {
                    for (o, &wi) in dx.iter_mut().zip(row) {
                        *o += d * wi;
                    }
                }
            }
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let bound = (6.0 / (self.input + self.output) as f64).sqrt();
        for w in &mut params[self.w..self.w + self.input * self.output] {
            *w = rng.gen_range(-bound..bound);
        }
        params[self.b..self.b + self.output].fill(0.0);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `W x` for a row-major square-or-rectangular matrix without bias.
pub(crate) fn matvec(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// Adds `W^T dy` into `dx` and `dy x^T` into `gw`.
pub(crate) fn matvec_backward(w: &[f64], cols: usize, x: &[f64], dy: &[f64], gw: &mut [f64], dx: &mut [f64]) {
    for ((row, grow), &d) in w.chunks_exact(cols).zip(gw.chunks_exact_mut(cols)).zip(dy) {
        for ((g, &xi), (o, &wi)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
            *g += d * xi;
            *o += d * wi;
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}
