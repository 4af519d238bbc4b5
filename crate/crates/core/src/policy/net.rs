//! Dense tanh networks addressed into a flat parameter buffer.
//!
//! Each layer stores its weight as an `input x output` row-major block
//! followed by an `output` bias, so `y = x W + b`. Hidden layers use tanh,
//! the final layer is linear.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    /// Offset of the weight block in the flat parameter vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.input * self.output
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.output
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.input, self.output),
            &params[self.offset..self.offset + self.weight_len()],
        )
        .expect("layer layout")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.weight_len();
        ArrayView1::from(&params[start..start + self.output])
    }

    fn split_mut<'a>(&self, buf: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let block = &mut buf[self.offset..self.offset + self.len()];
        let (w, b) = block.split_at_mut(self.weight_len());
        (
            ArrayViewMut2::from_shape((self.input, self.output), w).expect("layer layout"),
            ArrayViewMut1::from(b),
        )
    }
}

/// A feed-forward network occupying a contiguous range of a parameter
/// vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `inputs[k]` is the input of layer `k`; the last entry is the output.
    activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// Lay out `input -> hidden... -> output` starting at `offset`.
    pub fn new(input: usize, hidden: &[usize], output: usize, offset: usize) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut at = offset;
        for w in widths.windows(2) {
            let shape = LayerShape {
                input: w[0],
                output: w[1],
                offset: at,
            };
            at += shape.len();
            layers.push(shape);
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("layers").output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum()
    }

    pub fn end_offset(&self) -> usize {
        let last = self.layers.last().expect("layers");
        last.offset + last.len()
    }

    /// Orthogonal initialisation: hidden layers with `hidden_gain`, the
    /// output layer with `output_gain`, zero biases.
    pub fn init(&self, params: &mut [f64], hidden_gain: f64, output_gain: f64, rng: &mut Rng) {
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            let gain = if k + 1 == n { output_gain } else { hidden_gain };
            let q = orthogonal(layer.input, layer.output, rng);
            let (mut w, mut b) = layer.split_mut(params);
            w.assign(&(q * gain));
            b.fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> MlpCache {
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        activations.push(x.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = activations[k].dot(&layer.weight(params));
            z += &layer.bias(params);
            if k + 1 < n {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        MlpCache { activations }
    }

    /// Output only, without keeping intermediate activations.
    pub fn predict(&self, params: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight(params));
            z += &layer.bias(params);
            if k + 1 < n {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        h
    }

    /// Accumulate `dL/dparams` into `grad` given `dL/doutput`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, d_out: Array2<f64>, grad: &mut [f64]) {
        let n = self.layers.len();
        let mut delta = d_out;
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let input = &cache.activations[k];
            {
                let (mut gw, mut gb) = layer.split_mut(grad);
                gw += &input.t().dot(&delta);
                gb += &delta.sum_axis(Axis(0));
            }
            if k > 0 {
                let mut d_in = delta.dot(&layer.weight(params).t());
                // input of layer k is tanh output of layer k-1.
                d_in.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = d_in;
            }
        }
    }
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// fewer), via modified Gram-Schmidt on a Gaussian draw.
fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r >= c: orthonormalise the c columns of an r x c matrix.
    let mut a = Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng));
    for j in 0..c {
        for k in 0..j {
            let proj = a.column(j).dot(&a.column(k));
            let col_k: Array1<f64> = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &col_k);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm > 1e-12 {
            a.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    if transpose {
        a.reversed_axes()
    } else {
        a
    }
}
