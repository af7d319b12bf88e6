//! Residual MLP backbone for the velocity field.
//!
//! ```text
//! h   = gelu(x W_in + b_in)
//! h  += gelu(ln(h) W1 + b1) W2 + b2      (depth times)
//! out = ln(h) W_out + b_out
//! ```

use rand_distr::{Distribution, StandardNormal};

use super::ArchDescriptor;
use crate::autodiff::{kernels, Scalar, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub(crate) params: Vec<Tensor<T>>,
}

fn gaussian<T: Scalar>(rows: usize, cols: usize, std: f64, r: &mut rng::Rng) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

impl<T: Scalar> Network<T> {
    pub fn new(desc: &ArchDescriptor, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let (inp, w, out) = (desc.input_dim(), desc.width, desc.output_dim());
        let mut params = vec![
            gaussian(inp, w, (2.0 / inp as f64).sqrt(), &mut r),
            Tensor::zeros(&[1, w]),
        ];
        for _ in 0..desc.depth {
            params.push(gaussian(w, w, (2.0 / w as f64).sqrt(), &mut r));
            params.push(Tensor::zeros(&[1, w]));
            params.push(gaussian(w, w, 0.5 / (w as f64).sqrt(), &mut r));
            params.push(Tensor::zeros(&[1, w]));
        }
        params.push(gaussian(w, out, 0.1 / (w as f64).sqrt(), &mut r));
        params.push(Tensor::zeros(&[1, out]));
        Self { params }
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn depth(&self) -> usize {
        (self.params.len() - 4) / 4
    }

    /// Sets the output layer to zero, making the field identically zero.
    pub fn zero_output_head(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.data_mut().iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    fn affine(x: &[T], rows: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
        let (k, n) = (w.rows(), w.cols());
        let mut out = vec![T::ZERO; rows * n];
        kernels::matmul(x, w.data(), rows, k, n, &mut out);
        kernels::add_row_inplace(&mut out, b.data());
        out
    }

    /// Tape-free forward pass over a `batch x input_dim` matrix.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::check_matmul(input, &self.params[0])?;
        let rows = input.rows();
        let p = &self.params;
        let width = p[0].cols();
        let mut h = Self::affine(input.data(), rows, &p[0], &p[1]);
        h.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let mut normed = vec![T::ZERO; h.len()];
        for b in 0..self.depth() {
            let base = 2 + 4 * b;
            kernels::layer_norm_rows(&h, width, &mut normed);
            let mut a = Self::affine(&normed, rows, &p[base], &p[base + 1]);
            a.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            let r = Self::affine(&a, rows, &p[base + 2], &p[base + 3]);
            for (x, y) in h.iter_mut().zip(&r) {
                *x = *x + *y;
            }
        }
        kernels::layer_norm_rows(&h, width, &mut normed);
        let n = p.len();
        let out = Self::affine(&normed, rows, &p[n - 2], &p[n - 1]);
        Tensor::matrix(rows, p[n - 1].cols(), out)
    }

    /// Same computation recorded on a tape; `params` are the leaves holding
    /// this network's parameters.
    pub fn forward_tape(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        let h = tape.affine(input, params[0], params[1])?;
        let mut h = tape.gelu(h);
        for b in 0..self.depth() {
            let base = 2 + 4 * b;
            let n = tape.layer_norm(h);
            let a = tape.affine(n, params[base], params[base + 1])?;
            let a = tape.gelu(a);
            let r = tape.affine(a, params[base + 2], params[base + 3])?;
            h = tape.add(h, r)?;
        }
        let n = tape.layer_norm(h);
        let last = params.len();
        tape.affine(n, params[last - 2], params[last - 1])
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }
}
