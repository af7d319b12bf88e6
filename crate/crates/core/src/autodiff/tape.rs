use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Gelu(Var),
    LayerNorm(Var, Vec<T>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    SquaredNorm(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation. Nodes are appended in evaluation order, so
/// parents always precede children and reverse index order is a valid
/// reverse topological order.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn map<T: Scalar>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = a.data().iter().map(|x| f(*x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Inputs and parameters alike are leaves.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() || rv.rows() != 1 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        kernels::add_row_inplace(out.data_mut(), rv.data());
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.tanh());
        self.push(out, Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), kernels::gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise layer normalization without learned gain or bias.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        let inv = kernels::layer_norm_rows(xv.data(), xv.cols(), out.data_mut());
        self.push(out, Op::LayerNorm(x, inv))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(*p).shape().to_vec(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let c = v.cols();
                data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let data = (0..rows)
            .flat_map(|r| xv.data()[r * cols + start..r * cols + end].iter().copied())
            .collect();
        let out = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::ZERO, |a, b| a + *b);
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().fold(T::ZERO, |a, b| a + *b) / T::from_f64(v.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn squared_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::ZERO, |a, b| a + *b * *b);
        self.push(Tensor::scalar(s), Op::SquaredNorm(x))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: lv.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::ONE));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, nn) = (av.rows(), av.cols(), bv.cols());
                    accumulate(&mut grads[a.0], av.shape(), |d| {
                        kernels::matmul_nt_acc(g.data(), bv.data(), m, nn, k, d)
                    });
                    accumulate(&mut grads[b.0], bv.shape(), |d| {
                        kernels::matmul_tn_acc(av.data(), g.data(), m, k, nn, d)
                    });
                }
                Op::Add(a, b) => {
                    for p in [a, b] {
                        accumulate(&mut grads[p.0], g.shape(), |d| add_into(d, g.data()));
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.shape(), |d| add_into(d, g.data()));
                    accumulate(&mut grads[b.0], g.shape(), |d| {
                        for (x, y) in d.iter_mut().zip(g.data()) {
                            *x -= *y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads[a.0], av.shape(), |d| {
                        for ((x, y), z) in d.iter_mut().zip(g.data()).zip(bv.data()) {
                            *x += *y * *z;
                        }
                    });
                    accumulate(&mut grads[b.0], bv.shape(), |d| {
                        for ((x, y), z) in d.iter_mut().zip(g.data()).zip(av.data()) {
                            *x += *y * *z;
                        }
                    });
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads[x.0], g.shape(), |d| add_into(d, g.data()));
                    let rv = self.value(*row);
                    let cols = rv.len();
                    accumulate(&mut grads[row.0], rv.shape(), |d| {
                        for chunk in g.data().chunks_exact(cols) {
                            add_into(d, chunk);
                        }
                    });
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads[x.0], g.shape(), |d| {
                        for (a, b) in d.iter_mut().zip(g.data()) {
                            *a += *b * *s;
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    accumulate(&mut grads[x.0], g.shape(), |d| {
                        for ((a, b), t) in d.iter_mut().zip(g.data()).zip(y.data()) {
                            *a += *b * (T::ONE - *t * *t);
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads[x.0], g.shape(), |d| {
                        for ((a, b), v) in d.iter_mut().zip(g.data()).zip(xv.data()) {
                            *a += *b * kernels::gelu_grad(*v);
                        }
                    });
                }
                Op::LayerNorm(x, inv) => {
                    let cols = node.value.cols();
                    accumulate(&mut grads[x.0], g.shape(), |d| {
                        kernels::layer_norm_rows_grad(node.value.data(), g.data(), inv, cols, d)
                    });
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        accumulate(&mut grads[p.0], pv.shape(), |d| {
                            for r in 0..rows {
                                add_into(
                                    &mut d[r * c..(r + 1) * c],
                                    &g.data()[r * total + offset..r * total + offset + c],
                                );
                            }
                        });
                        offset += c;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let (rows, cols, w) = (xv.rows(), xv.cols(), g.cols());
                    accumulate(&mut grads[x.0], xv.shape(), |d| {
                        for r in 0..rows {
                            add_into(
                                &mut d[r * cols + start..r * cols + start + w],
                                &g.data()[r * w..(r + 1) * w],
                            );
                        }
                    });
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |d| d.iter_mut().for_each(|a| *a += s));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let s = g.data()[0] / T::from_f64(xv.len() as f64);
                    accumulate(&mut grads[x.0], xv.shape(), |d| d.iter_mut().for_each(|a| *a += s));
                }
                Op::SquaredNorm(x) => {
                    let xv = self.value(*x);
                    let s = g.data()[0] + g.data()[0];
                    accumulate(&mut grads[x.0], xv.shape(), |d| {
                        for (a, v) in d.iter_mut().zip(xv.data()) {
                            *a += s * *v;
                        }
                    });
                }
            }
            grads[i] = Some(g);
        }

        if let Some(bad) = grads.iter().flatten().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of shape {:?}", bad.shape())));
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}
