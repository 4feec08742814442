//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse, accumulating adjoints with the chain rule.
//! Values are 2-D (`rows x cols`); rank-1 tensors act as single rows.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x . w^T + b` with `x: n x in`, `w: out x in`, `b: out`.
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SliceCols { a: Var, start: usize },
    ConcatCols(Var, Var),
    /// Row sums, `n x m -> n x 1`.
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one scalar output.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn mat(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("graph op produced consistent shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Inserts an input or parameter. Leaves are the only nodes whose
    /// gradients callers usually read.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).dims2(), self.value(b).dims2());
        if sa != sb {
            return Err(Error::shape(op, format!("{:?}", sa), format!("{:?}", sb)));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = va.shape().to_vec();
        self.push(mat(&shape, data), op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push(mat(&shape, data), op)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, din) = self.value(x).dims2();
        let w_shape = self.value(w).shape().to_vec();
        let (dout, win) = match w_shape.as_slice() {
            [o, i] => (*o, *i),
            _ => return Err(Error::shape("linear weight", "rank-2", format!("{:?}", w_shape))),
        };
        if win != din {
            return Err(Error::shape("linear input", win, din));
        }
        if self.value(b).len() != dout {
            return Err(Error::shape("linear bias", dout, self.value(b).len()));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * dout];
        for r in 0..n {
            let xr = &xv[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                let mut acc = bv[o];
                for k in 0..din {
                    acc += xr[k] * wr[k];
                }
                out[r * dout + o] = acc;
            }
        }
        Ok(self.push(mat(&[n, dout], out), Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        if start >= end || end > m {
            return Err(Error::shape("slice_cols", format!("range within 0..{m}"), format!("{start}..{end}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&src[r * m + start..r * m + end]);
        }
        Ok(self.push(mat(&[n, w], out), Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ma) = self.value(a).dims2();
        let (nb, mb) = self.value(b).dims2();
        if na != nb {
            return Err(Error::shape("concat_cols rows", na, nb));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (ma + mb));
        for r in 0..na {
            out.extend_from_slice(&da[r * ma..(r + 1) * ma]);
            out.extend_from_slice(&db[r * mb..(r + 1) * mb]);
        }
        Ok(self.push(mat(&[na, ma + mb], out), Op::ConcatCols(a, b)))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).data();
        let out = (0..n).map(|r| src[r * m..(r + 1) * m].iter().sum()).collect();
        self.push(mat(&[n, 1], out), Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (n, din) = self.value(x).dims2();
                    let dout = self.value(b).len();
                    let (xv, wv) = (self.value(x).data(), self.value(w).data());
                    {
                        let gx = acc(&mut grads, x, n * din);
                        for r in 0..n {
                            for o in 0..dout {
                                let go = g[r * dout + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &wv[o * din..(o + 1) * din];
                                let gxr = &mut gx[r * din..(r + 1) * din];
                                for k in 0..din {
                                    gxr[k] += go * wr[k];
                                }
                            }
                        }
                    }
                    {
                        let gw = acc(&mut grads, w, dout * din);
                        for r in 0..n {
                            let xr = &xv[r * din..(r + 1) * din];
                            for o in 0..dout {
                                let go = g[r * dout + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let gwr = &mut gw[o * din..(o + 1) * din];
                                for k in 0..din {
                                    gwr[k] += go * xr[k];
                                }
                            }
                        }
                    }
                    let gb = acc(&mut grads, b, dout);
                    for r in 0..n {
                        for o in 0..dout {
                            gb[o] += g[r * dout + o];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, _| gi);
                    add_into(acc(&mut grads, b, g.len()), &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, _| gi);
                    add_into(acc(&mut grads, b, g.len()), &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a).data(), self.value(b).data());
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, k| gi * vb[k]);
                    add_into(acc(&mut grads, b, g.len()), &g, |gi, k| gi * va[k]);
                }
                Op::Scale(a, c) => add_into(acc(&mut grads, a, g.len()), &g, |gi, _| gi * c),
                Op::AddScalar(a) => add_into(acc(&mut grads, a, g.len()), &g, |gi, _| gi),
                Op::Tanh(a) => add_into(acc(&mut grads, a, g.len()), &g, |gi, k| gi * (1.0 - y[k] * y[k])),
                Op::Relu(a) => {
                    let va = self.value(a).data();
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, k| if va[k] > 0.0 { gi } else { 0.0 })
                }
                Op::Exp(a) => add_into(acc(&mut grads, a, g.len()), &g, |gi, k| gi * y[k]),
                Op::Log(a) => {
                    let va = self.value(a).data();
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, k| gi / va[k])
                }
                // Subgradient 0 at the origin keeps distances of coincident points finite.
                Op::Sqrt(a) => add_into(acc(&mut grads, a, g.len()), &g, |gi, k| {
                    if y[k] > 0.0 {
                        gi * 0.5 / y[k]
                    } else {
                        0.0
                    }
                }),
                Op::Square(a) => {
                    let va = self.value(a).data();
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, k| gi * 2.0 * va[k])
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(a).data();
                    add_into(acc(&mut grads, a, g.len()), &g, |gi, k| {
                        if va[k] < lo || va[k] > hi {
                            0.0
                        } else {
                            gi
                        }
                    })
                }
                Op::SliceCols { a, start } => {
                    let (n, m) = self.value(a).dims2();
                    let w = g.len() / n;
                    let ga = acc(&mut grads, a, n * m);
                    for r in 0..n {
                        for c in 0..w {
                            ga[r * m + start + c] += g[r * w + c];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, ma) = self.value(a).dims2();
                    let mb = self.value(b).dims2().1;
                    {
                        let ga = acc(&mut grads, a, n * ma);
                        for r in 0..n {
                            for c in 0..ma {
                                ga[r * ma + c] += g[r * (ma + mb) + c];
                            }
                        }
                    }
                    let gb = acc(&mut grads, b, n * mb);
                    for r in 0..n {
                        for c in 0..mb {
                            gb[r * mb + c] += g[r * (ma + mb) + ma + c];
                        }
                    }
                }
                Op::SumCols(a) => {
                    let (n, m) = self.value(a).dims2();
                    let ga = acc(&mut grads, a, n * m);
                    for r in 0..n {
                        for c in 0..m {
                            ga[r * m + c] += g[r];
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(a).len();
                    acc(&mut grads, a, len).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.value(a).len();
                    let s = g[0] / len as f64;
                    acc(&mut grads, a, len).iter_mut().for_each(|v| *v += s);
                }
            }
            // Leaves keep their adjoint; interior nodes are released as we go.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn add_into(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (k, d) in dst.iter_mut().enumerate() {
        *d += f(g[k], k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient() {
        // loss = sum(W x), x = [1, 1] -> dW = [[1, 1]]
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let w = g.leaf(Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap());
        let b = g.leaf(Tensor::vector(vec![0.0]));
        let y = g.linear(x, w, b).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).data(), &[1.0, 1.0]);
        assert_eq!(grads.wrt(b).data(), &[1.0]);
    }

    #[test]
    fn quadratic_matches_analytic() {
        // ||Wx - y||^2 -> 2 (Wx - y) x^T
        let mut g = Graph::new();
        let xs = [0.5, -1.5, 2.0];
        let wv = vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6];
        let ys = [1.0, -2.0];
        let x = g.leaf(Tensor::vector(xs.to_vec()));
        let w = g.leaf(Tensor::matrix(2, 3, wv.clone()).unwrap());
        let b = g.leaf(Tensor::vector(vec![0.0, 0.0]));
        let t = g.leaf(Tensor::matrix(1, 2, ys.to_vec()).unwrap());
        let wx = g.linear(x, w, b).unwrap();
        let r = g.sub(wx, t).unwrap();
        let sq = g.square(r);
        let loss = g.sum(sq);
        let dw = g.backward(loss).unwrap().wrt(w);
        for o in 0..2 {
            let res: f64 = (0..3).map(|k| wv[o * 3 + k] * xs[k]).sum::<f64>() - ys[o];
            for k in 0..3 {
                let expect = 2.0 * res * xs[k];
                assert!((dw.data()[o * 3 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.leaf(Tensor::vector(vec![3.0]));
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(unused).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let t = g.tanh(a);
        assert!(matches!(g.backward(t), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        assert!(g.slice_cols(a, 1, 3).is_err());
    }

    #[test]
    fn sqrt_at_zero_has_finite_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![0.0, 4.0]));
        let s = g.sqrt(a);
        let loss = g.sum(s);
        let ga = g.backward(loss).unwrap().wrt(a);
        assert_eq!(ga.data(), &[0.0, 0.25]);
    }
}
