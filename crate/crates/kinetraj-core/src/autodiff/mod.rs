//! Minimal reverse-mode automatic differentiation on a tape of tensor nodes.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only
//! list; parents always precede children, so one reverse sweep over the list
//! visits nodes in reverse topological order exactly once. Nodes hold flat
//! row-major value buffers plus a shape; gradients are materialized with the
//! same shapes by [`Tape::backward`].
//!
//! The op set is the closed vocabulary the encoders, decoder, motion-model
//! rollouts and loss surrogates are written in: elementwise arithmetic and
//! nonlinearities, fused linear/matmul/attention-softmax/layernorm, a strided
//! convolution, shape plumbing (concat/slice/stack/index), and an
//! external-gradient node for differentiable lookups whose Jacobian is known
//! at forward time (bilinear field sampling).

use std::cell::RefCell;
use std::rc::Rc;

use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

impl Value {
    pub fn id(self) -> usize {
        self.0
    }
}

struct Node<T> {
    values: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    AddN(Vec<usize>),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, T),
    Sin(usize),
    Cos(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Sqrt(usize),
    Sum(usize),
    /// out = value computed outside the tape; backward adds weight * out_grad
    /// to each listed scalar parent.
    ExternalGrad(Vec<(usize, T)>),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        m: usize,
        k: usize,
        n: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    SoftmaxRows {
        x: usize,
        m: usize,
        n: usize,
    },
    LayerNormRows {
        x: usize,
        gain: usize,
        bias: usize,
        m: usize,
        n: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
        m: usize,
        widths: Vec<usize>,
    },
    ConcatFlat(Vec<usize>),
    SliceCols {
        x: usize,
        n: usize,
        start: usize,
        len: usize,
    },
    Index {
        x: usize,
        at: usize,
    },
    StackRows {
        parts: Vec<usize>,
        n: usize,
    },
    Row {
        x: usize,
        n: usize,
        at: usize,
    },
    MaskedMeanRows {
        x: usize,
        n: usize,
        mask: Rc<Vec<bool>>,
    },
    Conv2d {
        x: usize,
        kernel: usize,
        bias: usize,
        ci: usize,
        hi: usize,
        wi: usize,
        co: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool {
        x: usize,
        c: usize,
        h: usize,
        w: usize,
    },
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Value) -> &[T] {
        &self.grads[v.0]
    }
}

/// Append-only record of a differentiable forward computation.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, values: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Value {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { values, shape, op });
        Value(nodes.len() - 1)
    }

    /// Differentiable input (parameter or constant).
    pub fn leaf(&self, values: Vec<T>, shape: Vec<usize>) -> Value {
        self.push(values, shape, Op::Leaf)
    }

    pub fn scalar_leaf(&self, v: T) -> Value {
        self.leaf(vec![v], vec![1])
    }

    pub fn shape(&self, v: Value) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value_vec(&self, v: Value) -> Vec<T> {
        self.nodes.borrow()[v.0].values.clone()
    }

    /// The single element of a scalar node.
    pub fn scalar(&self, v: Value) -> T {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].values.len(), 1, "scalar() on non-scalar node");
        nodes[v.0].values[0]
    }

    fn unary(&self, x: Value, op: impl Fn(usize) -> Op<T>, f: impl Fn(T) -> T) -> Value {
        let (values, shape) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.values.iter().map(|&v| f(v)).collect::<Vec<_>>(), n.shape.clone())
        };
        self.push(values, shape, op(x.0))
    }

    fn zip(&self, a: Value, b: Value, op: Op<T>, f: impl Fn(T, T) -> T) -> Value {
        let (values, shape) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "elementwise op shape mismatch");
            let values = na
                .values
                .iter()
                .zip(&nb.values)
                .map(|(&x, &y)| f(x, y))
                .collect::<Vec<_>>();
            (values, na.shape.clone())
        };
        self.push(values, shape, op)
    }

    pub fn add(&self, a: Value, b: Value) -> Value {
        self.zip(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    /// Elementwise sum of several same-shaped values.
    pub fn add_n(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "add_n of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let (values, shape) = {
            let nodes = self.nodes.borrow();
            let shape = nodes[parts[0].0].shape.clone();
            let mut values = nodes[parts[0].0].values.clone();
            for p in &parts[1..] {
                assert_eq!(nodes[p.0].shape, shape, "add_n shape mismatch");
                for (acc, &v) in values.iter_mut().zip(&nodes[p.0].values) {
                    *acc += v;
                }
            }
            (values, shape)
        };
        self.push(values, shape, Op::AddN(parts.iter().map(|p| p.0).collect()))
    }

    pub fn sub(&self, a: Value, b: Value) -> Value {
        self.zip(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&self, a: Value, b: Value) -> Value {
        self.zip(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn div(&self, a: Value, b: Value) -> Value {
        self.zip(a, b, Op::Div(a.0, b.0), |x, y| x / y)
    }

    pub fn neg(&self, x: Value) -> Value {
        self.unary(x, Op::Neg, |v| -v)
    }

    pub fn add_scalar(&self, x: Value, c: T) -> Value {
        self.unary(x, Op::AddScalar, |v| v + c)
    }

    pub fn mul_scalar(&self, x: Value, c: T) -> Value {
        self.unary(x, |p| Op::MulScalar(p, c), |v| v * c)
    }

    pub fn sin(&self, x: Value) -> Value {
        self.unary(x, Op::Sin, |v| v.sin())
    }

    pub fn cos(&self, x: Value) -> Value {
        self.unary(x, Op::Cos, |v| v.cos())
    }

    pub fn tanh(&self, x: Value) -> Value {
        self.unary(x, Op::Tanh, |v| v.tanh())
    }

    pub fn sigmoid(&self, x: Value) -> Value {
        self.unary(x, Op::Sigmoid, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn relu(&self, x: Value) -> Value {
        self.unary(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sqrt(&self, x: Value) -> Value {
        self.unary(x, Op::Sqrt, |v| v.sqrt())
    }

    pub fn sum(&self, x: Value) -> Value {
        let total = {
            let nodes = self.nodes.borrow();
            nodes[x.0].values.iter().fold(T::zero(), |acc, &v| acc + v)
        };
        self.push(vec![total], vec![1], Op::Sum(x.0))
    }

    pub fn mean(&self, x: Value) -> Value {
        let len = self.nodes.borrow()[x.0].values.len();
        let s = self.sum(x);
        self.mul_scalar(s, T::from_f64(1.0 / len as f64))
    }

    /// Scalar with an externally supplied value and Jacobian: backward adds
    /// `weight * out_grad` to each scalar parent.
    pub fn external_scalar(&self, value: T, parents: &[(Value, T)]) -> Value {
        let ps = parents.iter().map(|&(v, w)| (v.0, w)).collect();
        self.push(vec![value], vec![1], Op::ExternalGrad(ps))
    }

    fn rows_cols(shape: &[usize]) -> (usize, usize) {
        match shape.len() {
            0 => (0, 0),
            1 => (1, shape[0]),
            _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
        }
    }

    /// x[.., k] -> x . w^T + b, with w[n, k] and optional b[n]. The output
    /// keeps the input's leading shape with the last dim replaced by n.
    pub fn linear(&self, x: Value, w: Value, b: Option<Value>) -> Value {
        let (values, shape, m, k, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let nw = &nodes[w.0];
            assert_eq!(nw.shape.len(), 2, "weight must be [n, k]");
            let (m, k) = Self::rows_cols(&nx.shape);
            let n = nw.shape[0];
            assert_eq!(nw.shape[1], k, "linear: weight k != input k");
            let bias = b.map(|b| nodes[b.0].values.clone());
            if let Some(bias) = &bias {
                assert_eq!(bias.len(), n, "linear: bias width");
            }
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let xi = &nx.values[i * k..(i + 1) * k];
                let oi = &mut out[i * n..(i + 1) * n];
                for (j, o) in oi.iter_mut().enumerate() {
                    let wj = &nw.values[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for (xv, wv) in xi.iter().zip(wj) {
                        acc += *xv * *wv;
                    }
                    *o = acc + bias.as_ref().map_or(T::zero(), |bv| bv[j]);
                }
            }
            let mut shape = nx.shape.clone();
            *shape.last_mut().unwrap() = n;
            (out, shape, m, k, n)
        };
        self.push(values, shape, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0), m, k, n })
    }

    /// a[m, k] . b[k, n] -> [m, n].
    pub fn matmul(&self, a: Value, b: Value) -> Value {
        let (values, m, k, n) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let nb = &nodes[b.0];
            let (m, k) = Self::rows_cols(&na.shape);
            assert_eq!(nb.shape.len(), 2, "matmul rhs must be 2-d");
            assert_eq!(nb.shape[0], k, "matmul inner dim");
            let n = nb.shape[1];
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                for kk in 0..k {
                    let av = na.values[i * k + kk];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &nb.values[kk * n..(kk + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            (out, m, k, n)
        };
        self.push(values, vec![m, n], Op::MatMul { a: a.0, b: b.0, m, k, n })
    }

    /// Row-wise softmax; with a key mask, masked columns get probability 0
    /// and a fully masked row stays all-zero.
    pub fn softmax_rows(&self, x: Value, mask: Option<Rc<Vec<bool>>>) -> Value {
        let (values, shape, m, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let (m, n) = Self::rows_cols(&nx.shape);
            if let Some(mask) = &mask {
                assert_eq!(mask.len(), n, "softmax mask width");
            }
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let row = &nx.values[i * n..(i + 1) * n];
                let valid = |j: usize| mask.as_ref().map_or(true, |mk| mk[j]);
                let mut mx = T::neg_infinity();
                for (j, &v) in row.iter().enumerate() {
                    if valid(j) && v > mx {
                        mx = v;
                    }
                }
                if mx == T::neg_infinity() {
                    continue;
                }
                let mut denom = T::zero();
                for (j, &v) in row.iter().enumerate() {
                    if valid(j) {
                        let e = (v - mx).exp();
                        out[i * n + j] = e;
                        denom += e;
                    }
                }
                for j in 0..n {
                    out[i * n + j] = out[i * n + j] / denom;
                }
            }
            (out, nx.shape.clone(), m, n)
        };
        self.push(values, shape, Op::SoftmaxRows { x: x.0, m, n })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layernorm_rows(&self, x: Value, gain: Value, bias: Value) -> Value {
        let eps = T::from_f64(1e-5);
        let (values, shape, m, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let (m, n) = Self::rows_cols(&nx.shape);
            let g = &nodes[gain.0].values;
            let b = &nodes[bias.0].values;
            assert_eq!(g.len(), n, "layernorm gain width");
            assert_eq!(b.len(), n, "layernorm bias width");
            let inv_n = T::from_f64(1.0 / n as f64);
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let row = &nx.values[i * n..(i + 1) * n];
                let mut mean = T::zero();
                for &v in row {
                    mean += v;
                }
                mean = mean * inv_n;
                let mut var = T::zero();
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var * inv_n;
                let inv_std = T::one() / (var + eps).sqrt();
                for j in 0..n {
                    out[i * n + j] = (row[j] - mean) * inv_std * g[j] + b[j];
                }
            }
            (out, nx.shape.clone(), m, n)
        };
        self.push(values, shape, Op::LayerNormRows { x: x.0, gain: gain.0, bias: bias.0, m, n })
    }

    /// Concatenate along the last dim; all parts share the leading shape.
    pub fn concat_cols(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty());
        let (values, shape, m, widths) = {
            let nodes = self.nodes.borrow();
            let (m, _) = Self::rows_cols(&nodes[parts[0].0].shape);
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| {
                    let (pm, pn) = Self::rows_cols(&nodes[p.0].shape);
                    assert_eq!(pm, m, "concat_cols row mismatch");
                    pn
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut out = vec![T::zero(); m * total];
            for i in 0..m {
                let mut off = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let src = &nodes[p.0].values[i * w..(i + 1) * w];
                    out[i * total + off..i * total + off + w].copy_from_slice(src);
                    off += w;
                }
            }
            let mut shape = nodes[parts[0].0].shape.clone();
            *shape.last_mut().unwrap() = total;
            if shape.len() == 1 {
                shape = vec![total];
            }
            (out, shape, m, widths)
        };
        self.push(values, shape, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect(), m, widths })
    }

    /// Concatenate arbitrary values into one flat vector.
    pub fn concat_flat(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty());
        let values = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::new();
            for p in parts {
                out.extend_from_slice(&nodes[p.0].values);
            }
            out
        };
        let len = values.len();
        self.push(values, vec![len], Op::ConcatFlat(parts.iter().map(|p| p.0).collect()))
    }

    /// Columns [start, start+len) of every row.
    pub fn slice_cols(&self, x: Value, start: usize, len: usize) -> Value {
        let (values, shape, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let (m, n) = Self::rows_cols(&nx.shape);
            assert!(start + len <= n, "slice_cols out of range");
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&nx.values[i * n + start..i * n + start + len]);
            }
            let mut shape = nx.shape.clone();
            *shape.last_mut().unwrap() = len;
            (out, shape, n)
        };
        self.push(values, shape, Op::SliceCols { x: x.0, n, start, len })
    }

    /// Scalar element at flat index `at`.
    pub fn index(&self, x: Value, at: usize) -> Value {
        let v = self.nodes.borrow()[x.0].values[at];
        self.push(vec![v], vec![1], Op::Index { x: x.0, at })
    }

    /// Stack equal-width vectors as rows of a matrix.
    pub fn stack_rows(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty());
        let (values, n) = {
            let nodes = self.nodes.borrow();
            let n = nodes[parts[0].0].values.len();
            let mut out = Vec::with_capacity(parts.len() * n);
            for p in parts {
                assert_eq!(nodes[p.0].values.len(), n, "stack_rows width mismatch");
                out.extend_from_slice(&nodes[p.0].values);
            }
            (out, n)
        };
        self.push(values, vec![parts.len(), n], Op::StackRows { parts: parts.iter().map(|p| p.0).collect(), n })
    }

    /// Row `at` of a matrix as a vector.
    pub fn row(&self, x: Value, at: usize) -> Value {
        let (values, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let (m, n) = Self::rows_cols(&nx.shape);
            assert!(at < m, "row out of range");
            (nx.values[at * n..(at + 1) * n].to_vec(), n)
        };
        self.push(values, vec![n], Op::Row { x: x.0, n, at })
    }

    /// Mean over the rows marked valid; panics if none are.
    pub fn masked_mean_rows(&self, x: Value, mask: Rc<Vec<bool>>) -> Value {
        let (values, n) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let (m, n) = Self::rows_cols(&nx.shape);
            assert_eq!(mask.len(), m, "masked_mean_rows mask length");
            let count = mask.iter().filter(|&&v| v).count();
            assert!(count > 0, "masked_mean_rows with empty mask");
            let inv = T::from_f64(1.0 / count as f64);
            let mut out = vec![T::zero(); n];
            for i in 0..m {
                if mask[i] {
                    for j in 0..n {
                        out[j] += nx.values[i * n + j];
                    }
                }
            }
            for o in &mut out {
                *o = *o * inv;
            }
            (out, n)
        };
        self.push(values, vec![n], Op::MaskedMeanRows { x: x.0, n, mask })
    }

    /// 2-d convolution over [ci, h, w] with kernel [co, ci, ks, ks].
    pub fn conv2d(&self, x: Value, kernel: Value, bias: Value, stride: usize, pad: usize) -> Value {
        let (values, co, ho, wo, ci, hi, wi, ksize) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let nk = &nodes[kernel.0];
            assert_eq!(nx.shape.len(), 3, "conv input must be [c, h, w]");
            assert_eq!(nk.shape.len(), 4, "conv kernel must be [co, ci, k, k]");
            let (ci, hi, wi) = (nx.shape[0], nx.shape[1], nx.shape[2]);
            let (co, kci, ksize) = (nk.shape[0], nk.shape[1], nk.shape[2]);
            assert_eq!(kci, ci, "conv channel mismatch");
            assert_eq!(nk.shape[3], ksize, "conv kernel must be square");
            let bias_v = &nodes[bias.0].values;
            assert_eq!(bias_v.len(), co, "conv bias width");
            let ho = (hi + 2 * pad - ksize) / stride + 1;
            let wo = (wi + 2 * pad - ksize) / stride + 1;
            let mut out = vec![T::zero(); co * ho * wo];
            for oc in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias_v[oc];
                        for ic in 0..ci {
                            for ky in 0..ksize {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= hi as isize {
                                    continue;
                                }
                                for kx in 0..ksize {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wi as isize {
                                        continue;
                                    }
                                    let xv = nx.values[ic * hi * wi + iy as usize * wi + ix as usize];
                                    let kv = nk.values[((oc * ci + ic) * ksize + ky) * ksize + kx];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out[oc * ho * wo + oy * wo + ox] = acc;
                    }
                }
            }
            (out, co, ho, wo, ci, hi, wi, ksize)
        };
        self.push(
            values,
            vec![co, ho, wo],
            Op::Conv2d { x: x.0, kernel: kernel.0, bias: bias.0, ci, hi, wi, co, ksize, stride, pad },
        )
    }

    /// Mean over the spatial dims of [c, h, w] -> [c].
    pub fn global_avg_pool(&self, x: Value) -> Value {
        let (values, c, h, w) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            assert_eq!(nx.shape.len(), 3, "pool input must be [c, h, w]");
            let (c, h, w) = (nx.shape[0], nx.shape[1], nx.shape[2]);
            let inv = T::from_f64(1.0 / (h * w) as f64);
            let mut out = vec![T::zero(); c];
            for (ch, o) in out.iter_mut().enumerate() {
                let plane = &nx.values[ch * h * w..(ch + 1) * h * w];
                let mut acc = T::zero();
                for &v in plane {
                    acc += v;
                }
                *o = acc * inv;
            }
            (out, c, h, w)
        };
        self.push(values, vec![c], Op::GlobalAvgPool { x: x.0, c, h, w })
    }

    /// Reverse sweep from a scalar node; returns gradients for every node.
    pub fn backward(&self, loss: Value) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].values.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Vec<T>> = nodes.iter().map(|n| vec![T::zero(); n.values.len()]).collect();
        grads[loss.0][0] = T::one();
        for i in (0..nodes.len()).rev() {
            let (before, rest) = grads.split_at_mut(i);
            let gout = std::mem::take(&mut rest[0]);
            backward_op(&nodes, i, &gout, before);
            rest[0] = gout;
        }
        Gradients { grads }
    }
}

fn backward_op<T: Scalar>(nodes: &[Node<T>], id: usize, gout: &[T], grads: &mut [Vec<T>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] += g;
                grads[*b][i] += g;
            }
        }
        Op::AddN(parts) => {
            for p in parts {
                for (i, &g) in gout.iter().enumerate() {
                    grads[*p][i] += g;
                }
            }
        }
        Op::Sub(a, b) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] += g;
                grads[*b][i] -= g;
            }
        }
        Op::Mul(a, b) => {
            for i in 0..gout.len() {
                let g = gout[i];
                grads[*a][i] += g * nodes[*b].values[i];
                grads[*b][i] += g * nodes[*a].values[i];
            }
        }
        Op::Div(a, b) => {
            for i in 0..gout.len() {
                let g = gout[i];
                let bv = nodes[*b].values[i];
                grads[*a][i] += g / bv;
                grads[*b][i] -= g * nodes[*a].values[i] / (bv * bv);
            }
        }
        Op::Neg(a) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] -= g;
            }
        }
        Op::AddScalar(a) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] += g;
            }
        }
        Op::MulScalar(a, c) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] += g * *c;
            }
        }
        Op::Sin(a) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] += g * nodes[*a].values[i].cos();
            }
        }
        Op::Cos(a) => {
            for (i, &g) in gout.iter().enumerate() {
                grads[*a][i] -= g * nodes[*a].values[i].sin();
            }
        }
        Op::Tanh(a) => {
            for (i, &g) in gout.iter().enumerate() {
                let y = nodes[id].values[i];
                grads[*a][i] += g * (T::one() - y * y);
            }
        }
        Op::Sigmoid(a) => {
            for (i, &g) in gout.iter().enumerate() {
                let y = nodes[id].values[i];
                grads[*a][i] += g * y * (T::one() - y);
            }
        }
        Op::Relu(a) => {
            for (i, &g) in gout.iter().enumerate() {
                if nodes[*a].values[i] > T::zero() {
                    grads[*a][i] += g;
                }
            }
        }
        Op::Sqrt(a) => {
            for (i, &g) in gout.iter().enumerate() {
                let y = nodes[id].values[i];
                grads[*a][i] += g / (y + y);
            }
        }
        Op::Sum(a) => {
            let g = gout[0];
            for v in grads[*a].iter_mut() {
                *v += g;
            }
        }
        Op::ExternalGrad(parents) => {
            let g = gout[0];
            for (p, w) in parents {
                grads[*p][0] += g * *w;
            }
        }
        Op::Linear { x, w, b, m, k, n } => {
            let xv = &nodes[*x].values;
            let wv = &nodes[*w].values;
            for i in 0..*m {
                let gi = &gout[i * n..(i + 1) * n];
                for (j, &g) in gi.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let wj = &wv[j * k..(j + 1) * k];
                    let gx = &mut grads[*x][i * k..(i + 1) * k];
                    for (gxv, &wvv) in gx.iter_mut().zip(wj) {
                        *gxv += g * wvv;
                    }
                    let xi = &xv[i * k..(i + 1) * k];
                    let gw = &mut grads[*w][j * k..(j + 1) * k];
                    for (gwv, &xvv) in gw.iter_mut().zip(xi) {
                        *gwv += g * xvv;
                    }
                    if let Some(b) = b {
                        grads[*b][j] += g;
                    }
                }
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let av = &nodes[*a].values;
            let bv = &nodes[*b].values;
            for i in 0..*m {
                let gi = &gout[i * n..(i + 1) * n];
                for kk in 0..*k {
                    let brow = &bv[kk * n..(kk + 1) * n];
                    let mut acc = T::zero();
                    for (gv, &bvv) in gi.iter().zip(brow) {
                        acc += *gv * bvv;
                    }
                    grads[*a][i * k + kk] += acc;
                    let avv = av[i * k + kk];
                    if avv != T::zero() {
                        let gb = &mut grads[*b][kk * n..(kk + 1) * n];
                        for (gbv, &gv) in gb.iter_mut().zip(gi) {
                            *gbv += avv * gv;
                        }
                    }
                }
            }
        }
        Op::SoftmaxRows { x, m, n } => {
            // dx = y * (g - sum(g * y)); masked columns have y = 0.
            let y = &nodes[id].values;
            for i in 0..*m {
                let yi = &y[i * n..(i + 1) * n];
                let gi = &gout[i * n..(i + 1) * n];
                let mut dot = T::zero();
                for (gv, yv) in gi.iter().zip(yi) {
                    dot += *gv * *yv;
                }
                let gx = &mut grads[*x][i * n..(i + 1) * n];
                for j in 0..*n {
                    gx[j] += yi[j] * (gi[j] - dot);
                }
            }
        }
        Op::LayerNormRows { x, gain, bias, m, n } => {
            let eps = T::from_f64(1e-5);
            let xv = &nodes[*x].values;
            let gv = &nodes[*gain].values;
            let inv_n = T::from_f64(1.0 / *n as f64);
            for i in 0..*m {
                let row = &xv[i * n..(i + 1) * n];
                let gi = &gout[i * n..(i + 1) * n];
                let mut mean = T::zero();
                for &v in row {
                    mean += v;
                }
                mean = mean * inv_n;
                let mut var = T::zero();
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var * inv_n;
                let inv_std = T::one() / (var + eps).sqrt();
                let mut sum_gp = T::zero();
                let mut sum_gpx = T::zero();
                for j in 0..*n {
                    let xhat = (row[j] - mean) * inv_std;
                    let gp = gi[j] * gv[j];
                    sum_gp += gp;
                    sum_gpx += gp * xhat;
                    grads[*gain][j] += gi[j] * xhat;
                    grads[*bias][j] += gi[j];
                }
                for j in 0..*n {
                    let xhat = (row[j] - mean) * inv_std;
                    let gp = gi[j] * gv[j];
                    grads[*x][i * n + j] += inv_std * (gp - inv_n * (sum_gp + xhat * sum_gpx));
                }
            }
        }
        Op::ConcatCols { parts, m, widths } => {
            let total: usize = widths.iter().sum();
            for i in 0..*m {
                let mut off = 0;
                for (p, &w) in parts.iter().zip(widths) {
                    for j in 0..w {
                        grads[*p][i * w + j] += gout[i * total + off + j];
                    }
                    off += w;
                }
            }
        }
        Op::ConcatFlat(parts) => {
            let mut off = 0;
            for p in parts {
                let len = grads[*p].len();
                for j in 0..len {
                    grads[*p][j] += gout[off + j];
                }
                off += len;
            }
        }
        Op::SliceCols { x, n, start, len } => {
            let m = gout.len() / len;
            for i in 0..m {
                for j in 0..*len {
                    grads[*x][i * n + start + j] += gout[i * len + j];
                }
            }
        }
        Op::Index { x, at } => {
            grads[*x][*at] += gout[0];
        }
        Op::StackRows { parts, n } => {
            for (i, p) in parts.iter().enumerate() {
                for j in 0..*n {
                    grads[*p][j] += gout[i * n + j];
                }
            }
        }
        Op::Row { x, n, at } => {
            for j in 0..*n {
                grads[*x][at * n + j] += gout[j];
            }
        }
        Op::MaskedMeanRows { x, n, mask } => {
            let count = mask.iter().filter(|&&v| v).count();
            let inv = T::from_f64(1.0 / count as f64);
            for (i, &valid) in mask.iter().enumerate() {
                if valid {
                    for j in 0..*n {
                        grads[*x][i * n + j] += gout[j] * inv;
                    }
                }
            }
        }
        Op::Conv2d { x, kernel, bias, ci, hi, wi, co, ksize, stride, pad } => {
            let xv = &nodes[*x].values;
            let kv = &nodes[*kernel].values;
            let ho = (hi + 2 * pad - ksize) / stride + 1;
            let wo = (wi + 2 * pad - ksize) / stride + 1;
            for oc in 0..*co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gout[oc * ho * wo + oy * wo + ox];
                        if g == T::zero() {
                            continue;
                        }
                        grads[*bias][oc] += g;
                        for ic in 0..*ci {
                            for ky in 0..*ksize {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= *hi as isize {
                                    continue;
                                }
                                for kx in 0..*ksize {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= *wi as isize {
                                        continue;
                                    }
                                    let xi = ic * hi * wi + iy as usize * wi + ix as usize;
                                    let kidx = ((oc * ci + ic) * ksize + ky) * ksize + kx;
                                    grads[*kernel][kidx] += g * xv[xi];
                                    grads[*x][xi] += g * kv[kidx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::GlobalAvgPool { x, c, h, w } => {
            let inv = T::from_f64(1.0 / (h * w) as f64);
            for ch in 0..*c {
                let g = gout[ch] * inv;
                for v in grads[*x][ch * h * w..(ch + 1) * h * w].iter_mut() {
                    *v += g;
                }
            }
        }
    }
}
