//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Parameters enter as borrowed leaves so a forward pass never copies weights.
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because inputs always precede their consumers.

use std::borrow::Cow;
use std::f64::consts::PI;

use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Destination of one encoder row inside a batched social tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPlacement {
    pub batch: usize,
    pub row: usize,
    pub col: usize,
    /// Row of the source matrix holding the encoded vehicle.
    pub source: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    LeakyRelu(Var, f64),
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    ScatterGrid { x: Var, placements: Vec<GridPlacement> },
    Conv2d(Var, Var),
    ChannelBias(Var, Var),
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    PickCols { x: Var, cols: Vec<usize> },
    GaussianHead { x: Var, scale: f64 },
    BivariateNll { params: Var, truth: Var },
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required one and was reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// 4-d view `(n, c, h, w)` of a rank-3 or rank-4 tensor.
/// Shapes of a valid, stride-1 convolution over `n×ci×h×w` with `kh×kw` kernels.
struct ConvGeometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeometry {
    fn out_hw(&self) -> (usize, usize) {
        (self.h - self.kh + 1, self.w - self.kw + 1)
    }

    fn out_rows(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.n * ho * wo
    }

    /// Patches as rows `(b, y, x)` × columns `(c, u, v)`.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (ho, wo) = self.out_hw();
        let patch = self.ci * self.kh * self.kw;
        let mut cols = vec![0.0; self.out_rows() * patch];
        for b in 0..self.n {
            for yy in 0..ho {
                for xx in 0..wo {
                    let row = &mut cols[((b * ho + yy) * wo + xx) * patch..][..patch];
                    for c in 0..self.ci {
                        let ibase = (b * self.ci + c) * self.h * self.w;
                        for u in 0..self.kh {
                            let src = &x[ibase + (yy + u) * self.w + xx..][..self.kw];
                            row[(c * self.kh + u) * self.kw..][..self.kw].copy_from_slice(src);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds patch gradients back onto the input layout.
    fn col2im_acc(&self, cols: &[f64], gx: &mut [f64]) {
        let (ho, wo) = self.out_hw();
        let patch = self.ci * self.kh * self.kw;
        for b in 0..self.n {
            for yy in 0..ho {
                for xx in 0..wo {
                    let row = &cols[((b * ho + yy) * wo + xx) * patch..][..patch];
                    for c in 0..self.ci {
                        let ibase = (b * self.ci + c) * self.h * self.w;
                        for u in 0..self.kh {
                            let dst = &mut gx[ibase + (yy + u) * self.w + xx..][..self.kw];
                            for (d, s) in dst.iter_mut().zip(&row[(c * self.kh + u) * self.kw..][..self.kw]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `(b, y, x) × co` rows to `n×co×ho×wo`.
    fn rows_to_nchw(&self, rows: &[f64], co: usize) -> Vec<f64> {
        let (ho, wo) = self.out_hw();
        let plane = ho * wo;
        let mut out = vec![0.0; rows.len()];
        for b in 0..self.n {
            for p in 0..plane {
                for o in 0..co {
                    out[(b * co + o) * plane + p] = rows[(b * plane + p) * co + o];
                }
            }
        }
        out
    }

    fn nchw_to_rows(&self, t: &[f64], co: usize) -> Vec<f64> {
        let (ho, wo) = self.out_hw();
        let plane = ho * wo;
        let mut rows = vec![0.0; t.len()];
        for b in 0..self.n {
            for p in 0..plane {
                for o in 0..co {
                    rows[(b * plane + p) * co + o] = t[(b * co + o) * plane + p];
                }
            }
        }
        rows
    }
}

fn nchw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((1, *c, *h, *w)),
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(TensorError::dim(
            op,
            format!("expected C×H×W or N×C×H×W, got {other:?}"),
        )),
    }
}

fn with_nchw_shape(like: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if like.rank() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Negative log density of a bivariate normal with std. devs `sx, sy` and correlation `r`.
pub(crate) fn bvn_nll(mx: f64, my: f64, sx: f64, sy: f64, r: f64, x: f64, y: f64) -> f64 {
    let a = (x - mx) / sx;
    let b = (y - my) / sy;
    let q = 1.0 - r * r;
    let z = a * a + b * b - 2.0 * r * a * b;
    (2.0 * PI).ln() + sx.ln() + sy.ln() + 0.5 * q.ln() + z / (2.0 * q)
}

/// Partial derivatives of [`bvn_nll`] w.r.t. `(mx, my, sx, sy, r)`.
fn bvn_nll_grad(mx: f64, my: f64, sx: f64, sy: f64, r: f64, x: f64, y: f64) -> [f64; 5] {
    let a = (x - mx) / sx;
    let b = (y - my) / sy;
    let q = 1.0 - r * r;
    let z = a * a + b * b - 2.0 * r * a * b;
    let d_mx = -(a - r * b) / (q * sx);
    let d_my = -(b - r * a) / (q * sy);
    let d_sx = 1.0 / sx - a * (a - r * b) / (q * sx);
    let d_sy = 1.0 / sy - b * (b - r * a) / (q * sy);
    let d_r = -r / q - a * b / q + z * r / (q * q);
    [d_mx, d_my, d_sx, d_sy, d_r]
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Owned leaf; `requires_grad` decides whether backward reports its gradient.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Owned(t),
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Borrowed(t),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(name, op, &[x], out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", Op::MatMul(a, b), &[a, b], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", Op::Add(a, b), &[a, b], out)
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c) = tx.dims2("add_row")?;
        if tb.len() != c {
            return Err(TensorError::dim(
                "add_row",
                format!("bias length {} vs {} columns", tb.len(), c),
            ));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.push("add_row", Op::AddRow(x, bias), &[x, bias], out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sub", Op::Sub(a, b), &[a, b], out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", Op::Mul(a, b), &[a, b], out)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, Op::Scale(x, s), |v| v * s)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        self.unary("log", x, Op::Log(x), f64::ln)
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var> {
        self.unary("clamp_min", x, Op::ClampMin(x, lo), |v| v.max(lo))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        if alpha < 0.0 {
            return Err(TensorError::Domain {
                op: "leaky_relu",
                detail: format!("alpha {alpha} < 0"),
            });
        }
        self.unary("leaky_relu", x, Op::LeakyRelu(x, alpha), |v| {
            if v > 0.0 {
                v
            } else {
                alpha * v
            }
        })
    }

    /// Softmax over the last axis of a vector or matrix, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = match tx.shape() {
            [n] => *n,
            [_, c] => *c,
            other => {
                return Err(TensorError::dim("softmax", format!("rank {}", other.len())));
            }
        };
        if cols == 0 {
            return Err(TensorError::dim("softmax", "empty input"));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax", Op::Softmax(x), &[x], out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2("slice_cols")?;
        if start + len > c {
            return Err(TensorError::dim(
                "slice_cols",
                format!("[{start}, {}) out of {c} columns", start + len),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        self.push("slice_cols", Op::SliceCols { x, start }, &[x], out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::dim("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(TensorError::dim("concat_cols", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat_cols", Op::ConcatCols(parts.to_vec()), parts, out)
    }

    /// Gathers rows of a matrix; indices may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2("select_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(TensorError::dim("select_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        self.push("select_rows", Op::SelectRows { x, rows: rows.to_vec() }, &[x], out)
    }

    /// Scatters rows of `x: V×C` into a zero `batch×C×rows×cols` tensor.
    pub fn scatter_grid(
        &mut self,
        x: Var,
        placements: &[GridPlacement],
        batch: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        let tx = self.value(x);
        let (v, c) = tx.dims2("scatter_grid")?;
        let mut out = Tensor::zeros(&[batch, c, rows, cols]);
        let plane = rows * cols;
        for p in placements {
            if p.batch >= batch || p.row >= rows || p.col >= cols || p.source >= v {
                return Err(TensorError::dim(
                    "scatter_grid",
                    format!("placement {p:?} out of range"),
                ));
            }
            let src = tx.row(p.source);
            let data = out.data_mut();
            for (ch, &val) in src.iter().enumerate() {
                data[p.batch * c * plane + ch * plane + p.row * cols + p.col] = val;
            }
        }
        self.push(
            "scatter_grid",
            Op::ScatterGrid {
                x,
                placements: placements.to_vec(),
            },
            &[x],
            out,
        )
    }

    /// Valid (no padding), stride-1 cross-correlation.
    pub fn conv2d(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernels));
        let (n, ci, h, w) = nchw(ti, "conv2d")?;
        let (co, ck, kh, kw) = match tk.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            other => return Err(TensorError::dim("conv2d", format!("kernel shape {other:?}"))),
        };
        if ck != ci {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel expects {ck} channels, input has {ci}"),
            ));
        }
        if kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(TensorError::dim("conv2d", format!("kernel {kh}×{kw} vs input {h}×{w}")));
        }
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let geo = ConvGeometry { n, ci, h, w, kh, kw };
        let cols = geo.im2col(ti.data());
        let patch = ci * kh * kw;
        // Kernels as patch × co, so the product skips the many zero grid cells.
        let mut kt = vec![0.0; patch * co];
        for (o, row) in tk.data().chunks(patch).enumerate() {
            for (p, &v) in row.iter().enumerate() {
                kt[p * co + o] = v;
            }
        }
        let mut rows = vec![0.0; n * ho * wo * co];
        matmul_acc(&cols, &kt, &mut rows, n * ho * wo, patch, co);
        let out = geo.rows_to_nchw(&rows, co);
        let out = Tensor::new(with_nchw_shape(ti, n, co, ho, wo), out)?;
        self.push("conv2d", Op::Conv2d(input, kernels), &[input, kernels], out)
    }

    /// Adds one bias per channel of a C×H×W or N×C×H×W tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c, h, w) = nchw(tx, "channel_bias")?;
        if tb.len() != c {
            return Err(TensorError::dim(
                "channel_bias",
                format!("{} biases for {c} channels", tb.len()),
            ));
        }
        let mut out = tx.clone();
        for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let b = tb.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        self.push("channel_bias", Op::ChannelBias(x, bias), &[x, bias], out)
    }

    /// Non-overlapping max pooling (stride = window). Ties route to the first element.
    pub fn maxpool2d(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let tx = self.value(x);
        let (n, c, h, w) = nchw(tx, "maxpool2d")?;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(TensorError::dim(
                "maxpool2d",
                format!("window {ph}×{pw} vs input {h}×{w}"),
            ));
        }
        let (ho, wo) = (h / ph, w / pw);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        let d = tx.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + i * ph * w + j * pw;
                    for u in 0..ph {
                        for v in 0..pw {
                            let idx = base + (i * ph + u) * w + j * pw + v;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(with_nchw_shape(tx, n, c, ho, wo), out)?;
        self.push("maxpool2d", Op::MaxPool2d { x, argmax }, &[x], out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", Op::Reshape(x), &[x], out)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", Op::Sum(x), &[x], out)
    }

    /// Picks `x[i, cols[i]]` for every row, giving a length-`r` vector.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2("pick_cols")?;
        if cols.len() != r || cols.iter().any(|&j| j >= c) {
            return Err(TensorError::dim(
                "pick_cols",
                format!("{} indices for {r}×{c}", cols.len()),
            ));
        }
        let data = cols.iter().enumerate().map(|(i, &j)| tx.get2(i, j)).collect();
        let out = Tensor::vector(data);
        self.push("pick_cols", Op::PickCols { x, cols: cols.to_vec() }, &[x], out)
    }

    /// Maps raw `B×5` head outputs to bivariate Gaussian parameters:
    /// means `scale·raw`, std. devs `scale·exp(raw)`, correlation `tanh(raw)`.
    pub fn gaussian_head(&mut self, x: Var, scale: f64) -> Result<Var> {
        let tx = self.value(x);
        let (_, c) = tx.dims2("gaussian_head")?;
        if c != 5 {
            return Err(TensorError::dim("gaussian_head", format!("{c} columns, expected 5")));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(5) {
            row[0] *= scale;
            row[1] *= scale;
            row[2] = scale * row[2].exp();
            row[3] = scale * row[3].exp();
            row[4] = row[4].tanh();
        }
        self.push("gaussian_head", Op::GaussianHead { x, scale }, &[x], out)
    }

    /// Per-row bivariate normal negative log-likelihood of `truth: B×2`
    /// under `params: B×5` laid out as `(m_x, m_y, s_x, s_y, r)`.
    pub fn bivariate_nll(&mut self, params: Var, truth: Var) -> Result<Var> {
        let (tp, tt) = (self.value(params), self.value(truth));
        let (b, c) = tp.dims2("bivariate_nll")?;
        let (bt, ct) = tt.dims2("bivariate_nll")?;
        if c != 5 || ct != 2 || b != bt {
            return Err(TensorError::dim(
                "bivariate_nll",
                format!("params {b}×{c}, truth {bt}×{ct}"),
            ));
        }
        let mut data = Vec::with_capacity(b);
        for i in 0..b {
            let p = tp.row(i);
            if p[2] <= 0.0 || p[3] <= 0.0 || p[4].abs() >= 1.0 {
                return Err(TensorError::Domain {
                    op: "bivariate_nll",
                    detail: format!("invalid parameters {p:?}"),
                });
            }
            let t = tt.row(i);
            data.push(bvn_nll(p[0], p[1], p[2], p[3], p[4], t[0], t[1]));
        }
        let out = Tensor::vector(data);
        self.push(
            "bivariate_nll",
            Op::BivariateNll { params, truth },
            &[params, truth],
            out,
        )
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Graph(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backprop(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn backprop(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_bt_acc(gy, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_at_acc(ta.data(), gy, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.slot(grads, v) {
                        g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let c = gb.len();
                    for row in gy.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.slot(grads, *a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = self.slot(grads, *b) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(g) = self.slot(grads, *a) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(db) {
                        *g += d * o;
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(da) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += s * d);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * (1.0 - y * y);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * y;
                    }
                }
            }
            Op::Log(x) => {
                let xs = self.value(*x).data();
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(xs) {
                        *g += d / x;
                    }
                }
            }
            Op::ClampMin(x, lo) => {
                let xs = self.value(*x).data();
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(xs) {
                        if x > lo {
                            *g += d;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, alpha) => {
                let xs = self.value(*x).data();
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(xs) {
                        *g += if *x > 0.0 { *d } else { alpha * d };
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), y) in g.chunks_mut(cols).zip(gy.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            g[j] += y[j] * (d[j] - dot);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).shape()[1];
                let len = node.value.shape()[1];
                if let Some(g) = self.slot(grads, *x) {
                    for (r, d) in gy.chunks(len).enumerate() {
                        let dst = &mut g[r * c + start..r * c + start + len];
                        dst.iter_mut().zip(d).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if let Some(g) = self.slot(grads, p) {
                        for (r, d) in gy.chunks(total).enumerate() {
                            let src = &d[offset..offset + w];
                            g[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                    }
                    offset += w;
                }
            }
            Op::SelectRows { x, rows } => {
                let c = self.value(*x).shape()[1];
                if let Some(g) = self.slot(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        let src = &gy[k * c..(k + 1) * c];
                        g[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::ScatterGrid { x, placements } => {
                let c = self.value(*x).shape()[1];
                let (rows, cols) = (node.value.shape()[2], node.value.shape()[3]);
                let plane = rows * cols;
                if let Some(g) = self.slot(grads, *x) {
                    for p in placements {
                        for ch in 0..c {
                            g[p.source * c + ch] += gy[p.batch * c * plane + ch * plane + p.row * cols + p.col];
                        }
                    }
                }
            }
            Op::Conv2d(input, kernels) => {
                let (ti, tk) = (self.value(*input), self.value(*kernels));
                let (n, ci, h, w) = nchw(ti, "conv2d").expect("checked in forward");
                let (co, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
                let geo = ConvGeometry { n, ci, h, w, kh, kw };
                let r = geo.out_rows();
                let patch = ci * kh * kw;
                let g_rows = geo.nchw_to_rows(gy, co);
                if let Some(gk) = self.slot(grads, *kernels) {
                    let cols = geo.im2col(ti.data());
                    matmul_at_acc(&g_rows, &cols, gk, r, co, patch);
                }
                if let Some(gi) = self.slot(grads, *input) {
                    let mut g_cols = vec![0.0; r * patch];
                    matmul_acc(&g_rows, tk.data(), &mut g_cols, r, co, patch);
                    geo.col2im_acc(&g_cols, gi);
                }
            }
            Op::ChannelBias(x, bias) => {
                let (_, c, h, w) = nchw(self.value(*x), "channel_bias").expect("checked in forward");
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for (i, chunk) in gy.chunks(h * w).enumerate() {
                        gb[i % c] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(g) = self.slot(grads, *x) {
                    for (&src, d) in argmax.iter().zip(gy) {
                        g[src] += d;
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::PickCols { x, cols } => {
                let c = self.value(*x).shape()[1];
                if let Some(g) = self.slot(grads, *x) {
                    for (i, (&j, d)) in cols.iter().zip(gy).enumerate() {
                        g[i * c + j] += d;
                    }
                }
            }
            Op::GaussianHead { x, scale } => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), y) in g.chunks_mut(5).zip(gy.chunks(5)).zip(y.chunks(5)) {
                        g[0] += scale * d[0];
                        g[1] += scale * d[1];
                        g[2] += y[2] * d[2];
                        g[3] += y[3] * d[3];
                        g[4] += (1.0 - y[4] * y[4]) * d[4];
                    }
                }
            }
            Op::BivariateNll { params, truth } => {
                let (tp, tt) = (self.value(*params), self.value(*truth));
                let partials: Vec<[f64; 5]> = (0..tp.shape()[0])
                    .map(|r| {
                        let p = tp.row(r);
                        let t = tt.row(r);
                        bvn_nll_grad(p[0], p[1], p[2], p[3], p[4], t[0], t[1])
                    })
                    .collect();
                if let Some(g) = self.slot(grads, *params) {
                    for (r, (pd, d)) in partials.iter().zip(gy).enumerate() {
                        for j in 0..5 {
                            g[r * 5 + j] += d * pd[j];
                        }
                    }
                }
                if let Some(g) = self.slot(grads, *truth) {
                    for (r, (pd, d)) in partials.iter().zip(gy).enumerate() {
                        g[r * 2] -= d * pd[0];
                        g[r * 2 + 1] -= d * pd[1];
                    }
                }
            }
        }
    }
}
