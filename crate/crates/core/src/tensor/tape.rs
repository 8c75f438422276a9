use super::kernels::{self, ConvGeom};
use super::{clamp_low, ParamStore, Tensor};
use crate::error::{invalid_err, shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom, col: Vec<f64> },
    Linear { x: usize, w: usize, b: usize },
    Relu { x: usize },
    Softmax { x: usize },
    SoftmaxRows { x: usize, rows: usize, cols: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Reshape { x: usize },
    Concat { a: usize, b: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { x: usize, rows: usize, cols: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, s: f64 },
    Sum { x: usize },
    CrossEntropy { q: usize, target: Vec<f64>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it. A tape supports exactly one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| invalid_err!("variable {} is not on this tape", v.0))
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Records a constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Records a copy of a stored parameter; backward accumulates its gradient
    /// into the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| invalid_err!("unknown parameter `{name}`"))?;
        let src = &store.by_id(id).tensor;
        let t = Tensor::new(src.shape().to_vec(), src.data().to_vec())?;
        Ok(self.push(t, Op::Param(id), true))
    }

    /// 2D cross-correlation of `[C_in,H,W]` with `[C_out,C_in,kH,kW]` plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (
            self.node(x)?.value.shape(),
            self.node(w)?.value.shape(),
            self.node(b)?.value.shape(),
        );
        if xs.len() != 3 || ws.len() != 4 {
            return Err(shape_err!(
                "conv2d expects input [C,H,W] and weight [Co,Ci,kH,kW], got {xs:?} and {ws:?}"
            ));
        }
        if ws[1] != xs[0] {
            return Err(shape_err!(
                "conv2d weight expects {} input channels but input has {} (input {xs:?}, weight {ws:?})",
                ws[1],
                xs[0]
            ));
        }
        if bs != [ws[0]] {
            return Err(shape_err!("conv2d bias {bs:?} does not match {} output channels", ws[0]));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(shape_err!("conv2d kernel extents must be odd, got {}x{}", ws[2], ws[3]));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be at least 1"));
        }
        let oh = ConvGeom::out_extent(xs[1], ws[2], stride, padding);
        let ow = ConvGeom::out_extent(xs[2], ws[3], stride, padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(shape_err!("conv2d kernel {ws:?} does not fit input {xs:?} with padding {padding}"));
        };
        let geom = ConvGeom {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            oh,
            ow,
        };
        let (out, col) = kernels::conv2d_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            self.nodes[b.0].value.data(),
            &geom,
        );
        let ng = self.ng(x.0) || self.ng(w.0) || self.ng(b.0);
        let t = Tensor::new(vec![geom.cout, oh, ow], out)?;
        Ok(self.push(t, Op::Conv2d { x: x.0, w: w.0, b: b.0, geom, col }, ng))
    }

    /// `weight · input + bias` for a rank-1 input.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.node(x)?.value.shape(),
            self.node(w)?.value.shape(),
            self.node(b)?.value.shape(),
        );
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(shape_err!(
                "linear expects input [n], weight [m,n], bias [m]; got {xs:?}, {ws:?}, {bs:?}"
            ));
        }
        let out = kernels::linear_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            self.nodes[b.0].value.data(),
        );
        let ng = self.ng(x.0) || self.ng(w.0) || self.ng(b.0);
        Ok(self.push(Tensor::from_vec(out), Op::Linear { x: x.0, w: w.0, b: b.0 }, ng))
    }

    /// Elementwise `max(x, 0)`. The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let ng = self.ng(x.0);
        Ok(self.push(t, Op::Relu { x: x.0 }, ng))
    }

    /// Max-subtracted softmax of a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        if src.rank() != 1 {
            return Err(shape_err!("softmax expects a rank-1 tensor, got {:?}", src.shape()));
        }
        let mut out = vec![0.0; src.len()];
        kernels::softmax_into(src.data(), &mut out);
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::from_vec(out), Op::Softmax { x: x.0 }, ng))
    }

    /// Independent max-subtracted softmax over each row of a `[rows, cols]` tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        if src.rank() != 2 {
            return Err(shape_err!("softmax_rows expects [rows, cols], got {:?}", src.shape()));
        }
        let (rows, cols) = (src.shape()[0], src.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for (o, i) in out.chunks_mut(cols).zip(src.data().chunks(cols)) {
            kernels::softmax_into(i, o);
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        let ng = self.ng(x.0);
        Ok(self.push(t, Op::SoftmaxRows { x: x.0, rows, cols }, ng))
    }

    /// Non-overlapping `kh × kw` max pooling of `[C,H,W]`; channels untouched.
    /// The window must divide both spatial extents.
    pub fn maxpool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let src = &self.node(x)?.value;
        let s = src.shape();
        if s.len() != 3 {
            return Err(shape_err!("maxpool2d expects [C,H,W], got {s:?}"));
        }
        if kh == 0 || kw == 0 || s[1] % kh != 0 || s[2] % kw != 0 {
            return Err(Error::Config(format!(
                "maxpool2d window {kh}x{kw} does not divide spatial extents {}x{}",
                s[1], s[2]
            )));
        }
        self.pool(x, kh, kw)
    }

    /// Like [`Tape::maxpool2d`] but trailing rows/columns that do not fill a
    /// whole window are dropped, so `[C,H,W] → [C, ⌊H/kh⌋, ⌊W/kw⌋]`.
    pub fn maxpool2d_floor(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let s = self.node(x)?.value.shape();
        if s.len() != 3 {
            return Err(shape_err!("maxpool2d expects [C,H,W], got {s:?}"));
        }
        if kh == 0 || kw == 0 || s[1] < kh || s[2] < kw {
            return Err(Error::Config(format!(
                "maxpool2d window {kh}x{kw} exceeds spatial extents {}x{}",
                s[1], s[2]
            )));
        }
        self.pool(x, kh, kw)
    }

    fn pool(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let s = src.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let (out, argmax) = kernels::maxpool_forward(src.data(), c, h, w, kh, kw);
        let t = Tensor::new(vec![c, h / kh, w / kw], out)?;
        let ng = self.ng(x.0);
        Ok(self.push(t, Op::MaxPool { x: x.0, argmax }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.node(x)?.value.clone().reshaped(shape.to_vec())?;
        let ng = self.ng(x.0);
        Ok(self.push(t, Op::Reshape { x: x.0 }, ng))
    }

    /// Concatenation of two rank-1 tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(shape_err!(
                "concat expects rank-1 tensors, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            ));
        }
        let mut d = ta.data().to_vec();
        d.extend_from_slice(tb.data());
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::from_vec(d), Op::Concat { a: a.0, b: b.0 }, ng))
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul expects [m,k]·[k,n], got {sa:?}·{sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let ng = self.ng(a.0) || self.ng(b.0);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0, m, k, n }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.shape();
        if s.len() != 2 {
            return Err(shape_err!("transpose expects a rank-2 tensor, got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let out = kernels::transpose(self.nodes[x.0].value.data(), rows, cols);
        let ng = self.ng(x.0);
        let t = Tensor::new(vec![cols, rows], out)?;
        Ok(self.push(t, Op::Transpose { x: x.0, rows, cols }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(shape_err!("{what} expects equal shapes, got {sa:?} and {sb:?}"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let d = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), d)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let d = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), d)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let src = &self.node(x)?.value;
        let d = src.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(src.shape().to_vec(), d)?;
        let ng = self.ng(x.0);
        Ok(self.push(t, Op::Scale { x: x.0, s }, ng))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.data().iter().sum();
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, ng))
    }

    /// `−Σ target_i · ln(max(q_i, eps))`, skipping zero targets.
    pub fn cross_entropy(&mut self, q: Var, target: &[f64], eps: f64) -> Result<Var> {
        let tq = &self.node(q)?.value;
        if tq.rank() != 1 || tq.len() != target.len() {
            return Err(shape_err!(
                "cross_entropy target has {} entries but prediction shape is {:?}",
                target.len(),
                tq.shape()
            ));
        }
        if let Some(i) = target.iter().position(|&p| !(p >= 0.0)) {
            return Err(invalid_err!("cross_entropy target entry {i} is negative or NaN"));
        }
        let loss = -target
            .iter()
            .zip(tq.data())
            .filter(|(&p, _)| p != 0.0)
            .map(|(&p, &qi)| p * clamp_low(qi, eps).ln())
            .sum::<f64>();
        let ng = self.ng(q.0);
        let op = Op::CrossEntropy {
            q: q.0,
            target: target.to_vec(),
            eps,
        };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Reverse pass from a scalar node. Parameter gradients are *added* to the
    /// `grad` buffers in `store`; all intermediate gradients are dropped.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let t = &mut store.by_id_mut(*id).tensor;
                    if t.len() != g.len() {
                        return Err(shape_err!(
                            "parameter `{}` changed shape since the forward pass",
                            store.by_id(*id).name
                        ));
                    }
                    let buf = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                    buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Conv2d { x, w, b, geom, col } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (nx, nw, nb) = (self.ng(x), self.ng(w), self.ng(b));
                    let mut dx = nx.then(|| vec![0.0; self.nodes[x].value.len()]);
                    let mut dw = nw.then(|| vec![0.0; self.nodes[w].value.len()]);
                    let mut db = nb.then(|| vec![0.0; self.nodes[b].value.len()]);
                    kernels::conv2d_backward(
                        col,
                        self.nodes[w].value.data(),
                        &g,
                        geom,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let mut dx = self.ng(x).then(|| vec![0.0; self.nodes[x].value.len()]);
                    let mut dw = self.ng(w).then(|| vec![0.0; self.nodes[w].value.len()]);
                    let mut db = self.ng(b).then(|| vec![0.0; self.nodes[b].value.len()]);
                    kernels::linear_backward(
                        self.nodes[x].value.data(),
                        self.nodes[w].value.data(),
                        &g,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    let d = g
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Some(d));
                }
                Op::Softmax { x } => {
                    let mut d = vec![0.0; g.len()];
                    kernels::softmax_backward_into(node.value.data(), &g, &mut d);
                    accumulate(&mut grads, *x, Some(d));
                }
                Op::SoftmaxRows { x, rows, cols } => {
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..*rows {
                        let s = r * cols..(r + 1) * cols;
                        kernels::softmax_backward_into(
                            &node.value.data()[s.clone()],
                            &g[s.clone()],
                            &mut d[s],
                        );
                    }
                    accumulate(&mut grads, *x, Some(d));
                }
                Op::MaxPool { x, argmax } => {
                    let mut d = vec![0.0; self.nodes[*x].value.len()];
                    for (&src, &gi) in argmax.iter().zip(&g) {
                        d[src] += gi;
                    }
                    accumulate(&mut grads, *x, Some(d));
                }
                Op::Reshape { x } => accumulate(&mut grads, *x, Some(g)),
                Op::Concat { a, b } => {
                    let na = self.nodes[*a].value.len();
                    let (ga, gb) = g.split_at(na);
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, Some(ga.to_vec()));
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, Some(gb.to_vec()));
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    if self.ng(a) {
                        // dA = dC · Bᵀ
                        let bt = kernels::transpose(self.nodes[b].value.data(), k, n);
                        accumulate(&mut grads, a, Some(kernels::matmul(&g, &bt, m, n, k)));
                    }
                    if self.ng(b) {
                        // dB = Aᵀ · dC
                        let at = kernels::transpose(self.nodes[a].value.data(), m, k);
                        accumulate(&mut grads, b, Some(kernels::matmul(&at, &g, k, m, n)));
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    // gradient has shape [cols, rows]
                    accumulate(&mut grads, *x, Some(kernels::transpose(&g, *cols, *rows)));
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.ng(a) {
                        accumulate(&mut grads, a, Some(g.clone()));
                    }
                    if self.ng(b) {
                        accumulate(&mut grads, b, Some(g));
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.ng(a) {
                        let bv = self.nodes[b].value.data();
                        accumulate(&mut grads, a, Some(g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                    }
                    if self.ng(b) {
                        let av = self.nodes[a].value.data();
                        accumulate(&mut grads, b, Some(g.iter().zip(av).map(|(x, y)| x * y).collect()));
                    }
                }
                Op::Scale { x, s } => {
                    let d = g.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *x, Some(d));
                }
                Op::Sum { x } => {
                    let n = self.nodes[*x].value.len();
                    accumulate(&mut grads, *x, Some(vec![g[0]; n]));
                }
                Op::CrossEntropy { q, target, eps } => {
                    let qv = self.nodes[*q].value.data();
                    let d = target
                        .iter()
                        .zip(qv)
                        .map(|(&p, &qi)| if p != 0.0 && qi > *eps { -g[0] * p / qi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *q, Some(d));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, d: Option<Vec<f64>>) {
    let Some(d) = d else { return };
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}
