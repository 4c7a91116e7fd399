//! Define-by-run reverse-mode tape over dense f64 tensors.
//!
//! The tape is rebuilt every training step. Nodes are appended in
//! topological order by construction, so the backward pass is a single
//! reverse sweep that accumulates (never overwrites) gradients.

use super::kernels;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

/// A recorded operation with hand-written forward and backward, used for the
/// rasterizer (and anything else too structured for the primitive set).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    /// Returns one gradient buffer per input, each matching the input shape.
    fn backward(&self, inputs: &[(&[f64], &[usize])], out_grad: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Exp(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    Matmul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    AvgPool2(usize),
    GlobalAvgPool(usize),
    ConcatCh(usize, usize),
    SliceCh { x: usize, start: usize },
    Reshape(usize),
    ConcatCols(usize, usize),
    BroadcastRow { v: usize, rows: usize },
    SelectCols { x: usize, cols: Vec<usize> },
    ChannelMean(usize),
    ChannelVar(usize),
    BlurSame { x: usize, kernel: Vec<f64> },
    GridSample { grid: usize, coords: usize },
    Custom { inputs: Vec<usize>, op: Box<dyn CustomOp> },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<String>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    /// First non-finite forward output, if any, naming the operation.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        assert_eq!(numel(&self.nodes[id.0].shape), 1, "scalar() on non-scalar");
        self.nodes[id.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        assert_eq!(numel(&shape), values.len(), "shape/value count mismatch");
        if self.fault.is_none() {
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                let name = op_name(&op);
                self.fault = Some(format!("non-finite value {bad} produced by {name}"));
            }
        }
        let grad = if requires_grad { vec![0.0; values.len()] } else { Vec::new() };
        self.nodes.push(Node { shape, values, grad, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn req(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>) -> TensorId {
        self.push(shape.to_vec(), values, true, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> TensorId {
        self.push(shape.to_vec(), values, false, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: f64) -> TensorId {
        self.constant(&[], vec![v])
    }

    // ---- elementwise -------------------------------------------------

    fn binary_ew(&mut self, a: TensorId, b: TensorId, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "{name}: shape mismatch");
        let vals: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a) || self.req(b);
        self.push(shape, vals, rg, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_ew(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_ew(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_ew(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_ew(a, b, "div", |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary_ew(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let vals: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, vals, rg, op)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary_ew(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary_ew(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary_ew(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary_ew(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.unary_ew(a, f64::sqrt, Op::Sqrt(a.0))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary_ew(a, f64::exp, Op::Exp(a.0))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary_ew(a, f64::abs, Op::Abs(a.0))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.value(a).iter().sum();
        let rg = self.req(a);
        self.push(vec![], vec![s], rg, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).len().max(1);
        let s: f64 = self.value(a).iter().sum::<f64>() / n as f64;
        let rg = self.req(a);
        self.push(vec![], vec![s], rg, Op::Mean(a.0))
    }

    // ---- linear algebra ------------------------------------------------

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.len(), 2, "matmul: lhs must be rank 2");
        assert_eq!(sb.len(), 2, "matmul: rhs must be rank 2");
        assert_eq!(sa[1], sb[0], "matmul: inner dims differ");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(m, k, n, self.value(a), self.value(b), &mut out);
        let rg = self.req(a) || self.req(b);
        self.push(vec![m, n], out, rg, Op::Matmul(a.0, b.0))
    }

    /// Broadcast a vector (d) to rows of an (rows, d) matrix.
    pub fn broadcast_row(&mut self, v: TensorId, rows: usize) -> TensorId {
        let d = numel(self.shape(v));
        let src = self.value(v).to_vec();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(&src);
        }
        let rg = self.req(v);
        self.push(vec![rows, d], out, rg, Op::BroadcastRow { v: v.0, rows })
    }

    /// Select columns of an (n,m) matrix -> (n, cols.len()).
    pub fn select_cols(&mut self, x: TensorId, cols: &[usize]) -> TensorId {
        let s = self.shape(x);
        assert_eq!(s.len(), 2, "select_cols: rank 2 input required");
        let (n, m) = (s[0], s[1]);
        assert!(cols.iter().all(|&c| c < m), "select_cols: column out of range");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            for &c in cols {
                out.push(xv[i * m + c]);
            }
        }
        let rg = self.req(x);
        self.push(vec![n, cols.len()], out, rg, Op::SelectCols { x: x.0, cols: cols.to_vec() })
    }

    /// Concatenate two matrices (n,a) ⊕ (n,b) -> (n, a+b).
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), 2);
        assert_eq!(sb.len(), 2);
        assert_eq!(sa[0], sb[0], "concat_cols: row counts differ");
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).to_vec(), self.value(b).to_vec());
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let rg = self.req(a) || self.req(b);
        self.push(vec![n, ca + cb], out, rg, Op::ConcatCols(a.0, b.0))
    }

    // ---- images (C,H,W) -------------------------------------------------

    /// 2D convolution: x (C,H,W), w (O,C,kh,kw), optional bias (O).
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, bias: Option<TensorId>, stride: usize, pad: usize) -> TensorId {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(sx.len(), 3, "conv2d: input must be (C,H,W)");
        assert_eq!(sw.len(), 4, "conv2d: weight must be (O,C,kh,kw)");
        assert_eq!(sx[0], sw[1], "conv2d: channel mismatch");
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        let ho = kernels::conv_out_size(h, kh, stride, pad);
        let wo = kernels::conv_out_size(wd, kw, stride, pad);
        let ckk = c * kh * kw;
        let mut cols = vec![0.0; ckk * ho * wo];
        kernels::im2col(self.value(x), c, h, wd, kh, kw, stride, pad, &mut cols);
        let mut out = vec![0.0; o * ho * wo];
        kernels::matmul_acc(o, ckk, ho * wo, self.value(w), &cols, &mut out);
        let mut rg = self.req(x) || self.req(w);
        if let Some(b) = bias {
            assert_eq!(self.shape(b), &[o], "conv2d: bias must be (O)");
            let bv = self.value(b).to_vec();
            for oc in 0..o {
                for v in &mut out[oc * ho * wo..(oc + 1) * ho * wo] {
                    *v += bv[oc];
                }
            }
            rg = rg || self.req(b);
        }
        self.push(
            vec![o, ho, wo],
            out,
            rg,
            Op::Conv2d { x: x.0, w: w.0, bias: bias.map(|b| b.0), stride, pad },
        )
    }

    /// Transposed convolution (upsampling): x (C,H,W), w (C,O,kh,kw).
    /// Output spatial size: (H-1)*stride + kh - 2*pad.
    pub fn conv_transpose2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> TensorId {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(sx.len(), 3, "conv_transpose2d: input must be (C,H,W)");
        assert_eq!(sw.len(), 4, "conv_transpose2d: weight must be (C,O,kh,kw)");
        assert_eq!(sx[0], sw[0], "conv_transpose2d: channel mismatch");
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sw[1], sw[2], sw[3]);
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (wd - 1) * stride + kw - 2 * pad;
        // cols = w^T-as-(o*kh*kw, c) x x-as-(c, h*w), then scatter with col2im.
        let okk = o * kh * kw;
        let mut cols = vec![0.0; okk * h * wd];
        // weight is (c, o*kh*kw) row-major; we need (o*kh*kw, c) * (c, h*w)
        kernels::matmul_at_b_acc(okk, c, h * wd, self.value(w), self.value(x), &mut cols);
        let mut out = vec![0.0; o * ho * wo];
        kernels::col2im_acc(&cols, o, ho, wo, kh, kw, stride, pad, &mut out);
        let mut rg = self.req(x) || self.req(w);
        if let Some(b) = bias {
            assert_eq!(self.shape(b), &[o], "conv_transpose2d: bias must be (O)");
            let bv = self.value(b).to_vec();
            for oc in 0..o {
                for v in &mut out[oc * ho * wo..(oc + 1) * ho * wo] {
                    *v += bv[oc];
                }
            }
            rg = rg || self.req(b);
        }
        self.push(
            vec![o, ho, wo],
            out,
            rg,
            Op::ConvTranspose2d { x: x.0, w: w.0, bias: bias.map(|b| b.0), stride, pad },
        )
    }

    /// 2x2 average pooling, stride 2. Requires even H and W.
    pub fn avg_pool2(&mut self, x: TensorId) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "avg_pool2: input must be (C,H,W)");
        let (c, h, w) = (s[0], s[1], s[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2: H and W must be even");
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = ci * h * w + 2 * y * w + 2 * xx;
                    out[ci * ho * wo + y * wo + xx] =
                        0.25 * (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]);
                }
            }
        }
        let rg = self.req(x);
        self.push(vec![c, ho, wo], out, rg, Op::AvgPool2(x.0))
    }

    /// (C,H,W) -> (C): mean over the spatial extent.
    pub fn global_avg_pool(&mut self, x: TensorId) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "global_avg_pool: input must be (C,H,W)");
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = (h * w) as f64;
        let xv = self.value(x);
        let out: Vec<f64> = (0..c).map(|ci| xv[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / hw).collect();
        let rg = self.req(x);
        self.push(vec![c], out, rg, Op::GlobalAvgPool(x.0))
    }

    /// Concatenate along the channel axis: (Ca,H,W) ⊕ (Cb,H,W).
    pub fn concat_ch(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), 3);
        assert_eq!(sb.len(), 3);
        assert_eq!(&sa[1..], &sb[1..], "concat_ch: spatial sizes differ");
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let rg = self.req(a) || self.req(b);
        self.push(vec![sa[0] + sb[0], sa[1], sa[2]], out, rg, Op::ConcatCh(a.0, b.0))
    }

    /// Same values, different extents.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        assert_eq!(numel(shape), self.value(x).len(), "reshape: element count mismatch");
        let vals = self.value(x).to_vec();
        let rg = self.req(x);
        self.push(shape.to_vec(), vals, rg, Op::Reshape(x.0))
    }

    /// Contiguous channel slice of a (C,H,W) tensor.
    pub fn slice_ch(&mut self, x: TensorId, start: usize, count: usize) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "slice_ch: input must be (C,H,W)");
        assert!(start + count <= s[0], "slice_ch: channel range out of bounds");
        let hw = s[1] * s[2];
        let out = self.value(x)[start * hw..(start + count) * hw].to_vec();
        let rg = self.req(x);
        self.push(vec![count, s[1], s[2]], out, rg, Op::SliceCh { x: x.0, start })
    }

    pub fn channel_mean(&mut self, x: TensorId) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "channel_mean: input must be (C,H,W)");
        let (c, hw) = (s[0], s[1] * s[2]);
        let xv = self.value(x);
        let out: Vec<f64> = (0..c).map(|ci| xv[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        let rg = self.req(x);
        self.push(vec![c], out, rg, Op::ChannelMean(x.0))
    }

    /// Population variance per channel.
    pub fn channel_var(&mut self, x: TensorId) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "channel_var: input must be (C,H,W)");
        let (c, hw) = (s[0], s[1] * s[2]);
        let xv = self.value(x);
        let out: Vec<f64> = (0..c)
            .map(|ci| {
                let sl = &xv[ci * hw..(ci + 1) * hw];
                let m = sl.iter().sum::<f64>() / hw as f64;
                sl.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / hw as f64
            })
            .collect();
        let rg = self.req(x);
        self.push(vec![c], out, rg, Op::ChannelVar(x.0))
    }

    /// Depthwise separable filter, "same" zero padding, shared kernel per axis.
    pub fn blur_same(&mut self, x: TensorId, kernel: &[f64]) -> TensorId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "blur_same: input must be (C,H,W)");
        let mut out = vec![0.0; numel(&s)];
        kernels::separable_filter_same(self.value(x), s[0], s[1], s[2], kernel, false, &mut out);
        let rg = self.req(x);
        self.push(s, out, rg, Op::BlurSame { x: x.0, kernel: kernel.to_vec() })
    }

    /// Bilinear sample of a (C,R,R) grid at (n,2) coordinates in [0,1]^2,
    /// align-corners convention: 0 and 1 hit the border texel centers.
    /// Out-of-range coordinates clamp to the border (zero gradient along the
    /// clamped axis). coords are (u,v) with u along width, v along height.
    pub fn grid_sample(&mut self, grid: TensorId, coords: TensorId) -> TensorId {
        let sg = self.shape(grid).to_vec();
        let sc = self.shape(coords).to_vec();
        assert_eq!(sg.len(), 3, "grid_sample: grid must be (C,H,W)");
        assert_eq!(sc.len(), 2, "grid_sample: coords must be (n,2)");
        assert_eq!(sc[1], 2, "grid_sample: coords must be (n,2)");
        let (c, gh, gw) = (sg[0], sg[1], sg[2]);
        let n = sc[0];
        let gv = self.value(grid);
        let cv = self.value(coords);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let (x0, x1, fx) = lerp_axis(cv[i * 2], gw);
            let (y0, y1, fy) = lerp_axis(cv[i * 2 + 1], gh);
            for ci in 0..c {
                let p = ci * gh * gw;
                let v00 = gv[p + y0 * gw + x0];
                let v01 = gv[p + y0 * gw + x1];
                let v10 = gv[p + y1 * gw + x0];
                let v11 = gv[p + y1 * gw + x1];
                out[i * c + ci] =
                    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy;
            }
        }
        let rg = self.req(grid) || self.req(coords);
        self.push(vec![n, c], out, rg, Op::GridSample { grid: grid.0, coords: coords.0 })
    }

    /// Record a custom op whose forward already ran; `out_values` are checked
    /// for finiteness like any other node.
    pub fn custom(
        &mut self,
        inputs: &[TensorId],
        op: Box<dyn CustomOp>,
        out_shape: &[usize],
        out_values: Vec<f64>,
    ) -> TensorId {
        let rg = inputs.iter().any(|&i| self.req(i));
        self.push(
            out_shape.to_vec(),
            out_values,
            rg,
            Op::Custom { inputs: inputs.iter().map(|i| i.0).collect(), op },
        )
    }

    // ---- backward --------------------------------------------------------

    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    /// Reverse sweep from a scalar loss. Repeated calls accumulate into leaf
    /// gradients.
    pub fn backward(&mut self, loss: TensorId) {
        assert!(self.fault.is_none(), "backward on a faulted tape: {:?}", self.fault);
        assert_eq!(numel(&self.nodes[loss.0].shape), 1, "backward: loss must be scalar");
        // A loss with no gradient-tracked ancestry has nothing to propagate.
        if !self.nodes[loss.0].requires_grad {
            return;
        }
        // Local output-gradient buffers; leaf grads accumulate persistently.
        let mut outg: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| if n.requires_grad { vec![0.0; n.values.len()] } else { Vec::new() })
            .collect();
        outg[loss.0][0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut outg[i]);
            if g.iter().all(|&v| v == 0.0) {
                outg[i] = g;
                continue;
            }
            self.backprop_node(i, &g, &mut outg);
            outg[i] = g;
        }
        // Fold local buffers into leaf/global accumulators.
        for (i, n) in self.nodes.iter_mut().enumerate() {
            if n.requires_grad {
                for (dst, src) in n.grad.iter_mut().zip(&outg[i]) {
                    *dst += *src;
                }
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], outg: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let req = |j: usize| nodes[j].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if req(*a) {
                    acc(&mut outg[*a], g);
                }
                if req(*b) {
                    acc(&mut outg[*b], g);
                }
            }
            Op::Sub(a, b) => {
                if req(*a) {
                    acc(&mut outg[*a], g);
                }
                if req(*b) {
                    for (d, s) in outg[*b].iter_mut().zip(g) {
                        *d -= *s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if req(*a) {
                    let bv = &nodes[*b].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * bv[k];
                    }
                }
                if req(*b) {
                    let av = &nodes[*a].values;
                    for (k, d) in outg[*b].iter_mut().enumerate() {
                        *d += g[k] * av[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (&nodes[*a].values, &nodes[*b].values);
                if req(*a) {
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] / bv[k];
                    }
                }
                if req(*b) {
                    for (k, d) in outg[*b].iter_mut().enumerate() {
                        *d -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                }
            }
            Op::Scale(a, c) => {
                if req(*a) {
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if req(*a) {
                    acc(&mut outg[*a], g);
                }
            }
            Op::Relu(a) => {
                if req(*a) {
                    let av = &nodes[*a].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        if av[k] > 0.0 {
                            *d += g[k];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if req(*a) {
                    let yv = &nodes[i].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * yv[k] * (1.0 - yv[k]);
                    }
                }
            }
            Op::Sqrt(a) => {
                if req(*a) {
                    let yv = &nodes[i].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * 0.5 / yv[k];
                    }
                }
            }
            Op::Exp(a) => {
                if req(*a) {
                    let yv = &nodes[i].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * yv[k];
                    }
                }
            }
            Op::Abs(a) => {
                if req(*a) {
                    let av = &nodes[*a].values;
                    for (k, d) in outg[*a].iter_mut().enumerate() {
                        *d += g[k] * av[k].signum();
                    }
                }
            }
            Op::Sum(a) => {
                if req(*a) {
                    let gl = g[0];
                    for d in outg[*a].iter_mut() {
                        *d += gl;
                    }
                }
            }
            Op::Mean(a) => {
                if req(*a) {
                    let gl = g[0] / nodes[*a].values.len().max(1) as f64;
                    for d in outg[*a].iter_mut() {
                        *d += gl;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                if req(*a) {
                    kernels::matmul_a_bt_acc(m, n, k, g, &nodes[*b].values, &mut outg[*a]);
                }
                if req(*b) {
                    kernels::matmul_at_b_acc(k, m, n, &nodes[*a].values, g, &mut outg[*b]);
                }
            }
            Op::Conv2d { x, w, bias, stride, pad } => {
                let sx = &nodes[*x].shape;
                let sw = &nodes[*w].shape;
                let (c, h, wd) = (sx[0], sx[1], sx[2]);
                let (o, kh, kw) = (sw[0], sw[2], sw[3]);
                let ho = kernels::conv_out_size(h, kh, *stride, *pad);
                let wo = kernels::conv_out_size(wd, kw, *stride, *pad);
                let ckk = c * kh * kw;
                if req(*w) {
                    let mut cols = vec![0.0; ckk * ho * wo];
                    kernels::im2col(&nodes[*x].values, c, h, wd, kh, kw, *stride, *pad, &mut cols);
                    // dW (o, ckk) += g (o, ho*wo) * cols^T (ho*wo, ckk)
                    kernels::matmul_a_bt_acc(o, ho * wo, ckk, g, &cols, &mut outg[*w]);
                }
                if req(*x) {
                    // dcols (ckk, ho*wo) = W^T (ckk, o) * g (o, ho*wo)
                    let mut dcols = vec![0.0; ckk * ho * wo];
                    kernels::matmul_at_b_acc(ckk, o, ho * wo, &nodes[*w].values, g, &mut dcols);
                    kernels::col2im_acc(&dcols, c, h, wd, kh, kw, *stride, *pad, &mut outg[*x]);
                }
                if let Some(b) = bias {
                    if req(*b) {
                        for oc in 0..o {
                            outg[*b][oc] += g[oc * ho * wo..(oc + 1) * ho * wo].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::ConvTranspose2d { x, w, bias, stride, pad } => {
                let sx = &nodes[*x].shape;
                let sw = &nodes[*w].shape;
                let (c, h, wd) = (sx[0], sx[1], sx[2]);
                let (o, kh, kw) = (sw[1], sw[2], sw[3]);
                let ho = (h - 1) * stride + kh - 2 * pad;
                let wo = (wd - 1) * stride + kw - 2 * pad;
                let okk = o * kh * kw;
                // forward was: cols = W^T x X ; out = col2im(cols)
                // so: dcols = im2col(dout); dX = W * dcols; dW = X * dcols^T (as (c, okk))
                let mut dcols = vec![0.0; okk * h * wd];
                kernels::im2col(g, o, ho, wo, kh, kw, *stride, *pad, &mut dcols);
                if req(*x) {
                    kernels::matmul_acc(c, okk, h * wd, &nodes[*w].values, &dcols, &mut outg[*x]);
                }
                if req(*w) {
                    kernels::matmul_a_bt_acc(c, h * wd, okk, &nodes[*x].values, &dcols, &mut outg[*w]);
                }
                if let Some(b) = bias {
                    if req(*b) {
                        for oc in 0..o {
                            outg[*b][oc] += g[oc * ho * wo..(oc + 1) * ho * wo].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::AvgPool2(x) => {
                if req(*x) {
                    let s = &nodes[*x].shape;
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (ho, wo) = (h / 2, w / 2);
                    let dx = &mut outg[*x];
                    for ci in 0..c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let gv = 0.25 * g[ci * ho * wo + y * wo + xx];
                                let base = ci * h * w + 2 * y * w + 2 * xx;
                                dx[base] += gv;
                                dx[base + 1] += gv;
                                dx[base + w] += gv;
                                dx[base + w + 1] += gv;
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) | Op::ChannelMean(x) => {
                if req(*x) {
                    let s = &nodes[*x].shape;
                    let hw = s[1] * s[2];
                    for ci in 0..s[0] {
                        let gv = g[ci] / hw as f64;
                        for d in &mut outg[*x][ci * hw..(ci + 1) * hw] {
                            *d += gv;
                        }
                    }
                }
            }
            Op::ChannelVar(x) => {
                if req(*x) {
                    let s = &nodes[*x].shape;
                    let hw = s[1] * s[2];
                    let xv = &nodes[*x].values;
                    for ci in 0..s[0] {
                        let sl = &xv[ci * hw..(ci + 1) * hw];
                        let m = sl.iter().sum::<f64>() / hw as f64;
                        let gv = 2.0 * g[ci] / hw as f64;
                        for (d, &v) in outg[*x][ci * hw..(ci + 1) * hw].iter_mut().zip(sl) {
                            *d += gv * (v - m);
                        }
                    }
                }
            }
            Op::ConcatCh(a, b) => {
                let na = nodes[*a].values.len();
                if req(*a) {
                    acc(&mut outg[*a], &g[..na]);
                }
                if req(*b) {
                    acc(&mut outg[*b], &g[na..]);
                }
            }
            Op::Reshape(x) => {
                if req(*x) {
                    acc(&mut outg[*x], g);
                }
            }
            Op::SliceCh { x, start } => {
                if req(*x) {
                    let hw = nodes[*x].shape[1] * nodes[*x].shape[2];
                    acc(&mut outg[*x][start * hw..start * hw + g.len()], g);
                }
            }
            Op::ConcatCols(a, b) => {
                let (n, ca) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let cb = nodes[*b].shape[1];
                for i2 in 0..n {
                    if req(*a) {
                        acc(&mut outg[*a][i2 * ca..(i2 + 1) * ca], &g[i2 * (ca + cb)..i2 * (ca + cb) + ca]);
                    }
                    if req(*b) {
                        acc(
                            &mut outg[*b][i2 * cb..(i2 + 1) * cb],
                            &g[i2 * (ca + cb) + ca..(i2 + 1) * (ca + cb)],
                        );
                    }
                }
            }
            Op::BroadcastRow { v, rows } => {
                if req(*v) {
                    let d = nodes[*v].values.len();
                    for r in 0..*rows {
                        acc(&mut outg[*v], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::SelectCols { x, cols } => {
                if req(*x) {
                    let m = nodes[*x].shape[1];
                    let n = nodes[*x].shape[0];
                    for i2 in 0..n {
                        for (j, &c) in cols.iter().enumerate() {
                            outg[*x][i2 * m + c] += g[i2 * cols.len() + j];
                        }
                    }
                }
            }
            Op::BlurSame { x, kernel } => {
                if req(*x) {
                    let s = &nodes[*x].shape;
                    let mut dx = vec![0.0; nodes[*x].values.len()];
                    kernels::separable_filter_same(g, s[0], s[1], s[2], kernel, true, &mut dx);
                    acc(&mut outg[*x], &dx);
                }
            }
            Op::GridSample { grid, coords } => {
                let sg = &nodes[*grid].shape;
                let (c, gh, gw) = (sg[0], sg[1], sg[2]);
                let cv = &nodes[*coords].values;
                let gv = &nodes[*grid].values;
                let n = nodes[*coords].shape[0];
                for i2 in 0..n {
                    let u = cv[i2 * 2];
                    let v = cv[i2 * 2 + 1];
                    let (x0, x1, fx) = lerp_axis(u, gw);
                    let (y0, y1, fy) = lerp_axis(v, gh);
                    let in_u = (0.0..=1.0).contains(&u);
                    let in_v = (0.0..=1.0).contains(&v);
                    for ci in 0..c {
                        let go = g[i2 * c + ci];
                        if go == 0.0 {
                            continue;
                        }
                        let p = ci * gh * gw;
                        if req(*grid) {
                            let dg = &mut outg[*grid];
                            dg[p + y0 * gw + x0] += go * (1.0 - fx) * (1.0 - fy);
                            dg[p + y0 * gw + x1] += go * fx * (1.0 - fy);
                            dg[p + y1 * gw + x0] += go * (1.0 - fx) * fy;
                            dg[p + y1 * gw + x1] += go * fx * fy;
                        }
                        if req(*coords) {
                            let v00 = gv[p + y0 * gw + x0];
                            let v01 = gv[p + y0 * gw + x1];
                            let v10 = gv[p + y1 * gw + x0];
                            let v11 = gv[p + y1 * gw + x1];
                            if in_u {
                                let dval_dx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy;
                                outg[*coords][i2 * 2] += go * dval_dx * (gw - 1) as f64;
                            }
                            if in_v {
                                let dval_dy = (v10 - v00) * (1.0 - fx) + (v11 - v01) * fx;
                                outg[*coords][i2 * 2 + 1] += go * dval_dy * (gh - 1) as f64;
                            }
                        }
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let in_refs: Vec<(&[f64], &[usize])> =
                    inputs.iter().map(|&j| (nodes[j].values.as_slice(), nodes[j].shape.as_slice())).collect();
                let grads = op.backward(&in_refs, g);
                assert_eq!(grads.len(), inputs.len(), "custom op returned wrong grad count");
                for (&j, gj) in inputs.iter().zip(grads) {
                    if req(j) {
                        assert_eq!(gj.len(), nodes[j].values.len(), "custom op grad shape mismatch");
                        acc(&mut outg[j], &gj);
                    }
                }
            }
        }
    }
}

fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Maps a normalized coordinate to clamped texel indices and the fraction.
fn lerp_axis(t: f64, extent: usize) -> (usize, usize, f64) {
    let x = (t.clamp(0.0, 1.0)) * (extent - 1) as f64;
    let x0 = x.floor().min((extent - 1) as f64);
    let fx = x - x0;
    let x0 = x0 as usize;
    let x1 = (x0 + 1).min(extent - 1);
    (x0, x1, fx)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Sqrt(..) => "sqrt",
        Op::Exp(..) => "exp",
        Op::Abs(..) => "abs",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Matmul(..) => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::AvgPool2(..) => "avg_pool2",
        Op::GlobalAvgPool(..) => "global_avg_pool",
        Op::ConcatCh(..) => "concat_ch",
        Op::SliceCh { .. } => "slice_ch",
        Op::Reshape(..) => "reshape",
        Op::ConcatCols(..) => "concat_cols",
        Op::BroadcastRow { .. } => "broadcast_row",
        Op::SelectCols { .. } => "select_cols",
        Op::ChannelMean(..) => "channel_mean",
        Op::ChannelVar(..) => "channel_var",
        Op::BlurSame { .. } => "blur_same",
        Op::GridSample { .. } => "grid_sample",
        Op::Custom { op, .. } => op.name(),
    }
}
