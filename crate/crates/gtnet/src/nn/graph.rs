//! The per-forward tape: eager ops plus recorded adjoints.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix3, Ix4, IxDyn};

use super::conv::{col2im_accumulate, conv_out_size, im2col};
use super::params::ParamStore;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Relu { x: Var },
    Silu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    /// x:(C,H,W) * gate:(C) broadcast over pixels.
    ScaleChannels { x: Var, gate: Var },
    /// x:(C,H,W) * gate:(1,H,W) broadcast over channels.
    ScalePixels { x: Var, gate: Var },
    Conv2d { x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize, dilation: usize },
    Linear { x: Var, w: Var, b: Var },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    ChannelMax { x: Var, argmax: Vec<usize> },
    ChannelMean { x: Var },
    ConcatChannels { xs: Vec<Var> },
    BilinearResize { x: Var },
    Sum { x: Var },
    BceWithLogitsMean { logits: Var, target: ArrayD<f64> },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    by_var: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.by_var.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<(String, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on non-scalar node");
        val.iter().next().copied().unwrap()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that participates in backward.
    pub fn variable(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Pull a named parameter out of the store, recording the association so
    /// gradients can be handed back by name.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' missing from store"))
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.param_vars.push((name.to_string(), v));
        v
    }

    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.param_vars
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(y, Op::Relu { x }, needs)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v * sigmoid_scalar(v));
        let needs = self.needs(x);
        self.push(y, Op::Silu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(sigmoid_scalar);
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let y = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let y = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).mapv(|v| v * c);
        let needs = self.needs(x);
        self.push(y, Op::Scale { x, c }, needs)
    }

    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Var {
        let xv = self.as3(x);
        let g = self.as1(gate);
        assert_eq!(xv.dim().0, g.len(), "scale_channels: channel mismatch");
        let mut y = xv.to_owned();
        for (c, mut plane) in y.outer_iter_mut().enumerate() {
            plane *= g[c];
        }
        let needs = self.needs(x) || self.needs(gate);
        self.push(y.into_dyn(), Op::ScaleChannels { x, gate }, needs)
    }

    pub fn scale_pixels(&mut self, x: Var, gate: Var) -> Var {
        let xv = self.as3(x);
        let g = self.as3(gate);
        assert_eq!(g.dim().0, 1, "scale_pixels: gate must be single channel");
        assert_eq!((xv.dim().1, xv.dim().2), (g.dim().1, g.dim().2), "scale_pixels: spatial mismatch");
        let plane = g.index_axis(Axis(0), 0);
        let mut y = xv.to_owned();
        for mut ch in y.outer_iter_mut() {
            ch *= &plane;
        }
        let needs = self.needs(x) || self.needs(gate);
        self.push(y.into_dyn(), Op::ScalePixels { x, gate }, needs)
    }

    /// 2-D convolution with implicit zero padding; weight shape
    /// (C_out, C_in, k, k), bias (C_out).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, dilation: usize) -> Var {
        let xv = self.as3(x);
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().expect("conv weight rank 4");
        let bv = self.as1(b);
        let (c_out, c_in, kh, kw) = wv.dim();
        assert_eq!(kh, kw, "square kernels only");
        assert_eq!(xv.dim().0, c_in, "conv2d: input channel mismatch");
        assert_eq!(bv.len(), c_out, "conv2d: bias length mismatch");
        let (h, win) = (xv.dim().1, xv.dim().2);
        let ho = conv_out_size(h, kh, stride, pad, dilation);
        let wo = conv_out_size(win, kw, stride, pad, dilation);

        let cols = im2col(xv, kh, stride, pad, dilation);
        let w2 = wv.into_shape_with_order((c_out, c_in * kh * kw)).unwrap();
        let mut y = w2.dot(&cols);
        for (co, mut row) in y.rows_mut().into_iter().enumerate() {
            row += bv[co];
        }
        let y = y.into_shape_with_order((c_out, ho, wo)).unwrap();

        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            y.into_dyn(),
            Op::Conv2d { x, w, b, kernel: kh, stride, pad, dilation },
            needs,
        )
    }

    /// Fully connected layer on a rank-1 input; weight (C_out, C_in).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.as1(x);
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().expect("linear weight rank 2");
        let bv = self.as1(b);
        assert_eq!(wv.dim().1, xv.len(), "linear: input size mismatch");
        assert_eq!(wv.dim().0, bv.len(), "linear: bias mismatch");
        let y = wv.dot(&xv) + bv;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y.into_dyn(), Op::Linear { x, w, b }, needs)
    }

    /// Adaptive max-pool to 1x1 over the spatial axes: (C,H,W) -> (C).
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xv = self.as3(x);
        let (c, h, w) = xv.dim();
        let mut y = Array1::<f64>::zeros(c);
        let mut argmax = vec![0usize; c];
        for ci in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for i in 0..h {
                for j in 0..w {
                    let v = xv[(ci, i, j)];
                    if v > best {
                        best = v;
                        best_idx = i * w + j;
                    }
                }
            }
            y[ci] = best;
            argmax[ci] = best_idx;
        }
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::GlobalMaxPool { x, argmax }, needs)
    }

    /// Max over the channel axis: (C,H,W) -> (1,H,W).
    pub fn channel_max(&mut self, x: Var) -> Var {
        let xv = self.as3(x);
        let (c, h, w) = xv.dim();
        let mut y = Array3::<f64>::zeros((1, h, w));
        let mut argmax = vec![0usize; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_c = 0;
                for ci in 0..c {
                    let v = xv[(ci, i, j)];
                    if v > best {
                        best = v;
                        best_c = ci;
                    }
                }
                y[(0, i, j)] = best;
                argmax[i * w + j] = best_c;
            }
        }
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::ChannelMax { x, argmax }, needs)
    }

    /// Mean over the channel axis: (C,H,W) -> (1,H,W).
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = self.as3(x);
        let (c, h, w) = xv.dim();
        let mut y = Array3::<f64>::zeros((1, h, w));
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += xv[(ci, i, j)];
                }
                y[(0, i, j)] = acc / c as f64;
            }
        }
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::ChannelMean { x }, needs)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let (_, h, w) = self.as3(xs[0]).dim();
        let total: usize = xs.iter().map(|&v| self.as3(v).dim().0).sum();
        let mut y = Array3::<f64>::zeros((total, h, w));
        let mut offset = 0;
        for &v in xs {
            let xv = self.as3(v);
            assert_eq!((xv.dim().1, xv.dim().2), (h, w), "concat_channels: spatial mismatch");
            let c = xv.dim().0;
            y.slice_mut(ndarray::s![offset..offset + c, .., ..]).assign(&xv);
            offset += c;
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        self.push(y.into_dyn(), Op::ConcatChannels { xs: xs.to_vec() }, needs)
    }

    /// Bilinear resize (half-pixel centers) to (out_h, out_w).
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.as3(x);
        let (c, h, w) = xv.dim();
        let ty = lerp_table(h, out_h);
        let tx = lerp_table(w, out_w);
        let mut y = Array3::<f64>::zeros((c, out_h, out_w));
        for ci in 0..c {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = (1.0 - fy) * ((1.0 - fx) * xv[(ci, y0, x0)] + fx * xv[(ci, y0, x1)])
                        + fy * ((1.0 - fx) * xv[(ci, y1, x0)] + fx * xv[(ci, y1, x1)]);
                    y[(ci, oy, ox)] = v;
                }
            }
        }
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::BilinearResize { x }, needs)
    }

    /// Sum of all elements, as a 0-d node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum { x }, needs)
    }

    /// Mean binary cross entropy computed in stable logit form:
    /// `max(z,0) - z*t + ln(1 + exp(-|z|))` averaged over elements.
    pub fn bce_with_logits_mean(&mut self, logits: Var, target: ArrayD<f64>) -> Var {
        assert_eq!(self.shape(logits), target.shape(), "bce: shape mismatch");
        let z = self.value(logits);
        let mut acc = 0.0;
        for (&zi, &ti) in z.iter().zip(target.iter()) {
            acc += zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p();
        }
        let loss = acc / z.len() as f64;
        let needs = self.needs(logits);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Op::BceWithLogitsMean { logits, target },
            needs,
        )
    }

    /// Reverse pass from `loss` (a scalar node). Returns gradients for every
    /// node that required them.
    pub fn backward(&self, loss: Var) -> Grads {
        assert!(self.value(loss).len() == 1, "backward: loss must be scalar");
        assert!(self.needs(loss), "backward: loss does not depend on any variable");
        let n = loss.0 + 1;
        let mut pending: Vec<Option<ArrayD<f64>>> = (0..n).map(|_| None).collect();
        pending[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), 1.0));
        let mut out: Vec<Option<ArrayD<f64>>> = (0..n).map(|_| None).collect();

        for i in (0..n).rev() {
            let Some(dy) = pending[i].take() else { continue };
            self.accumulate_inputs(&self.nodes[i].op, &dy, &mut pending);
            out[i] = Some(dy);
        }
        Grads { by_var: out }
    }

    /// Gradients keyed by parameter name, in registration order.
    pub fn param_grads(&self, grads: &Grads) -> indexmap::IndexMap<String, ArrayD<f64>> {
        let mut map = indexmap::IndexMap::new();
        for (name, var) in &self.param_vars {
            if let Some(g) = grads.get(*var) {
                // A parameter referenced twice in one graph accumulates once
                // per reference site.
                match map.entry(name.clone()) {
                    indexmap::map::Entry::Occupied(mut e) => {
                        let cur: &mut ArrayD<f64> = e.get_mut();
                        *cur += g;
                    }
                    indexmap::map::Entry::Vacant(e) => {
                        e.insert(g.clone());
                    }
                }
            }
        }
        map
    }

    fn accumulate_inputs(&self, op: &Op, dy: &ArrayD<f64>, pending: &mut [Option<ArrayD<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Relu { x } => {
                if self.needs(*x) {
                    let mut dx = dy.clone();
                    for (d, &v) in dx.iter_mut().zip(self.value(*x).iter()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    add_into(pending, *x, dx, self.value(*x));
                }
            }
            Op::Silu { x } => {
                if self.needs(*x) {
                    let mut dx = dy.clone();
                    for (d, &v) in dx.iter_mut().zip(self.value(*x).iter()) {
                        let s = sigmoid_scalar(v);
                        *d *= s * (1.0 + v * (1.0 - s));
                    }
                    add_into(pending, *x, dx, self.value(*x));
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    // Node value holding sigma(x) is the node after x; find it
                    // by recomputing: cheap and avoids storing the output var.
                    let mut dx = dy.clone();
                    for (d, &v) in dx.iter_mut().zip(self.value(*x).iter()) {
                        let s = sigmoid_scalar(v);
                        *d *= s * (1.0 - s);
                    }
                    add_into(pending, *x, dx, self.value(*x));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    add_into(pending, *a, dy.clone(), self.value(*a));
                }
                if self.needs(*b) {
                    add_into(pending, *b, dy.clone(), self.value(*b));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    add_into(pending, *a, dy * self.value(*b), self.value(*a));
                }
                if self.needs(*b) {
                    add_into(pending, *b, dy * self.value(*a), self.value(*b));
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    add_into(pending, *x, dy.mapv(|v| v * c), self.value(*x));
                }
            }
            Op::ScaleChannels { x, gate } => {
                let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                let xv = self.as3(*x);
                let g = self.as1(*gate);
                if self.needs(*x) {
                    let mut dx = dy3.to_owned();
                    for (c, mut plane) in dx.outer_iter_mut().enumerate() {
                        plane *= g[c];
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
                if self.needs(*gate) {
                    let c = xv.dim().0;
                    let mut dg = Array1::<f64>::zeros(c);
                    for ci in 0..c {
                        dg[ci] = (&dy3.index_axis(Axis(0), ci) * &xv.index_axis(Axis(0), ci)).sum();
                    }
                    add_into(pending, *gate, dg.into_dyn(), self.value(*gate));
                }
            }
            Op::ScalePixels { x, gate } => {
                let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                let xv = self.as3(*x);
                let g = self.as3(*gate);
                let plane = g.index_axis(Axis(0), 0);
                if self.needs(*x) {
                    let mut dx = dy3.to_owned();
                    for mut ch in dx.outer_iter_mut() {
                        ch *= &plane;
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
                if self.needs(*gate) {
                    let (c, h, w) = xv.dim();
                    let mut dg = Array3::<f64>::zeros((1, h, w));
                    for ci in 0..c {
                        let mut acc = dg.index_axis_mut(Axis(0), 0);
                        acc += &(&dy3.index_axis(Axis(0), ci) * &xv.index_axis(Axis(0), ci));
                    }
                    add_into(pending, *gate, dg.into_dyn(), self.value(*gate));
                }
            }
            Op::Conv2d { x, w, b, kernel, stride, pad, dilation } => {
                let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                let (c_out, ho, wo) = dy3.dim();
                let dy2 = dy3.into_shape_with_order((c_out, ho * wo)).unwrap();
                let xv = self.as3(*x);
                let (c_in, _, _) = xv.dim();
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let w2 = wv.into_shape_with_order((c_out, c_in * kernel * kernel)).unwrap();

                if self.needs(*w) {
                    let cols = im2col(xv, *kernel, *stride, *pad, *dilation);
                    let dw2 = dy2.dot(&cols.t());
                    let dw = dw2
                        .into_shape_with_order((c_out, c_in, *kernel, *kernel))
                        .unwrap();
                    add_into(pending, *w, dw.into_dyn(), self.value(*w));
                }
                if self.needs(*b) {
                    let db = dy2.sum_axis(Axis(1));
                    add_into(pending, *b, db.into_dyn(), self.value(*b));
                }
                if self.needs(*x) {
                    let dcols = w2.t().dot(&dy2);
                    let mut dx = Array3::<f64>::zeros(xv.dim());
                    col2im_accumulate(&dcols, &mut dx, *kernel, *stride, *pad, *dilation, (ho, wo));
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::Linear { x, w, b } => {
                let dyv = dy.view().into_dimensionality::<Ix1>().unwrap();
                let xv = self.as1(*x);
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
                if self.needs(*w) {
                    let dw = outer(&dyv.to_owned(), &xv.to_owned());
                    add_into(pending, *w, dw.into_dyn(), self.value(*w));
                }
                if self.needs(*b) {
                    add_into(pending, *b, dyv.to_owned().into_dyn(), self.value(*b));
                }
                if self.needs(*x) {
                    let dx = wv.t().dot(&dyv);
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::GlobalMaxPool { x, argmax } => {
                if self.needs(*x) {
                    let xv = self.as3(*x);
                    let (c, h, w) = xv.dim();
                    let dyv = dy.view().into_dimensionality::<Ix1>().unwrap();
                    let mut dx = Array3::<f64>::zeros((c, h, w));
                    for ci in 0..c {
                        let flat = argmax[ci];
                        dx[(ci, flat / w, flat % w)] += dyv[ci];
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::ChannelMax { x, argmax } => {
                if self.needs(*x) {
                    let xv = self.as3(*x);
                    let (c, h, w) = xv.dim();
                    let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                    let mut dx = Array3::<f64>::zeros((c, h, w));
                    for i in 0..h {
                        for j in 0..w {
                            dx[(argmax[i * w + j], i, j)] += dy3[(0, i, j)];
                        }
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::ChannelMean { x } => {
                if self.needs(*x) {
                    let xv = self.as3(*x);
                    let (c, h, w) = xv.dim();
                    let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                    let scale = 1.0 / c as f64;
                    let mut dx = Array3::<f64>::zeros((c, h, w));
                    for ci in 0..c {
                        let mut ch = dx.index_axis_mut(Axis(0), ci);
                        ch += &dy3.index_axis(Axis(0), 0);
                        ch *= scale;
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::ConcatChannels { xs } => {
                let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                let mut offset = 0;
                for &v in xs {
                    let c = self.as3(v).dim().0;
                    if self.needs(v) {
                        let slice = dy3.slice(ndarray::s![offset..offset + c, .., ..]).to_owned();
                        add_into(pending, v, slice.into_dyn(), self.value(v));
                    }
                    offset += c;
                }
            }
            Op::BilinearResize { x } => {
                if self.needs(*x) {
                    let xv = self.as3(*x);
                    let (c, h, w) = xv.dim();
                    let dy3 = dy.view().into_dimensionality::<Ix3>().unwrap();
                    let (_, oh, ow) = dy3.dim();
                    let ty = lerp_table(h, oh);
                    let tx = lerp_table(w, ow);
                    let mut dx = Array3::<f64>::zeros((c, h, w));
                    for ci in 0..c {
                        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let d = dy3[(ci, oy, ox)];
                                dx[(ci, y0, x0)] += (1.0 - fy) * (1.0 - fx) * d;
                                dx[(ci, y0, x1)] += (1.0 - fy) * fx * d;
                                dx[(ci, y1, x0)] += fy * (1.0 - fx) * d;
                                dx[(ci, y1, x1)] += fy * fx * d;
                            }
                        }
                    }
                    add_into(pending, *x, dx.into_dyn(), self.value(*x));
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let d = dy.iter().next().copied().unwrap();
                    let dx = ArrayD::from_elem(self.value(*x).raw_dim(), d);
                    add_into(pending, *x, dx, self.value(*x));
                }
            }
            Op::BceWithLogitsMean { logits, target } => {
                if self.needs(*logits) {
                    let d = dy.iter().next().copied().unwrap();
                    let z = self.value(*logits);
                    let n = z.len() as f64;
                    let mut dz = z.clone();
                    for (g, (&zi, &ti)) in dz.iter_mut().zip(z.iter().zip(target.iter())) {
                        *g = d * (sigmoid_scalar(zi) - ti) / n;
                    }
                    add_into(pending, *logits, dz, self.value(*logits));
                }
            }
        }
    }

    fn as3(&self, v: Var) -> ndarray::ArrayView3<'_, f64> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("expected rank-3 (C,H,W) value")
    }

    fn as1(&self, v: Var) -> ndarray::ArrayView1<'_, f64> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("expected rank-1 value")
    }
}

use ndarray::Ix2;

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[(i, j)] = a[i] * b[j];
        }
    }
    out
}

fn add_into(pending: &mut [Option<ArrayD<f64>>], v: Var, grad: ArrayD<f64>, value: &ArrayD<f64>) {
    debug_assert_eq!(grad.shape(), value.shape(), "gradient shape mismatch");
    match &mut pending[v.0] {
        Some(acc) => *acc += &grad,
        slot @ None => *slot = Some(grad),
    }
}

pub(crate) fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-output (low index, high index, fraction) for half-pixel-center
/// bilinear interpolation.
fn lerp_table(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
