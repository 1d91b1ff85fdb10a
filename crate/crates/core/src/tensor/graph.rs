use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Linear { x: Var, weight: Var, bias: Var },
    ConcatChannels { a: Var, b: Var },
    HadamardLandmark { w: Var, theta: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run computation tape. Build a fresh graph for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn dim_check(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            axis,
            expected,
            got,
        })
    }
}

fn rank_check(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() == rank {
        Ok(())
    } else {
        Err(Error::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        })
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, pad: (usize, usize)) -> Result<Var> {
        let (xi, ki, bi) = (self.value(input), self.value(kernel), self.value(bias));
        rank_check("conv2d", xi, 4)?;
        rank_check("conv2d", ki, 4)?;
        rank_check("conv2d", bi, 1)?;
        let (xs, ks) = (xi.shape(), ki.shape());
        dim_check("conv2d", "channels", xs[1], ks[1])?;
        dim_check("conv2d", "bias", ks[0], bi.len())?;
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            k: ks[0],
            kh: ks[2],
            kw: ks[3],
            ph: pad.0,
            pw: pad.1,
        };
        if geom.kh > geom.h + 2 * geom.ph {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "height",
                expected: geom.h + 2 * geom.ph,
                got: geom.kh,
            });
        }
        if geom.kw > geom.w + 2 * geom.pw {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "width",
                expected: geom.w + 2 * geom.pw,
                got: geom.kw,
            });
        }
        let data = conv::forward(&geom, xi.data(), ki.data(), bi.data());
        let out = Tensor::new(vec![geom.n, geom.k, geom.out_h(), geom.out_w()], data)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Sigmoid(x))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(weight), self.value(bias));
        rank_check("linear", xt, 2)?;
        rank_check("linear", wt, 2)?;
        rank_check("linear", bt, 1)?;
        let (n, d) = (xt.shape()[0], xt.shape()[1]);
        dim_check("linear", "inner", d, wt.shape()[0])?;
        let e = wt.shape()[1];
        dim_check("linear", "bias", e, bt.len())?;
        let mut out = vec![0.0; n * e];
        for r in 0..n {
            let row = &mut out[r * e..(r + 1) * e];
            row.copy_from_slice(bt.data());
            for (i, &xv) in xt.data()[r * d..(r + 1) * d].iter().enumerate() {
                for (o, &wv) in row.iter_mut().zip(&wt.data()[i * e..(i + 1) * e]) {
                    *o += xv * wv;
                }
            }
        }
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(Tensor::new(vec![n, e], out)?, rg, Op::Linear { x, weight, bias }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        rank_check("concat_channels", at, 4)?;
        rank_check("concat_channels", bt, 4)?;
        let (sa, sb) = (at.shape(), bt.shape());
        dim_check("concat_channels", "batch", sa[0], sb[0])?;
        dim_check("concat_channels", "height", sa[2], sb[2])?;
        dim_check("concat_channels", "width", sa[3], sb[3])?;
        let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&at.data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&bt.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let shape = vec![n, ca + cb, sa[2], sa[3]];
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::ConcatChannels { a, b }))
    }

    /// `out[n,c,f,l] = w[n,c,f,l] * theta[l]`.
    pub fn hadamard_landmark(&mut self, w: Var, theta: Var) -> Result<Var> {
        let (wt, tt) = (self.value(w), self.value(theta));
        rank_check("hadamard_landmark", wt, 4)?;
        rank_check("hadamard_landmark", tt, 1)?;
        let l = wt.shape()[3];
        dim_check("hadamard_landmark", "landmarks", l, tt.len())?;
        let th = tt.data();
        let data = wt
            .data()
            .chunks(l)
            .flat_map(|row| row.iter().zip(th).map(|(a, b)| a * b))
            .collect();
        let out = Tensor::new(wt.shape().to_vec(), data)?;
        let rg = self.any_grad(&[w, theta]);
        Ok(self.push(out, rg, Op::HadamardLandmark { w, theta }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("add", a, b, |x, y| x + y)?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("mul", a, b, |x, y| x * y)?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        rank_check("avg_pool2", t, 4)?;
        let s = t.shape();
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::Dimension {
                op: "avg_pool2",
                axis: if ho == 0 { "height" } else { "width" },
                expected: 2,
                got: if ho == 0 { h } else { w },
            });
        }
        let src = t.data();
        let mut out = vec![0.0; nc * ho * wo];
        for p in 0..nc {
            let plane = &src[p * h * w..];
            for y in 0..ho {
                for xo in 0..wo {
                    let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
                    out[(p * ho + y) * wo + xo] = 0.25
                        * (plane[r0 + 2 * xo]
                            + plane[r0 + 2 * xo + 1]
                            + plane[r1 + 2 * xo]
                            + plane[r1 + 2 * xo + 1]);
                }
            }
        }
        let shape = vec![s[0], s[1], ho, wo];
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::AvgPool2(x)))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        rank_check("global_avg_pool", t, 4)?;
        let s = t.shape();
        let plane = s[2] * s[3];
        let data = t
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let shape = vec![s[0], s[1]];
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::GlobalAvgPool(x)))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        rank_check("softmax_cross_entropy", t, 2)?;
        let (n, c) = (t.shape()[0], t.shape()[1]);
        dim_check("softmax_cross_entropy", "batch", n, labels.len())?;
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &t.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln();
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp() / z;
            }
            loss -= row[label] - max - log_z;
        }
        loss /= n as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            if at.shape().len() != bt.shape().len() {
                return Err(Error::Rank {
                    op,
                    expected: at.shape().len(),
                    shape: bt.shape().to_vec(),
                });
            }
            let axis = at
                .shape()
                .iter()
                .zip(bt.shape())
                .position(|(x, y)| x != y)
                .unwrap_or(0);
            return Err(Error::Dimension {
                op,
                axis: ["axis0", "axis1", "axis2", "axis3", "axis4"][axis.min(4)],
                expected: at.shape()[axis],
                got: bt.shape()[axis],
            });
        }
        Ok(at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    /// Populates gradients of every `requires_grad` ancestor of `loss`.
    ///
    /// A graph can be differentiated once; build a new one for the next step.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, delta) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if wants(input) {
                    let k = self.value(*kernel).data();
                    out.push((*input, conv::backward_input(geom, g, k)));
                }
                if wants(kernel) {
                    let x = self.value(*input).data();
                    out.push((*kernel, conv::backward_kernel(geom, g, x)));
                }
                if wants(bias) {
                    out.push((*bias, conv::backward_bias(geom, g)));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let s = node.value.data();
                out.push((*x, s.iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect()));
            }
            Op::Linear { x, weight, bias } => {
                let (xt, wt) = (self.value(*x), self.value(*weight));
                let (n, d) = (xt.shape()[0], xt.shape()[1]);
                let e = wt.shape()[1];
                if wants(x) {
                    let mut gx = vec![0.0; n * d];
                    for r in 0..n {
                        let gr = &g[r * e..(r + 1) * e];
                        for (i, gxv) in gx[r * d..(r + 1) * d].iter_mut().enumerate() {
                            *gxv = gr
                                .iter()
                                .zip(&wt.data()[i * e..(i + 1) * e])
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                    }
                    out.push((*x, gx));
                }
                if wants(weight) {
                    let mut gw = vec![0.0; d * e];
                    for r in 0..n {
                        let gr = &g[r * e..(r + 1) * e];
                        for (i, &xv) in xt.data()[r * d..(r + 1) * d].iter().enumerate() {
                            for (o, gv) in gw[i * e..(i + 1) * e].iter_mut().zip(gr) {
                                *o += xv * gv;
                            }
                        }
                    }
                    out.push((*weight, gw));
                }
                if wants(bias) {
                    let mut gb = vec![0.0; e];
                    for r in 0..n {
                        gb.iter_mut().zip(&g[r * e..(r + 1) * e]).for_each(|(a, b)| *a += b);
                    }
                    out.push((*bias, gb));
                }
            }
            Op::ConcatChannels { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for chunk in g.chunks((ca + cb) * plane) {
                    ga.extend_from_slice(&chunk[..ca * plane]);
                    gb.extend_from_slice(&chunk[ca * plane..]);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::HadamardLandmark { w, theta } => {
                let (wt, tt) = (self.value(*w), self.value(*theta));
                let l = tt.len();
                if wants(w) {
                    let gw = g
                        .chunks(l)
                        .flat_map(|row| row.iter().zip(tt.data()).map(|(a, b)| a * b))
                        .collect();
                    out.push((*w, gw));
                }
                if wants(theta) {
                    let mut gt = vec![0.0; l];
                    for (grow, wrow) in g.chunks(l).zip(wt.data().chunks(l)) {
                        for ((acc, gv), wv) in gt.iter_mut().zip(grow).zip(wrow) {
                            *acc += gv * wv;
                        }
                    }
                    out.push((*theta, gt));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                out.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                out.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(x, s) => out.push((*x, g.iter().map(|v| v * s).collect())),
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::AvgPool2(x) => {
                let s = self.value(*x).shape();
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = vec![0.0; nc * h * w];
                for p in 0..nc {
                    for y in 0..ho {
                        for xo in 0..wo {
                            let v = 0.25 * g[(p * ho + y) * wo + xo];
                            let base = p * h * w;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                gx[base + (2 * y + dy) * w + 2 * xo + dx] = v;
                            }
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x).shape();
                let plane = s[2] * s[3];
                let inv = 1.0 / plane as f64;
                out.push((*x, g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, plane)).collect()));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    gl[r * c + label] -= scale;
                }
                out.push((*logits, gl));
            }
        }
        out
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
