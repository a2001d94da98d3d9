use std::sync::Arc;

use super::conv::{self, ConvGeometry, Dims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed linear map usable as a tape operation, e.g. inverse STFT with a
/// frozen phase. `adjoint` must be the exact transpose of `apply`.
pub trait LinearOperator: Send + Sync {
    fn input_shape(&self) -> &[usize];
    fn output_shape(&self) -> &[usize];
    fn apply(&self, input: &[f64]) -> Vec<f64>;
    fn adjoint(&self, output_grad: &[f64]) -> Vec<f64>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Scale(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: (usize, usize),
        geo: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: (usize, usize),
        geo: ConvGeometry,
    },
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    L2Norm(Var),
    Log10(Var),
    ClampMax(Var, f64),
    Concat(Vec<Var>),
    Permute3 {
        input: Var,
        perm: [usize; 3],
    },
    Reshape(Var),
    Linear(Var, Arc<dyn LinearOperator>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tensor that required grad; `None` otherwise.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape already validated")
}

fn dims3(t: &Tensor) -> Result<Dims> {
    let (c, h, w) = t.dims3()?;
    Ok(Dims { c, h, w })
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input tensor. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise division. Zeros in `b` follow IEEE semantics.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("div", x, y)?;
        let out = zip_map(x, y, |p, q| p / q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    /// `a * s` where `s` is a one-element tensor on the tape.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "scale",
                left: self.value(a).shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let k = sv.item();
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a, s]);
        Ok(self.push(out, Op::Scale(a, s), rg))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    ) -> Result<Var> {
        let xd = dims3(self.value(input))?;
        let ws = self.value(weight).shape().to_vec();
        let &[co, ci, kh, kw] = ws.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "conv2d weight must be rank 4, got {ws:?}"
            )));
        };
        if ci != xd.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: self.value(input).shape().to_vec(),
                right: ws,
            });
        }
        let padded = (xd.h + 2 * geo.padding.0, xd.w + 2 * geo.padding.1);
        if kh > padded.0 || kw > padded.1 {
            return Err(Error::KernelTooLarge {
                op: "conv2d",
                kernel: (kh, kw),
                padded,
            });
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [co] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: vec![co],
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let od = Dims {
            c: co,
            h: conv::conv_out_extent(xd.h, kh, geo.stride.0, geo.padding.0)?,
            w: conv::conv_out_extent(xd.w, kw, geo.stride.1, geo.padding.1)?,
        };
        let out = conv::conv2d_forward(
            self.value(input).data(),
            xd,
            self.value(weight).data(),
            (kh, kw),
            bias.map(|b| self.value(b).data()),
            geo,
            od,
        );
        let out = Tensor::new(&[od.c, od.h, od.w], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel: (kh, kw),
                geo,
            },
            rg,
        ))
    }

    /// Transposed convolution; `weight` is `[C_in, C_out, kH, kW]`.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let xd = dims3(self.value(input))?;
        let ws = self.value(weight).shape().to_vec();
        let &[ci, co, kh, kw] = ws.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "conv2d_transpose weight must be rank 4, got {ws:?}"
            )));
        };
        if ci != xd.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                left: self.value(input).shape().to_vec(),
                right: ws,
            });
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [co] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose bias",
                    left: vec![co],
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let od = Dims {
            c: co,
            h: conv::conv_transpose_out_extent(xd.h, kh, geo.stride.0, geo.padding.0, output_padding.0)?,
            w: conv::conv_transpose_out_extent(xd.w, kw, geo.stride.1, geo.padding.1, output_padding.1)?,
        };
        // The transposed output plays the role of a conv2d input.
        if conv::conv_out_extent(od.h, kh, geo.stride.0, geo.padding.0)? != xd.h
            || conv::conv_out_extent(od.w, kw, geo.stride.1, geo.padding.1)? != xd.w
        {
            return Err(Error::InvalidArgument(format!(
                "output_padding {output_padding:?} must be smaller than stride {:?}",
                geo.stride
            )));
        }
        let mut out = conv::conv2d_backward_input(
            self.value(input).data(),
            xd,
            self.value(weight).data(),
            (kh, kw),
            geo,
            od,
        );
        if let Some(b) = bias {
            conv::add_bias(&mut out, od, self.value(b).data());
        }
        let out = Tensor::new(&[od.c, od.h, od.w], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                kernel: (kh, kw),
                geo,
            },
            rg,
        ))
    }

    /// Per-channel normalization over `H x W` with population variance.
    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xd = dims3(self.value(input))?;
        let n = xd.plane();
        if n < 2 {
            return Err(Error::DegenerateVariance { per_channel: n });
        }
        for p in [gamma, beta] {
            if self.value(p).shape() != [xd.c] {
                return Err(Error::ShapeMismatch {
                    op: "instance_norm",
                    left: vec![xd.c],
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; xd.c];
        for c in 0..xd.c {
            let plane = &x[c * n..(c + 1) * n];
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[c] = is;
            for i in 0..n {
                let h = (plane[i] - mean) * is;
                xhat[c * n + i] = h;
                out[c * n + i] = g[c] * h + b[c];
            }
        }
        let out = Tensor::new(self.value(input).shape(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.rg(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Dot product over the flattened elements.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).dot(self.value(b))?);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Dot(a, b), rg))
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).l2_norm());
        let rg = self.rg(&[a]);
        self.push(out, Op::L2Norm(a), rg)
    }

    pub fn log10(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::LogOfNonPositive(bad));
        }
        let out = self.value(a).map(f64::log10);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Log10(a), rg))
    }

    /// `min(a, max)`; gradient is cut where the clamp is active.
    pub fn clamp_max(&mut self, a: Var, max: f64) -> Var {
        let out = self.value(a).map(|v| v.min(max));
        let rg = self.rg(&[a]);
        self.push(out, Op::ClampMax(a, max), rg)
    }

    /// Concatenation of rank-3 tensors along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let (_, h, w) = self.value(first).dims3()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (c, ph, pw) = t.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.value(first).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            c_total += c;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(&[c_total, h, w], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Reorders the axes of a rank-3 tensor: output axis `i` is input axis `perm[i]`.
    pub fn permute3(&mut self, input: Var, perm: [usize; 3]) -> Result<Var> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(Error::InvalidArgument(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let t = self.value(input);
        let (c, h, w) = t.dims3()?;
        let out = permute3_data(t.data(), [c, h, w], perm);
        let in_dims = [c, h, w];
        let out = Tensor::new(&[in_dims[perm[0]], in_dims[perm[1]], in_dims[perm[2]]], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Permute3 { input, perm }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn linear(&mut self, a: Var, op: Arc<dyn LinearOperator>) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != op.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "linear operator",
                left: op.input_shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        let out = Tensor::new(op.output_shape(), op.apply(t.data()))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Linear(a, op), rg))
    }

    /// Reverse pass from a scalar loss. Every tensor recorded with
    /// `requires_grad` gets a gradient (zeros if the loss does not reach it).
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Tensor::new(node.value.shape(), data).expect("gradient matches value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &dyn Fn() -> Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let contrib = f();
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &nodes[id].value;

        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|| g.to_vec());
                acc(*b, &|| g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, &|| g.to_vec());
                acc(*b, &|| g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                acc(*a, &|| g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                acc(*b, &|| g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
            }
            Op::Div(a, b) => {
                acc(*a, &|| g.iter().zip(val(*b)).map(|(g, y)| g / y).collect());
                acc(*b, &|| {
                    g.iter()
                        .zip(val(*a))
                        .zip(val(*b))
                        .map(|((g, x), y)| -g * x / (y * y))
                        .collect()
                });
            }
            Op::AddScalar(a) => acc(*a, &|| g.to_vec()),
            Op::MulScalar(a, s) => acc(*a, &|| g.iter().map(|v| v * s).collect()),
            Op::Scale(a, s) => {
                let k = val(*s)[0];
                acc(*a, &|| g.iter().map(|v| v * k).collect());
                acc(*s, &|| vec![g.iter().zip(val(*a)).map(|(g, x)| g * x).sum()]);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
                geo,
            } => {
                let xd = dims3(&nodes[input.0].value).expect("rank 3");
                let od = dims3(out).expect("rank 3");
                acc(*input, &|| conv::conv2d_backward_input(g, od, val(*weight), *kernel, *geo, xd));
                acc(*weight, &|| conv::conv2d_backward_weight(g, od, val(*input), xd, *kernel, *geo));
                if let Some(b) = bias {
                    acc(*b, &|| conv::bias_grad(g, od));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                kernel,
                geo,
            } => {
                let xd = dims3(&nodes[input.0].value).expect("rank 3");
                let od = dims3(out).expect("rank 3");
                acc(*input, &|| conv::conv2d_forward(g, od, val(*weight), *kernel, None, *geo, xd));
                acc(*weight, &|| conv::conv2d_backward_weight(val(*input), xd, g, od, *kernel, *geo));
                if let Some(b) = bias {
                    acc(*b, &|| conv::bias_grad(g, od));
                }
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = dims3(out).expect("rank 3");
                let n = d.plane();
                let gam = val(*gamma);
                acc(*input, &|| {
                    let mut gx = vec![0.0; g.len()];
                    for c in 0..d.c {
                        let r = c * n..(c + 1) * n;
                        let (gp, hp) = (&g[r.clone()], &xhat[r.clone()]);
                        let sum_g: f64 = gp.iter().sum();
                        let sum_gh: f64 = gp.iter().zip(hp).map(|(a, b)| a * b).sum();
                        let k = gam[c] * inv_std[c] / n as f64;
                        for (i, o) in gx[r].iter_mut().enumerate() {
                            *o = k * (n as f64 * gp[i] - sum_g - hp[i] * sum_gh);
                        }
                    }
                    gx
                });
                acc(*gamma, &|| {
                    (0..d.c)
                        .map(|c| {
                            let r = c * n..(c + 1) * n;
                            g[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum()
                        })
                        .collect()
                });
                acc(*beta, &|| g.chunks(n).map(|p| p.iter().sum()).collect());
            }
            Op::LeakyRelu(a, slope) => acc(*a, &|| {
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x >= 0.0 { *g } else { g * slope })
                    .collect()
            }),
            Op::Sigmoid(a) => acc(*a, &|| {
                g.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect()
            }),
            Op::Sum(a) => acc(*a, &|| vec![g[0]; nodes[a.0].value.len()]),
            Op::Mean(a) => {
                let n = nodes[a.0].value.len();
                acc(*a, &|| vec![g[0] / n as f64; n]);
            }
            Op::Dot(a, b) => {
                acc(*a, &|| val(*b).iter().map(|y| g[0] * y).collect());
                acc(*b, &|| val(*a).iter().map(|x| g[0] * x).collect());
            }
            Op::L2Norm(a) => {
                let norm = out.item();
                // Subgradient zero at the origin.
                let k = if norm > 0.0 { g[0] / norm } else { 0.0 };
                acc(*a, &|| val(*a).iter().map(|x| k * x).collect());
            }
            Op::Log10(a) => acc(*a, &|| {
                g.iter()
                    .zip(val(*a))
                    .map(|(g, x)| g / (x * std::f64::consts::LN_10))
                    .collect()
            }),
            Op::ClampMax(a, max) => acc(*a, &|| {
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x < *max { *g } else { 0.0 })
                    .collect()
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    let start = offset;
                    acc(*p, &|| g[start..start + len].to_vec());
                    offset += len;
                }
            }
            Op::Permute3 { input, perm } => {
                let od = out.shape();
                let inverse = invert_perm(*perm);
                acc(*input, &|| permute3_data(g, [od[0], od[1], od[2]], inverse));
            }
            Op::Reshape(a) => acc(*a, &|| g.to_vec()),
            Op::Linear(a, op) => acc(*a, &|| op.adjoint(g)),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn invert_perm(perm: [usize; 3]) -> [usize; 3] {
    let mut inv = [0; 3];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn permute3_data(data: &[f64], dims: [usize; 3], perm: [usize; 3]) -> Vec<f64> {
    let od = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    let in_strides = [dims[1] * dims[2], dims[2], 1];
    let s = [in_strides[perm[0]], in_strides[perm[1]], in_strides[perm[2]]];
    let mut out = Vec::with_capacity(data.len());
    for i in 0..od[0] {
        for j in 0..od[1] {
            let base = i * s[0] + j * s[1];
            for k in 0..od[2] {
                out.push(data[base + k * s[2]]);
            }
        }
    }
    out
}
