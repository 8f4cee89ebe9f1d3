//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Each op records its inputs and whatever forward state its backward pass
//! needs. Tensors that take part in convolutions and normalizations are laid
//! out as `[batch, channels, depth, height, width]`; `depth` is the frame axis.

use super::tensor::{matmul, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a 3-D convolution. Padding is symmetric per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    /// Stride 1, "same" padding.
    pub fn same(kernel: [usize; 3]) -> Self {
        Self {
            kernel,
            stride: [1, 1, 1],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    /// Spatial 3x3 with stride 2 in height and width.
    pub fn spatial_down() -> Self {
        Self {
            kernel: [1, 3, 3],
            stride: [1, 2, 2],
            padding: [0, 1, 1],
        }
    }

    fn out_dims(&self, d: usize, h: usize, w: usize) -> [usize; 3] {
        let o = |n: usize, i: usize| (n + 2 * self.padding[i] - self.kernel[i]) / self.stride[i] + 1;
        [o(d, 0), o(h, 1), o(w, 2)]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1]
    }
}

enum Op<T> {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
        in_dims: [usize; 4],
        cols: Vec<Vec<T>>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Silu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    ScaleShift {
        x: Var,
        scale: Var,
        shift: Var,
    },
    ChannelBias {
        x: Var,
        bias: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Upsample2 {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward pass. Build it, call [`Graph::backward`], read gradients.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 3-D convolution: `x [B,Cin,D,H,W]`, `w [Cout,Cin,kd,kh,kw]`, optional `b [Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 5, "conv3d input must be 5-D");
        assert_eq!(ws.len(), 5, "conv3d weight must be 5-D");
        assert_eq!(xs[1], ws[1], "conv3d channel mismatch");
        assert_eq!([ws[2], ws[3], ws[4]], spec.kernel, "conv3d kernel mismatch");
        let (bsz, cin, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
        let cout = ws[0];
        let [od, oh, ow] = spec.out_dims(d, h, wd);
        let k = cin * spec.kernel.iter().product::<usize>();
        let l = od * oh * ow;
        let in_sz = cin * d * h * wd;
        let mut out = vec![T::zero(); bsz * cout * l];
        let mut cols_all = Vec::with_capacity(bsz);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..bsz {
                let xin = &xv[bi * in_sz..(bi + 1) * in_sz];
                let cols = if spec.is_pointwise() {
                    Vec::new()
                } else {
                    im2col(xin, cin, [d, h, wd], &spec)
                };
                let src: &[T] = if spec.is_pointwise() { xin } else { &cols };
                matmul(
                    cout,
                    k,
                    l,
                    wv,
                    false,
                    src,
                    false,
                    &mut out[bi * cout * l..(bi + 1) * cout * l],
                    false,
                );
                cols_all.push(cols);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for bi in 0..bsz {
                    for co in 0..cout {
                        let bias = bv[co];
                        for o in &mut out[(bi * cout + co) * l..(bi * cout + co + 1) * l] {
                            *o += bias;
                        }
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            Tensor::from_vec(&[bsz, cout, od, oh, ow], out),
            Op::Conv3d {
                x,
                w,
                b,
                spec,
                in_dims: [cin, d, h, wd],
                cols: cols_all,
            },
            ng,
        )
    }

    /// Group normalization over `[B, C, ...]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (bsz, c) = (xs[0], xs[1]);
        assert_eq!(c % groups, 0, "channels {c} not divisible by groups {groups}");
        let s: usize = xs[2..].iter().product();
        let cpg = c / groups;
        let m = cpg * s;
        let eps = T::lit(1e-5);
        let mut mean = vec![T::zero(); bsz * groups];
        let mut rstd = vec![T::zero(); bsz * groups];
        let mut out = vec![T::zero(); bsz * c * s];
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            let mf = T::from_usize(m).unwrap();
            for bi in 0..bsz {
                for g in 0..groups {
                    let base = (bi * c + g * cpg) * s;
                    let seg = &xv[base..base + m];
                    let mu = seg.iter().copied().sum::<T>() / mf;
                    let var = seg.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / mf;
                    let r = T::one() / (var + eps).sqrt();
                    mean[bi * groups + g] = mu;
                    rstd[bi * groups + g] = r;
                    for cc in 0..cpg {
                        let ch = g * cpg + cc;
                        let off = base + cc * s;
                        for i in 0..s {
                            out[off + i] = (xv[off + i] - mu) * r * gv[ch] + bv[ch];
                        }
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            Tensor::from_vec(&xs, out),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            ng,
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out: Vec<T> = v.data().iter().map(|&a| a * sigmoid(a)).collect();
        let t = Tensor::from_vec(v.shape(), out);
        let ng = self.ng(x);
        self.push(t, Op::Silu { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), out);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add { a, b }, ng)
    }

    /// `x * (1 + scale) + shift` with `scale`, `shift` of shape `[B, C]`.
    pub fn scale_shift(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (bsz, c) = (xs[0], xs[1]);
        assert_eq!(self.shape(scale), &[bsz, c]);
        assert_eq!(self.shape(shift), &[bsz, c]);
        let s: usize = xs[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        for bc in 0..bsz * c {
            let k = T::one() + sc[bc];
            for o in &mut out[bc * s..(bc + 1) * s] {
                *o = *o * k + sh[bc];
            }
        }
        let ng = self.ng(x) || self.ng(scale) || self.ng(shift);
        self.push(Tensor::from_vec(&xs, out), Op::ScaleShift { x, scale, shift }, ng)
    }

    /// Adds a per-sample, per-channel bias `[B, C]`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (bsz, c) = (xs[0], xs[1]);
        assert_eq!(self.shape(bias), &[bsz, c]);
        let s: usize = xs[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        let bv = self.value(bias).data();
        for bc in 0..bsz * c {
            for o in &mut out[bc * s..(bc + 1) * s] {
                *o += bv[bc];
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(Tensor::from_vec(&xs, out), Op::ChannelBias { x, bias }, ng)
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[2..], sb[2..], "concat spatial mismatch");
        let s: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut out = Vec::with_capacity(sa[0] * (ca + cb) * s);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for bi in 0..sa[0] {
            out.extend_from_slice(&av[bi * ca * s..(bi + 1) * ca * s]);
            out.extend_from_slice(&bv[bi * cb * s..(bi + 1) * cb * s]);
        }
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::from_vec(&shape, out), Op::Concat { a, b }, ng)
    }

    /// Nearest-neighbour 2x upsampling of the last two axes of a 5-D tensor.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (outer, h, w) = (xs[0] * xs[1] * xs[2], xs[3], xs[4]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); outer * 4 * h * w];
        for o in 0..outer {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(o * 2 * h + i) * 2 * w + j] = xv[(o * h + i / 2) * w + j / 2];
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Tensor::from_vec(&[xs[0], xs[1], xs[2], 2 * h, 2 * w], out),
            Op::Upsample2 { x },
            ng,
        )
    }

    /// `x [B, In] * w[Out, In]^T + b[Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2);
        assert_eq!(xs[1], ws[1], "linear input mismatch");
        let (bsz, nin, nout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); bsz * nout];
        matmul(
            bsz,
            nin,
            nout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        let bv = self.value(b).data();
        for bi in 0..bsz {
            for o in 0..nout {
                out[bi * nout + o] += bv[o];
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::from_vec(&[bsz, nout], out), Op::Linear { x, w, b }, ng)
    }

    /// Mean squared error against a target; returns a one-element tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        assert_eq!(self.shape(pred), self.shape(target), "mse shape mismatch");
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let n = T::from_usize(p.len()).unwrap();
        let s = p.iter().zip(t).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n;
        let ng = self.ng(pred) || self.ng(target);
        self.push(Tensor::scalar(s), Op::Mse { pred, target }, ng)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.shape(out), T::one()));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (v, pg) in self.op_backward(node, &g) {
                if !self.ng(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            // keep intermediate gradients out of the result to bound memory
        }
        // only leaves keep their gradients
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Gradients { grads }
    }

    fn op_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv3d {
                x,
                w,
                b,
                spec,
                in_dims,
                cols,
            } => {
                let ws = self.shape(*w).to_vec();
                let cout = ws[0];
                let [cin, d, h, wd] = *in_dims;
                let k = cin * spec.kernel.iter().product::<usize>();
                let gs = g.shape();
                let bsz = gs[0];
                let l = gs[2] * gs[3] * gs[4];
                let in_sz = cin * d * h * wd;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut res = Vec::new();
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); cout * k];
                    for bi in 0..bsz {
                        let go = &gd[bi * cout * l..(bi + 1) * cout * l];
                        let src: &[T] = if spec.is_pointwise() {
                            &xv[bi * in_sz..(bi + 1) * in_sz]
                        } else {
                            &cols[bi]
                        };
                        matmul(cout, l, k, go, false, src, true, &mut dw, true);
                    }
                    res.push((*w, Tensor::from_vec(&ws, dw)));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![T::zero(); cout];
                        for bi in 0..bsz {
                            for (co, slot) in db.iter_mut().enumerate() {
                                let s = &gd[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                                *slot += s.iter().copied().sum::<T>();
                            }
                        }
                        res.push((*b, Tensor::from_vec(&[cout], db)));
                    }
                }
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); bsz * in_sz];
                    let mut dcols = vec![T::zero(); k * l];
                    for bi in 0..bsz {
                        let go = &gd[bi * cout * l..(bi + 1) * cout * l];
                        if spec.is_pointwise() {
                            matmul(
                                k,
                                cout,
                                l,
                                wv,
                                true,
                                go,
                                false,
                                &mut dx[bi * in_sz..(bi + 1) * in_sz],
                                false,
                            );
                        } else {
                            matmul(k, cout, l, wv, true, go, false, &mut dcols, false);
                            col2im(&dcols, &mut dx[bi * in_sz..(bi + 1) * in_sz], cin, [d, h, wd], spec);
                        }
                    }
                    res.push((*x, Tensor::from_vec(self.shape(*x), dx)));
                }
                res
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let xs = self.shape(*x);
                let (bsz, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let cpg = c / groups;
                let m = cpg * s;
                let mf = T::from_usize(m).unwrap();
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for bi in 0..bsz {
                    for gi in 0..*groups {
                        let mu = mean[bi * groups + gi];
                        let r = rstd[bi * groups + gi];
                        let base = (bi * c + gi * cpg) * s;
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for cc in 0..cpg {
                            let ch = gi * cpg + cc;
                            let off = base + cc * s;
                            for i in 0..s {
                                let xhat = (xv[off + i] - mu) * r;
                                let dy = gd[off + i];
                                dgamma[ch] += dy * xhat;
                                dbeta[ch] += dy;
                                let dxh = dy * gv[ch];
                                sum_dxhat += dxh;
                                sum_dxhat_xhat += dxh * xhat;
                            }
                        }
                        let a = sum_dxhat / mf;
                        let bterm = sum_dxhat_xhat / mf;
                        for cc in 0..cpg {
                            let ch = gi * cpg + cc;
                            let off = base + cc * s;
                            for i in 0..s {
                                let xhat = (xv[off + i] - mu) * r;
                                let dxh = gd[off + i] * gv[ch];
                                dx[off + i] = r * (dxh - a - xhat * bterm);
                            }
                        }
                    }
                }
                vec![
                    (*x, Tensor::from_vec(xs, dx)),
                    (*gamma, Tensor::from_vec(&[c], dgamma)),
                    (*beta, Tensor::from_vec(&[c], dbeta)),
                ]
            }
            Op::Silu { x } => {
                let xv = self.value(*x).data();
                let dx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&a, &dy)| {
                        let s = sigmoid(a);
                        dy * s * (T::one() + a * (T::one() - s))
                    })
                    .collect();
                vec![(*x, Tensor::from_vec(g.shape(), dx))]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::ScaleShift { x, scale, shift } => {
                let xs = self.shape(*x);
                let (bsz, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let xv = self.value(*x).data();
                let sc = self.value(*scale).data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dscale = vec![T::zero(); bsz * c];
                let mut dshift = vec![T::zero(); bsz * c];
                for bc in 0..bsz * c {
                    let k = T::one() + sc[bc];
                    for i in bc * s..(bc + 1) * s {
                        dx[i] = gd[i] * k;
                        dscale[bc] += gd[i] * xv[i];
                        dshift[bc] += gd[i];
                    }
                }
                vec![
                    (*x, Tensor::from_vec(xs, dx)),
                    (*scale, Tensor::from_vec(&[bsz, c], dscale)),
                    (*shift, Tensor::from_vec(&[bsz, c], dshift)),
                ]
            }
            Op::ChannelBias { x, bias } => {
                let xs = self.shape(*x);
                let (bsz, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let mut db = vec![T::zero(); bsz * c];
                for (bc, slot) in db.iter_mut().enumerate() {
                    *slot = gd[bc * s..(bc + 1) * s].iter().copied().sum();
                }
                vec![(*x, g.clone()), (*bias, Tensor::from_vec(&[bsz, c], db))]
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let s: usize = sa[2..].iter().product();
                let (ca, cb) = (sa[1], sb[1]);
                let mut ga = Vec::with_capacity(sa[0] * ca * s);
                let mut gb = Vec::with_capacity(sb[0] * cb * s);
                for bi in 0..sa[0] {
                    let base = bi * (ca + cb) * s;
                    ga.extend_from_slice(&gd[base..base + ca * s]);
                    gb.extend_from_slice(&gd[base + ca * s..base + (ca + cb) * s]);
                }
                vec![(*a, Tensor::from_vec(&sa, ga)), (*b, Tensor::from_vec(&sb, gb))]
            }
            Op::Upsample2 { x } => {
                let xs = self.shape(*x).to_vec();
                let (outer, h, w) = (xs[0] * xs[1] * xs[2], xs[3], xs[4]);
                let mut dx = vec![T::zero(); outer * h * w];
                for o in 0..outer {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dx[(o * h + i / 2) * w + j / 2] += gd[(o * 2 * h + i) * 2 * w + j];
                        }
                    }
                }
                vec![(*x, Tensor::from_vec(&xs, dx))]
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (bsz, nin, nout) = (xs[0], xs[1], ws[0]);
                let mut dx = vec![T::zero(); bsz * nin];
                matmul(bsz, nout, nin, gd, false, self.value(*w).data(), false, &mut dx, false);
                let mut dw = vec![T::zero(); nout * nin];
                matmul(nout, bsz, nin, gd, true, self.value(*x).data(), false, &mut dw, false);
                let mut db = vec![T::zero(); nout];
                for bi in 0..bsz {
                    for o in 0..nout {
                        db[o] += gd[bi * nout + o];
                    }
                }
                vec![
                    (*x, Tensor::from_vec(&xs, dx)),
                    (*w, Tensor::from_vec(&ws, dw)),
                    (*b, Tensor::from_vec(&[nout], db)),
                ]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let k = gd[0] * T::lit(2.0) / T::from_usize(p.len()).unwrap();
                let dp: Vec<T> = p.iter().zip(t).map(|(a, b)| (*a - *b) * k).collect();
                let dt: Vec<T> = dp.iter().map(|v| -*v).collect();
                vec![
                    (*pred, Tensor::from_vec(self.shape(*pred), dp)),
                    (*target, Tensor::from_vec(self.shape(*target), dt)),
                ]
            }
        }
    }
}

fn im2col<T: Real>(x: &[T], cin: usize, dims: [usize; 3], spec: &ConvSpec) -> Vec<T> {
    let [d, h, w] = dims;
    let [od, oh, ow] = spec.out_dims(d, h, w);
    let [kd, kh, kw] = spec.kernel;
    let l = od * oh * ow;
    let mut cols = vec![T::zero(); cin * kd * kh * kw * l];
    let mut row = 0;
    for c in 0..cin {
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * l..(row + 1) * l];
                    for zo in 0..od {
                        let zi = (zo * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                        if zi < 0 || zi >= d as isize {
                            continue;
                        }
                        for yo in 0..oh {
                            let yi = (yo * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                            if yi < 0 || yi >= h as isize {
                                continue;
                            }
                            let src_row = ((c * d + zi as usize) * h + yi as usize) * w;
                            let dst_row = (zo * oh + yo) * ow;
                            for xo in 0..ow {
                                let xi = (xo * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                if xi >= 0 && xi < w as isize {
                                    dst[dst_row + xo] = x[src_row + xi as usize];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], dx: &mut [T], cin: usize, dims: [usize; 3], spec: &ConvSpec) {
    let [d, h, w] = dims;
    let [od, oh, ow] = spec.out_dims(d, h, w);
    let [kd, kh, kw] = spec.kernel;
    let l = od * oh * ow;
    let mut row = 0;
    for c in 0..cin {
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * l..(row + 1) * l];
                    for zo in 0..od {
                        let zi = (zo * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                        if zi < 0 || zi >= d as isize {
                            continue;
                        }
                        for yo in 0..oh {
                            let yi = (yo * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                            if yi < 0 || yi >= h as isize {
                                continue;
                            }
                            let dst_row = ((c * d + zi as usize) * h + yi as usize) * w;
                            let src_row = (zo * oh + yo) * ow;
                            for xo in 0..ow {
                                let xi = (xo * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                if xi >= 0 && xi < w as isize {
                                    dx[dst_row + xi as usize] += src[src_row + xo];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of leaf gradients of `sum(out * probe)` for a fixed random probe.
    fn check<F>(leaves: Vec<Tensor<f64>>, build: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let forward = |ls: &[Tensor<f64>]| -> Tensor<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = ls.iter().map(|t| g.param(t.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out).clone()
        };
        let out0 = forward(&leaves);
        let probe = rand_tensor(&mut rng, out0.shape());
        let eval =
            |ls: &[Tensor<f64>]| -> f64 { forward(ls).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };

        // analytic: backward seeded with probe
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        let target = {
            // loss = mse(out, out0 - probe * n/2) has gradient (out - out0 + probe*n/2)*2/n = probe at out = out0
            let n = out0.numel() as f64;
            let d: Vec<f64> = out0
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, p)| a - p * n / 2.0)
                .collect();
            Tensor::from_vec(out0.shape(), d)
        };
        let tv = g.input(target);
        let loss = g.mse(out, tv);
        let grads = g.backward(loss);

        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let an = grads.get(vars[li]).expect("leaf gradient");
            for idx in 0..leaf.numel().min(40) {
                let mut plus = leaves.clone();
                plus[li].data_mut()[idx] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[idx] -= h;
                let fp = eval(&plus);
                let fm = eval(&minus);
                let num = (fp - fm) / (2.0 * h);
                let a = an.data()[idx];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-5, "leaf {li} idx {idx}: analytic {a} numeric {num} rel {rel}");
            }
        }
    }

    #[test]
    fn conv3d_same_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 2, 3, 4, 5]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        check(vec![x, w, b], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), ConvSpec::same([3, 3, 3]))
        });
    }

    #[test]
    fn conv3d_strided_and_pointwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[2, 2, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 1, 3, 3]);
        check(vec![x.clone(), w], |g, v| {
            g.conv3d(v[0], v[1], None, ConvSpec::spatial_down())
        });
        let wp = rand_tensor(&mut rng, &[4, 2, 1, 1, 1]);
        let bp = rand_tensor(&mut rng, &[4]);
        check(vec![x, wp, bp], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), ConvSpec::same([1, 1, 1]))
        });
    }

    #[test]
    fn group_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 4, 2, 3, 3]);
        let gm = rand_tensor(&mut rng, &[4]);
        let bt = rand_tensor(&mut rng, &[4]);
        check(vec![x, gm, bt], |g, v| g.group_norm(v[0], v[1], v[2], 2));
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, &[2, 3, 2, 2, 2]);
        let b = rand_tensor(&mut rng, &[2, 2, 2, 2, 2]);
        let sc = rand_tensor(&mut rng, &[2, 5]);
        let sh = rand_tensor(&mut rng, &[2, 5]);
        let bias = rand_tensor(&mut rng, &[2, 5]);
        check(vec![a, b, sc, sh, bias], |g, v| {
            let c = g.concat(v[0], v[1]);
            let s = g.silu(c);
            let f = g.scale_shift(s, v[2], v[3]);
            let cb = g.channel_bias(f, v[4]);
            let u = g.upsample2(cb);
            let u2 = g.silu(u);
            g.add(u, u2)
        });
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let w = rand_tensor(&mut rng, &[5, 4]);
        let b = rand_tensor(&mut rng, &[5]);
        check(vec![x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], v[2]);
            g.silu(y)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[1, 1, 3, 4, 4]);
        let w = rand_tensor(&mut rng, &[1, 1, 3, 3, 3]);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let y = g.conv3d(xv, wv, None, ConvSpec::same([3, 3, 3]));
        let yv = g.value(y).clone();
        let at = |z: isize, r: isize, c: isize| -> f64 {
            if z < 0 || r < 0 || c < 0 || z >= 3 || r >= 4 || c >= 4 {
                0.0
            } else {
                x.data()[((z * 4 + r) * 4 + c) as usize]
            }
        };
        for z in 0..3isize {
            for r in 0..4isize {
                for c in 0..4isize {
                    let mut s = 0.0;
                    for a in 0..3isize {
                        for b in 0..3isize {
                            for e in 0..3isize {
                                s += w.data()[((a * 3 + b) * 3 + e) as usize] * at(z + a - 1, r + b - 1, c + e - 1);
                            }
                        }
                    }
                    let got = yv.data()[((z * 4 + r) * 4 + c) as usize];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}
