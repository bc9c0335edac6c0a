//! Forward kernels and backward rules of the built-in operations.

use crate::error::{ensure, Error, Result};

use super::graph::{Op, Record};
use super::{Graph, Scalar, Tensor, Var};

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + xx] = x[ci * hw + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ci * hw + sy as usize * w + sx as usize;
                        x[dst] = x[dst] + src[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

fn sum_f64<T: Scalar>(xs: &[T]) -> f64 {
    xs.iter().map(|v| v.as_f64()).sum()
}

impl<T: Scalar> Graph<T> {
    fn chw_of(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        self.value(v)
            .chw()
            .ok_or_else(|| Error::Shape(format!("{what} expects [C, H, W], got {:?}", self.shape(v))))
    }

    /// Same-size 2-D cross-correlation with per-channel bias.
    pub fn conv2d(&mut self, input: Var, weights: Var, bias: Var, padding: usize) -> Result<Var> {
        let (c_in, h, w) = self.chw_of(input, "conv2d input")?;
        let (c_out, wc_in, k) = match self.shape(weights)[..] {
            [o, i, k1, k2] if k1 == k2 => (o, i, k1),
            ref s => return Err(Error::Shape(format!("conv2d weights must be [C_out, C_in, k, k], got {s:?}"))),
        };
        ensure!(wc_in == c_in, Shape, "conv2d weights expect {} input channels, input has {}", wc_in, c_in);
        ensure!(self.shape(bias) == [c_out], Shape, "conv2d bias must be [{}], got {:?}", c_out, self.shape(bias));
        ensure!(k % 2 == 1 && 2 * padding + 1 == k, Contract, "kernel {} with padding {} does not preserve size", k, padding);

        let hw = h * w;
        let mut out = vec![T::zero(); c_out * hw];
        let x = self.values(input);
        let wt = self.values(weights);
        if k == 1 {
            T::gemm(c_out, c_in, hw, wt, false, x, false, &mut out, false);
        } else {
            let cols = im2col(x, c_in, h, w, k, padding);
            T::gemm(c_out, c_in * k * k, hw, wt, false, &cols, false, &mut out, false);
        }
        for (o, &b) in self.values(bias).iter().enumerate() {
            out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *v + b);
        }
        let out = Tensor::new(vec![c_out, h, w], out)?;
        Ok(self.push(Op::Conv2d { padding }, &[input, weights, bias], out))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.values().iter().map(|&v| v.max(T::zero())).collect())
            .expect("same shape");
        if self.tracks_kinks() {
            let pattern: Vec<bool> = x.values().iter().map(|&v| v > T::zero()).collect();
            self.note_kinks("relu", pattern);
        }
        self.push(Op::Relu, &[input], out)
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (c1, h, w) = self.chw_of(a, "concat_channels")?;
        let (c2, h2, w2) = self.chw_of(b, "concat_channels")?;
        ensure!((h, w) == (h2, w2), Shape, "concat_channels spatial mismatch {}x{} vs {}x{}", h, w, h2, w2);
        let mut values = Vec::with_capacity((c1 + c2) * h * w);
        values.extend_from_slice(self.values(a));
        values.extend_from_slice(self.values(b));
        let out = Tensor::new(vec![c1 + c2, h, w], values)?;
        Ok(self.push(Op::Concat, &[a, b], out))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.chw_of(input, "global_avg_pool")?;
        ensure!(h * w > 0, Contract, "global_avg_pool on empty map");
        let hw = h * w;
        let x = self.values(input);
        let values = (0..c).map(|ch| T::of(sum_f64(&x[ch * hw..(ch + 1) * hw]) / hw as f64)).collect();
        let out = Tensor::new(vec![c], values)?;
        Ok(self.push(Op::AvgPool, &[input], out))
    }

    /// Per-channel maximum; ties resolve to the first maximal position.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.chw_of(input, "global_max_pool")?;
        ensure!(h * w > 0, Contract, "global_max_pool on empty map");
        let hw = h * w;
        let x = self.values(input);
        let argmax: Vec<usize> = (0..c)
            .map(|ch| {
                let plane = &x[ch * hw..(ch + 1) * hw];
                let mut best = 0;
                for (i, &v) in plane.iter().enumerate() {
                    if v > plane[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let values = argmax.iter().enumerate().map(|(ch, &i)| x[ch * hw + i]).collect();
        let out = Tensor::new(vec![c], values)?;
        self.note_kinks("maxpool", &argmax);
        Ok(self.push(Op::MaxPool { argmax }, &[input], out))
    }

    /// `weights * input + bias` for a vector input.
    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let d_in = self.value(input).len();
        ensure!(self.shape(input) == [d_in], Shape, "linear input must be a vector, got {:?}", self.shape(input));
        let d_out = match self.shape(weights)[..] {
            [o, i] if i == d_in => o,
            ref s => return Err(Error::Shape(format!("linear weights {s:?} do not accept input of length {d_in}"))),
        };
        ensure!(self.shape(bias) == [d_out], Shape, "linear bias must be [{}], got {:?}", d_out, self.shape(bias));
        let mut out = self.values(bias).to_vec();
        T::gemm(d_out, d_in, 1, self.values(weights), false, self.values(input), false, &mut out, true);
        let out = Tensor::new(vec![d_out], out)?;
        Ok(self.push(Op::Linear, &[input, weights, bias], out))
    }

    /// Mean squared error. The target must not carry gradients.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        ensure!(
            self.shape(pred) == self.shape(target),
            Shape,
            "mse_loss shapes differ: {:?} vs {:?}",
            self.shape(pred),
            self.shape(target)
        );
        ensure!(!self.requires_grad(target), Contract, "mse_loss target must not require gradients");
        let p = self.values(pred);
        let t = self.values(target);
        let n = p.len().max(1);
        let sse: f64 = p.iter().zip(t).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
        let out = Tensor::scalar(T::of(sse / n as f64));
        Ok(self.push(Op::Mse, &[pred, target], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(self.shape(a) == self.shape(b), Shape, "add shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b));
        let values = self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), values)?;
        Ok(self.push(Op::Add, &[a, b], out))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.values().iter().map(|&v| v * factor).collect()).expect("same shape");
        self.push(Op::Scale(factor), &[input], out)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(T::of(sum_f64(self.values(input))));
        self.push(Op::Sum, &[input], out)
    }

    /// Repeats a vector `[D]` over an `h x w` grid, giving `[D, h, w]`.
    pub fn broadcast_spatial(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let d = self.value(input).len();
        ensure!(self.shape(input) == [d], Shape, "broadcast_spatial expects a vector, got {:?}", self.shape(input));
        let hw = h * w;
        let mut values = Vec::with_capacity(d * hw);
        for &v in self.values(input) {
            values.extend(std::iter::repeat(v).take(hw));
        }
        let out = Tensor::new(vec![d, h, w], values)?;
        Ok(self.push(Op::Broadcast, &[input], out))
    }

    pub(crate) fn backward_op(&self, record: &Record<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let input = |i: usize| &self.nodes[record.inputs[i].0];
        let output = &self.nodes[record.output.0];
        match &record.op {
            Op::Conv2d { padding } => {
                let x = input(0);
                let wt = input(1);
                let (c_in, h, w) = x.chw().expect("checked in forward");
                let c_out = wt.shape()[0];
                let k = wt.shape()[2];
                let hw = h * w;
                let ckk = c_in * k * k;
                let cols = (k != 1 && needs[1]).then(|| im2col(x.values(), c_in, h, w, k, *padding));
                let gx = needs[0].then(|| {
                    let mut dcols = vec![T::zero(); ckk * hw];
                    T::gemm(ckk, c_out, hw, wt.values(), true, g, false, &mut dcols, false);
                    if k == 1 {
                        dcols
                    } else {
                        col2im(&dcols, c_in, h, w, k, *padding)
                    }
                });
                let gw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); c_out * ckk];
                    let src = cols.as_deref().unwrap_or(x.values());
                    T::gemm(c_out, hw, ckk, g, false, src, true, &mut dw, false);
                    dw
                });
                let gb = needs[2].then(|| (0..c_out).map(|o| T::of(sum_f64(&g[o * hw..(o + 1) * hw]))).collect());
                vec![gx, gw, gb]
            }
            Op::Relu => {
                let x = input(0).values();
                vec![Some(x.iter().zip(g).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect())]
            }
            Op::Concat => {
                let split = input(0).len();
                vec![needs[0].then(|| g[..split].to_vec()), needs[1].then(|| g[split..].to_vec())]
            }
            Op::AvgPool => {
                let (c, h, w) = input(0).chw().expect("checked in forward");
                let hw = h * w;
                let inv = T::of(1.0 / hw as f64);
                let mut gx = Vec::with_capacity(c * hw);
                for &d in g.iter().take(c) {
                    gx.extend(std::iter::repeat(d * inv).take(hw));
                }
                vec![Some(gx)]
            }
            Op::MaxPool { argmax } => {
                let x = input(0);
                let hw = x.len() / argmax.len().max(1);
                let mut gx = vec![T::zero(); x.len()];
                for (ch, &i) in argmax.iter().enumerate() {
                    gx[ch * hw + i] = g[ch];
                }
                vec![Some(gx)]
            }
            Op::Linear => {
                let x = input(0);
                let wt = input(1);
                let d_in = x.len();
                let d_out = g.len();
                let gx = needs[0].then(|| {
                    let mut gx = vec![T::zero(); d_in];
                    T::gemm(d_in, d_out, 1, wt.values(), true, g, false, &mut gx, false);
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![T::zero(); d_out * d_in];
                    T::gemm(d_out, 1, d_in, g, false, x.values(), false, &mut gw, false);
                    gw
                });
                vec![gx, gw, needs[2].then(|| g.to_vec())]
            }
            Op::Mse => {
                let p = input(0).values();
                let t = input(1).values();
                let scale = g[0] * T::of(2.0 / p.len().max(1) as f64);
                vec![Some(p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect()), None]
            }
            Op::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
            Op::Scale(f) => vec![Some(g.iter().map(|&d| d * *f).collect())],
            Op::Sum => vec![Some(vec![g[0]; input(0).len()])],
            Op::Broadcast => {
                let (d, h, w) = output.chw().expect("broadcast output is rank 3");
                let hw = h * w;
                vec![Some((0..d).map(|i| T::of(sum_f64(&g[i * hw..(i + 1) * hw]))).collect())]
            }
            Op::Custom(op) => {
                let refs: Vec<&Tensor<T>> = record.inputs.iter().map(|v| &self.nodes[v.0]).collect();
                op.backward(&refs, output, g, needs)
            }
        }
    }
}
