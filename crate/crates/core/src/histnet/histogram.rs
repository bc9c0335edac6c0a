//! Learnable soft histogram and its multiscale spatial pooling, as
//! [`CustomOp`]s on the differentiation engine.

use crate::error::{ensure, Error, Result};
use crate::tensor::{CustomOp, Scalar, Tensor};

/// Triangular soft binning: `a = max(0, 1 - |x - center| * inv_width)`.
///
/// Inputs: image `[C, H, W]`, centers `[C, B]`, inverse widths `[C, B]`.
/// Output `[C * B, H, W]`, channel-major then bin.
pub struct LearnableHistogram;

impl LearnableHistogram {
    fn dims<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<(usize, usize, usize)> {
        ensure!(inputs.len() == 3, Contract, "histogram takes image, centers, inverse widths");
        let (c, h, w) = inputs[0]
            .chw()
            .ok_or_else(|| Error::Shape(format!("histogram image must be [C, H, W], got {:?}", inputs[0].shape())))?;
        let bins = match inputs[1].shape()[..] {
            [cc, b] if cc == c => b,
            ref s => return Err(Error::Shape(format!("histogram centers must be [{c}, B], got {s:?}"))),
        };
        ensure!(
            inputs[2].shape() == inputs[1].shape(),
            Shape,
            "histogram inverse widths {:?} must match centers {:?}",
            inputs[2].shape(),
            inputs[1].shape()
        );
        Ok((c, bins, h * w))
    }
}

impl<T: Scalar> CustomOp<T> for LearnableHistogram {
    fn name(&self) -> &'static str {
        "learnable_histogram"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, bins, hw) = Self::dims(inputs)?;
        let (x, mu, gamma) = (inputs[0].values(), inputs[1].values(), inputs[2].values());
        let mut out = vec![T::zero(); c * bins * hw];
        for ch in 0..c {
            let plane = &x[ch * hw..(ch + 1) * hw];
            for b in 0..bins {
                let (m, g) = (mu[ch * bins + b], gamma[ch * bins + b]);
                let dst = &mut out[(ch * bins + b) * hw..(ch * bins + b + 1) * hw];
                for (o, &v) in dst.iter_mut().zip(plane) {
                    *o = (T::one() - (v - m).abs() * g).max(T::zero());
                }
            }
        }
        let (_, h, w) = inputs[0].chw().expect("checked");
        Tensor::new(vec![c * bins, h, w], out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (c, bins, hw) = Self::dims(inputs).expect("checked in forward");
        let (x, mu, gamma) = (inputs[0].values(), inputs[1].values(), inputs[2].values());
        let mut gx = vec![T::zero(); x.len()];
        let mut gmu = vec![0.0f64; mu.len()];
        let mut ggamma = vec![0.0f64; gamma.len()];
        for ch in 0..c {
            for b in 0..bins {
                let k = ch * bins + b;
                let (m, g) = (mu[k], gamma[k]);
                let go = &grad[k * hw..(k + 1) * hw];
                let (mut acc_mu, mut acc_gamma) = (0.0f64, 0.0f64);
                for p in 0..hw {
                    let d = x[ch * hw + p] - m;
                    if d.abs() * g >= T::one() {
                        continue;
                    }
                    // d a / d x = -sign(d) * g; d a / d mu = sign(d) * g; d a / d g = -|d|
                    let s = if d > T::zero() { T::one() } else if d < T::zero() { -T::one() } else { T::zero() };
                    gx[ch * hw + p] = gx[ch * hw + p] - go[p] * s * g;
                    acc_mu += (go[p] * s * g).as_f64();
                    acc_gamma -= (go[p] * d.abs()).as_f64();
                }
                gmu[k] = acc_mu;
                ggamma[k] = acc_gamma;
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        vec![needs[0].then_some(gx), needs[1].then(|| cast(gmu)), needs[2].then(|| cast(ggamma))]
    }

    fn kink_signature(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>) -> u64 {
        use std::hash::{Hash, Hasher};
        let (c, bins, hw) = Self::dims(inputs).expect("checked in forward");
        let (x, mu, gamma) = (inputs[0].values(), inputs[1].values(), inputs[2].values());
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for ch in 0..c {
            for b in 0..bins {
                let (m, g) = (mu[ch * bins + b], gamma[ch * bins + b]);
                for &v in &x[ch * hw..(ch + 1) * hw] {
                    let d = v - m;
                    let region: u8 = if d.abs() * g >= T::one() {
                        0
                    } else if d > T::zero() {
                        1
                    } else if d < T::zero() {
                        2
                    } else {
                        3
                    };
                    region.hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Cell boundaries of an `n`-cell partition of `len` pixels.
pub fn grid_edges(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| ((i * len) as f64 / n as f64).round() as usize).collect()
}

/// Replaces each pixel by the mean over its grid cell, once per grid size,
/// and stacks the results scale-major: output `[scales * C, H, W]`.
pub struct MultiscalePool {
    pub grids: Vec<usize>,
}

impl MultiscalePool {
    fn check(&self, input: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input
            .chw()
            .ok_or_else(|| Error::Shape(format!("multiscale_pool expects [C, H, W], got {:?}", input.shape())))?;
        let finest = self.grids.iter().copied().max().unwrap_or(0);
        ensure!(!self.grids.is_empty() && !self.grids.contains(&0), Contract, "grid sizes must be positive");
        ensure!(
            h >= finest && w >= finest,
            Contract,
            "{}x{} map is smaller than the finest {}x{} grid",
            h,
            w,
            finest,
            finest
        );
        Ok((c, h, w))
    }

    // Calls `f(channel_offset, pixel_indices_of_cell)` for every cell.
    fn for_each_cell(&self, h: usize, w: usize, mut f: impl FnMut(usize, &[usize])) {
        let mut cell = Vec::new();
        for (s, &n) in self.grids.iter().enumerate() {
            let (ey, ex) = (grid_edges(h, n), grid_edges(w, n));
            for gy in 0..n {
                for gx in 0..n {
                    cell.clear();
                    for y in ey[gy]..ey[gy + 1] {
                        cell.extend((ex[gx]..ex[gx + 1]).map(|x| y * w + x));
                    }
                    f(s, &cell);
                }
            }
        }
    }
}

impl<T: Scalar> CustomOp<T> for MultiscalePool {
    fn name(&self) -> &'static str {
        "multiscale_pool"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let input = inputs[0];
        let (c, h, w) = self.check(input)?;
        let hw = h * w;
        let x = input.values();
        let mut out = vec![T::zero(); self.grids.len() * c * hw];
        self.for_each_cell(h, w, |s, cell| {
            for ch in 0..c {
                let plane = &x[ch * hw..(ch + 1) * hw];
                let mean = T::of(cell.iter().map(|&p| plane[p].as_f64()).sum::<f64>() / cell.len() as f64);
                let dst = &mut out[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                for &p in cell {
                    dst[p] = mean;
                }
            }
        });
        Tensor::new(vec![self.grids.len() * c, h, w], out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (c, h, w) = self.check(inputs[0]).expect("checked in forward");
        let hw = h * w;
        let mut gx = vec![T::zero(); c * hw];
        self.for_each_cell(h, w, |s, cell| {
            for ch in 0..c {
                let go = &grad[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                let share = T::of(cell.iter().map(|&p| go[p].as_f64()).sum::<f64>() / cell.len() as f64);
                let dst = &mut gx[ch * hw..(ch + 1) * hw];
                for &p in cell {
                    dst[p] = dst[p] + share;
                }
            }
        });
        vec![Some(gx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Graph, Probe};

    fn hist_value(x: f64, mu: f64, gamma: f64) -> f64 {
        let mut g = Graph::<f64>::inference();
        let img = g.leaf(Tensor::new(vec![1, 1, 1], vec![x]).unwrap());
        let m = g.leaf(Tensor::new(vec![1, 1], vec![mu]).unwrap());
        let gm = g.leaf(Tensor::new(vec![1, 1], vec![gamma]).unwrap());
        let out = g.custom(Box::new(LearnableHistogram), &[img, m, gm]).unwrap();
        g.values(out)[0]
    }

    #[test]
    fn histogram_formula_examples() {
        assert_eq!(hist_value(0.25, 0.25, 6.0), 1.0);
        assert!((hist_value(0.5, 0.25, 2.0) - 0.5).abs() < 1e-12);
        assert_eq!(hist_value(0.9, 0.25, 6.0), 0.0);
        assert_eq!(hist_value(0.75, 0.25, 2.0), 0.0);
    }

    #[test]
    fn histogram_gradients_match_finite_differences() {
        // image (3x2x2 = 12) then centers (3x6) then inverse widths (3x6)
        let mut p: Vec<f64> = (0..12).map(|i| 0.05 + 0.077 * i as f64).collect();
        p.extend((0..18).map(|i| (2 * (i % 6) + 1) as f64 / 12.0 + 0.013 * (i / 6) as f64));
        p.extend((0..18).map(|i| 4.0 + 0.3 * (i % 5) as f64));
        let weights: Vec<f64> = (0..72).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let f = |p: &[f64]| {
            let mut g = Graph::<f64>::new().with_kink_tracking();
            let img = g.leaf(Tensor::new(vec![3, 2, 2], p[..12].to_vec()).unwrap().requiring_grad());
            let mu = g.leaf(Tensor::new(vec![3, 6], p[12..30].to_vec()).unwrap().requiring_grad());
            let gm = g.leaf(Tensor::new(vec![3, 6], p[30..].to_vec()).unwrap().requiring_grad());
            let a = g.custom(Box::new(LearnableHistogram), &[img, mu, gm]).unwrap();
            let wv = g.leaf(Tensor::new(vec![18, 2, 2], weights.clone()).unwrap());
            let zero = g.leaf(Tensor::zeros(vec![18, 2, 2]));
            let d = g.add(a, wv).unwrap();
            let l = g.mse_loss(d, zero).unwrap();
            g.backward(l).unwrap();
            let grad = [g.grad(img).unwrap(), g.grad(mu).unwrap(), g.grad(gm).unwrap()].concat();
            Probe { value: g.values(l)[0], gradient: grad, kink_signature: g.kink_signature() }
        };
        let r = gradient_check(f, &p, 1e-4, 1e-3, None);
        assert!(r.passed(), "{r:?}");
        assert!(r.checked > 30, "{r:?}");
    }

    #[test]
    fn grid_edges_round_equal_fractions() {
        assert_eq!(grid_edges(8, 2), vec![0, 4, 8]);
        assert_eq!(grid_edges(10, 4), vec![0, 3, 5, 8, 10]);
    }

    fn pool(values: Vec<f64>, c: usize, h: usize, w: usize, grids: Vec<usize>) -> Result<Vec<f64>> {
        let mut g = Graph::<f64>::inference();
        let x = g.leaf(Tensor::new(vec![c, h, w], values).unwrap());
        let y = g.custom(Box::new(MultiscalePool { grids }), &[x])?;
        Ok(g.values(y).to_vec())
    }

    #[test]
    fn pooling_a_constant_map_is_identity_at_every_scale() {
        let out = pool(vec![0.3; 2 * 8 * 8], 2, 8, 8, vec![1, 2, 4, 8]).unwrap();
        assert_eq!(out.len(), 4 * 2 * 64);
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn quadrant_means_match_brute_force() {
        let vals: Vec<f64> = (0..16).map(|i| (i * i % 7) as f64).collect();
        let out = pool(vals.clone(), 1, 4, 4, vec![2]).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let (qy, qx) = (y / 2 * 2, x / 2 * 2);
                let mean = (vals[qy * 4 + qx] + vals[qy * 4 + qx + 1] + vals[(qy + 1) * 4 + qx] + vals[(qy + 1) * 4 + qx + 1]) / 4.0;
                assert!((out[y * 4 + x] - mean).abs() < 1e-12);
            }
        }
        let global = pool(vals.clone(), 1, 4, 4, vec![1]).unwrap();
        let mean = vals.iter().sum::<f64>() / 16.0;
        assert!(global.iter().all(|&v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn pooling_rejects_maps_smaller_than_the_grid() {
        assert!(matches!(pool(vec![0.0; 7 * 9], 1, 7, 9, vec![1, 2, 4, 8]), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let x0: Vec<f64> = (0..2 * 5 * 6).map(|i| ((i * 13 % 17) as f64) / 17.0).collect();
        let targets: Vec<f64> = (0..3 * 2 * 30).map(|i| ((i * 5 % 9) as f64) / 9.0).collect();
        let f = |x: &[f64]| {
            let mut g = Graph::<f64>::new();
            let xv = g.leaf(Tensor::new(vec![2, 5, 6], x.to_vec()).unwrap().requiring_grad());
            let y = g.custom(Box::new(MultiscalePool { grids: vec![1, 2, 4] }), &[xv]).unwrap();
            let t = g.leaf(Tensor::new(vec![6, 5, 6], targets.clone()).unwrap());
            let l = g.mse_loss(y, t).unwrap();
            g.backward(l).unwrap();
            Probe { value: g.values(l)[0], gradient: g.grad(xv).unwrap().to_vec(), kink_signature: 0 }
        };
        let r = gradient_check(f, &x0, 1e-4, 1e-4, None);
        assert!(r.passed(), "{r:?}");
    }
}
