use crate::error::{ensure, Result};
use crate::histnet::NetworkWeights;
use crate::tensor::Tensor;

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(weights: &NetworkWeights) -> Self {
        let lens: Vec<usize> = weights.named_params().iter().map(|(_, t)| t.len()).collect();
        Self::for_lengths(&lens)
    }

    pub fn for_lengths(lens: &[usize]) -> Self {
        AdamState {
            first: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam step on arbitrary tensors.
    pub fn step_params(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f32>], lr: f64) -> Result<()> {
        ensure!(
            params.len() == self.first.len() && grads.len() == params.len(),
            Shape,
            "optimizer holds {} moments for {} parameters and {} gradients",
            self.first.len(),
            params.len(),
            grads.len()
        );
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[k], &mut self.second[k], &grads[k]);
            ensure!(g.len() == p.len() && m.len() == p.len(), Shape, "gradient {k} has the wrong length");
            for (i, w) in p.values_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + self.epsilon);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }

    /// Adam step on the network, then the histogram width floor.
    pub fn update(&mut self, weights: &mut NetworkWeights, grads: &[Vec<f32>], lr: f64) -> Result<()> {
        self.step_params(&mut weights.params_mut(), grads, lr)?;
        weights.clamp_inv_widths();
        Ok(())
    }
}
