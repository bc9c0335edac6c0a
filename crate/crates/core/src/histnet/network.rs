use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ArchConfig, LearnableHistogram, MultiscalePool, PoolKind, ShareLayer, BINS, COLOR_CHANNELS, HIST_FEATURE_CHANNELS,
    MIN_INV_WIDTH, PYRAMID_GRIDS,
};
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramParams<T: Scalar = f32> {
    /// `[3, 6]` bin centers.
    pub centers: Tensor<T>,
    /// `[3, 6]` reciprocal bin widths, kept positive.
    pub inv_widths: Tensor<T>,
}

impl<T: Scalar> HistogramParams<T> {
    /// Centers evenly spaced at `(2b + 1) / 12`, widths tiling `[0, 1]`.
    pub fn tiled() -> Self {
        let centers = Tensor::from_fn(vec![COLOR_CHANNELS, BINS], |i| T::of((2 * (i % BINS) + 1) as f64 / (2 * BINS) as f64));
        let inv_widths = Tensor::from_fn(vec![COLOR_CHANNELS, BINS], |_| T::of(BINS as f64));
        HistogramParams { centers, inv_widths }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Scalar = f32> {
    /// `[C_out, C_in, k, k]`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn init(c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (c_in * k * k) as f64).sqrt();
        ConvLayer {
            weights: Tensor::from_fn(vec![c_out, c_in, k, k], |_| T::of(rng.gen_range(-bound..bound))),
            bias: Tensor::zeros(vec![c_out]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }
}

/// Parameters of one translator.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorWeights<T: Scalar = f32> {
    pub hist: HistogramParams<T>,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub conv3: ConvLayer<T>,
}

impl<T: Scalar> TranslatorWeights<T> {
    fn init(in_channels: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = arch.kernel_size;
        TranslatorWeights {
            hist: HistogramParams::tiled(),
            conv1: ConvLayer::init(arch.hidden, in_channels, k, rng),
            conv2: ConvLayer::init(arch.hidden, arch.hidden, k, rng),
            conv3: ConvLayer::init(COLOR_CHANNELS, arch.hidden, k, rng),
        }
    }
}

/// Pooling plus fully connected layer mapping `l` to the shared vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SharingWeights<T: Scalar = f32> {
    /// `[D_share, hidden]`
    pub fc_weights: Tensor<T>,
    pub fc_bias: Tensor<T>,
    pub pool: PoolKind,
}

/// Shared feature vector `l'` extracted from a photo.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFeature {
    pub vector: Vec<f32>,
}

/// All learnable parameters of both translators and the sharing transform.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T: Scalar = f32> {
    pub arch: ArchConfig,
    /// RAW to JPEG.
    pub n1: TranslatorWeights<T>,
    /// JPEG to RAW.
    pub n2: TranslatorWeights<T>,
    pub share: Option<SharingWeights<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = TranslatorWeights::init(arch.n1_input_channels(), &arch, &mut rng);
        let n2 = TranslatorWeights::init(HIST_FEATURE_CHANNELS, &arch, &mut rng);
        let share = arch.use_sharing.then(|| {
            let bound = (1.0 / arch.hidden as f64).sqrt();
            SharingWeights {
                fc_weights: Tensor::from_fn(vec![arch.shared_dim, arch.hidden], |_| T::of(rng.gen_range(-bound..bound))),
                fc_bias: Tensor::zeros(vec![arch.shared_dim]),
                pool: arch.pool_kind,
            }
        });
        Ok(NetworkWeights { arch, n1, n2, share })
    }

    /// Parameter tensors with stable names, in serialization order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, t) in [("n1", &self.n1), ("n2", &self.n2)] {
            out.push((format!("{prefix}.hist.centers"), &t.hist.centers));
            out.push((format!("{prefix}.hist.inv_widths"), &t.hist.inv_widths));
            for (name, layer) in [("conv1", &t.conv1), ("conv2", &t.conv2), ("conv3", &t.conv3)] {
                out.push((format!("{prefix}.{name}.weight"), &layer.weights));
                out.push((format!("{prefix}.{name}.bias"), &layer.bias));
            }
        }
        if let Some(s) = &self.share {
            out.push(("share.fc.weight".into(), &s.fc_weights));
            out.push(("share.fc.bias".into(), &s.fc_bias));
        }
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for t in [&mut self.n1, &mut self.n2] {
            out.push(&mut t.hist.centers);
            out.push(&mut t.hist.inv_widths);
            for layer in [&mut t.conv1, &mut t.conv2, &mut t.conv3] {
                out.push(&mut layer.weights);
                out.push(&mut layer.bias);
            }
        }
        if let Some(s) = &mut self.share {
            out.push(&mut s.fc_weights);
            out.push(&mut s.fc_bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Expected shape of every parameter for this architecture.
    pub fn expected_shapes(arch: &ArchConfig) -> Vec<(String, Vec<usize>)> {
        let k = arch.kernel_size;
        let h = arch.hidden;
        let mut out = Vec::new();
        for (prefix, c_in) in [("n1", arch.n1_input_channels()), ("n2", HIST_FEATURE_CHANNELS)] {
            out.push((format!("{prefix}.hist.centers"), vec![COLOR_CHANNELS, BINS]));
            out.push((format!("{prefix}.hist.inv_widths"), vec![COLOR_CHANNELS, BINS]));
            for (name, o, i) in [("conv1", h, c_in), ("conv2", h, h), ("conv3", COLOR_CHANNELS, h)] {
                out.push((format!("{prefix}.{name}.weight"), vec![o, i, k, k]));
                out.push((format!("{prefix}.{name}.bias"), vec![o]));
            }
        }
        if arch.use_sharing {
            out.push(("share.fc.weight".into(), vec![arch.shared_dim, h]));
            out.push(("share.fc.bias".into(), vec![arch.shared_dim]));
        }
        out
    }

    /// Checks that every tensor has the shape its architecture implies.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = Self::expected_shapes(&self.arch);
        let actual = self.named_params();
        ensure!(
            expected.len() == actual.len(),
            Shape,
            "architecture expects {} tensors, weights hold {}",
            expected.len(),
            actual.len()
        );
        for ((name, shape), (_, t)) in expected.iter().zip(&actual) {
            ensure!(t.shape() == &shape[..], Shape, "{} has shape {:?}, architecture expects {:?}", name, t.shape(), shape);
        }
        if let Some(s) = &self.share {
            ensure!(s.pool == self.arch.pool_kind, Shape, "sharing pool kind disagrees with architecture");
        }
        Ok(())
    }

    pub fn clamp_inv_widths(&mut self) {
        let floor = T::of(MIN_INV_WIDTH as f64);
        for t in [&mut self.n1, &mut self.n2] {
            t.hist.inv_widths.values_mut().iter_mut().for_each(|v| *v = v.max(floor));
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        let tr = |t: &TranslatorWeights<T>| TranslatorWeights {
            hist: HistogramParams { centers: t.hist.centers.cast(), inv_widths: t.hist.inv_widths.cast() },
            conv1: ConvLayer { weights: t.conv1.weights.cast(), bias: t.conv1.bias.cast() },
            conv2: ConvLayer { weights: t.conv2.weights.cast(), bias: t.conv2.bias.cast() },
            conv3: ConvLayer { weights: t.conv3.weights.cast(), bias: t.conv3.bias.cast() },
        };
        NetworkWeights {
            arch: self.arch,
            n1: tr(&self.n1),
            n2: tr(&self.n2),
            share: self.share.as_ref().map(|s| SharingWeights {
                fc_weights: s.fc_weights.cast(),
                fc_bias: s.fc_bias.cast(),
                pool: s.pool,
            }),
        }
    }

    /// Places every parameter in `g` as a leaf; `trainable` leaves collect
    /// gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundNetwork {
        let mut vars = Vec::new();
        let mut leaf = |t: &Tensor<T>| {
            let t = if trainable { t.clone().requiring_grad() } else { t.clone() };
            let v = g.leaf(t);
            vars.push(v);
            v
        };
        let mut translator = |t: &TranslatorWeights<T>| BoundTranslator {
            hist: BoundHistogram { centers: leaf(&t.hist.centers), inv_widths: leaf(&t.hist.inv_widths) },
            conv: [
                (leaf(&t.conv1.weights), leaf(&t.conv1.bias)),
                (leaf(&t.conv2.weights), leaf(&t.conv2.bias)),
                (leaf(&t.conv3.weights), leaf(&t.conv3.bias)),
            ],
        };
        let n1 = translator(&self.n1);
        let n2 = translator(&self.n2);
        let share = self.share.as_ref().map(|s| BoundSharing {
            weights: leaf(&s.fc_weights),
            bias: leaf(&s.fc_bias),
            pool: s.pool,
        });
        BoundNetwork { arch: self.arch, n1, n2, share, vars }
    }
}

impl NetworkWeights<f32> {
    fn run<R>(&self, f: impl FnOnce(&mut Graph<f32>, &BoundNetwork) -> Result<R>) -> Result<R> {
        let mut g = Graph::inference();
        let net = self.bind(&mut g, false);
        f(&mut g, &net)
    }

    /// JPEG-to-RAW translation (clamped) and the photo's shared feature.
    pub fn jpeg_to_raw(&self, jpeg: &Image) -> Result<(Image, Option<SharedFeature>)> {
        self.run(|g, net| {
            let x = image_var(g, jpeg)?;
            let out = net.forward_n2(g, x)?;
            let shared = net.share_transform(g, out.l)?.map(|v| SharedFeature { vector: g.values(v).to_vec() });
            Ok((var_image(g, out.raw, jpeg)?.clamp01(), shared))
        })
    }

    pub fn shared_feature(&self, jpeg: &Image) -> Result<Option<SharedFeature>> {
        Ok(self.jpeg_to_raw(jpeg)?.1)
    }

    /// RAW-to-JPEG translation (clamped), conditioned on a shared feature
    /// when the architecture uses sharing.
    pub fn raw_to_jpeg(&self, raw: &Image, shared: Option<&SharedFeature>) -> Result<Image> {
        match (self.arch.use_sharing, shared) {
            (true, None) => return Err(Error::Contract("this network needs a shared feature to translate RAW to JPEG".into())),
            (false, Some(_)) => return Err(Error::Contract("this network was built without feature sharing".into())),
            _ => {}
        }
        self.run(|g, net| {
            let x = image_var(g, raw)?;
            let s = match shared {
                Some(s) => Some(g.constant(vec![s.vector.len()], s.vector.clone())?),
                None => None,
            };
            let y = net.forward_n1(g, x, s)?;
            Ok(var_image(g, y, raw)?.clamp01())
        })
    }

    /// JPEG to RAW and back, conditioned on the photo's own features.
    pub fn cycle(&self, jpeg: &Image) -> Result<Image> {
        let (raw, shared) = self.jpeg_to_raw(jpeg)?;
        self.raw_to_jpeg(&raw, shared.as_ref())
    }
}

fn var_image(g: &Graph<f32>, v: Var, like: &Image) -> Result<Image> {
    Image::from_planar(like.width(), like.height(), g.values(v))
}

/// Places an image in `g` as a constant `[3, H, W]` tensor.
pub fn image_var<T: Scalar>(g: &mut Graph<T>, image: &Image) -> Result<Var> {
    let values = image.to_planar().into_iter().map(|v| T::of(v as f64)).collect();
    g.constant(vec![COLOR_CHANNELS, image.height(), image.width()], values)
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHistogram {
    pub centers: Var,
    pub inv_widths: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundTranslator {
    pub hist: BoundHistogram,
    /// `(weights, bias)` of conv1..conv3.
    pub conv: [(Var, Var); 3],
}

#[derive(Debug, Clone, Copy)]
pub struct BoundSharing {
    pub weights: Var,
    pub bias: Var,
    pub pool: PoolKind,
}

/// Network parameters placed in a graph.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    pub arch: ArchConfig,
    pub n1: BoundTranslator,
    pub n2: BoundTranslator,
    pub share: Option<BoundSharing>,
    /// Leaves in [`NetworkWeights::named_params`] order.
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct N2Output {
    /// Predicted RAW image, unclamped.
    pub raw: Var,
    /// Shared hidden activation.
    pub l: Var,
}

/// Pooled histograms stacked with the image: `[75, H, W]`.
pub fn hist_features<T: Scalar>(g: &mut Graph<T>, image: Var, hist: &BoundHistogram) -> Result<Var> {
    let a = g.custom(Box::new(LearnableHistogram), &[image, hist.centers, hist.inv_widths])?;
    let pooled = g.custom(Box::new(MultiscalePool { grids: PYRAMID_GRIDS.to_vec() }), &[a])?;
    g.concat_channels(pooled, image)
}

impl BoundNetwork {
    fn padding(&self) -> usize {
        self.arch.kernel_size / 2
    }

    fn trunk<T: Scalar>(&self, g: &mut Graph<T>, input: Var, t: &BoundTranslator) -> Result<[Var; 3]> {
        let p = self.padding();
        let h1 = g.conv2d(input, t.conv[0].0, t.conv[0].1, p)?;
        let h1 = g.relu(h1);
        let h2 = g.conv2d(h1, t.conv[1].0, t.conv[1].1, p)?;
        let h2 = g.relu(h2);
        let out = g.conv2d(h2, t.conv[2].0, t.conv[2].1, p)?;
        Ok([h1, h2, out])
    }

    /// JPEG to RAW; also returns the shared activation `l`.
    pub fn forward_n2<T: Scalar>(&self, g: &mut Graph<T>, jpeg: Var) -> Result<N2Output> {
        let feats = hist_features(g, jpeg, &self.n2.hist)?;
        let [h1, h2, raw] = self.trunk(g, feats, &self.n2)?;
        let l = match self.arch.share_layer {
            ShareLayer::Conv1 => h1,
            ShareLayer::Conv2 => h2,
        };
        Ok(N2Output { raw, l })
    }

    /// Spatial pooling then the fully connected layer; `None` without sharing.
    pub fn share_transform<T: Scalar>(&self, g: &mut Graph<T>, l: Var) -> Result<Option<Var>> {
        let Some(s) = &self.share else {
            return Ok(None);
        };
        let pooled = match s.pool {
            PoolKind::Average => g.global_avg_pool(l)?,
            PoolKind::Max => g.global_max_pool(l)?,
        };
        Ok(Some(g.linear(pooled, s.weights, s.bias)?))
    }

    /// RAW to JPEG, with the shared vector repeated over the image and
    /// stacked after the histogram features.
    pub fn forward_n1<T: Scalar>(&self, g: &mut Graph<T>, raw: Var, shared: Option<Var>) -> Result<Var> {
        let feats = hist_features(g, raw, &self.n1.hist)?;
        let input = match (self.arch.use_sharing, shared) {
            (true, Some(s)) => {
                let len = g.value(s).len();
                ensure!(
                    len == self.arch.shared_dim,
                    Shape,
                    "shared vector has length {}, translator expects {}",
                    len,
                    self.arch.shared_dim
                );
                let (_, h, w) = g.value(raw).chw().expect("image var");
                let tiled = g.broadcast_spatial(s, h, w)?;
                g.concat_channels(feats, tiled)?
            }
            (false, None) => feats,
            (true, None) => return Err(Error::Contract("RAW-to-JPEG translator needs a shared vector".into())),
            (false, Some(_)) => return Err(Error::Contract("network built without sharing got a shared vector".into())),
        };
        let [_, _, out] = self.trunk(g, input, &self.n1)?;
        Ok(out)
    }
}
