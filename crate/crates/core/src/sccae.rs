//! Stage 1: the skip-connection convolutional autoencoder.
//!
//! The encoder is three strided conv blocks (channels 8/16/32, kernel 10,
//! stride 2, batch-norm + leaky-ReLU) that halve a 512-bin spectrum down to
//! 64, then a dense layer to the `n_rep`-dimensional embedding. The decoder
//! mirrors it: a dense layer back to the flattened conv shape, then three
//! upsampling blocks. Each decoder block first concatenates the mirrored
//! encoder activation along the channel axis, fuses it back to the original
//! channel count with a width-1 convolution, and upsamples with a transposed
//! convolution; a final dense layer produces the 512-bin reconstruction.
//! The skip concatenations are what lets low-level spectral detail bypass
//! the bottleneck; `no_skip` zeroes them to recover a plain convolutional
//! autoencoder for ablations.

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, Adam, BatchNorm1d, BnCache, Conv1d, Conv1dCache,
    ConvTranspose1d, DeconvCache, Dense, DenseCache, HasParams, Mode, Param,
};

const KERNEL: usize = 10;
const STRIDE: usize = 2;
const PAD: usize = 4;
const CH: [usize; 3] = [8, 16, 32];

/// Encoder activations the decoder's skip connections consume, one per conv
/// block (post-activation).
#[derive(Debug, Clone)]
pub struct SkipActs {
    pub a1: Array3<f64>,
    pub a2: Array3<f64>,
    pub a3: Array3<f64>,
}

impl SkipActs {
    /// All-zero skip activations for a given batch size (used to probe the
    /// decoder in isolation).
    pub fn zeros(batch: usize, n_input: usize) -> Self {
        SkipActs {
            a1: Array3::zeros((batch, CH[0], n_input / 2)),
            a2: Array3::zeros((batch, CH[1], n_input / 4)),
            a3: Array3::zeros((batch, CH[2], n_input / 8)),
        }
    }
}

pub struct EncoderCache {
    c1: Conv1dCache,
    b1: BnCache,
    pre1: Array3<f64>,
    c2: Conv1dCache,
    b2: BnCache,
    pre2: Array3<f64>,
    c3: Conv1dCache,
    b3: BnCache,
    pre3: Array3<f64>,
    z_cache: DenseCache,
    pub skips: SkipActs,
}

pub struct DecoderCache {
    fd_cache: DenseCache,
    d_lin: Array2<f64>,
    f1_pre: Array3<f64>,
    fc1: Conv1dCache,
    dc1: DeconvCache,
    bd1: BnCache,
    q1: Array3<f64>,
    f2_pre: Array3<f64>,
    fc2: Conv1dCache,
    dc2: DeconvCache,
    bd2: BnCache,
    q2: Array3<f64>,
    f3_pre: Array3<f64>,
    fc3: Conv1dCache,
    dc3: DeconvCache,
    u3: Array3<f64>,
    fo_cache: DenseCache,
}

pub struct SccaeCache {
    pub enc: EncoderCache,
    pub dec: DecoderCache,
}

#[derive(Debug, Clone)]
pub struct SccaeModel {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub conv3: Conv1d,
    pub bn3: BatchNorm1d,
    pub fc_z: Dense,
    pub fc_d: Dense,
    pub fuse1: Conv1d,
    pub deconv1: ConvTranspose1d,
    pub bn_d1: BatchNorm1d,
    pub fuse2: Conv1d,
    pub deconv2: ConvTranspose1d,
    pub bn_d2: BatchNorm1d,
    pub fuse3: Conv1d,
    pub deconv3: ConvTranspose1d,
    pub fc_out: Dense,
    pub n_input: usize,
    pub n_rep: usize,
    /// Zero the skip concatenations (plain convolutional autoencoder).
    pub no_skip: bool,
    /// Activate the width-1 fuse convolutions.
    pub skip_conv_activation: bool,
}

impl SccaeModel {
    pub fn new(
        n_input: usize,
        n_rep: usize,
        no_skip: bool,
        skip_conv_activation: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_input < 8 || n_input % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_input must be a positive multiple of 8 (three stride-2 halvings), got {n_input}"
            )));
        }
        if n_rep == 0 {
            return Err(Error::InvalidArgument("n_rep must be >= 1".into()));
        }
        let flat = CH[2] * n_input / 8;
        let model = SccaeModel {
            conv1: Conv1d::new(1, CH[0], KERNEL, STRIDE, PAD, rng),
            bn1: BatchNorm1d::new(CH[0]),
            conv2: Conv1d::new(CH[0], CH[1], KERNEL, STRIDE, PAD, rng),
            bn2: BatchNorm1d::new(CH[1]),
            conv3: Conv1d::new(CH[1], CH[2], KERNEL, STRIDE, PAD, rng),
            bn3: BatchNorm1d::new(CH[2]),
            fc_z: Dense::new(flat, n_rep, rng),
            fc_d: Dense::new(n_rep, flat, rng),
            fuse1: Conv1d::new(2 * CH[2], CH[2], 1, 1, 0, rng),
            deconv1: ConvTranspose1d::new(CH[2], CH[1], KERNEL, STRIDE, PAD, 0, rng),
            bn_d1: BatchNorm1d::new(CH[1]),
            fuse2: Conv1d::new(2 * CH[1], CH[1], 1, 1, 0, rng),
            deconv2: ConvTranspose1d::new(CH[1], CH[0], KERNEL, STRIDE, PAD, 0, rng),
            bn_d2: BatchNorm1d::new(CH[0]),
            fuse3: Conv1d::new(2 * CH[0], CH[0], 1, 1, 0, rng),
            deconv3: ConvTranspose1d::new(CH[0], 1, KERNEL, STRIDE, PAD, 0, rng),
            fc_out: Dense::new(n_input, n_input, rng),
            n_input,
            n_rep,
            no_skip,
            skip_conv_activation,
        };
        debug_assert_eq!(model.conv1.out_len(n_input), n_input / 2);
        debug_assert_eq!(model.conv2.out_len(n_input / 2), n_input / 4);
        debug_assert_eq!(model.conv3.out_len(n_input / 4), n_input / 8);
        debug_assert_eq!(model.deconv1.out_len(n_input / 8), n_input / 4);
        debug_assert_eq!(model.deconv2.out_len(n_input / 4), n_input / 2);
        debug_assert_eq!(model.deconv3.out_len(n_input / 2), n_input);
        Ok(model)
    }

    /// Build the model a config describes, drawing initial weights from the
    /// given seed.
    pub fn from_config(config: &TrainingConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SccaeModel::new(
            config.n_input,
            config.n_rep,
            config.no_skip,
            config.skip_conv_activation,
            &mut rng,
        )
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.n_input {
            return Err(Error::shape(
                "sccae input",
                format!("[_, {}]", self.n_input),
                format!("[{}, {}]", x.nrows(), x.ncols()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sccae input".into()));
        }
        Ok(())
    }

    /// Encoder forward pass, returning the embedding and the cache the
    /// decoder and backward passes need.
    pub fn encode_fwd(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, EncoderCache)> {
        self.check_input(x)?;
        let batch = x.nrows();
        let x3 = x.clone().insert_axis(Axis(1));
        let (y1, c1) = self.conv1.forward(&x3);
        let (pre1, b1) = self.bn1.forward(&y1, mode);
        let a1 = leaky_relu(&pre1);
        let (y2, c2) = self.conv2.forward(&a1);
        let (pre2, b2) = self.bn2.forward(&y2, mode);
        let a2 = leaky_relu(&pre2);
        let (y3, c3) = self.conv3.forward(&a2);
        let (pre3, b3) = self.bn3.forward(&y3, mode);
        let a3 = leaky_relu(&pre3);
        let flat = a3
            .clone()
            .into_shape_with_order((batch, CH[2] * self.n_input / 8))
            .expect("contiguous activations");
        let (z, z_cache) = self.fc_z.forward(&flat);
        Ok((
            z,
            EncoderCache {
                c1,
                b1,
                pre1,
                c2,
                b2,
                pre2,
                c3,
                b3,
                pre3,
                z_cache,
                skips: SkipActs { a1, a2, a3 },
            },
        ))
    }

    /// Decoder forward pass from an embedding and (possibly zeroed) skip
    /// activations.
    pub fn decode_fwd(
        &mut self,
        z: &Array2<f64>,
        skips: &SkipActs,
        mode: Mode,
    ) -> Result<(Array2<f64>, DecoderCache)> {
        let batch = z.nrows();
        if z.ncols() != self.n_rep {
            return Err(Error::shape(
                "decoder embedding",
                format!("[_, {}]", self.n_rep),
                format!("[{}, {}]", batch, z.ncols()),
            ));
        }
        let expect_skip = |name: &str, a: &Array3<f64>, ch: usize, len: usize| -> Result<()> {
            if a.shape() != [batch, ch, len] {
                return Err(Error::shape(
                    name,
                    format!("[{batch}, {ch}, {len}]"),
                    format!("{:?}", a.shape()),
                ));
            }
            Ok(())
        };
        expect_skip("skip a1", &skips.a1, CH[0], self.n_input / 2)?;
        expect_skip("skip a2", &skips.a2, CH[1], self.n_input / 4)?;
        expect_skip("skip a3", &skips.a3, CH[2], self.n_input / 8)?;

        let skip_of = |a: &Array3<f64>| -> Array3<f64> {
            if self.no_skip {
                Array3::zeros(a.raw_dim())
            } else {
                a.clone()
            }
        };

        let (d_lin, fd_cache) = self.fc_d.forward(z);
        let d_act = leaky_relu(&d_lin);
        let h3 = d_act
            .into_shape_with_order((batch, CH[2], self.n_input / 8))
            .expect("contiguous dense output");

        let fuse_fwd = |layer: &Conv1d,
                        act: bool,
                        h: &Array3<f64>,
                        a: &Array3<f64>|
         -> (Array3<f64>, Array3<f64>, Conv1dCache) {
            let cat = concatenate(Axis(1), &[h.view(), a.view()]).expect("matching skip shapes");
            let (pre, cache) = layer.forward(&cat);
            let out = if act { leaky_relu(&pre) } else { pre.clone() };
            (out, pre, cache)
        };
        let act = self.skip_conv_activation;

        let (f1, f1_pre, fc1) = fuse_fwd(&self.fuse1, act, &h3, &skip_of(&skips.a3));
        let (u1, dc1) = self.deconv1.forward(&f1);
        let (q1, bd1) = self.bn_d1.forward(&u1, mode);
        let h2 = leaky_relu(&q1);

        let (f2, f2_pre, fc2) = fuse_fwd(&self.fuse2, act, &h2, &skip_of(&skips.a2));
        let (u2, dc2) = self.deconv2.forward(&f2);
        let (q2, bd2) = self.bn_d2.forward(&u2, mode);
        let h1 = leaky_relu(&q2);

        let (f3, f3_pre, fc3) = fuse_fwd(&self.fuse3, act, &h1, &skip_of(&skips.a1));
        let (u3, dc3) = self.deconv3.forward(&f3);
        let r = leaky_relu(&u3);
        let flat_r = r
            .into_shape_with_order((batch, self.n_input))
            .expect("contiguous reconstruction");
        let (xhat, fo_cache) = self.fc_out.forward(&flat_r);

        Ok((
            xhat,
            DecoderCache {
                fd_cache,
                d_lin,
                f1_pre,
                fc1,
                dc1,
                bd1,
                q1,
                f2_pre,
                fc2,
                dc2,
                bd2,
                q2,
                f3_pre,
                fc3,
                dc3,
                u3,
                fo_cache,
            },
        ))
    }

    /// Full autoencoder pass: reconstruction, embedding, and caches.
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, Array2<f64>, SccaeCache)> {
        let (z, enc) = self.encode_fwd(x, mode)?;
        let skips = enc.skips.clone();
        let (xhat, dec) = self.decode_fwd(&z, &skips, mode)?;
        Ok((xhat, z, SccaeCache { enc, dec }))
    }

    /// Embedding only, eval statistics, batched. Deterministic and free of
    /// side effects on the batch-norm running statistics.
    pub fn encode_batched(&mut self, x: &Array2<f64>, batch: usize) -> Result<Array2<f64>> {
        let n = x.nrows();
        let mut z = Array2::zeros((n, self.n_rep));
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let chunk = x.slice(s![start..end, ..]).to_owned();
            let (zc, _) = self.encode_fwd(&chunk, Mode::Eval)?;
            z.slice_mut(s![start..end, ..]).assign(&zc);
            start = end;
        }
        Ok(z)
    }

    /// Backward through decoder then encoder, accumulating parameter
    /// gradients. `d_xhat` is the loss gradient at the reconstruction;
    /// `dz_extra` is an optional additional gradient arriving directly at the
    /// embedding (the clustering stage injects its loss there). Returns the
    /// gradient with respect to the input spectra.
    pub fn backward(
        &mut self,
        d_xhat: &Array2<f64>,
        dz_extra: Option<&Array2<f64>>,
        cache: &SccaeCache,
    ) -> Array2<f64> {
        let batch = d_xhat.nrows();
        let dec = &cache.dec;
        let enc = &cache.enc;
        let act = self.skip_conv_activation;

        // Decoder, reversed.
        let d_flat_r = self.fc_out.backward(d_xhat, &dec.fo_cache);
        let d_r = d_flat_r
            .into_shape_with_order((batch, 1, self.n_input))
            .expect("contiguous");
        let d_u3 = leaky_relu_backward(&d_r, &dec.u3);
        let d_f3 = self.deconv3.backward(&d_u3, &dec.dc3);
        let d_f3 = if act {
            leaky_relu_backward(&d_f3, &dec.f3_pre)
        } else {
            d_f3
        };
        let d_cat3 = self.fuse3.backward(&d_f3, &dec.fc3);
        let d_h1 = d_cat3.slice(s![.., ..CH[0], ..]).to_owned();
        let d_a1_skip = d_cat3.slice(s![.., CH[0].., ..]).to_owned();

        let d_q2 = leaky_relu_backward(&d_h1, &dec.q2);
        let d_u2 = self.bn_d2.backward(&d_q2, &dec.bd2);
        let d_f2 = self.deconv2.backward(&d_u2, &dec.dc2);
        let d_f2 = if act {
            leaky_relu_backward(&d_f2, &dec.f2_pre)
        } else {
            d_f2
        };
        let d_cat2 = self.fuse2.backward(&d_f2, &dec.fc2);
        let d_h2 = d_cat2.slice(s![.., ..CH[1], ..]).to_owned();
        let d_a2_skip = d_cat2.slice(s![.., CH[1].., ..]).to_owned();

        let d_q1 = leaky_relu_backward(&d_h2, &dec.q1);
        let d_u1 = self.bn_d1.backward(&d_q1, &dec.bd1);
        let d_f1 = self.deconv1.backward(&d_u1, &dec.dc1);
        let d_f1 = if act {
            leaky_relu_backward(&d_f1, &dec.f1_pre)
        } else {
            d_f1
        };
        let d_cat1 = self.fuse1.backward(&d_f1, &dec.fc1);
        let d_h3 = d_cat1.slice(s![.., ..CH[2], ..]).to_owned();
        let d_a3_skip = d_cat1.slice(s![.., CH[2].., ..]).to_owned();

        let d_d_act = d_h3
            .into_shape_with_order((batch, CH[2] * self.n_input / 8))
            .expect("contiguous");
        let d_d_lin = leaky_relu_backward(&d_d_act, &dec.d_lin);
        let d_z_dec = self.fc_d.backward(&d_d_lin, &dec.fd_cache);

        let mut d_z = d_z_dec;
        if let Some(extra) = dz_extra {
            d_z += extra;
        }

        // Encoder, reversed; skip-path gradients rejoin their activations
        // unless the skips were fed zeros.
        let d_flat = self.fc_z.backward(&d_z, &enc.z_cache);
        let mut d_a3 = d_flat
            .into_shape_with_order((batch, CH[2], self.n_input / 8))
            .expect("contiguous");
        if !self.no_skip {
            d_a3 += &d_a3_skip;
        }
        let d_pre3 = leaky_relu_backward(&d_a3, &enc.pre3);
        let d_y3 = self.bn3.backward(&d_pre3, &enc.b3);
        let mut d_a2 = self.conv3.backward(&d_y3, &enc.c3);
        if !self.no_skip {
            d_a2 += &d_a2_skip;
        }
        let d_pre2 = leaky_relu_backward(&d_a2, &enc.pre2);
        let d_y2 = self.bn2.backward(&d_pre2, &enc.b2);
        let mut d_a1 = self.conv2.backward(&d_y2, &enc.c2);
        if !self.no_skip {
            d_a1 += &d_a1_skip;
        }
        let d_pre1 = leaky_relu_backward(&d_a1, &enc.pre1);
        let d_y1 = self.bn1.backward(&d_pre1, &enc.b1);
        let d_x3 = self.conv1.backward(&d_y1, &enc.c1);
        d_x3.remove_axis(Axis(1))
    }

    /// Encoder-only backward: propagate an embedding gradient to the input.
    /// With `accumulate` false the parameter gradients are left untouched
    /// (used by the adversarial-direction power iteration, which only needs
    /// the input gradient).
    pub fn encode_bwd(
        &mut self,
        d_z: &Array2<f64>,
        cache: &EncoderCache,
        accumulate: bool,
    ) -> Array2<f64> {
        let batch = d_z.nrows();
        let saved: Option<Vec<f64>> = if accumulate {
            None
        } else {
            Some(self.flat_grads())
        };
        let d_flat = self.fc_z.backward(d_z, &cache.z_cache);
        let d_a3 = d_flat
            .into_shape_with_order((batch, CH[2], self.n_input / 8))
            .expect("contiguous");
        let d_pre3 = leaky_relu_backward(&d_a3, &cache.pre3);
        let d_y3 = self.bn3.backward(&d_pre3, &cache.b3);
        let d_a2 = self.conv3.backward(&d_y3, &cache.c3);
        let d_pre2 = leaky_relu_backward(&d_a2, &cache.pre2);
        let d_y2 = self.bn2.backward(&d_pre2, &cache.b2);
        let d_a1 = self.conv2.backward(&d_y2, &cache.c2);
        let d_pre1 = leaky_relu_backward(&d_a1, &cache.pre1);
        let d_y1 = self.bn1.backward(&d_pre1, &cache.b1);
        let d_x3 = self.conv1.backward(&d_y1, &cache.c1);
        if let Some(grads) = saved {
            self.restore_flat_grads(&grads);
        }
        d_x3.remove_axis(Axis(1))
    }

    fn restore_flat_grads(&mut self, grads: &[f64]) {
        let mut offset = 0;
        self.visit_params(&mut |_, p| {
            let n = p.grad.len();
            for (g, &v) in p.grad.iter_mut().zip(&grads[offset..offset + n]) {
                *g = v;
            }
            offset += n;
        });
    }

    /// Visit only encoder parameters (the stage-3 classifier shares these).
    pub fn visit_encoder_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit("enc.conv1", f);
        self.bn1.visit("enc.bn1", f);
        self.conv2.visit("enc.conv2", f);
        self.bn2.visit("enc.bn2", f);
        self.conv3.visit("enc.conv3", f);
        self.bn3.visit("enc.bn3", f);
        self.fc_z.visit("enc.fc_z", f);
    }

    /// Visit only encoder batch-norm buffers (the classifier stage carries
    /// the encoder without the decoder).
    pub fn visit_encoder_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.bn1.visit_buffers("enc.bn1", f);
        self.bn2.visit_buffers("enc.bn2", f);
        self.bn3.visit_buffers("enc.bn3", f);
    }

    /// Visit only decoder parameters (used to assert gradient routing).
    pub fn visit_decoder_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc_d.visit("dec.fc_d", f);
        self.fuse1.visit("dec.fuse1", f);
        self.deconv1.visit("dec.deconv1", f);
        self.bn_d1.visit("dec.bn_d1", f);
        self.fuse2.visit("dec.fuse2", f);
        self.deconv2.visit("dec.deconv2", f);
        self.bn_d2.visit("dec.bn_d2", f);
        self.fuse3.visit("dec.fuse3", f);
        self.deconv3.visit("dec.deconv3", f);
        self.fc_out.visit("dec.fc_out", f);
    }
}

impl HasParams for SccaeModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.visit_encoder_params(f);
        self.visit_decoder_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.bn1.visit_buffers("enc.bn1", f);
        self.bn2.visit_buffers("enc.bn2", f);
        self.bn3.visit_buffers("enc.bn3", f);
        self.bn_d1.visit_buffers("dec.bn_d1", f);
        self.bn_d2.visit_buffers("dec.bn_d2", f);
    }
}

/// Mean over samples of the squared reconstruction error.
pub fn reconstruction_loss(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{:?}", x.shape()),
            format!("{:?}", xhat.shape()),
        ));
    }
    let n = x.nrows() as f64;
    let mut total = 0.0;
    for (a, b) in x.iter().zip(xhat.iter()) {
        let d = a - b;
        total += d * d;
    }
    Ok(total / n)
}

/// Gradient of [`reconstruction_loss`] with respect to the reconstruction.
pub fn reconstruction_grad(x: &Array2<f64>, xhat: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut g = xhat - x;
    g.mapv_inplace(|v| 2.0 * v / n);
    g
}

/// Mini-batch pre-training of the autoencoder on all available spectra.
///
/// Runs Adam for up to `config.pretrain_epochs` epochs, recording the mean
/// reconstruction loss per epoch. Stops early when the best loss has not
/// improved by more than 1e-5 for `config.pretrain_patience` epochs (0
/// disables). A non-finite loss aborts with the parameters rolled back to
/// the last finite epoch.
pub fn pretrain(
    model: &mut SccaeModel,
    data: &Array2<f64>,
    config: &TrainingConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("pretrain: empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.pretrain_lr);
    let mut curve = Vec::with_capacity(config.pretrain_epochs);
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut snapshot = model.flat_values();

    for epoch in 0..config.pretrain_epochs {
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather_rows(data, chunk);
            let (xhat, _z, cache) = model.forward(&batch, Mode::Train)?;
            let loss = reconstruction_loss(&batch, &xhat)?;
            if !loss.is_finite() {
                model.load_flat_values(&snapshot);
                return Err(Error::Diverged {
                    loss_name: "reconstruction loss".into(),
                    epoch,
                });
            }
            epoch_loss += loss;
            batches += 1.0;
            model.zero_grads();
            let d_xhat = reconstruction_grad(&batch, &xhat);
            model.backward(&d_xhat, None, &cache);
            adam.step(model)?;
        }
        let mean_loss = epoch_loss / batches;
        curve.push(mean_loss);
        snapshot = model.flat_values();

        if mean_loss < best - 1e-5 {
            best = mean_loss;
            best_epoch = epoch;
        } else if config.pretrain_patience > 0 && epoch - best_epoch >= config.pretrain_patience {
            log::info!(
                "pretrain: early stop at epoch {epoch} (no improvement since {best_epoch})"
            );
            break;
        }
    }
    Ok(curve)
}

/// Copy the given rows of `data` into a dense batch.
pub fn gather_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&data.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use ndarray::array;
    use rand::Rng;

    fn small_model(seed: u64) -> SccaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SccaeModel::new(512, 32, false, true, &mut rng).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn length_schedule_is_power_of_two_halving() {
        let m = small_model(0);
        assert_eq!(m.conv1.out_len(512), 256);
        assert_eq!(m.conv2.out_len(256), 128);
        assert_eq!(m.conv3.out_len(128), 64);
        assert_eq!(m.deconv1.out_len(64), 128);
        assert_eq!(m.deconv2.out_len(128), 256);
        assert_eq!(m.deconv3.out_len(256), 512);
        assert!(SccaeModel::new(100, 8, false, true, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn shapes_and_finiteness_untrained() {
        let mut m = small_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_batch(&mut rng, 4, 512);
        let (xhat, z, _) = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(z.shape(), &[4, 32]);
        assert_eq!(xhat.shape(), &[4, 512]);
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(xhat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_encode_is_deterministic_and_duplicate_consistent() {
        let mut m = small_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let row = random_batch(&mut rng, 1, 512);
        let mut x = Array2::zeros((2, 512));
        x.row_mut(0).assign(&row.row(0));
        x.row_mut(1).assign(&row.row(0));
        let z = m.encode_batched(&x, 2).unwrap();
        for j in 0..32 {
            assert_eq!(z[[0, j]], z[[1, j]]);
        }
        let z2 = m.encode_batched(&x, 1).unwrap();
        for j in 0..32 {
            assert!((z[[0, j]] - z2[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_loss_examples_and_oracle() {
        let x = array![[1.0, 0.0]];
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        let zero = array![[0.0, 0.0]];
        assert_eq!(reconstruction_loss(&x, &zero).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_batch(&mut rng, 7, 13);
        let b = random_batch(&mut rng, 7, 13);
        let fast = reconstruction_loss(&a, &b).unwrap();
        let mut slow = 0.0;
        for i in 0..7 {
            for j in 0..13 {
                slow += (a[[i, j]] - b[[i, j]]).powi(2);
            }
        }
        slow /= 7.0;
        assert!((fast - slow).abs() / slow.max(1.0) < 1e-6);

        assert!(reconstruction_loss(&a, &array![[1.0]]).is_err());
    }

    #[test]
    fn zero_embedding_zero_skips_decodes_finite() {
        let mut m = small_model(6);
        let z = Array2::zeros((2, 32));
        let skips = SkipActs::zeros(2, 512);
        let (xhat, _) = m.decode_fwd(&z, &skips, Mode::Eval).unwrap();
        assert_eq!(xhat.shape(), &[2, 512]);
        assert!(xhat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reconstruction_gradient_passes_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = {
            let mut mrng = ChaCha8Rng::seed_from_u64(8);
            SccaeModel::new(512, 4, false, true, &mut mrng).unwrap()
        };
        let x = random_batch(&mut rng, 4, 512);

        m.zero_grads();
        let (xhat, _z, cache) = m.forward(&x, Mode::TrainFrozen).unwrap();
        let d_xhat = reconstruction_grad(&x, &xhat);
        m.backward(&d_xhat, None, &cache);
        let analytic = m.flat_grads();

        let x_ref = x.clone();
        let report = grad_check(
            &mut m,
            &mut |sccae: &mut SccaeModel| {
                let (xhat, _, _) = sccae.forward(&x_ref, Mode::TrainFrozen).unwrap();
                reconstruction_loss(&x_ref, &xhat).unwrap()
            },
            &analytic,
            1e-5,
            40,
            99,
        );
        assert!(
            report.max_rel < 1e-4,
            "worst {} at {}[{}]",
            report.max_rel,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn no_skip_model_gradient_also_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut m = {
            let mut mrng = ChaCha8Rng::seed_from_u64(18);
            SccaeModel::new(512, 4, true, true, &mut mrng).unwrap()
        };
        let x = random_batch(&mut rng, 3, 512);
        m.zero_grads();
        let (xhat, _z, cache) = m.forward(&x, Mode::TrainFrozen).unwrap();
        let d_xhat = reconstruction_grad(&x, &xhat);
        m.backward(&d_xhat, None, &cache);
        let analytic = m.flat_grads();
        let x_ref = x.clone();
        let report = grad_check(
            &mut m,
            &mut |sccae: &mut SccaeModel| {
                let (xhat, _, _) = sccae.forward(&x_ref, Mode::TrainFrozen).unwrap();
                reconstruction_loss(&x_ref, &xhat).unwrap()
            },
            &analytic,
            1e-5,
            25,
            100,
        );
        assert!(report.max_rel < 1e-4, "worst {}", report.max_rel);
    }

    #[test]
    fn embedding_gradient_injection_passes_finite_difference_check() {
        // The clustering stage feeds a gradient straight into z; check the
        // encoder path by treating sum(z * w) as an auxiliary loss.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = {
            let mut mrng = ChaCha8Rng::seed_from_u64(22);
            SccaeModel::new(512, 4, false, true, &mut mrng).unwrap()
        };
        let x = random_batch(&mut rng, 3, 512);
        let w = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));

        m.zero_grads();
        let (z, enc) = m.encode_fwd(&x, Mode::TrainFrozen).unwrap();
        let _ = z;
        m.encode_bwd(&w, &enc, true);
        let analytic = m.flat_grads();

        let (x_ref, w_ref) = (x.clone(), w.clone());
        let report = grad_check(
            &mut m,
            &mut |sccae: &mut SccaeModel| {
                let (z, _) = sccae.encode_fwd(&x_ref, Mode::TrainFrozen).unwrap();
                (&z * &w_ref).sum()
            },
            &analytic,
            1e-5,
            25,
            101,
        );
        assert!(report.max_rel < 1e-4, "worst {}", report.max_rel);
    }

    #[test]
    fn encode_bwd_without_accumulation_leaves_grads_untouched() {
        let mut m = small_model(30);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_batch(&mut rng, 2, 512);
        m.zero_grads();
        let (_, enc) = m.encode_fwd(&x, Mode::Eval).unwrap();
        let dz = Array2::from_shape_fn((2, 32), |_| rng.gen_range(-1.0..1.0));
        let dx = m.encode_bwd(&dz, &enc, false);
        assert_eq!(dx.shape(), &[2, 512]);
        assert!(m.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pretrain_halves_loss_on_small_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let data = random_batch(&mut rng, 20, 512);
        let mut m = small_model(41);
        let cfg = TrainingConfig {
            pretrain_epochs: 200,
            pretrain_patience: 0,
            ..TrainingConfig::desk_profile()
        };
        let curve = pretrain(&mut m, &data, &cfg, 42).unwrap();
        assert_eq!(curve.len(), 200);
        assert!(
            curve.last().unwrap() < &(0.5 * curve[0]),
            "initial {} final {}",
            curve[0],
            curve.last().unwrap()
        );
    }

    #[test]
    fn pretrain_zero_epochs_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let data = random_batch(&mut rng, 8, 512);
        let mut m = small_model(51);
        let before = m.flat_values();
        let cfg = TrainingConfig {
            pretrain_epochs: 0,
            ..TrainingConfig::desk_profile()
        };
        let curve = pretrain(&mut m, &data, &cfg, 0).unwrap();
        assert!(curve.is_empty());
        assert_eq!(m.flat_values(), before);
    }

    #[test]
    fn pretrain_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let data = random_batch(&mut rng, 12, 512);
        let cfg = TrainingConfig {
            pretrain_epochs: 5,
            ..TrainingConfig::desk_profile()
        };
        let mut m1 = small_model(61);
        let c1 = pretrain(&mut m1, &data, &cfg, 7).unwrap();
        let mut m2 = small_model(61);
        let c2 = pretrain(&mut m2, &data, &cfg, 7).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1.flat_values(), m2.flat_values());
    }

    #[test]
    fn early_stopping_cuts_the_epoch_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let data = random_batch(&mut rng, 10, 512);
        let mut m = small_model(71);
        let cfg = TrainingConfig {
            pretrain_epochs: 4000,
            pretrain_patience: 10,
            ..TrainingConfig::desk_profile()
        };
        let curve = pretrain(&mut m, &data, &cfg, 0).unwrap();
        assert!(curve.len() < 4000, "patience never triggered");
    }

    #[test]
    fn skip_connections_improve_reconstruction_on_equal_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let data = random_batch(&mut rng, 24, 512);
        let cfg = TrainingConfig {
            pretrain_epochs: 60,
            pretrain_patience: 0,
            ..TrainingConfig::desk_profile()
        };
        let mut with_skips = {
            let mut mrng = ChaCha8Rng::seed_from_u64(81);
            SccaeModel::new(512, 32, false, true, &mut mrng).unwrap()
        };
        let skip_curve = pretrain(&mut with_skips, &data, &cfg, 82).unwrap();
        let mut without = {
            let mut mrng = ChaCha8Rng::seed_from_u64(81);
            SccaeModel::new(512, 32, true, true, &mut mrng).unwrap()
        };
        let plain_curve = pretrain(&mut without, &data, &cfg, 82).unwrap();
        // Both train; the skip-connected model reconstructs better.
        assert!(plain_curve.last().unwrap() < &plain_curve[0]);
        assert!(skip_curve.last().unwrap() < plain_curve.last().unwrap());
    }

    #[test]
    fn checkpoint_roundtrip_restores_bn_buffers() {
        use crate::nn::{load_checkpoint, save_checkpoint};
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let data = random_batch(&mut rng, 8, 512);
        let mut m = small_model(91);
        let cfg = TrainingConfig {
            pretrain_epochs: 2,
            ..TrainingConfig::desk_profile()
        };
        pretrain(&mut m, &data, &cfg, 92).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sccae.ck");
        save_checkpoint(&path, &mut m, 123, 92).unwrap();

        let mut fresh = small_model(999);
        let (hash, seed) = load_checkpoint(&path, &mut fresh).unwrap();
        assert_eq!(hash, 123);
        assert_eq!(seed, 92);
        let za = m.encode_batched(&data, 8).unwrap();
        let zb = fresh.encode_batched(&data, 8).unwrap();
        // Bit-identical embeddings require the running statistics too.
        assert_eq!(za, zb);
    }
}
