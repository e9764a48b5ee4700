use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labeling::{LabeledSample, Side};
use crate::lob::FEATURES;
use crate::nn::{leaky_relu_backward, leaky_relu_forward, pinball_loss, Conv2d, Dense, Lstm, LstmCache, Parameter};
use crate::nn::tensor::check_finite;
use crate::nn::{QuantileSpec, Tensor};
use crate::scalar::Scalar;

use super::{ModelConfig, ModelError};

/// One LSTM plus scalar readout for a single (side, quantile).
#[derive(Clone, Debug, PartialEq)]
pub struct Head<F> {
    pub lstm: Lstm<F>,
    pub readout: Dense<F>,
}

/// Parameters, optimiser moments and training counters of the network.
///
/// Outputs are produced as `center[side] + scale[side] * readout`, and the
/// auxiliary return inputs are standardised with the same pair, so the
/// readouts work on unit-scale targets.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<F> {
    pub config: ModelConfig,
    pub trunk: [Conv2d<F>; 3],
    /// Indexed by [`Side::index`].
    pub branches: [Lstm<F>; 2],
    /// `heads[side][quantile]`.
    pub heads: [Vec<Head<F>>; 2],
    pub target_center: [f64; 2],
    pub target_scale: [f64; 2],
    pub epoch: u64,
    pub adam_step: u64,
}

/// Model input for `n` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F> {
    pub n: usize,
    /// `[n, 1, T, 40]`
    pub x: Tensor<F>,
    /// Raw auxiliary returns per side, time-major `[T, n]`.
    pub aux: [Vec<F>; 2],
}

impl<F: Scalar> Batch<F> {
    pub fn from_samples(samples: &[&LabeledSample<'_>], window: usize) -> Result<Self, ModelError> {
        let n = samples.len();
        if n == 0 {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let mut x = Vec::with_capacity(n * window * FEATURES);
        let mut aux = [vec![F::zero(); window * n], vec![F::zero(); window * n]];
        for (i, s) in samples.iter().enumerate() {
            if s.window.rows() != window {
                return Err(ModelError::ShapeMismatch(format!(
                    "window has {} rows, model expects {window}",
                    s.window.rows()
                )));
            }
            x.extend(s.window.values.iter().map(|&v| F::from_f64_lossy(v)));
            for side in Side::BOTH {
                let a = s.aux(side);
                if a.len() != window {
                    return Err(ModelError::ShapeMismatch(format!("aux history of {} for window {window}", a.len())));
                }
                for (t, &v) in a.iter().enumerate() {
                    aux[side.index()][t * n + i] = F::from_f64_lossy(v);
                }
            }
        }
        Ok(Batch { n, x: Tensor::from_vec(&[n, 1, window, FEATURES], x)?, aux })
    }
}

/// Predictions in target units, `outputs[side][quantile][sample]`.
pub type Outputs<F> = [Vec<Vec<F>>; 2];

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<F> {
    pub n: usize,
    input: Tensor<F>,
    /// Post-activation trunk stages.
    stages: [Tensor<F>; 3],
    /// `[T, n, C + 1]` per side.
    branch_in: [Vec<F>; 2],
    branch: [LstmCache<F>; 2],
    heads: [Vec<LstmCache<F>>; 2],
    pub outputs: Outputs<F>,
}

impl<F: Scalar> ForwardPass<F> {
    /// Trunk output as a time-major `[T, n, C]` sequence.
    pub fn trunk_sequence(&self) -> Vec<F> {
        trunk_sequence(&self.stages[2], self.n)
    }
}

/// `[n, C, T, 1]` to time-major `[T, n, C]`.
fn trunk_sequence<F: Scalar>(a3: &Tensor<F>, n: usize) -> Vec<F> {
    let (c, t_len) = (a3.shape()[1], a3.shape()[2]);
    let a = a3.data();
    let mut seq = vec![F::zero(); t_len * n * c];
    for b in 0..n {
        for ch in 0..c {
            for t in 0..t_len {
                seq[(t * n + b) * c + ch] = a[(b * c + ch) * t_len + t];
            }
        }
    }
    seq
}

fn pair<T>(v: Vec<T>) -> [T; 2] {
    match <[T; 2]>::try_from(v) {
        Ok(a) => a,
        Err(_) => unreachable!("one entry per side"),
    }
}

fn tau_label(tau: f64) -> String {
    format!("q{tau}")
}

impl<F: Scalar> NetworkState<F> {
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let trunk = [
            Conv2d::new(1, c, (1, 2), (1, 2), &mut rng),
            Conv2d::new(c, c, (1, 2), (1, 2), &mut rng),
            Conv2d::new(c, c, (1, 10), (1, 1), &mut rng),
        ];
        let branches = [
            Lstm::new(c + 1, config.branch_hidden, &mut rng),
            Lstm::new(c + 1, config.branch_hidden, &mut rng),
        ];
        let mut side_heads = || {
            config
                .quantiles
                .iter()
                .map(|_| Head {
                    lstm: Lstm::new(config.branch_hidden, config.head_hidden, &mut rng),
                    readout: Dense::new(config.head_hidden, 1, &mut rng),
                })
                .collect::<Vec<_>>()
        };
        let heads = [side_heads(), side_heads()];
        Ok(NetworkState {
            config: config.clone(),
            trunk,
            branches,
            heads,
            target_center: [0.0; 2],
            target_scale: [1.0; 2],
            epoch: 0,
            adam_step: 0,
        })
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.config.quantiles
    }

    /// Every trainable parameter with a unique dotted name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Parameter<F>)> {
        let mut out = Vec::new();
        for (i, conv) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.conv{}.filters", i + 1), &conv.filters));
            out.push((format!("trunk.conv{}.bias", i + 1), &conv.bias));
        }
        for side in Side::BOTH {
            let b = &self.branches[side.index()];
            let p = format!("branch.{}", side.name());
            out.push((format!("{p}.w_x"), &b.w_x));
            out.push((format!("{p}.w_h"), &b.w_h));
            out.push((format!("{p}.bias"), &b.bias));
        }
        for side in Side::BOTH {
            for (head, &tau) in self.heads[side.index()].iter().zip(&self.config.quantiles) {
                let p = format!("head.{}.{}", side.name(), tau_label(tau));
                out.push((format!("{p}.lstm.w_x"), &head.lstm.w_x));
                out.push((format!("{p}.lstm.w_h"), &head.lstm.w_h));
                out.push((format!("{p}.lstm.bias"), &head.lstm.bias));
                out.push((format!("{p}.readout.w"), &head.readout.weight));
                out.push((format!("{p}.readout.b"), &head.readout.bias));
            }
        }
        out
    }

    /// Same order as [`named_params`](Self::named_params).
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = Vec::new();
        for conv in &mut self.trunk {
            out.extend(conv.params_mut());
        }
        for b in &mut self.branches {
            out.extend(b.params_mut());
        }
        for side in &mut self.heads {
            for head in side {
                out.extend(head.lstm.params_mut());
                out.extend(head.readout.params_mut());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn forward(&self, batch: &Batch<F>) -> Result<ForwardPass<F>, ModelError> {
        let cfg = &self.config;
        let (n, t_len, c) = (batch.n, cfg.window, cfg.channels);
        if batch.x.shape() != [n, 1, t_len, FEATURES] || batch.aux.iter().any(|a| a.len() != t_len * n) {
            return Err(ModelError::ShapeMismatch(format!(
                "batch input {:?} does not match window {t_len}",
                batch.x.shape()
            )));
        }
        let alpha = F::from_f64_lossy(cfg.leaky_slope);
        let mut a1 = self.trunk[0].forward(&batch.x)?;
        leaky_relu_forward(a1.data_mut(), alpha);
        let mut a2 = self.trunk[1].forward(&a1)?;
        leaky_relu_forward(a2.data_mut(), alpha);
        let mut a3 = self.trunk[2].forward(&a2)?;
        leaky_relu_forward(a3.data_mut(), alpha);
        a3.check_finite("trunk")?;

        let stages = [a1, a2, a3];
        let seq = trunk_sequence(&stages[2], n);
        let width = c + 1;
        let mut branch_in = Vec::with_capacity(2);
        let mut branch = Vec::with_capacity(2);
        let mut heads = Vec::with_capacity(2);
        let mut outputs = Vec::with_capacity(2);
        for side in Side::BOTH {
            let s = side.index();
            let center = F::from_f64_lossy(self.target_center[s]);
            let inv_scale = F::from_f64_lossy(1.0 / self.target_scale[s]);
            let mut input = Vec::with_capacity(t_len * n * width);
            for (row, chunk) in seq.chunks_exact(c).enumerate() {
                input.extend_from_slice(chunk);
                input.push((batch.aux[s][row] - center) * inv_scale);
            }
            let bc = self.branches[s].forward(&input, t_len, n)?;
            let scale = F::from_f64_lossy(self.target_scale[s]);
            let mut side_caches = Vec::with_capacity(self.heads[s].len());
            let mut side_out = Vec::with_capacity(self.heads[s].len());
            for head in &self.heads[s] {
                let hc = head.lstm.forward(bc.hidden(), t_len, n)?;
                let y = head.readout.forward(hc.last_hidden())?;
                let out: Vec<F> = y.iter().map(|&v| center + scale * v).collect();
                check_finite(&out, "readout")?;
                side_caches.push(hc);
                side_out.push(out);
            }
            branch_in.push(input);
            branch.push(bc);
            heads.push(side_caches);
            outputs.push(side_out);
        }
        let pass = ForwardPass {
            n,
            input: batch.x.clone(),
            stages,
            branch_in: pair(branch_in),
            branch: pair(branch),
            heads: pair(heads),
            outputs: pair(outputs),
        };
        Ok(pass)
    }

    /// Accumulates parameter gradients for `d_outputs`, the loss gradient
    /// with respect to each output of `pass`. Heads whose gradient is all
    /// zero are skipped and receive no gradient.
    pub fn backward(&mut self, pass: &ForwardPass<F>, d_outputs: &Outputs<F>) -> Result<(), ModelError> {
        let cfg = self.config.clone();
        let (n, t_len, c) = (pass.n, cfg.window, cfg.channels);
        let (hb, hh) = (cfg.branch_hidden, cfg.head_hidden);
        let alpha = F::from_f64_lossy(cfg.leaky_slope);
        let width = c + 1;
        let mut d_seq = vec![F::zero(); t_len * n * c];
        let mut trunk_touched = false;
        for side in Side::BOTH {
            let s = side.index();
            let scale = F::from_f64_lossy(self.target_scale[s]);
            let mut d_branch_h = vec![F::zero(); t_len * n * hb];
            let mut branch_touched = false;
            for (q, head) in self.heads[s].iter_mut().enumerate() {
                let d_out = &d_outputs[s][q];
                if d_out.len() != n {
                    return Err(ModelError::ShapeMismatch(format!("{} output gradients for {n} samples", d_out.len())));
                }
                if d_out.iter().all(|v| *v == F::zero()) {
                    continue;
                }
                branch_touched = true;
                let hc = &pass.heads[s][q];
                let dy: Vec<F> = d_out.iter().map(|&g| g * scale).collect();
                let d_last = head.readout.backward(hc.last_hidden(), &dy)?;
                let mut d_hidden = vec![F::zero(); t_len * n * hh];
                d_hidden[(t_len - 1) * n * hh..].copy_from_slice(&d_last);
                let dx = head
                    .lstm
                    .backward(pass.branch[s].hidden(), hc, &d_hidden, true)?
                    .expect("input gradient requested");
                for (a, b) in d_branch_h.iter_mut().zip(&dx) {
                    *a += *b;
                }
            }
            if !branch_touched {
                continue;
            }
            trunk_touched = true;
            let d_in = self.branches[s]
                .backward(&pass.branch_in[s], &pass.branch[s], &d_branch_h, true)?
                .expect("input gradient requested");
            for (row, chunk) in d_in.chunks_exact(width).enumerate() {
                for (a, b) in d_seq[row * c..(row + 1) * c].iter_mut().zip(chunk) {
                    *a += *b;
                }
            }
        }
        if !trunk_touched {
            return Ok(());
        }
        let mut d3 = Tensor::zeros(pass.stages[2].shape());
        {
            let d = d3.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    for t in 0..t_len {
                        d[(b * c + ch) * t_len + t] = d_seq[(t * n + b) * c + ch];
                    }
                }
            }
        }
        leaky_relu_backward(pass.stages[2].data(), d3.data_mut(), alpha);
        let mut d2 = self.trunk[2].backward(&pass.stages[1], &d3, true)?.expect("input gradient requested");
        leaky_relu_backward(pass.stages[1].data(), d2.data_mut(), alpha);
        let mut d1 = self.trunk[1].backward(&pass.stages[0], &d2, true)?.expect("input gradient requested");
        leaky_relu_backward(pass.stages[0].data(), d1.data_mut(), alpha);
        self.trunk[0].backward(&pass.input, &d1, false)?;
        Ok(())
    }

    /// Sum over sides and quantiles of the mean pinball loss against
    /// `targets[side]`, and its gradient with respect to every output.
    pub fn total_loss(&self, outputs: &Outputs<F>, targets: &[Vec<F>; 2]) -> Result<(f64, Outputs<F>), ModelError> {
        let mut total = 0.0;
        let mut grads: Outputs<F> = [Vec::new(), Vec::new()];
        for s in 0..2 {
            for (q, &tau) in self.config.quantiles.iter().enumerate() {
                let (l, g) = pinball_loss(&targets[s], &outputs[s][q], QuantileSpec::new(tau)?)?;
                total += l.to_f64_lossy();
                grads[s].push(g);
            }
        }
        Ok((total, grads))
    }

    /// Converts every parameter to another scalar type, dropping nothing.
    pub fn cast<G: Scalar>(&self) -> NetworkState<G> {
        fn p<F: Scalar, G: Scalar>(x: &Parameter<F>) -> Parameter<G> {
            Parameter {
                value: x.value.cast(),
                grad: x.grad.cast(),
                first_moment: x.first_moment.cast(),
                second_moment: x.second_moment.cast(),
            }
        }
        let conv = |c: &Conv2d<F>| Conv2d { filters: p(&c.filters), bias: p(&c.bias), stride: c.stride };
        let lstm = |l: &Lstm<F>| Lstm { w_x: p(&l.w_x), w_h: p(&l.w_h), bias: p(&l.bias) };
        let heads = |hs: &Vec<Head<F>>| {
            hs.iter()
                .map(|h| Head {
                    lstm: lstm(&h.lstm),
                    readout: Dense { weight: p(&h.readout.weight), bias: p(&h.readout.bias) },
                })
                .collect()
        };
        NetworkState {
            config: self.config.clone(),
            trunk: [conv(&self.trunk[0]), conv(&self.trunk[1]), conv(&self.trunk[2])],
            branches: [lstm(&self.branches[0]), lstm(&self.branches[1])],
            heads: [heads(&self.heads[0]), heads(&self.heads[1])],
            target_center: self.target_center,
            target_scale: self.target_scale,
            epoch: self.epoch,
            adam_step: self.adam_step,
        }
    }
}
