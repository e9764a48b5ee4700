//! Single-layer LSTM over time-major batches `[T, B, D]`, gate order
//! input, forget, cell candidate, output.

use rand::Rng;

use crate::scalar::{gemm, Scalar};

use super::activation::sigmoid;
use super::init::uniform;
use super::tensor::check_finite;
use super::{NnError, Parameter, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<F> {
    /// `[D, 4H]`
    pub w_x: Parameter<F>,
    /// `[H, 4H]`
    pub w_h: Parameter<F>,
    /// `[4H]`
    pub bias: Parameter<F>,
}

/// Activations kept from the forward pass for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<F> {
    steps: usize,
    batch: usize,
    /// Post-activation gates `[T, B, 4H]`.
    gates: Vec<F>,
    /// Cell states `[T, B, H]`.
    cells: Vec<F>,
    /// `tanh` of the cell states.
    cells_tanh: Vec<F>,
    /// Hidden states `[T, B, H]`.
    hidden: Vec<F>,
}

impl<F: Scalar> LstmCache<F> {
    /// Hidden states `[T, B, H]`.
    pub fn hidden(&self) -> &[F] {
        &self.hidden
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final hidden state `[B, H]`.
    pub fn last_hidden(&self) -> &[F] {
        let h = self.hidden.len() / (self.steps * self.batch);
        &self.hidden[(self.steps - 1) * self.batch * h..]
    }
}

impl<F: Scalar> Lstm<F> {
    /// Uniform `±1/sqrt(H)` weights, zero biases except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = F::one());
        Lstm {
            w_x: Parameter::new(uniform(&[input, 4 * hidden], bound, rng)),
            w_h: Parameter::new(uniform(&[hidden, 4 * hidden], bound, rng)),
            bias: Parameter::new(bias),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.value.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.value.shape()[0]
    }

    /// Runs the recurrence from a zero state over `x = [steps, batch, D]`.
    pub fn forward(&self, x: &[F], steps: usize, batch: usize) -> Result<LstmCache<F>, NnError> {
        let (d, h) = (self.input_size(), self.hidden_size());
        let g4 = 4 * h;
        if steps == 0 || batch == 0 || x.len() != steps * batch * d {
            return Err(NnError::ShapeMismatch(format!(
                "lstm input has {} values, expected {steps}x{batch}x{d}",
                x.len()
            )));
        }
        let rows = steps * batch;
        let mut gates = Vec::with_capacity(rows * g4);
        for _ in 0..rows {
            gates.extend_from_slice(self.bias.value.data());
        }
        gemm(false, false, rows, g4, d, F::one(), x, self.w_x.value.data(), F::one(), &mut gates);

        let mut cells = vec![F::zero(); rows * h];
        let mut cells_tanh = vec![F::zero(); rows * h];
        let mut hidden = vec![F::zero(); rows * h];
        let one = F::one();
        for t in 0..steps {
            let gate_t = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            if t > 0 {
                let h_prev = &hidden[(t - 1) * batch * h..t * batch * h];
                gemm(false, false, batch, g4, h, one, h_prev, self.w_h.value.data(), one, gate_t);
            }
            for b in 0..batch {
                let g = &mut gate_t[b * g4..(b + 1) * g4];
                let row = (t * batch + b) * h;
                for j in 0..h {
                    let i = sigmoid(g[j]);
                    let f = sigmoid(g[h + j]);
                    let c_hat = g[2 * h + j].tanh();
                    let o = sigmoid(g[3 * h + j]);
                    g[j] = i;
                    g[h + j] = f;
                    g[2 * h + j] = c_hat;
                    g[3 * h + j] = o;
                    let c_prev = if t > 0 { cells[row - batch * h + j] } else { F::zero() };
                    let c = f * c_prev + i * c_hat;
                    let tc = c.tanh();
                    cells[row + j] = c;
                    cells_tanh[row + j] = tc;
                    hidden[row + j] = o * tc;
                }
            }
        }
        check_finite(&hidden, "lstm forward")?;
        Ok(LstmCache { steps, batch, gates, cells, cells_tanh, hidden })
    }

    /// Backpropagation through time. `grad_hidden` is `dL/dh` for every step
    /// `[T, B, H]`. Accumulates parameter gradients and returns `dL/dx` when
    /// requested.
    pub fn backward(
        &mut self,
        x: &[F],
        cache: &LstmCache<F>,
        grad_hidden: &[F],
        need_input_grad: bool,
    ) -> Result<Option<Vec<F>>, NnError> {
        let (d, h) = (self.input_size(), self.hidden_size());
        let g4 = 4 * h;
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        if grad_hidden.len() != rows * h || x.len() != rows * d {
            return Err(NnError::ShapeMismatch("lstm backward buffers do not match the cache".into()));
        }
        let one = F::one();
        // pre-activation gate gradients for every step
        let mut dgates = vec![F::zero(); rows * g4];
        let mut dh_next = vec![F::zero(); batch * h];
        let mut dc_next = vec![F::zero(); batch * h];
        for t in (0..steps).rev() {
            for b in 0..batch {
                let row = (t * batch + b) * h;
                let g = &cache.gates[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                let dg = &mut dgates[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                for j in 0..h {
                    let (i, f, c_hat, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = cache.cells_tanh[row + j];
                    let dh = grad_hidden[row + j] + dh_next[b * h + j];
                    let dc = dc_next[b * h + j] + dh * o * (one - tc * tc);
                    let c_prev = if t > 0 { cache.cells[row - batch * h + j] } else { F::zero() };
                    dg[j] = dc * c_hat * i * (one - i);
                    dg[h + j] = dc * c_prev * f * (one - f);
                    dg[2 * h + j] = dc * i * (one - c_hat * c_hat);
                    dg[3 * h + j] = dh * tc * o * (one - o);
                    dc_next[b * h + j] = dc * f;
                }
            }
            if t > 0 {
                let dg_t = &dgates[t * batch * g4..(t + 1) * batch * g4];
                gemm(false, true, batch, h, g4, one, dg_t, self.w_h.value.data(), F::zero(), &mut dh_next);
            }
        }

        gemm(true, false, d, g4, rows, one, x, &dgates, one, self.w_x.grad.data_mut());
        if steps > 1 {
            let h_prev = &cache.hidden[..(steps - 1) * batch * h];
            let dg_later = &dgates[batch * g4..];
            gemm(true, false, h, g4, (steps - 1) * batch, one, h_prev, dg_later, one, self.w_h.grad.data_mut());
        }
        for r in dgates.chunks_exact(g4) {
            for (b, &v) in self.bias.grad.data_mut().iter_mut().zip(r) {
                *b += v;
            }
        }
        let dx = if need_input_grad {
            let mut dx = vec![F::zero(); rows * d];
            gemm(false, true, rows, d, g4, one, &dgates, self.w_x.value.data(), F::zero(), &mut dx);
            check_finite(&dx, "lstm backward")?;
            Some(dx)
        } else {
            None
        };
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check, sample_coordinates};
    use rand::SeedableRng;

    fn with_values(l: &Lstm<f64>, w_x: &[f64], w_h: &[f64], b: &[f64]) -> Lstm<f64> {
        let mut m = l.clone();
        m.w_x.value = Tensor::from_vec(l.w_x.value.shape(), w_x.to_vec()).unwrap();
        m.w_h.value = Tensor::from_vec(l.w_h.value.shape(), w_h.to_vec()).unwrap();
        m.bias.value = Tensor::from_vec(l.bias.value.shape(), b.to_vec()).unwrap();
        m
    }

    #[test]
    fn zero_parameters_give_zero_hidden() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut l = Lstm::<f64>::new(3, 4, &mut rng);
        for p in l.params_mut() {
            p.value.fill(0.0);
        }
        let x: Vec<f64> = (0..2 * 5 * 3).map(|v| v as f64 - 7.0).collect();
        let c = l.forward(&x, 5, 2).unwrap();
        assert!(c.hidden().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_hand_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut l = Lstm::<f64>::new(1, 1, &mut rng);
        for p in l.params_mut() {
            p.value.fill(0.5);
        }
        let c = l.forward(&[1.0], 1, 1).unwrap();
        // every pre-activation is 0.5 * 1 + 0.5 * h0 + 0.5 = 1 with h0 = 0
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let cell = s * 1.0f64.tanh();
        let expected = s * cell.tanh();
        assert!((c.hidden()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let l = Lstm::<f64>::new(2, 3, &mut rng);
        assert_eq!(l.bias.value.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let bound = 1.0 / 3f64.sqrt();
        assert!(l.w_h.value.data().iter().all(|v| v.abs() <= bound));
    }

    fn check(steps: usize, batch: usize, d: usize, h: usize, tol: f64, coords: usize) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64((steps * 31 + h) as u64);
        let mut l = Lstm::<f64>::new(d, h, &mut rng);
        l.bias.value = uniform(&[4 * h], 0.5, &mut rng);
        let x: Vec<f64> = uniform::<f64, _>(&[steps, batch, d], 1.0, &mut rng).into_data();
        let weights: Vec<f64> = uniform::<f64, _>(&[steps, batch, h], 1.0, &mut rng).into_data();
        let cache = l.forward(&x, steps, batch).unwrap();
        let dx = l.backward(&x, &cache, &weights, true).unwrap().unwrap();

        let (wx, wh, b) = (l.w_x.value.data().to_vec(), l.w_h.value.data().to_vec(), l.bias.value.data().to_vec());
        let loss = |x: &[f64], wx: &[f64], wh: &[f64], b: &[f64]| {
            let m = with_values(&l, wx, wh, b);
            m.forward(x, steps, batch).unwrap().hidden().iter().zip(&weights).map(|(a, c)| a * c).sum::<f64>()
        };
        let pick = |n: usize, s: u64| sample_coordinates(n, coords, s);
        gradient_check(|v| loss(v, &wx, &wh, &b), &x, &dx, &pick(x.len(), 1), 1e-5, tol).unwrap();
        gradient_check(|v| loss(&x, v, &wh, &b), &wx, l.w_x.grad.data(), &pick(wx.len(), 2), 1e-5, tol).unwrap();
        gradient_check(|v| loss(&x, &wx, v, &b), &wh, l.w_h.grad.data(), &pick(wh.len(), 3), 1e-5, tol).unwrap();
        gradient_check(|v| loss(&x, &wx, &wh, v), &b, l.bias.grad.data(), &pick(b.len(), 4), 1e-5, tol).unwrap();
    }

    #[test]
    fn small_gradient_check() {
        check(3, 1, 2, 2, 1e-5, 100);
    }

    #[test]
    fn batched_gradient_check() {
        check(6, 4, 5, 7, 1e-4, 120);
    }
}
