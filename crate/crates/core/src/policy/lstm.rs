//! Single-layer bidirectional LSTM with a per-step sigmoid output, and its
//! hand-written backward pass.
//!
//! Each direction holds input weights `4H x D`, recurrent weights `4H x H`
//! and biases `4H`, stored row-major with the gate blocks in the order
//! input, forget, output, cell candidate. The output layer maps
//! `[h_fwd; h_bwd]` (length `2H`) to one logit per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: vec![0.0; 4 * hidden * input],
            w_h: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }
}

/// Activations of one direction, kept for the backward pass.
struct DirectionTrace {
    /// Post-activation gates per step, `4H` each: i, f, o, g.
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

/// Parameters of the selection policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    input_dim: usize,
    hidden: usize,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

/// Names of the parameter blocks, in [`PolicyParams::blocks`] order.
pub const BLOCK_NAMES: [&str; 8] = [
    "forward.w_x",
    "forward.w_h",
    "forward.b",
    "backward.w_x",
    "backward.w_h",
    "backward.b",
    "out.w",
    "out.b",
];

impl PolicyParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            forward: LstmParams::zeros(input_dim, hidden),
            backward: LstmParams::zeros(input_dim, hidden),
            out_w: vec![0.0; 2 * hidden],
            out_b: 0.0,
        }
    }

    /// Weights uniform in `±1/sqrt(H)`, biases zero.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (hidden as f64).sqrt();
        for block in [
            &mut p.forward.w_x,
            &mut p.forward.w_h,
            &mut p.backward.w_x,
            &mut p.backward.w_h,
            &mut p.out_w,
        ] {
            block.iter_mut().for_each(|w| *w = rng.random_range(-scale..scale));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.forward.w_x,
            &self.forward.w_h,
            &self.forward.b,
            &self.backward.w_x,
            &self.backward.w_h,
            &self.backward.b,
            &self.out_w,
            std::slice::from_ref(&self.out_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.forward.w_x,
            &mut self.forward.w_h,
            &mut self.forward.b,
            &mut self.backward.w_x,
            &mut self.backward.w_h,
            &mut self.backward.b,
            &mut self.out_w,
            std::slice::from_mut(&mut self.out_b),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_inputs(&self, states: &[&[f64]]) -> Result<()> {
        if states.is_empty() {
            return Err(Error::Dimension("empty state sequence".into()));
        }
        if let Some(s) = states.iter().find(|s| s.len() != self.input_dim) {
            return Err(Error::Dimension(format!(
                "state of length {} for policy input {}",
                s.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn run_direction(&self, p: &LstmParams, xs: &[&[f64]], reverse: bool) -> DirectionTrace {
        let (h_dim, d) = (self.hidden, self.input_dim);
        let t_len = xs.len();
        let mut trace = DirectionTrace {
            gates: vec![0.0; t_len * 4 * h_dim],
            cells: vec![0.0; t_len * h_dim],
            hidden: vec![0.0; t_len * h_dim],
        };
        let mut h_prev = vec![0.0; h_dim];
        let mut c_prev = vec![0.0; h_dim];
        let mut z = vec![0.0; 4 * h_dim];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let x = xs[t];
            for k in 0..4 * h_dim {
                z[k] = p.b[k] + dot(&p.w_x[k * d..(k + 1) * d], x) + dot(&p.w_h[k * h_dim..(k + 1) * h_dim], &h_prev);
            }
            let g = &mut trace.gates[t * 4 * h_dim..(t + 1) * 4 * h_dim];
            for k in 0..3 * h_dim {
                g[k] = sigmoid(z[k]);
            }
            for k in 3 * h_dim..4 * h_dim {
                g[k] = z[k].tanh();
            }
            let c = &mut trace.cells[t * h_dim..(t + 1) * h_dim];
            let h = &mut trace.hidden[t * h_dim..(t + 1) * h_dim];
            for j in 0..h_dim {
                let (i_g, f_g, o_g, c_g) = (g[j], g[h_dim + j], g[2 * h_dim + j], g[3 * h_dim + j]);
                c[j] = f_g * c_prev[j] + i_g * c_g;
                h[j] = o_g * c[j].tanh();
            }
            h_prev.copy_from_slice(h);
            c_prev.copy_from_slice(c);
        }
        trace
    }

    /// Backpropagation through time for one direction given `dL/dh_t`.
    fn backprop_direction(
        &self,
        p: &LstmParams,
        xs: &[&[f64]],
        trace: &DirectionTrace,
        dh_out: &[f64],
        reverse: bool,
        grad: &mut LstmParams,
    ) {
        let (h_dim, d) = (self.hidden, self.input_dim);
        let t_len = xs.len();
        let zeros = vec![0.0; h_dim];
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];
        let mut dz = vec![0.0; 4 * h_dim];
        for step in (0..t_len).rev() {
            let t = if reverse { t_len - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else if reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let h_prev = prev.map_or(&zeros[..], |s| &trace.hidden[s * h_dim..(s + 1) * h_dim]);
            let c_prev = prev.map_or(&zeros[..], |s| &trace.cells[s * h_dim..(s + 1) * h_dim]);
            let g = &trace.gates[t * 4 * h_dim..(t + 1) * 4 * h_dim];
            let c = &trace.cells[t * h_dim..(t + 1) * h_dim];
            for j in 0..h_dim {
                let (i_g, f_g, o_g, c_g) = (g[j], g[h_dim + j], g[2 * h_dim + j], g[3 * h_dim + j]);
                let dh = dh_out[t * h_dim + j] + dh_next[j];
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[h_dim + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                dz[2 * h_dim + j] = dh * tc * o_g * (1.0 - o_g);
                dz[3 * h_dim + j] = dc * i_g * (1.0 - c_g * c_g);
                dc_next[j] = dc * f_g;
            }
            let x = xs[t];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..4 * h_dim {
                let dzk = dz[k];
                if dzk == 0.0 {
                    continue;
                }
                grad.b[k] += dzk;
                axpy(dzk, x, &mut grad.w_x[k * d..(k + 1) * d]);
                axpy(dzk, h_prev, &mut grad.w_h[k * h_dim..(k + 1) * h_dim]);
                axpy(dzk, &p.w_h[k * h_dim..(k + 1) * h_dim], &mut dh_next);
            }
        }
    }

    /// Forward pass keeping the activations needed for [`ForwardPass::backward`].
    pub fn forward_pass<'a>(&'a self, states: &[&'a [f64]]) -> Result<ForwardPass<'a>> {
        self.check_inputs(states)?;
        let fwd = self.run_direction(&self.forward, states, false);
        let bwd = self.run_direction(&self.backward, states, true);
        let h = self.hidden;
        let probs = (0..states.len())
            .map(|t| {
                let logit = self.out_b
                    + dot(&self.out_w[..h], &fwd.hidden[t * h..(t + 1) * h])
                    + dot(&self.out_w[h..], &bwd.hidden[t * h..(t + 1) * h]);
                sigmoid(logit)
            })
            .collect();
        Ok(ForwardPass {
            params: self,
            states: states.to_vec(),
            fwd,
            bwd,
            probs,
        })
    }

    /// Selection probability of every step of the sequence.
    pub fn probabilities(&self, states: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward_pass(states)?.probs)
    }
}

pub struct ForwardPass<'a> {
    params: &'a PolicyParams,
    states: Vec<&'a [f64]>,
    fwd: DirectionTrace,
    bwd: DirectionTrace,
    probs: Vec<f64>,
}

impl ForwardPass<'_> {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Parameter gradient of a scalar objective given its derivative with
    /// respect to each step's output logit.
    pub fn backward(&self, dlogits: &[f64]) -> PolicyParams {
        let p = self.params;
        let h = p.hidden;
        let t_len = self.states.len();
        assert_eq!(dlogits.len(), t_len, "one logit gradient per step");
        let mut grad = PolicyParams::zeros(p.input_dim, h);
        let mut dh_f = vec![0.0; t_len * h];
        let mut dh_b = vec![0.0; t_len * h];
        for (t, &dl) in dlogits.iter().enumerate() {
            grad.out_b += dl;
            axpy(dl, &self.fwd.hidden[t * h..(t + 1) * h], &mut grad.out_w[..h]);
            axpy(dl, &self.bwd.hidden[t * h..(t + 1) * h], &mut grad.out_w[h..]);
            axpy(dl, &p.out_w[..h], &mut dh_f[t * h..(t + 1) * h]);
            axpy(dl, &p.out_w[h..], &mut dh_b[t * h..(t + 1) * h]);
        }
        p.backprop_direction(&p.forward, &self.states, &self.fwd, &dh_f, false, &mut grad.forward);
        p.backprop_direction(&p.backward, &self.states, &self.bwd, &dh_b, true, &mut grad.backward);
        grad
    }
}

/// Log-probability (natural log) of a binary action sequence under
/// independent Bernoulli outputs.
pub fn bernoulli_log_prob(probs: &[f64], actions: &[bool]) -> f64 {
    probs
        .iter()
        .zip(actions)
        .map(|(&p, &a)| if a { p.ln() } else { (-p).ln_1p() })
        .sum()
}

/// Log-probability of `actions` and its gradient with respect to every parameter.
pub fn log_prob_gradient(params: &PolicyParams, states: &[&[f64]], actions: &[bool]) -> Result<(f64, PolicyParams)> {
    if actions.len() != states.len() {
        return Err(Error::Dimension(format!("{} actions for {} states", actions.len(), states.len())));
    }
    let pass = params.forward_pass(states)?;
    let lp = bernoulli_log_prob(pass.probs(), actions);
    let dlogits: Vec<f64> = pass
        .probs()
        .iter()
        .zip(actions)
        .map(|(&p, &a)| if a { 1.0 - p } else { -p })
        .collect();
    Ok((lp, pass.backward(&dlogits)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_one_half() {
        let p = PolicyParams::zeros(4, 3);
        let s = [0.1, 0.2, 0.3, 0.4];
        let probs = p.probabilities(&[&s, &s, &s]).unwrap();
        assert_eq!(probs, vec![0.5; 3]);
    }

    #[test]
    fn single_step_sees_same_state_both_ways() {
        let p = PolicyParams::init(4, 3, 1);
        let s = [0.1, 0.2, 0.3, 0.4];
        let pass = p.forward_pass(&[&s]).unwrap();
        assert_eq!(pass.probs().len(), 1);
        // The backward direction starts and ends on the only state, so running a
        // reversed copy of the network gives the same hidden state.
        let mut swapped = p.clone();
        std::mem::swap(&mut swapped.forward, &mut swapped.backward);
        swapped.out_w.rotate_left(3);
        let again = swapped.probabilities(&[&s]).unwrap();
        assert!((again[0] - pass.probs()[0]).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = PolicyParams::zeros(4, 2);
        assert!(p.probabilities(&[]).is_err());
        assert!(p.probabilities(&[&[0.0; 3]]).is_err());
        assert!(log_prob_gradient(&p, &[&[0.0; 4]], &[true, false]).is_err());
    }

    #[test]
    fn outputs_stay_in_open_interval() {
        let mut p = PolicyParams::init(2, 4, 9);
        p.out_w.iter_mut().for_each(|w| *w *= 5.0);
        let s = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let refs: Vec<&[f64]> = s.iter().map(|v| &v[..]).collect();
        for v in p.probabilities(&refs).unwrap() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn log_prob_of_near_certain_actions_is_near_zero() {
        let probs = [1.0 - 1e-12; 4];
        let lp = bernoulli_log_prob(&probs, &[true; 4]);
        assert!(lp <= 0.0 && lp > -1e-10);
    }
}
