//! Minimal fully-connected network with hand-rolled reverse mode: exact
//! gradients with respect to parameters and inputs, plus an input
//! Hessian-vector product (forward-over-reverse) for scalar-output networks.
//! Also Adam, Polyak averaging, the Gaussian policy head, and the flat
//! little-endian checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::targets::QFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            // subgradient 0 at exactly 0 pre-activation
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }

    fn second_deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Elu => {
                if x > 0.0 {
                    0.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

/// Fully-connected network; hidden layers use `activation`, the output layer
/// is linear. Parameters live in one flat vector laid out as
/// [W0 row-major, b0, W1, b1, ...].
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    sizes: Vec<usize>,
    activation: Activation,
    pub params: Vec<f64>,
}

/// Cached pre-activations and activations from a forward pass.
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl MlpNetwork {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform fan-in init: weights and biases in +-1/sqrt(fan_in).
    pub fn new(sizes: Vec<usize>, activation: Activation, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(&sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                params.push(bound * (2.0 * rng.uniform() - 1.0));
            }
        }
        MlpNetwork { sizes, activation, params }
    }

    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Self {
        let n = Self::param_count(&sizes);
        MlpNetwork { sizes, activation, params: vec![0.0; n] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.1)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(ForwardCache, Vec<f64>)> {
        self.check_input(x)?;
        let layers = self.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers + 1);
        post.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &post[l];
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                z[o] = b[o] + crate::linalg::dot(row, input);
            }
            let h = if l + 1 == layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(h);
        }
        let out = post.last().unwrap().clone();
        Ok((ForwardCache { pre, post }, out))
    }

    /// Reverse-mode gradients of upstream . forward(x) with respect to both
    /// the flat parameter vector and the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let layers = self.layer_count();
        assert_eq!(upstream.len(), self.output_dim());
        let mut param_grad = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();

        // per-layer parameter offsets
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }

        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 != layers {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.deriv(*z);
                }
            }
            let input = &cache.post[l];
            for o in 0..n_out {
                let row = &mut param_grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, inp) in row.iter_mut().zip(input) {
                    *g += delta[o] * inp;
                }
                param_grad[off + n_in * n_out + o] += delta[o];
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (n, wv) in next.iter_mut().zip(row) {
                    *n += delta[o] * wv;
                }
            }
            delta = next;
        }
        (param_grad, delta)
    }

    /// Convenience: gradients at x in one call.
    pub fn grads(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (cache, _) = self.forward_cached(x)?;
        Ok(self.backward(&cache, upstream))
    }

    /// Input Hessian-vector product for scalar-output networks, by forward-
    /// over-reverse: exact up to floating point, no finite differences.
    pub fn hvp_input(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        assert_eq!(self.output_dim(), 1, "hvp_input requires a scalar output");
        assert_eq!(v.len(), x.len());
        let layers = self.layer_count();
        let (cache, _) = self.forward_cached(x)?;

        // tangent forward pass: dot(z), dot(h)
        let mut pre_dot = Vec::with_capacity(layers);
        let mut post_dot = Vec::with_capacity(layers + 1);
        post_dot.push(v.to_vec());
        let mut off = 0;
        let mut offsets = Vec::with_capacity(layers);
        for l in 0..layers {
            offsets.push(off);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            off += n_in * n_out + n_out;
            let hd = &post_dot[l];
            let mut zd = vec![0.0; n_out];
            for o in 0..n_out {
                zd[o] = crate::linalg::dot(&w[o * n_in..(o + 1) * n_in], hd);
            }
            let out_dot = if l + 1 == layers {
                zd.clone()
            } else {
                zd.iter()
                    .zip(&cache.pre[l])
                    .map(|(d, z)| self.activation.deriv(*z) * d)
                    .collect()
            };
            pre_dot.push(zd);
            post_dot.push(out_dot);
        }

        // reverse passes: primal delta and its tangent
        let mut delta = vec![1.0];
        let mut delta_dot = vec![0.0];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offl = offsets[l];
            if l + 1 != layers {
                for o in 0..n_out {
                    let z = cache.pre[l][o];
                    let zd = pre_dot[l][o];
                    let d = delta[o];
                    delta_dot[o] = delta_dot[o] * self.activation.deriv(z)
                        + d * self.activation.second_deriv(z) * zd;
                    delta[o] = d * self.activation.deriv(z);
                }
            }
            let w = &self.params[offl..offl + n_in * n_out];
            let mut next = vec![0.0; n_in];
            let mut next_dot = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    next[i] += delta[o] * row[i];
                    next_dot[i] += delta_dot[o] * row[i];
                }
            }
            delta = next;
            delta_dot = next_dot;
        }
        Ok(delta_dot)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// Standard bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// target <- (1 - tau) target + tau online
pub fn polyak_update(target_params: &mut [f64], online_params: &[f64], tau: f64) {
    assert_eq!(target_params.len(), online_params.len());
    for (t, o) in target_params.iter_mut().zip(online_params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// State-conditioned isotropic Gaussian head: one trunk network with 2d
/// outputs split into the mean and the (clamped) log standard deviation.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub net: MlpNetwork,
    action_dim: usize,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub mean: Vec<f64>,
    pub log_std_raw: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let net = MlpNetwork::new(
            vec![state_dim, hidden, hidden, 2 * action_dim],
            activation,
            rng,
        );
        GaussianHead { net, action_dim }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn forward(&self, state: &[f64]) -> Result<(ForwardCache, HeadOutput)> {
        let (cache, out) = self.net.forward_cached(state)?;
        let mean = out[..self.action_dim].to_vec();
        let log_std_raw = out[self.action_dim..].to_vec();
        let std = log_std_raw
            .iter()
            .map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect();
        Ok((cache, HeadOutput { mean, log_std_raw, std }))
    }

    /// Backward through the head given gradients with respect to the mean and
    /// the clamped log-std (the clamp has zero gradient outside its range).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out: &HeadOutput,
        d_mean: &[f64],
        d_log_std: &[f64],
    ) -> Vec<f64> {
        let mut upstream = vec![0.0; 2 * self.action_dim];
        upstream[..self.action_dim].copy_from_slice(d_mean);
        for k in 0..self.action_dim {
            let raw = out.log_std_raw[k];
            let pass = raw > LOG_STD_MIN && raw < LOG_STD_MAX;
            upstream[self.action_dim + k] = if pass { d_log_std[k] } else { 0.0 };
        }
        let (param_grad, _) = self.net.backward(cache, &upstream);
        param_grad
    }
}

/// Q-network over concatenated (state, action) inputs.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub net: MlpNetwork,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl QNetwork {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let net = MlpNetwork::new(
            vec![state_dim + action_dim, hidden, hidden, 1],
            activation,
            rng,
        );
        QNetwork { net, state_dim, action_dim }
    }

    fn join(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim);
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        x
    }

    /// Parameter gradient of Q(s, a) scaled by `upstream`.
    pub fn param_grad(&self, state: &[f64], action: &[f64], upstream: f64) -> Result<Vec<f64>> {
        let x = self.join(state, action);
        let (cache, _) = self.net.forward_cached(&x)?;
        let (pg, _) = self.net.backward(&cache, &[upstream]);
        Ok(pg)
    }
}

impl QFunction for QNetwork {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn value(&self, state: &[f64], action: &[f64]) -> f64 {
        self.net.forward(&self.join(state, action)).expect("dims checked at build")[0]
    }

    fn grad_action(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let x = self.join(state, action);
        let (cache, _) = self.net.forward_cached(&x).expect("dims checked at build");
        let (_, input_grad) = self.net.backward(&cache, &[1.0]);
        input_grad[self.state_dim..].to_vec()
    }

    fn hvp_action(&self, state: &[f64], action: &[f64], v: &[f64]) -> Vec<f64> {
        let x = self.join(state, action);
        let mut tangent = vec![0.0; x.len()];
        tangent[self.state_dim..].copy_from_slice(v);
        let hv = self.net.hvp_input(&x, &tangent).expect("dims checked at build");
        hv[self.state_dim..].to_vec()
    }
}

/// Checkpoint format: one JSON header line (shapes, activation), then the
/// flat parameter vector as little-endian f64.
#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    sizes: Vec<usize>,
    activation: Activation,
    count: usize,
}

pub fn save_network(net: &MlpNetwork, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        sizes: net.sizes.clone(),
        activation: net.activation,
        count: net.params.len(),
    };
    let mut file = std::fs::File::create(path)?;
    let line = serde_json::to_string(&header).expect("header serializes");
    file.write_all(line.as_bytes())?;
    file.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(net.params.len() * 8);
    for p in &net.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<MlpNetwork> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let newline = raw.iter().position(|&b| b == b'\n').ok_or_else(|| Error::BadCheckpoint {
        path: path.to_path_buf(),
        reason: "missing header line".into(),
    })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&raw[..newline]).map_err(|e| Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let body = &raw[newline + 1..];
    if body.len() != header.count * 8 {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("expected {} parameter bytes, got {}", header.count * 8, body.len()),
        });
    }
    if MlpNetwork::param_count(&header.sizes) != header.count {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: "shape header inconsistent with parameter count".into(),
        });
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MlpNetwork { sizes: header.sizes, activation: header.activation, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff::finite_diff_grad;

    fn rng() -> RngStream {
        RngStream::new(1234)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(vec![3, 4, 2], Activation::Relu);
        let y = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_matvec() {
        // 2 -> 2 with no hidden layer: output layer is linear
        let mut net = MlpNetwork::zeros(vec![2, 2], Activation::Relu);
        net.params = vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]; // W row-major then b
        let y = net.forward(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 3.5).abs() < 1e-15);
        assert!((y[1] - 6.5).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_straight_line_evaluator() {
        // duplicate-implementation oracle: direct loops, no shared code path
        let mut r = rng();
        let net = MlpNetwork::new(vec![3, 5, 4, 2], Activation::Elu, &mut r);
        let x = [0.3, -1.1, 0.7];

        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let mut h: Vec<f64> = x.to_vec();
        let mut off = 0;
        let sizes = [3usize, 5, 4, 2];
        for l in 0..3 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = net.params[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += net.params[off + o * n_in + i] * h[i];
                }
                z[o] = acc;
            }
            off += n_in * n_out + n_out;
            h = if l == 2 { z } else { z.into_iter().map(elu).collect() };
        }
        let y = net.forward(&x).unwrap();
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() / b.abs().max(1.0) < 1e-12);
        }
    }

    #[test]
    fn linear_net_input_grad_is_w_transpose_upstream() {
        let mut net = MlpNetwork::zeros(vec![2, 2], Activation::Relu);
        net.params = vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0];
        let (_, ig) = net.grads(&[0.2, -0.4], &[1.0, 1.0]).unwrap();
        assert!((ig[0] - 4.0).abs() < 1e-15); // 1 + 3
        assert!((ig[1] - 6.0).abs() < 1e-15); // 2 + 4
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng();
        for activation in [Activation::Relu, Activation::Elu] {
            for _ in 0..20 {
                let net = MlpNetwork::new(vec![4, 8, 8, 1], activation, &mut r);
                for _ in 0..5 {
                    let x: Vec<f64> = r.normal_vec(4);
                    let (pg, ig) = net.grads(&x, &[1.0]).unwrap();

                    let fd_in =
                        finite_diff_grad(|q| net.forward(q).unwrap()[0], &x, 1e-6).unwrap();
                    for (a, b) in ig.iter().zip(&fd_in) {
                        assert!(
                            (a - b).abs() / b.abs().max(1e-3) < 1e-4,
                            "{activation:?} input grad {a} vs {b}"
                        );
                    }

                    // spot-check 32 random parameter coordinates
                    let mut probe = net.clone();
                    for _ in 0..32 {
                        let k = r.below(net.params.len());
                        let h = 1e-6;
                        let orig = probe.params[k];
                        probe.params[k] = orig + h;
                        let plus = probe.forward(&x).unwrap()[0];
                        probe.params[k] = orig - h;
                        let minus = probe.forward(&x).unwrap()[0];
                        probe.params[k] = orig;
                        let fd = (plus - minus) / (2.0 * h);
                        assert!(
                            (pg[k] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                            "{activation:?} param grad {} vs {fd}",
                            pg[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hvp_matches_finite_differences_of_gradient() {
        let mut r = rng();
        let net = MlpNetwork::new(vec![3, 8, 8, 1], Activation::Elu, &mut r);
        for _ in 0..10 {
            let x: Vec<f64> = r.normal_vec(3);
            let v: Vec<f64> = r.normal_vec(3);
            let hv = net.hvp_input(&x, &v).unwrap();
            let h = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let (_, gp) = net.grads(&xp, &[1.0]).unwrap();
            let (_, gm) = net.grads(&xm, &[1.0]).unwrap();
            for k in 0..3 {
                let fd = (gp[k] - gm[k]) / (2.0 * h);
                assert!(
                    (hv[k] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                    "hvp {} vs fd {fd}",
                    hv[k]
                );
            }
        }
    }

    #[test]
    fn relu_at_zero_uses_zero_subgradient() {
        // one unit, bias 0, weight 1: pre-activation is exactly 0 at x = 0
        let mut net = MlpNetwork::zeros(vec![1, 1, 1], Activation::Relu);
        net.params = vec![1.0, 0.0, 1.0, 0.0];
        let (_, ig) = net.grads(&[0.0], &[1.0]).unwrap();
        assert_eq!(ig[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = vec![1.0, -2.0];
        let mut st = AdamState::new(2, 0.1);
        st.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_constant_gradient_approaches_lr_sign_steps() {
        let mut params = vec![0.0];
        let mut st = AdamState::new(1, 0.01);
        let mut prev = 0.0;
        for i in 0..2000 {
            st.step(&mut params, &[3.0]);
            if i > 1500 {
                let delta = prev - params[0];
                assert!((delta - 0.01).abs() < 1e-4, "step size {delta}");
            }
            prev = params[0];
        }
    }

    #[test]
    fn adam_counter_increments() {
        let mut st = AdamState::new(1, 0.1);
        let mut p = vec![0.0];
        for expect in 1..=5 {
            st.step(&mut p, &[1.0]);
            assert_eq!(st.step, expect);
        }
    }

    #[test]
    fn polyak_endpoints() {
        let online = vec![1.0, 2.0];
        let mut t = vec![10.0, 20.0];
        polyak_update(&mut t, &online, 1.0);
        assert_eq!(t, online);
        let mut t2 = vec![10.0, 20.0];
        polyak_update(&mut t2, &online, 0.0);
        assert_eq!(t2, vec![10.0, 20.0]);
    }

    #[test]
    fn polyak_geometric_convergence() {
        let online = vec![1.0];
        let mut t = vec![0.0];
        let tau = 0.25;
        for k in 1..=20 {
            polyak_update(&mut t, &online, tau);
            let expect = 1.0 - (1.0 - tau).powi(k);
            assert!((t[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn head_reparameterization_gradcheck() {
        let mut r = rng();
        let head = GaussianHead::new(3, 2, 8, Activation::Elu, &mut r);
        let state: Vec<f64> = r.normal_vec(3);
        let xi: Vec<f64> = r.normal_vec(2);
        // scalar objective: sum of a = mean + std * xi
        let objective = |h: &GaussianHead| -> f64 {
            let (_, out) = h.forward(&state).unwrap();
            out.mean.iter().zip(&out.std).zip(&xi).map(|((m, s), x)| m + s * x).sum()
        };
        let (cache, out) = head.forward(&state).unwrap();
        // d objective / d mean = 1; d objective / d log_std = std * xi
        let d_mean = vec![1.0, 1.0];
        let d_log_std: Vec<f64> =
            out.std.iter().zip(&xi).map(|(s, x)| s * x).collect();
        let pg = head.backward(&cache, &out, &d_mean, &d_log_std);

        let mut probe = head.clone();
        for _ in 0..40 {
            let k = r.below(probe.net.params.len());
            let h = 1e-6;
            let orig = probe.net.params[k];
            probe.net.params[k] = orig + h;
            let plus = objective(&probe);
            probe.net.params[k] = orig - h;
            let minus = objective(&probe);
            probe.net.params[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (pg[k] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                "head grad {} vs fd {fd}",
                pg[k]
            );
        }
    }

    #[test]
    fn log_std_clamp_is_applied() {
        let mut r = rng();
        let mut head = GaussianHead::new(1, 1, 4, Activation::Relu, &mut r);
        // force an enormous raw log-std via the output bias
        let n = head.net.params.len();
        head.net.params[n - 1] = 50.0;
        let (_, out) = head.forward(&[0.3]).unwrap();
        assert!((out.std[0] - LOG_STD_MAX.exp()).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut r = rng();
        let net = MlpNetwork::new(vec![4, 16, 16, 3], Activation::Relu, &mut r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.sizes(), net.sizes());
        assert_eq!(back.params, net.params);
        assert_eq!(back.activation(), net.activation());
    }

    #[test]
    fn checkpoint_missing_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.bin");
        assert!(matches!(load_network(&missing), Err(Error::MissingCheckpoint(_))));
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"{\"sizes\":[2,1],\"activation\":\"relu\",\"count\":3}\nxx").unwrap();
        assert!(matches!(load_network(&bad), Err(Error::BadCheckpoint { .. })));
    }

    #[test]
    fn qnetwork_grad_action_matches_fd() {
        let mut r = rng();
        let q = QNetwork::new(3, 2, 8, Activation::Elu, &mut r);
        let s: Vec<f64> = r.normal_vec(3);
        let a: Vec<f64> = r.normal_vec(2);
        let g = q.grad_action(&s, &a);
        let fd = finite_diff_grad(|x| q.value(&s, x), &a, 1e-6).unwrap();
        for (gi, fi) in g.iter().zip(&fd) {
            assert!((gi - fi).abs() / fi.abs().max(1e-3) < 1e-4);
        }
        // exact hvp against the finite-difference default from the trait
        let v: Vec<f64> = r.normal_vec(2);
        let exact = q.hvp_action(&s, &a, &v);
        let h = 1e-5;
        let ap: Vec<f64> = a.iter().zip(&v).map(|(x, t)| x + h * t).collect();
        let am: Vec<f64> = a.iter().zip(&v).map(|(x, t)| x - h * t).collect();
        let gp = q.grad_action(&s, &ap);
        let gm = q.grad_action(&s, &am);
        for k in 0..2 {
            let fd = (gp[k] - gm[k]) / (2.0 * h);
            assert!((exact[k] - fd).abs() < 1e-4 * fd.abs().max(1.0));
        }
    }
}
