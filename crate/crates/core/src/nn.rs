//! Minimal fully-connected networks with hand-rolled differentiation.
//!
//! Three consumers share this module: the pose estimator (tanh hidden
//! layers), the failure classifier (tanh, one logit), and the reachability
//! value network (sinusoidal hidden layers). Besides the usual parameter
//! gradients, the value network needs exact gradients of the output with
//! respect to the *inputs* (for the PDE residual), and parameter gradients
//! of losses that depend on those input gradients. Both are computed in
//! closed form by forward-propagating the input Jacobian and then
//! reverse-propagating adjoints through the extended computation; no finite
//! differencing anywhere in the production path.
//!
//! Parameter layout: per layer, weights row-major (out x in), then biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// sin(omega0 * a); `omega0` is stored on the architecture.
    Sine,
}

/// Network shape: layer sizes plus the hidden nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    /// (fan_in, fan_out) per layer, input first. The last layer is linear.
    pub layers: Vec<(usize, usize)>,
    pub activation: Activation,
    /// Frequency scale for `Activation::Sine`; ignored for tanh.
    pub omega0: f64,
}

impl Arch {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &h in hidden {
            layers.push((fan_in, h));
            fan_in = h;
        }
        layers.push((fan_in, output));
        Arch { layers, activation, omega0: 30.0 }
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// A network: architecture plus flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: Arch,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(arch: Arch) -> Self {
        let n = arch.param_count();
        Mlp { arch, params: vec![0.0; n] }
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimMismatch { expected: arch.param_count(), got: params.len() });
        }
        Ok(Mlp { arch, params })
    }

    /// Glorot-uniform initialization for tanh networks.
    pub fn init_xavier<R: Rng>(arch: Arch, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(arch.param_count());
        for &(fan_in, fan_out) in &arch.layers {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp { arch, params }
    }

    /// Sinusoidal-network initialization: first layer uniform in
    /// [-1/fan_in, 1/fan_in] (scaled by omega0 at the activation), deeper
    /// layers uniform in +-sqrt(6/fan_in)/omega0.
    pub fn init_siren<R: Rng>(arch: Arch, rng: &mut R) -> Result<Self> {
        if arch.omega0 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sinusoidal frequency scale must be positive, got {}",
                arch.omega0
            )));
        }
        let mut params = Vec::with_capacity(arch.param_count());
        for (k, &(fan_in, fan_out)) in arch.layers.iter().enumerate() {
            let limit = if k == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / arch.omega0
            };
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp::from_params(arch, params)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.arch.layers.len());
        let mut off = 0;
        for &(i, o) in &self.arch.layers {
            offs.push(off);
            off += i * o + o;
        }
        offs
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim() {
            return Err(Error::DimMismatch { expected: self.arch.input_dim(), got: input.len() });
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let n_layers = self.arch.layers.len();
        let offs = self.layer_offsets();
        let mut z = input.to_vec();
        for (k, &(fan_in, fan_out)) in self.arch.layers.iter().enumerate() {
            let w = &self.params[offs[k]..offs[k] + fan_in * fan_out];
            let b = &self.params[offs[k] + fan_in * fan_out..offs[k] + fan_in * fan_out + fan_out];
            let mut a = vec![0.0; fan_out];
            for (i, ai) in a.iter_mut().enumerate() {
                *ai = b[i] + dot(&w[i * fan_in..(i + 1) * fan_in], &z);
            }
            if k + 1 < n_layers {
                match self.arch.activation {
                    Activation::Tanh => {
                        for ai in a.iter_mut() {
                            *ai = ai.tanh();
                        }
                    }
                    Activation::Sine => {
                        for ai in a.iter_mut() {
                            *ai = (self.arch.omega0 * *ai).sin();
                        }
                    }
                }
            }
            z = a;
        }
        Ok(z)
    }

    /// Forward pass keeping per-layer activations for backprop.
    fn forward_trace(&self, input: &[f64]) -> Trace {
        let n_layers = self.arch.layers.len();
        let offs = self.layer_offsets();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut z = input.to_vec();
        for (k, &(fan_in, fan_out)) in self.arch.layers.iter().enumerate() {
            let w = &self.params[offs[k]..offs[k] + fan_in * fan_out];
            let b = &self.params[offs[k] + fan_in * fan_out..offs[k] + fan_in * fan_out + fan_out];
            let mut a = vec![0.0; fan_out];
            for (i, ai) in a.iter_mut().enumerate() {
                *ai = b[i] + dot(&w[i * fan_in..(i + 1) * fan_in], &z);
            }
            pre.push(a.clone());
            if k + 1 < n_layers {
                match self.arch.activation {
                    Activation::Tanh => {
                        for ai in a.iter_mut() {
                            *ai = ai.tanh();
                        }
                    }
                    Activation::Sine => {
                        for ai in a.iter_mut() {
                            *ai = (self.arch.omega0 * *ai).sin();
                        }
                    }
                }
            }
            post.push(a.clone());
            z = a;
        }
        Trace { pre, post, input: input.to_vec() }
    }

    /// Backpropagate `d_out` (dL/d output) into a flat parameter gradient,
    /// accumulated into `grad`. Returns dL/d input.
    pub fn backprop_into(&self, input: &[f64], d_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        debug_assert_eq!(grad.len(), self.arch.param_count());
        let trace = self.forward_trace(input);
        let offs = self.layer_offsets();
        let n_layers = self.arch.layers.len();
        let mut delta = d_out.to_vec(); // dL/d a^k, starting at the linear output
        for k in (0..n_layers).rev() {
            let (fan_in, fan_out) = self.arch.layers[k];
            if k + 1 < n_layers {
                // Translate dL/d z^k into dL/d a^k through the activation.
                match self.arch.activation {
                    Activation::Tanh => {
                        for (d, z) in delta.iter_mut().zip(trace.post[k].iter()) {
                            *d *= 1.0 - z * z;
                        }
                    }
                    Activation::Sine => {
                        for (d, a) in delta.iter_mut().zip(trace.pre[k].iter()) {
                            *d *= self.arch.omega0 * (self.arch.omega0 * a).cos();
                        }
                    }
                }
            }
            let below: &[f64] = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let (gw, gb) = grad[offs[k]..offs[k] + fan_in * fan_out + fan_out]
                .split_at_mut(fan_in * fan_out);
            for i in 0..fan_out {
                let di = delta[i];
                gb[i] += di;
                axpy(di, below, &mut gw[i * fan_in..(i + 1) * fan_in]);
            }
            let w = &self.params[offs[k]..offs[k] + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for i in 0..fan_out {
                axpy(delta[i], &w[i * fan_in..(i + 1) * fan_in], &mut prev);
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Forward pass plus the exact Jacobian of outputs w.r.t. inputs,
    /// row-major (output_dim x input_dim).
    pub fn forward_with_input_jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        let ext = self.forward_extended(input);
        Ok((ext.output().to_vec(), ext.output_jacobian().to_vec()))
    }

    /// Extended forward pass for callers that will also run
    /// [`Mlp::backprop_from_extended`] on the same point.
    pub fn eval_extended(&self, input: &[f64]) -> Result<Extended> {
        self.check_input(input)?;
        Ok(self.forward_extended(input))
    }

    fn forward_extended(&self, input: &[f64]) -> Extended {
        let n_in = self.arch.input_dim();
        let n_layers = self.arch.layers.len();
        let offs = self.layer_offsets();
        let trace = self.forward_trace(input);
        // pre_jac[k] = d a^k / d x, jac[k] = d z^k / d x (row-major n_k x n_in)
        let mut pre_jac: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut jac: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut cur: Vec<f64> = (0..n_in * n_in)
            .map(|i| if i / n_in == i % n_in { 1.0 } else { 0.0 })
            .collect();
        let mut cur_rows = n_in;
        for (k, &(fan_in, fan_out)) in self.arch.layers.iter().enumerate() {
            debug_assert_eq!(cur_rows, fan_in);
            let w = &self.params[offs[k]..offs[k] + fan_in * fan_out];
            // A = W * cur  (fan_out x n_in)
            let mut a_jac = vec![0.0; fan_out * n_in];
            for i in 0..fan_out {
                let row = &mut a_jac[i * n_in..(i + 1) * n_in];
                for j in 0..fan_in {
                    axpy(w[i * fan_in + j], &cur[j * n_in..(j + 1) * n_in], row);
                }
            }
            pre_jac.push(a_jac.clone());
            if k + 1 < n_layers {
                match self.arch.activation {
                    Activation::Tanh => {
                        for i in 0..fan_out {
                            let z = trace.post[k][i];
                            let s = 1.0 - z * z;
                            for v in a_jac[i * n_in..(i + 1) * n_in].iter_mut() {
                                *v *= s;
                            }
                        }
                    }
                    Activation::Sine => {
                        let w0 = self.arch.omega0;
                        for i in 0..fan_out {
                            let s = w0 * (w0 * trace.pre[k][i]).cos();
                            for v in a_jac[i * n_in..(i + 1) * n_in].iter_mut() {
                                *v *= s;
                            }
                        }
                    }
                }
            }
            jac.push(a_jac.clone());
            cur = a_jac;
            cur_rows = fan_out;
        }
        Extended { trace, pre_jac, jac }
    }

    /// Parameter gradient of a scalar loss that depends on both the output
    /// and the input Jacobian: given dL/d output (`d_out`) and dL/d Jacobian
    /// (`d_jac`, row-major output_dim x input_dim), accumulate dL/d params
    /// into `grad`.
    ///
    /// This reverse pass runs through the extended forward computation, so
    /// the result is exact (verified against finite differences in tests).
    pub fn backprop_with_jacobian_into(
        &self,
        input: &[f64],
        d_out: &[f64],
        d_jac: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_input(input)?;
        let ext = self.forward_extended(input);
        self.backprop_from_extended(&ext, d_out, d_jac, grad);
        Ok(())
    }

    /// Same reverse pass as [`Mlp::backprop_with_jacobian_into`], reusing an
    /// already-computed extended forward evaluation.
    pub fn backprop_from_extended(
        &self,
        ext: &Extended,
        d_out: &[f64],
        d_jac: &[f64],
        grad: &mut [f64],
    ) {
        let n_in = self.arch.input_dim();
        let n_layers = self.arch.layers.len();
        let offs = self.layer_offsets();
        let w0 = self.arch.omega0;

        // Adjoints at the top: the last layer is linear, so z = a and J = A.
        let mut delta = d_out.to_vec(); // dL/d a^k
        let mut jbar = d_jac.to_vec(); // dL/d A^k  (fan_out x n_in)
        for k in (0..n_layers).rev() {
            let (fan_in, fan_out) = self.arch.layers[k];
            if k + 1 < n_layers {
                // Entering layer k, (delta, jbar) currently hold dL/d z^k and
                // dL/d G^k where z = phi(a), G = diag(phi'(a)) A.
                match self.arch.activation {
                    Activation::Tanh => {
                        for i in 0..fan_out {
                            let z = ext.trace.post[k][i];
                            let s = 1.0 - z * z; // phi'
                            let sp = -2.0 * z * s; // phi''
                            let arow = &ext.pre_jac[k][i * n_in..(i + 1) * n_in];
                            let grow = &mut jbar[i * n_in..(i + 1) * n_in];
                            let dot_ga = dot(grow, arow);
                            delta[i] = delta[i] * s + dot_ga * sp;
                            for v in grow.iter_mut() {
                                *v *= s;
                            }
                        }
                    }
                    Activation::Sine => {
                        for i in 0..fan_out {
                            let a = ext.trace.pre[k][i];
                            let s = w0 * (w0 * a).cos(); // phi'
                            let sp = -w0 * w0 * (w0 * a).sin(); // phi''
                            let arow = &ext.pre_jac[k][i * n_in..(i + 1) * n_in];
                            let grow = &mut jbar[i * n_in..(i + 1) * n_in];
                            let dot_ga = dot(grow, arow);
                            delta[i] = delta[i] * s + dot_ga * sp;
                            for v in grow.iter_mut() {
                                *v *= s;
                            }
                        }
                    }
                }
            }
            // Now delta = dL/d a^k and jbar = dL/d A^k.
            let below_z: &[f64] = if k == 0 { &ext.trace.input } else { &ext.trace.post[k - 1] };
            let below_jac: Option<&Vec<f64>> = if k == 0 { None } else { Some(&ext.jac[k - 1]) };
            let w = &self.params[offs[k]..offs[k] + fan_in * fan_out];
            {
                let (gw, gb) = grad[offs[k]..offs[k] + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for i in 0..fan_out {
                    gb[i] += delta[i];
                    let grow = &mut gw[i * fan_in..(i + 1) * fan_in];
                    axpy(delta[i], below_z, grow);
                    // A = W G_below: dL/dW_ij += sum_c jbar_ic G_below_jc
                    // For k == 0, G_below is the identity.
                    let jrow = &jbar[i * n_in..(i + 1) * n_in];
                    match below_jac {
                        None => {
                            for (j, g) in grow.iter_mut().enumerate() {
                                *g += jrow[j];
                            }
                        }
                        Some(gb_jac) => {
                            for (j, g) in grow.iter_mut().enumerate() {
                                *g += dot(jrow, &gb_jac[j * n_in..(j + 1) * n_in]);
                            }
                        }
                    }
                }
            }
            if k > 0 {
                // Push adjoints to the layer below.
                let mut new_delta = vec![0.0; fan_in];
                let mut new_jbar = vec![0.0; fan_in * n_in];
                for i in 0..fan_out {
                    axpy(delta[i], &w[i * fan_in..(i + 1) * fan_in], &mut new_delta);
                    let jrow = &jbar[i * n_in..(i + 1) * n_in];
                    for j in 0..fan_in {
                        axpy(w[i * fan_in + j], jrow, &mut new_jbar[j * n_in..(j + 1) * n_in]);
                    }
                }
                delta = new_delta;
                jbar = new_jbar;
            }
        }
    }
}

struct Trace {
    input: Vec<f64>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation values per layer (last layer linear).
    post: Vec<Vec<f64>>,
}

/// Cached intermediates of a forward pass that propagated the input
/// Jacobian alongside the activations.
pub struct Extended {
    trace: Trace,
    /// d a^k / d x per layer.
    pre_jac: Vec<Vec<f64>>,
    /// d z^k / d x per layer.
    jac: Vec<Vec<f64>>,
}

impl Extended {
    pub fn output(&self) -> &[f64] {
        self.trace.post.last().unwrap()
    }

    /// Row-major (output_dim x input_dim) Jacobian of outputs w.r.t. inputs.
    pub fn output_jacobian(&self) -> &[f64] {
        self.jac.last().unwrap()
    }
}

/// Dot product with four accumulators (keeps a fixed, vectorizable
/// summation order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n4 = a.len() / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < n4 {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < a.len() {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// Adam optimizer state (decay constants 0.9 / 0.999).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(Arch::new(5, &[8, 8], 2, Activation::Tanh));
        let out = net.forward(&[1.0, -2.0, 0.5, 0.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(Arch::new(5, &[4], 1, Activation::Tanh));
        assert!(net.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn single_sine_unit_gradient_is_analytic() {
        // V(z) = sin(w0 * (w z + b)) followed by a unit linear head.
        let arch = Arch::new(1, &[1], 1, Activation::Sine).with_omega0(2.5);
        let w = 0.7;
        let b = 0.3;
        let net = Mlp::from_params(arch, vec![w, b, 1.0, 0.0]).unwrap();
        let z = 0.45;
        let (out, jac) = net.forward_with_input_jacobian(&[z]).unwrap();
        let w0 = 2.5;
        assert_abs_diff_eq!(out[0], (w0 * (w * z + b)).sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(jac[0], w0 * w * (w0 * (w * z + b)).cos(), epsilon = 1e-14);
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        for (seed, act) in [(1u64, Activation::Tanh), (2, Activation::Sine)] {
            let arch = Arch::new(4, &[12, 10], 2, act).with_omega0(7.0);
            let mut r = rng(seed);
            let net = match act {
                Activation::Tanh => Mlp::init_xavier(arch, &mut r),
                Activation::Sine => Mlp::init_siren(arch, &mut r).unwrap(),
            };
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-0.9..0.9)).collect();
            let (_, jac) = net.forward_with_input_jacobian(&x).unwrap();
            let h = 1e-5;
            for j in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let op = net.forward(&xp).unwrap();
                let om = net.forward(&xm).unwrap();
                for i in 0..2 {
                    let fd = (op[i] - om[i]) / (2.0 * h);
                    let exact = jac[i * 4 + j];
                    let denom = exact.abs().max(1e-3);
                    assert!(
                        ((fd - exact) / denom).abs() < 1e-3,
                        "jac[{i}][{j}] fd={fd} exact={exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let arch = Arch::new(3, &[6, 5], 2, Activation::Tanh);
        let mut r = rng(3);
        let net = Mlp::init_xavier(arch.clone(), &mut r);
        let x = [0.3, -0.8, 0.5];
        let target = [0.2, -0.4];
        // L = 0.5 * sum (y - t)^2
        let loss = |p: &Mlp| -> f64 {
            let y = p.forward(&x).unwrap();
            0.5 * y.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let y = net.forward(&x).unwrap();
        let d_out: Vec<f64> = y.iter().zip(target.iter()).map(|(a, b)| a - b).collect();
        let mut grad = vec![0.0; arch.param_count()];
        net.backprop_into(&x, &d_out, &mut grad).unwrap();

        let mut r2 = rng(99);
        for _ in 0..10 {
            let idx = r2.random_range(0..arch.param_count());
            let h = 1e-6;
            let mut np = net.clone();
            np.params[idx] += h;
            let mut nm = net.clone();
            nm.params[idx] -= h;
            let fd = (loss(&np) - loss(&nm)) / (2.0 * h);
            let denom = grad[idx].abs().max(1e-4);
            assert!(
                ((fd - grad[idx]) / denom).abs() < 1e-4,
                "param {idx}: fd={fd} exact={}",
                grad[idx]
            );
        }
    }

    /// The pay-off case: gradient of a loss built from the *input gradient*
    /// of the network, checked against finite differences in parameters.
    #[test]
    fn jacobian_param_gradient_matches_finite_differences() {
        for (seed, act) in [(5u64, Activation::Sine), (6, Activation::Tanh)] {
            let arch = Arch::new(3, &[8, 7], 1, act).with_omega0(4.0);
            let mut r = rng(seed);
            let net = match act {
                Activation::Tanh => Mlp::init_xavier(arch.clone(), &mut r),
                Activation::Sine => Mlp::init_siren(arch.clone(), &mut r).unwrap(),
            };
            let x = [0.25, -0.4, 0.6];
            let coeffs = [1.3, -0.7, 0.4]; // L = V + coeffs . dV/dx
            let loss = |p: &Mlp| -> f64 {
                let (y, jac) = p.forward_with_input_jacobian(&x).unwrap();
                y[0] + dot(&coeffs, &jac)
            };
            let mut grad = vec![0.0; arch.param_count()];
            net.backprop_with_jacobian_into(&x, &[1.0], &coeffs, &mut grad).unwrap();

            let mut r2 = rng(seed + 100);
            for _ in 0..12 {
                let idx = r2.random_range(0..arch.param_count());
                let h = 1e-6;
                let mut np = net.clone();
                np.params[idx] += h;
                let mut nm = net.clone();
                nm.params[idx] -= h;
                let fd = (loss(&np) - loss(&nm)) / (2.0 * h);
                let denom = grad[idx].abs().max(1e-3);
                assert!(
                    ((fd - grad[idx]) / denom).abs() < 1e-3,
                    "{act:?} param {idx}: fd={fd} exact={}",
                    grad[idx]
                );
            }
        }
    }

    #[test]
    fn siren_init_is_seed_deterministic_and_bounded() {
        let arch = Arch::new(9, &[64, 64], 1, Activation::Sine).with_omega0(30.0);
        let a = Mlp::init_siren(arch.clone(), &mut rng(7)).unwrap();
        let b = Mlp::init_siren(arch.clone(), &mut rng(7)).unwrap();
        assert_eq!(a.params, b.params);

        let mut r = rng(8);
        for _ in 0..100 {
            let x: Vec<f64> = (0..9).map(|_| r.random_range(-1.0..1.0)).collect();
            let out = a.forward(&x).unwrap();
            assert!(out[0].abs() < 10.0, "init output blew up: {}", out[0]);
        }
    }

    #[test]
    fn zero_omega0_is_rejected() {
        let arch = Arch::new(2, &[4], 1, Activation::Sine).with_omega0(0.0);
        assert!(Mlp::init_siren(arch, &mut rng(1)).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = vec![5.0, -3.0];
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..2000 {
            let grad: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            opt.step(&mut params, &grad);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }
}
