//! Fully connected network internals, written once and generic over
//! [`Scalar`] so the same code serves plain f64 training and dual-number
//! tangent propagation.

use super::Activation;
use crate::numerics::params::Segment;
use crate::numerics::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Layer dims `[input, hidden..., output]` plus the hidden nonlinearity.
/// The output layer is always linear (logits).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Arch {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl Arch {
    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Flat parameter layout: w0 [in×out row-major], b0, w1, b1, ...
    pub fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::with_capacity(2 * self.num_layers());
        for (l, w) in self.dims.windows(2).enumerate() {
            segs.push(Segment::new(format!("w{l}"), vec![w[0], w[1]]));
            segs.push(Segment::new(format!("b{l}"), vec![w[1]]));
        }
        segs
    }

    /// (weight offset, bias offset) of layer `l` in the flat vector.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for ll in 0..l {
            off += self.dims[ll] * self.dims[ll + 1] + self.dims[ll + 1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    /// Weights drawn uniformly from ±1/√fan_in in layer order (row-major
    /// within a layer), biases zero. Consumes the RNG in a fixed order so
    /// the draw is reproducible.
    pub fn init_values(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v = vec![0.0; self.param_count()];
        for l in 0..self.num_layers() {
            let (w_off, _) = self.offsets(l);
            let bound = 1.0 / (self.dims[l] as f64).sqrt();
            for i in 0..self.dims[l] * self.dims[l + 1] {
                v[w_off + i] = rng.random_range(-bound..=bound);
            }
        }
        v
    }

    /// Forward pass for one example. `acts[0]` is the lifted input,
    /// `acts[l]` the post-activation of layer l, and `acts[num_layers]` the
    /// logits. Buffers are reused across calls.
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[f64], acts: &mut Vec<Vec<S>>) {
        let layers = self.num_layers();
        acts.resize(layers + 1, Vec::new());
        acts[0].clear();
        acts[0].extend(x.iter().map(|&v| S::from_f64(v)));
        for l in 0..layers {
            let (w_off, b_off) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (prev, rest) = acts.split_at_mut(l + 1);
            let prev = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for j in 0..n_out {
                let mut z = params[b_off + j];
                for i in 0..n_in {
                    z = z + params[w_off + i * n_out + j] * prev[i];
                }
                out.push(if l + 1 < layers { activate(self.activation, z) } else { z });
            }
        }
    }

    /// Backpropagation from a logit gradient. Accumulates `scale · ∂loss/∂θ`
    /// into `grad`; `dlogits` is consumed as the delta buffer.
    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        acts: &[Vec<S>],
        mut delta: Vec<S>,
        scale: S,
        grad: &mut [S],
    ) {
        for l in (0..self.num_layers()).rev() {
            let (w_off, b_off) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let prev = &acts[l];
            for j in 0..n_out {
                grad[b_off + j] = grad[b_off + j] + scale * delta[j];
            }
            for i in 0..n_in {
                let base = w_off + i * n_out;
                for j in 0..n_out {
                    grad[base + j] = grad[base + j] + scale * prev[i] * delta[j];
                }
            }
            if l > 0 {
                let mut next = Vec::with_capacity(n_in);
                for i in 0..n_in {
                    let base = w_off + i * n_out;
                    let mut s = S::ZERO;
                    for j in 0..n_out {
                        s = s + params[base + j] * delta[j];
                    }
                    next.push(s * activation_derivative(self.activation, prev[i]));
                }
                delta = next;
            }
        }
    }
}

fn activate<S: Scalar>(a: Activation, z: S) -> S {
    match a {
        Activation::Relu => z.relu(),
        Activation::Tanh => z.tanh(),
    }
}

/// Derivative expressed through the post-activation value; the branch for
/// relu tests the primal part only, matching the forward pass exactly.
fn activation_derivative<S: Scalar>(a: Activation, post: S) -> S {
    match a {
        Activation::Relu => {
            if post.val() > 0.0 {
                S::from_f64(1.0)
            } else {
                S::ZERO
            }
        }
        Activation::Tanh => S::from_f64(1.0) - post * post,
    }
}

/// Max-stabilized softmax cross-entropy of one logit row against a target
/// class: returns the loss and the logit gradient (p − onehot).
pub(crate) fn softmax_ce<S: Scalar>(logits: &[S], target: usize) -> (S, Vec<S>) {
    let m_idx = argmax_primal(logits);
    let m = logits[m_idx];
    let mut sum = S::ZERO;
    let mut probs = Vec::with_capacity(logits.len());
    for &z in logits {
        let e = (z - m).exp();
        probs.push(e);
        sum = sum + e;
    }
    let loss = sum.ln() - (logits[target] - m);
    for (i, p) in probs.iter_mut().enumerate() {
        *p = *p / sum;
        if i == target {
            *p = *p - S::from_f64(1.0);
        }
    }
    (loss, probs)
}

/// Squared error between the softmax probabilities of one logit row and a
/// one-hot target: returns Σ_c (p_c − y_c)² and the logit gradient
/// 2·p_k·((p_k − y_k) − s) with s = Σ_c (p_c − y_c)·p_c.
///
/// Bounded in [0, 2], and its pull toward higher confidence dies off
/// quadratically in the off-class mass once the prediction already matches
/// the target, where cross-entropy's dies off only linearly.
pub(crate) fn softmax_brier<S: Scalar>(logits: &[S], target: usize) -> (S, Vec<S>) {
    let probs = softmax(logits);
    let mut loss = S::ZERO;
    let mut s = S::ZERO;
    for (i, &p) in probs.iter().enumerate() {
        let d = if i == target { p - S::from_f64(1.0) } else { p };
        loss = loss + d * d;
        s = s + d * p;
    }
    let two = S::from_f64(2.0);
    let dlogits = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = if i == target { p - S::from_f64(1.0) } else { p };
            two * p * (d - s)
        })
        .collect();
    (loss, dlogits)
}

/// Max-stabilized softmax probabilities of one logit row.
pub(crate) fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits[argmax_primal(logits)];
    let mut sum = S::ZERO;
    let mut probs = Vec::with_capacity(logits.len());
    for &z in logits {
        let e = (z - m).exp();
        probs.push(e);
        sum = sum + e;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    probs
}

pub(crate) fn argmax_primal<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if x.val() > xs[best].val() {
            best = i;
        }
    }
    best
}

/// Numerically stable softplus: ln(1 + eˣ) = max(x, 0) + ln(1 + e^{−|x|}).
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    let abs = if x.val() >= 0.0 { x } else { -x };
    x.relu() + (S::from_f64(1.0) + (-abs).exp()).ln()
}

/// Numerically stable logistic sigmoid.
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x.val() >= 0.0 {
        S::from_f64(1.0) / (S::from_f64(1.0) + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::from_f64(1.0) + e)
    }
}

/// Binary cross-entropy on a single logit: label 1 means "source". Returns
/// the loss and its derivative in the logit, σ(z) − y.
pub(crate) fn bce_logit<S: Scalar>(z: S, label_is_source: bool) -> (S, S) {
    let loss = if label_is_source { softplus(-z) } else { softplus(z) };
    let dz = if label_is_source {
        sigmoid(z) - S::from_f64(1.0)
    } else {
        sigmoid(z)
    };
    (loss, dz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_and_offsets_line_up() {
        let arch = Arch {
            dims: vec![3, 4, 2],
            activation: Activation::Relu,
        };
        assert_eq!(arch.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(arch.offsets(0), (0, 12));
        assert_eq!(arch.offsets(1), (16, 24));
        let segs = arch.segments();
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[2].len(), 8);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable_at_large_inputs() {
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64).abs() < 1e-12);
        assert!((sigmoid(800.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_ce_matches_direct_formula_on_small_logits() {
        let logits = [0.2f64, -0.4, 1.1];
        let (loss, dl) = softmax_ce(&logits, 2);
        let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
        let sum: f64 = exps.iter().sum();
        assert!((loss - (sum.ln() - 1.1)).abs() < 1e-12);
        for (i, d) in dl.iter().enumerate() {
            let want = exps[i] / sum - if i == 2 { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-12);
        }
    }

    // Hand values. Uniform two-class row, target 0: p = [.5, .5], loss
    // = (.5−1)² + .5² = .5, s = (−.5)(.5) + (.5)(.5) = 0, so the gradient
    // is 2·.5·(−.5) = −.5 at the target and +.5 off it. Three classes with
    // logits [ln 2, 0, 0], target 0: p = [.5, .25, .25], loss = .25 + 2·.0625
    // = .375, s = −.25 + .125 = −.125, gradient [−.375, .1875, .1875].
    #[test]
    fn softmax_brier_matches_hand_values() {
        let (loss, d) = softmax_brier(&[0.0f64, 0.0], 0);
        assert!((loss - 0.5).abs() < 1e-15);
        assert!((d[0] + 0.5).abs() < 1e-15);
        assert!((d[1] - 0.5).abs() < 1e-15);
        let (loss, d) = softmax_brier(&[2.0f64.ln(), 0.0, 0.0], 0);
        assert!((loss - 0.375).abs() < 1e-14);
        for (got, want) in d.iter().zip([-0.375, 0.1875, 0.1875]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_brier_gradient_matches_finite_differences_and_sums_to_zero() {
        let logits = [0.7f64, -1.3, 0.4, 2.2];
        for target in 0..4 {
            let (_, d) = softmax_brier(&logits, target);
            // Shift invariance of softmax forces the logit gradient to sum
            // to zero.
            assert!(d.iter().sum::<f64>().abs() < 1e-14);
            let h = 1e-6;
            for k in 0..4 {
                let mut plus = logits;
                plus[k] += h;
                let mut minus = logits;
                minus[k] -= h;
                let fd =
                    (softmax_brier(&plus, target).0 - softmax_brier(&minus, target).0) / (2.0 * h);
                assert!((d[k] - fd).abs() < 1e-8, "target {target} k {k}: {} vs {fd}", d[k]);
            }
        }
    }

    // The property the squared-error outer loss is chosen for: on a
    // confidently correct row the remaining downhill pull is negligible
    // next to cross-entropy's, while a moderately wrong row keeps a strong
    // gradient.
    #[test]
    fn softmax_brier_confidence_reward_saturates() {
        let confident = [10.0f64, 0.0];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (_, brier_d) = softmax_brier(&confident, 0);
        let (_, ce_d) = softmax_ce(&confident, 0);
        assert!(norm(&brier_d) < 1e-3 * norm(&ce_d));
        // logits giving p ≈ [.7, .3] with target 1: gradient stays O(1).
        let wrong = [(0.7f64 / 0.3).ln(), 0.0];
        let (_, d) = softmax_brier(&wrong, 1);
        assert!(norm(&d) > 0.5, "norm {}", norm(&d));
    }

    #[test]
    fn init_is_bounded_by_fan_in_and_reproducible() {
        let arch = Arch {
            dims: vec![9, 5, 2],
            activation: Activation::Tanh,
        };
        let mut rng = crate::seed::rng(3);
        let v = arch.init_values(&mut rng);
        let bound0 = 1.0 / 3.0;
        assert!(v[..45].iter().all(|x| x.abs() <= bound0));
        // Biases stay zero.
        assert!(v[45..50].iter().all(|&x| x == 0.0));
        let mut rng2 = crate::seed::rng(3);
        assert_eq!(v, arch.init_values(&mut rng2));
    }
}
