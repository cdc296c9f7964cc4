use super::Tensor;

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= k;
            }
        }
    }
    norm
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, second: first.clone(), first }
    }

    pub fn num_params(&self) -> usize {
        self.first.len()
    }

    /// One update. A gradient containing NaN or infinity skips the step
    /// (moments and step counter stay put) and returns `false`.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) -> bool {
        assert_eq!(
            params.len(),
            self.first.len(),
            "adam: {} params vs {} moment buffers",
            params.len(),
            self.first.len()
        );
        assert_eq!(grads.len(), params.len(), "adam: {} grads for {} params", grads.len(), params.len());
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            assert!(
                p.len() == g.len() && g.len() == m.len(),
                "adam: shape mismatch {:?} vs {} grads",
                p.shape(),
                g.len()
            );
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            log::warn!("adam: non-finite gradient, step skipped");
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        for _ in 0..10 {
            assert!(st.update(&mut [&mut p], &[vec![0.0; 3]], 8e-4));
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = Tensor::new(vec![2], vec![0.0, 0.0]);
        let mut st = AdamState::new([&p]);
        let mut prev = p.data().to_vec();
        for _ in 0..200 {
            st.update(&mut [&mut p], &[vec![0.3, -2.0]], 8e-4);
            assert!(p.data()[0] < prev[0] && p.data()[1] > prev[1]);
            prev = p.data().to_vec();
        }
        // the first step has size lr regardless of gradient scale
        let mut q = Tensor::new(vec![1], vec![0.0]);
        let mut st = AdamState::new([&q]);
        st.update(&mut [&mut q], &[vec![123.0]], 8e-4);
        assert_close!(q.data()[0], -8e-4, 1e-10);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = Tensor::new(vec![2], vec![1.0, 1.0]);
        let mut st = AdamState::new([&p]);
        assert!(!st.update(&mut [&mut p], &[vec![f64::NAN, 1.0]], 0.1));
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_close!(n, 5.0, 1e-12);
        assert_close!(g[0][0], 0.6, 1e-12);
        assert_close!(g[1][0], 0.8, 1e-12);
        let mut small = vec![vec![0.1, 0.2]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![vec![0.1, 0.2]]);
    }
}
