//! Gradient clipping driven by exponential moving averages of the gradient
//! norm: a slow EMA (larger coefficient, emphasizing history) acts as the
//! clipping threshold, a fast EMA as the clipping target.
//!
//! The published algorithm box updates the threshold EMA with the fast
//! coefficient and rescales the gradient by multiplying with the target EMA
//! (dimensionally a squared norm). The default here follows the prose
//! intent: `g2` uses its own coefficient and clipping rescales the gradient
//! *to* the target norm. The literal box is kept behind
//! [`ClipVariant::Literal`] for comparison.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipVariant {
    /// Prose-corrected update (default).
    Corrected,
    /// Verbatim algorithm box.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaClipState {
    pub beta1: f64,
    pub beta2: f64,
    /// Clip threshold coefficient.
    pub alpha: f64,
    /// Clip value coefficient (> 1 so the target EMA keeps tracking).
    pub kappa: f64,
    pub i: u64,
    /// Fast EMA of the gradient norm (clip target).
    pub g1: f64,
    /// Slow EMA of the gradient norm (clip threshold).
    pub g2: f64,
    pub variant: ClipVariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipDecision {
    /// Multiply the gradient by this factor.
    pub scale: f64,
    pub clipped: bool,
}

impl Default for EmaClipState {
    fn default() -> Self {
        EmaClipState {
            beta1: 0.99,
            beta2: 0.999,
            alpha: 2.0,
            kappa: 1.1,
            i: 0,
            g1: 0.0,
            g2: 0.0,
            variant: ClipVariant::Corrected,
        }
    }
}

impl EmaClipState {
    pub fn new(variant: ClipVariant) -> Self {
        EmaClipState {
            variant,
            ..Default::default()
        }
    }

    /// Process one gradient norm: decides the rescale factor, then updates
    /// both EMAs with the post-clip norm and advances the step counter.
    /// The first step never clips.
    pub fn process(&mut self, norm: f64) -> ClipDecision {
        debug_assert!(norm.is_finite() && norm >= 0.0);
        let mut decision = ClipDecision {
            scale: 1.0,
            clipped: false,
        };
        if self.i != 0 {
            let threshold = self.alpha * self.g2 / (1.0 - self.beta2.powi(self.i as i32));
            if norm > threshold {
                let target = self.kappa * self.g1 / (1.0 - self.beta1.powi(self.i as i32));
                decision.scale = match self.variant {
                    ClipVariant::Corrected => {
                        if norm > 0.0 {
                            target / norm
                        } else {
                            1.0
                        }
                    }
                    ClipVariant::Literal => target,
                };
                decision.clipped = true;
            }
        }
        let post = norm * decision.scale;
        self.g1 = self.beta1 * self.g1 + (1.0 - self.beta1) * post;
        self.g2 = match self.variant {
            ClipVariant::Corrected => self.beta2 * self.g2 + (1.0 - self.beta2) * post,
            ClipVariant::Literal => self.beta1 * self.g2 + (1.0 - self.beta1) * post,
        };
        self.i += 1;
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference recurrence, written independently of the struct
    /// above; the expected values for the stream tests come from here.
    fn reference(stream: &[f64]) -> Vec<(f64, bool)> {
        let (b1, b2, alpha, kappa) = (0.99f64, 0.999f64, 2.0, 1.1);
        let (mut g1, mut g2) = (0.0f64, 0.0f64);
        let mut out = Vec::new();
        for (i, &norm) in stream.iter().enumerate() {
            let mut post = norm;
            let mut clipped = false;
            if i != 0 && norm > alpha * g2 / (1.0 - b2.powi(i as i32)) {
                post = kappa * g1 / (1.0 - b1.powi(i as i32));
                clipped = true;
            }
            g1 = b1 * g1 + (1.0 - b1) * post;
            g2 = b2 * g2 + (1.0 - b2) * post;
            out.push((post, clipped));
        }
        out
    }

    #[test]
    fn first_step_never_clips() {
        let mut state = EmaClipState::default();
        let d = state.process(1e9);
        assert!(!d.clipped);
        assert_eq!(d.scale, 1.0);
        assert_eq!(state.i, 1);
    }

    #[test]
    fn constant_stream_never_clips_after_warmup() {
        let mut state = EmaClipState::default();
        for _ in 0..200 {
            let d = state.process(0.7);
            assert!(!d.clipped);
        }
        // bias-corrected EMAs converge to the constant itself
        let g2_hat = state.g2 / (1.0 - state.beta2.powi(state.i as i32));
        assert!((g2_hat - 0.7).abs() < 1e-12);
    }

    #[test]
    fn spike_after_flat_history_clips_to_fast_ema_target() {
        let stream = [vec![1.0; 3], vec![100.0]].concat();
        let expected = reference(&stream);
        let mut state = EmaClipState::default();
        for (i, &norm) in stream.iter().enumerate() {
            let d = state.process(norm);
            let (post, clipped) = expected[i];
            assert_eq!(d.clipped, clipped, "step {i}");
            assert!((norm * d.scale - post).abs() < 1e-12, "step {i}");
        }
        // step 4 clips to kappa * corrected g1 = 1.1 (history of ones)
        assert!(expected[3].1);
        assert!((expected[3].0 - 1.1).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_over_long_synthetic_stream() {
        let mut stream = Vec::with_capacity(1000);
        let mut x = 0.6f64;
        for i in 0..1000usize {
            // deterministic wobble with occasional spikes
            x = 0.8 + 0.3 * ((i as f64) * 0.37).sin().abs();
            if i % 97 == 0 {
                x *= 25.0;
            }
            stream.push(x);
        }
        let expected = reference(&stream);
        let mut state = EmaClipState::default();
        for (i, &norm) in stream.iter().enumerate() {
            let d = state.process(norm);
            assert!(
                (norm * d.scale - expected[i].0).abs() < 1e-10,
                "step {i}: {} vs {}",
                norm * d.scale,
                expected[i].0
            );
            assert_eq!(d.clipped, expected[i].1, "step {i}");
        }
    }

    #[test]
    fn clip_never_increases_norm_and_is_identity_below_threshold() {
        let mut state = EmaClipState::default();
        for i in 0..500usize {
            let norm = if i % 13 == 0 { 40.0 } else { 1.0 + (i as f64 * 0.1).cos() };
            let g1_hat = if state.i > 0 {
                state.kappa * state.g1 / (1.0 - state.beta1.powi(state.i as i32))
            } else {
                f64::INFINITY
            };
            let d = state.process(norm);
            let post = norm * d.scale;
            assert!(post <= norm.max(g1_hat) + 1e-12);
            if !d.clipped {
                assert_eq!(d.scale, 1.0);
            }
        }
    }

    #[test]
    fn literal_variant_follows_the_printed_box() {
        let stream = [1.0, 1.0, 1.0, 100.0];
        let mut state = EmaClipState::new(ClipVariant::Literal);
        // independent replay of the printed update rules
        let (b1, b2, alpha, kappa) = (0.99f64, 0.999f64, 2.0, 1.1);
        let (mut g1, mut g2) = (0.0f64, 0.0f64);
        for (i, &norm) in stream.iter().enumerate() {
            let d = state.process(norm);
            let mut post = norm;
            if i != 0 && norm > alpha * g2 / (1.0 - b2.powi(i as i32)) {
                post = norm * kappa * g1 / (1.0 - b1.powi(i as i32));
            }
            assert!((norm * d.scale - post).abs() < 1e-12, "step {i}");
            g1 = b1 * g1 + (1.0 - b1) * post;
            g2 = b1 * g2 + (1.0 - b1) * post; // literal: both with beta1
        }
        let _ = (g1, g2);
    }
}
