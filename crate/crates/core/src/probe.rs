//! Noise-attenuation probe: inject norm-scaled Gaussian noise at one layer's
//! output and record the perturbation magnitude at every subsequent layer.
//!
//! Layer indexing here is output-of-layer: injecting at layer `k` perturbs
//! the tensor that feeds layer `k + 1`. Index 0 is the embedding output, so a
//! probe at 0 corresponds to noise at the input of layer 1.

use crate::encoder::Parameters;
use crate::rng;
use crate::tensor::TensorValue;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("inject_layer {k} out of range 0..={num_layers}")]
    BadInjectLayer { k: usize, num_layers: usize },
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("draws must be at least 1")]
    NoDraws,
    #[error("no examples supplied")]
    NoExamples,
    #[error("all {0} examples were skipped (zero-norm layer states)")]
    AllSkipped(usize),
    #[error("model forward failed: {0}")]
    Forward(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything the probe can perturb: a model that exposes its per-layer states
/// and can resume a forward pass from the input of an arbitrary layer.
pub trait LayeredModel {
    fn num_layers(&self) -> usize;

    /// States in output-of-layer indexing: index 0 is the pre-layer-1 state,
    /// index k for k ≥ 1 the output of layer k. Length `num_layers + 1`.
    fn layer_states(&self, tokens: &[u32]) -> Result<Vec<TensorValue>, ProbeError>;

    /// Outputs of layers `b..=L` given the input of layer `b`.
    fn states_from(&self, input: &TensorValue, b: usize) -> Result<Vec<TensorValue>, ProbeError>;
}

impl LayeredModel for Parameters {
    fn num_layers(&self) -> usize {
        self.config().num_layers
    }

    fn layer_states(&self, tokens: &[u32]) -> Result<Vec<TensorValue>, ProbeError> {
        let trace = self
            .forward(tokens)
            .map_err(|e| ProbeError::Forward(e.to_string()))?;
        let mut states = Vec::with_capacity(self.config().num_layers + 1);
        states.push(trace.embedding_output().expect("full forward").clone());
        for r in 1..=self.config().num_layers {
            states.push(trace.layer_output(r).expect("full forward").clone());
        }
        Ok(states)
    }

    fn states_from(&self, input: &TensorValue, b: usize) -> Result<Vec<TensorValue>, ProbeError> {
        let trace = self
            .forward_from(input, b)
            .map_err(|e| ProbeError::Forward(e.to_string()))?;
        Ok(trace.outputs().to_vec())
    }
}

/// Per-layer perturbation norms after injecting noise at one layer, averaged
/// over examples and noise draws. Entry 0 corresponds to the injection layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeCurve {
    pub inject_layer: usize,
    pub per_layer_abs: Vec<f64>,
    pub per_layer_ratio: Vec<f64>,
    pub n_examples: usize,
    pub n_draws: usize,
    pub scale: f64,
    /// Examples dropped because a required clean state had zero norm.
    pub skipped: usize,
}

impl ProbeCurve {
    /// Layer indices covered by the curve, starting at the injection layer.
    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.inject_layer..self.inject_layer + self.per_layer_abs.len()
    }

    pub fn final_layer_ratio(&self) -> f64 {
        *self.per_layer_ratio.last().expect("curve is nonempty")
    }
}

/// Run the attenuation probe.
///
/// For each example and draw: rescale a Gaussian vector so its norm is
/// `scale` times the clean state's norm at `inject_layer`, add it there, and
/// resume the forward pass, recording ‖perturbed − clean‖ at every layer at
/// or above the injection point. Curves average per-example means, which in
/// turn average over draws.
pub fn run_probe<M: LayeredModel>(
    model: &M,
    examples: &[Vec<u32>],
    inject_layer: usize,
    scale: f64,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeCurve, ProbeError> {
    let num_layers = model.num_layers();
    if inject_layer > num_layers {
        return Err(ProbeError::BadInjectLayer {
            k: inject_layer,
            num_layers,
        });
    }
    if scale <= 0.0 || !scale.is_finite() {
        return Err(ProbeError::BadScale(scale));
    }
    if draws == 0 {
        return Err(ProbeError::NoDraws);
    }
    if examples.is_empty() {
        return Err(ProbeError::NoExamples);
    }

    let curve_len = num_layers - inject_layer + 1;
    let mut sum_abs = vec![0.0; curve_len];
    let mut sum_ratio = vec![0.0; curve_len];
    let mut used = 0usize;
    let mut skipped = 0usize;

    'examples: for tokens in examples {
        let states = model.layer_states(tokens)?;
        debug_assert_eq!(states.len(), num_layers + 1);
        let clean_norms: Vec<f64> = states[inject_layer..]
            .iter()
            .map(TensorValue::frob_norm)
            .collect();
        if clean_norms.iter().any(|&n| n == 0.0) {
            skipped += 1;
            // Draws are still consumed so skipping never shifts the stream
            // for later examples.
            for _ in 0..draws {
                let _ = rng::gaussian_tensor(rng, states[inject_layer].shape().to_vec(), 1.0);
            }
            continue 'examples;
        }

        let mut ex_abs = vec![0.0; curve_len];
        let mut ex_ratio = vec![0.0; curve_len];
        for _ in 0..draws {
            let raw = rng::gaussian_tensor(rng, states[inject_layer].shape().to_vec(), 1.0);
            let raw_norm = raw.frob_norm();
            let factor = scale * clean_norms[0] / raw_norm;
            let noise = raw.scale(factor);
            ex_abs[0] += noise.frob_norm();
            ex_ratio[0] += noise.frob_norm() / clean_norms[0];
            if inject_layer < num_layers {
                let perturbed_input = states[inject_layer].add(&noise);
                let pert = model.states_from(&perturbed_input, inject_layer + 1)?;
                for (offset, p) in pert.iter().enumerate() {
                    let abs = p.sub(&states[inject_layer + 1 + offset]).frob_norm();
                    ex_abs[1 + offset] += abs;
                    ex_ratio[1 + offset] += abs / clean_norms[1 + offset];
                }
            }
        }
        for i in 0..curve_len {
            sum_abs[i] += ex_abs[i] / draws as f64;
            sum_ratio[i] += ex_ratio[i] / draws as f64;
        }
        used += 1;
    }

    if used == 0 {
        return Err(ProbeError::AllSkipped(examples.len()));
    }
    let n = used as f64;
    Ok(ProbeCurve {
        inject_layer,
        per_layer_abs: sum_abs.into_iter().map(|v| v / n).collect(),
        per_layer_ratio: sum_ratio.into_iter().map(|v| v / n).collect(),
        n_examples: used,
        n_draws: draws,
        scale,
        skipped,
    })
}

/// Metadata echoed into the probe CSV header.
#[derive(Debug, Clone)]
pub struct ProbeMeta {
    pub model_hash: String,
    pub seed: u64,
}

/// CSV with `# key=value` metadata lines, then `layer_index, abs_norm, ratio`.
pub fn write_probe_csv<W: Write>(
    mut w: W,
    curve: &ProbeCurve,
    meta: &ProbeMeta,
) -> std::io::Result<()> {
    writeln!(w, "# model_hash={}", meta.model_hash)?;
    writeln!(w, "# seed={}", meta.seed)?;
    writeln!(w, "# inject_layer={}", curve.inject_layer)?;
    writeln!(w, "# scale={}", curve.scale)?;
    writeln!(w, "# draws={}", curve.n_draws)?;
    writeln!(w, "# n_examples={}", curve.n_examples)?;
    writeln!(w, "# skipped={}", curve.skipped)?;
    writeln!(w, "layer_index,abs_norm,ratio")?;
    for (i, layer) in curve.layers().enumerate() {
        writeln!(
            w,
            "{layer},{:.17e},{:.17e}",
            curve.per_layer_abs[i], curve.per_layer_ratio[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    /// Stack of fixed linear maps on a d-dimensional state; tokens select the
    /// initial state deterministically.
    struct LinearStack {
        maps: Vec<Vec<f64>>, // each d×d row-major
        d: usize,
    }

    impl LinearStack {
        fn apply(&self, m: &[f64], x: &TensorValue) -> TensorValue {
            let d = self.d;
            let rows = x.shape()[0];
            let mut out = vec![0.0; rows * d];
            for r in 0..rows {
                for j in 0..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += x.data()[r * d + i] * m[i * d + j];
                    }
                    out[r * d + j] = acc;
                }
            }
            TensorValue::new(vec![rows, d], out).unwrap()
        }
    }

    impl LayeredModel for LinearStack {
        fn num_layers(&self) -> usize {
            self.maps.len()
        }

        fn layer_states(&self, tokens: &[u32]) -> Result<Vec<TensorValue>, ProbeError> {
            let d = self.d;
            let rows = tokens.len();
            let init: Vec<f64> = (0..rows * d)
                .map(|i| 0.3 + tokens[i / d] as f64 * 0.1 + (i % d) as f64 * 0.05)
                .collect();
            let mut states = vec![TensorValue::new(vec![rows, d], init).unwrap()];
            for m in &self.maps {
                let next = self.apply(m, states.last().unwrap());
                states.push(next);
            }
            Ok(states)
        }

        fn states_from(
            &self,
            input: &TensorValue,
            b: usize,
        ) -> Result<Vec<TensorValue>, ProbeError> {
            let mut states = Vec::new();
            let mut x = input.clone();
            for m in &self.maps[b - 1..] {
                x = self.apply(m, &x);
                states.push(x.clone());
            }
            Ok(states)
        }
    }

    fn identity_map(d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }

    #[test]
    fn injection_layer_ratio_equals_scale() {
        let model = LinearStack {
            maps: vec![identity_map(3); 2],
            d: 3,
        };
        let examples = vec![vec![1, 2], vec![3]];
        let mut rng = stream_rng(1, Stream::Probe);
        let curve = run_probe(&model, &examples, 0, 0.05, 4, &mut rng).unwrap();
        assert!(
            (curve.per_layer_ratio[0] - 0.05).abs() < 1e-9,
            "ratio {}",
            curve.per_layer_ratio[0]
        );
    }

    #[test]
    fn identity_layers_propagate_noise_unchanged() {
        let model = LinearStack {
            maps: vec![identity_map(4); 3],
            d: 4,
        };
        let examples = vec![vec![2, 5, 1]];
        let mut rng = stream_rng(2, Stream::Probe);
        let curve = run_probe(&model, &examples, 0, 0.05, 2, &mut rng).unwrap();
        for w in curve.per_layer_abs.windows(2) {
            assert!(
                (w[0] - w[1]).abs() < 1e-12,
                "identity maps must keep the perturbation norm constant: {:?}",
                curve.per_layer_abs
            );
        }
    }

    #[test]
    fn linear_map_growth_bounded_by_singular_values() {
        // W = [[2, 0], [1, 0.5]]: singular values from eigenvalues of WᵀW.
        let w = vec![2.0, 0.0, 1.0, 0.5];
        let (s_min, s_max) = {
            // WᵀW = [[5, 0.5], [0.5, 0.25]]
            let (a, b, c) = (5.0, 0.5, 0.25);
            let tr = a + c;
            let det = a * c - b * b;
            let disc = (tr * tr / 4.0 - det).sqrt();
            (
                f64::sqrt(tr / 2.0 - disc),
                f64::sqrt(tr / 2.0 + disc),
            )
        };
        let model = LinearStack {
            maps: vec![w],
            d: 2,
        };
        let examples = vec![vec![1, 4, 2]];
        let mut rng = stream_rng(3, Stream::Probe);
        let curve = run_probe(&model, &examples, 0, 0.05, 16, &mut rng).unwrap();
        let growth = curve.per_layer_abs[1] / curve.per_layer_abs[0];
        assert!(
            growth >= s_min - 1e-9 && growth <= s_max + 1e-9,
            "growth {growth} outside [{s_min}, {s_max}]"
        );
    }

    #[test]
    fn probe_rejects_bad_arguments() {
        let model = LinearStack {
            maps: vec![identity_map(2)],
            d: 2,
        };
        let examples = vec![vec![1]];
        let mut rng = stream_rng(4, Stream::Probe);
        assert!(matches!(
            run_probe(&model, &examples, 2, 0.05, 1, &mut rng),
            Err(ProbeError::BadInjectLayer { .. })
        ));
        assert!(matches!(
            run_probe(&model, &examples, 0, 0.0, 1, &mut rng),
            Err(ProbeError::BadScale(_))
        ));
        assert!(matches!(
            run_probe(&model, &examples, 0, 0.05, 0, &mut rng),
            Err(ProbeError::NoDraws)
        ));
        assert!(matches!(
            run_probe(&model, &[], 0, 0.05, 1, &mut rng),
            Err(ProbeError::NoExamples)
        ));
    }

    #[test]
    fn curve_is_mean_of_per_example_curves() {
        let model = LinearStack {
            maps: vec![identity_map(3), identity_map(3)],
            d: 3,
        };
        let ex_a = vec![vec![1, 2]];
        let ex_b = vec![vec![7]];
        let both = vec![ex_a[0].clone(), ex_b[0].clone()];

        let curve_both = run_probe(&model, &both, 0, 0.05, 3, &mut stream_rng(5, Stream::Probe))
            .unwrap();
        // Replaying the same stream in example order reproduces each
        // per-example mean; their average must equal the joint curve.
        let mut rng = stream_rng(5, Stream::Probe);
        let curve_a = run_probe(&model, &ex_a, 0, 0.05, 3, &mut rng).unwrap();
        let curve_b = run_probe(&model, &ex_b, 0, 0.05, 3, &mut rng).unwrap();
        for i in 0..curve_both.per_layer_abs.len() {
            let mean = 0.5 * (curve_a.per_layer_abs[i] + curve_b.per_layer_abs[i]);
            assert!(
                (curve_both.per_layer_abs[i] - mean).abs() < 1e-12,
                "layer {i}: {} vs {mean}",
                curve_both.per_layer_abs[i]
            );
        }
    }

    #[test]
    fn zero_norm_examples_are_skipped_and_counted() {
        struct ZeroModel;
        impl LayeredModel for ZeroModel {
            fn num_layers(&self) -> usize {
                1
            }
            fn layer_states(&self, tokens: &[u32]) -> Result<Vec<TensorValue>, ProbeError> {
                let v = if tokens[0] == 0 { 0.0 } else { 1.0 };
                Ok(vec![
                    TensorValue::new(vec![1, 2], vec![v, v]).unwrap(),
                    TensorValue::new(vec![1, 2], vec![v, v]).unwrap(),
                ])
            }
            fn states_from(
                &self,
                input: &TensorValue,
                _b: usize,
            ) -> Result<Vec<TensorValue>, ProbeError> {
                Ok(vec![input.clone()])
            }
        }
        let examples = vec![vec![0], vec![1]];
        let mut rng = stream_rng(6, Stream::Probe);
        let curve = run_probe(&ZeroModel, &examples, 0, 0.05, 2, &mut rng).unwrap();
        assert_eq!(curve.skipped, 1);
        assert_eq!(curve.n_examples, 1);

        let all_zero = vec![vec![0]];
        let mut rng = stream_rng(6, Stream::Probe);
        assert!(matches!(
            run_probe(&ZeroModel, &all_zero, 0, 0.05, 2, &mut rng),
            Err(ProbeError::AllSkipped(1))
        ));
    }

    #[test]
    fn csv_contains_metadata_and_rows() {
        let model = LinearStack {
            maps: vec![identity_map(2)],
            d: 2,
        };
        let examples = vec![vec![1]];
        let mut rng = stream_rng(7, Stream::Probe);
        let curve = run_probe(&model, &examples, 0, 0.05, 2, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_probe_csv(
            &mut buf,
            &curve,
            &ProbeMeta {
                model_hash: "deadbeef".to_string(),
                seed: 7,
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# model_hash=deadbeef"));
        assert!(text.contains("layer_index,abs_norm,ratio"));
        assert_eq!(text.lines().count(), 7 + 1 + curve.per_layer_abs.len());
    }
}
