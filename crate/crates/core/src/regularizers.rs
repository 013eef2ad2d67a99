//! The layer-wise noise stability penalty and the comparison regularizers
//! (L²-SP, Mixout, noise-only forward) behind one configuration enum.
//!
//! Gradient routing for the stability penalty: the noise vector is a
//! constant, and the perturbed branch starts from a detached copy of the
//! layer-b input, so layers below b are trained only by the task loss and the
//! clean branch. `backprop_below` flips the perturbed branch onto the live
//! layer-b node for ablation.

use crate::encoder::{LayerTrace, Parameters};
use crate::rng;
use crate::tensor::TensorValue;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegularizerError {
    #[error("invalid regularizer config: {0}")]
    BadConfig(String),
    #[error("trace layer ranges disagree: clean covers {clean_start}..={clean_end}, perturbed covers {pert_start}..={pert_end}, need {b}..={last}")]
    TraceMismatch {
        clean_start: usize,
        clean_end: usize,
        pert_start: usize,
        pert_end: usize,
        b: usize,
        last: usize,
    },
    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
    #[error("loss is not finite: task {task}, penalty {penalty}")]
    NonFiniteLoss { task: f64, penalty: f64 },
}

/// Layer-wise noise stability settings: noise std σ, injection layer b
/// (1-based, input-of-layer), and one weight per regularized layer r = b..=L.
#[derive(Debug, Clone, PartialEq)]
pub struct LnsrConfig {
    pub sigma: f64,
    pub inject_layer: usize,
    pub layer_weights: Vec<f64>,
    pub backprop_below: bool,
}

impl LnsrConfig {
    /// Unit weights on all layers r = b..=L.
    pub fn with_unit_weights(sigma: f64, inject_layer: usize, num_layers: usize) -> Self {
        LnsrConfig {
            sigma,
            inject_layer,
            layer_weights: vec![1.0; num_layers - inject_layer + 1],
            backprop_below: false,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<(), RegularizerError> {
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(RegularizerError::BadConfig(format!(
                "sigma {} must be finite and nonnegative",
                self.sigma
            )));
        }
        if self.inject_layer < 1 || self.inject_layer > num_layers {
            return Err(RegularizerError::BadConfig(format!(
                "inject_layer {} out of range 1..={num_layers}",
                self.inject_layer
            )));
        }
        let expected = num_layers - self.inject_layer + 1;
        if self.layer_weights.len() != expected {
            return Err(RegularizerError::BadConfig(format!(
                "{} layer weights for layers {}..={} (need {expected})",
                self.layer_weights.len(),
                self.inject_layer,
                num_layers
            )));
        }
        if self.layer_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(RegularizerError::BadConfig(
                "layer weights must be finite and nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Anchor-to-pretrained penalty: (α/2)‖w_body − w_body⁰‖² + (β/2)‖w_head‖².
#[derive(Debug, Clone)]
pub struct L2spConfig {
    pub alpha: f64,
    pub beta: f64,
    pub snapshot: Parameters,
}

/// Stochastic parameter replacement: each body scalar reverts to its
/// snapshot value with probability `prob` for one step's forward pass.
#[derive(Debug, Clone)]
pub struct MixoutConfig {
    pub prob: f64,
    pub snapshot: Parameters,
    /// Compensated variant: mixed = (mixed_raw − p·w⁰) / (1 − p).
    pub rescale: bool,
}

impl MixoutConfig {
    pub fn validate(&self) -> Result<(), RegularizerError> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(RegularizerError::BadConfig(format!(
                "mixout prob {} outside [0, 1]",
                self.prob
            )));
        }
        Ok(())
    }
}

/// Perturbed-forward ablation: noise injected at the input of layer b, task
/// loss on the perturbed output, no consistency penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOnlyConfig {
    pub sigma: f64,
    pub inject_layer: usize,
}

/// The regularizer applied during training.
#[derive(Debug, Clone)]
pub enum Regularizer {
    None,
    Lnsr(LnsrConfig),
    L2sp(L2spConfig),
    Mixout(MixoutConfig),
    NoiseOnly(NoiseOnlyConfig),
}

impl Regularizer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Lnsr(_) => "lnsr",
            Regularizer::L2sp(_) => "l2sp",
            Regularizer::Mixout(_) => "mixout",
            Regularizer::NoiseOnly(_) => "noise-only",
        }
    }
}

/// Zero-mean Gaussian noise with std σ; deterministic given the generator
/// state, and σ = 0 yields an exactly zero tensor while consuming the same
/// draws.
pub fn sample_noise(shape: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> TensorValue {
    rng::gaussian_tensor(rng, shape.to_vec(), sigma)
}

/// Penalty value with its per-layer decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LnsrPenalty {
    pub total: f64,
    /// (absolute layer index r, λ_r · ‖Δ_r‖²_F) for r = b..=L.
    pub per_layer: Vec<(usize, f64)>,
}

/// Weighted squared-Frobenius discrepancy between two traces of the same
/// parameters, one started from x^b and one from x^b + ε.
pub fn lnsr_penalty(
    clean: &LayerTrace,
    perturbed: &LayerTrace,
    cfg: &LnsrConfig,
) -> Result<LnsrPenalty, RegularizerError> {
    let b = cfg.inject_layer;
    let last = b + cfg.layer_weights.len() - 1;
    let ranges_ok = clean.start_layer() <= b
        && clean.last_layer() >= last
        && perturbed.start_layer() <= b
        && perturbed.last_layer() >= last;
    if !ranges_ok {
        return Err(RegularizerError::TraceMismatch {
            clean_start: clean.start_layer(),
            clean_end: clean.last_layer(),
            pert_start: perturbed.start_layer(),
            pert_end: perturbed.last_layer(),
            b,
            last,
        });
    }
    let mut per_layer = Vec::with_capacity(cfg.layer_weights.len());
    let mut total = 0.0;
    for (offset, &weight) in cfg.layer_weights.iter().enumerate() {
        let r = b + offset;
        let c = clean.layer_output(r).expect("clean trace covers r");
        let p = perturbed.layer_output(r).expect("perturbed trace covers r");
        if c.shape() != p.shape() {
            return Err(RegularizerError::SnapshotMismatch(format!(
                "layer {r} output shapes {:?} vs {:?}",
                c.shape(),
                p.shape()
            )));
        }
        let term = weight * p.sub(c).sum_sq();
        per_layer.push((r, term));
        total += term;
    }
    Ok(LnsrPenalty { total, per_layer })
}

/// (α/2)‖w_s − w_s⁰‖² + (β/2)‖w_s̄‖², squared Euclidean norms over body and
/// head parameters respectively.
pub fn l2sp_penalty(params: &Parameters, cfg: &L2spConfig) -> Result<f64, RegularizerError> {
    let mut body_term = 0.0;
    for name in params.body_names() {
        let current = params.get(name).expect("body name exists");
        let anchor = cfg.snapshot.get(name).ok_or_else(|| {
            RegularizerError::SnapshotMismatch(format!("snapshot missing body tensor {name:?}"))
        })?;
        if anchor.shape() != current.shape() {
            return Err(RegularizerError::SnapshotMismatch(format!(
                "snapshot tensor {name:?} has shape {:?}, expected {:?}",
                anchor.shape(),
                current.shape()
            )));
        }
        body_term += current.sub(anchor).sum_sq();
    }
    let mut head_term = 0.0;
    for name in params.head_names() {
        head_term += params.get(name).expect("head name exists").sum_sq();
    }
    Ok(0.5 * cfg.alpha * body_term + 0.5 * cfg.beta * head_term)
}

/// Mixed parameters plus the per-tensor replacement mask (true = reverted to
/// the snapshot value). Head tensors have no pre-trained value and are never
/// mixed.
pub fn mixout_mix_with_mask(
    params: &Parameters,
    cfg: &MixoutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Parameters, Vec<(String, Vec<bool>)>), RegularizerError> {
    cfg.validate()?;
    let mut mixed = params.clone();
    let mut masks = Vec::new();
    for (name, tensor) in mixed.tensors_mut() {
        if Parameters::is_head_name(name) {
            continue;
        }
        let anchor = cfg.snapshot.get(name).ok_or_else(|| {
            RegularizerError::SnapshotMismatch(format!("snapshot missing body tensor {name:?}"))
        })?;
        if anchor.shape() != tensor.shape() {
            return Err(RegularizerError::SnapshotMismatch(format!(
                "snapshot tensor {name:?} has shape {:?}, expected {:?}",
                anchor.shape(),
                tensor.shape()
            )));
        }
        let mut mask = vec![false; tensor.numel()];
        // p = 0 must be a bitwise no-op, so only then is the draw skipped
        // per-element after sampling.
        for (slot, (v, &a)) in mask
            .iter_mut()
            .zip(tensor.data_mut().iter_mut().zip(anchor.data()))
        {
            let replace = rng.random::<f64>() < cfg.prob;
            if replace {
                *v = a;
                *slot = true;
            }
        }
        if cfg.rescale && cfg.prob < 1.0 {
            let p = cfg.prob;
            for (v, &a) in tensor.data_mut().iter_mut().zip(anchor.data()) {
                *v = (*v - p * a) / (1.0 - p);
            }
        }
        masks.push((name.clone(), mask));
    }
    Ok((mixed, masks))
}

/// Parameters for one step's forward pass under Mixout.
pub fn mixout_mix(
    params: &Parameters,
    cfg: &MixoutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Parameters, RegularizerError> {
    mixout_mix_with_mask(params, cfg, rng).map(|(p, _)| p)
}

/// Total training objective: task loss plus penalty. Aborts on a non-finite
/// total so the caller can surface both components.
pub fn compose_loss(task_loss: f64, penalty: f64) -> Result<f64, RegularizerError> {
    let total = task_loss + penalty;
    if !total.is_finite() {
        return Err(RegularizerError::NonFiniteLoss {
            task: task_loss,
            penalty,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig, HeadKind};
    use crate::rng::{stream_rng, Stream};

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 16,
            max_seq_len: 8,
            head: HeadKind::Classification { num_labels: 2 },
            init_std: 0.02,
            ln_eps: 1e-12,
        }
    }

    #[test]
    fn noise_sigma_zero_is_exactly_zero() {
        let mut rng = stream_rng(1, Stream::Noise);
        let t = sample_noise(&[4, 4], 0.0, &mut rng);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let a = sample_noise(&[8], 0.3, &mut stream_rng(5, Stream::Noise));
        let b = sample_noise(&[8], 0.3, &mut stream_rng(5, Stream::Noise));
        let c = sample_noise(&[8], 0.3, &mut stream_rng(6, Stream::Noise));
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noise_moments_match_sigma() {
        let sigma = 0.37;
        let n = 1_000_000;
        let mut rng = stream_rng(12, Stream::Noise);
        let t = sample_noise(&[n], sigma, &mut rng);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(
            mean.abs() < 4.0 * sigma / 1000.0,
            "mean {mean} too far from 0"
        );
        assert!(
            (var - sigma * sigma).abs() / (sigma * sigma) < 0.01,
            "variance {var} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn penalty_zero_for_identical_traces() {
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let trace = params.forward(&[4, 5, 6]).unwrap();
        let reg = LnsrConfig::with_unit_weights(0.1, 1, cfg_enc.num_layers);
        let p = lnsr_penalty(&trace, &trace.clone(), &reg).unwrap();
        assert_eq!(p.total, 0.0);
        assert!(p.per_layer.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn penalty_breakdown_matches_hand_arithmetic() {
        // Two layers with difference norms² (0.25, 4.0) and λ = (1, 0.5) → 2.25.
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let clean = params.forward(&[4, 5]).unwrap();
        // layer 1 diff: single entry 0.5 → norm² 0.25; layer 2: entry 2.0 → 4.0
        let mut p1 = clean.layer_output(1).unwrap().clone();
        p1.data_mut()[0] += 0.5;
        let mut p2 = clean.layer_output(2).unwrap().clone();
        p2.data_mut()[3] += 2.0;
        let pert_patch = patch_trace(&clean, vec![p1, p2]);
        let reg = LnsrConfig {
            sigma: 0.1,
            inject_layer: 1,
            layer_weights: vec![1.0, 0.5],
            backprop_below: false,
        };
        let p = lnsr_penalty(&clean, &pert_patch, &reg).unwrap();
        assert!((p.total - 2.25).abs() < 1e-12, "total {}", p.total);
        assert!((p.per_layer[0].1 - 0.25).abs() < 1e-12);
        assert!((p.per_layer[1].1 - 2.0).abs() < 1e-12);
    }

    fn patch_trace(trace: &LayerTrace, outputs: Vec<TensorValue>) -> LayerTrace {
        LayerTrace::from_parts(
            trace.start_layer(),
            trace.embedding_output().cloned(),
            outputs,
            trace.pooled.clone(),
            trace.output.clone(),
        )
    }

    #[test]
    fn unit_perturbation_gives_unit_penalty() {
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let clean = params.forward(&[4, 5]).unwrap();
        let mut out2 = clean.layer_output(2).unwrap().clone();
        out2.data_mut()[0] += 1.0;
        let pert = patch_trace(&clean, vec![clean.layer_output(1).unwrap().clone(), out2]);
        // Single regularized layer (b = L), λ = 1.
        let reg = LnsrConfig::with_unit_weights(0.1, 2, cfg_enc.num_layers);
        let p = lnsr_penalty(&clean, &pert, &reg).unwrap();
        assert!((p.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_scaling_scales_penalty() {
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(7, Stream::BodyInit)).unwrap();
        let clean = params.forward(&[4, 5, 6, 7]).unwrap();
        let x1 = clean.embedding_output().unwrap();
        let mut noise_rng = stream_rng(7, Stream::Noise);
        let noise = sample_noise(x1.shape(), 0.05, &mut noise_rng);
        let perturbed = params.forward_from(&x1.add(&noise), 1).unwrap();

        let base = LnsrConfig {
            sigma: 0.05,
            inject_layer: 1,
            layer_weights: vec![0.7, 1.3],
            backprop_below: false,
        };
        let p1 = lnsr_penalty(&clean, &perturbed, &base).unwrap();
        assert!(p1.total > 0.0, "generic parameters should give R̂ > 0");

        // Power-of-two scaling is exact in floating point.
        let mut scaled = base.clone();
        for w in &mut scaled.layer_weights {
            *w *= 4.0;
        }
        let p4 = lnsr_penalty(&clean, &perturbed, &scaled).unwrap();
        assert_eq!(p4.total, 4.0 * p1.total);

        let mut scaled_general = base.clone();
        for w in &mut scaled_general.layer_weights {
            *w *= 3.7;
        }
        let pg = lnsr_penalty(&clean, &perturbed, &scaled_general).unwrap();
        assert!((pg.total - 3.7 * p1.total).abs() <= 1e-12 * p1.total.abs().max(1.0));
    }

    #[test]
    fn zero_weights_or_zero_sigma_zero_penalty() {
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(7, Stream::BodyInit)).unwrap();
        let clean = params.forward(&[4, 5, 6]).unwrap();
        let x1 = clean.embedding_output().unwrap();

        // σ = 0: perturbed input is bitwise the clean input.
        let mut noise_rng = stream_rng(7, Stream::Noise);
        let zero_noise = sample_noise(x1.shape(), 0.0, &mut noise_rng);
        let perturbed = params.forward_from(&x1.add(&zero_noise), 1).unwrap();
        let reg = LnsrConfig::with_unit_weights(0.0, 1, cfg_enc.num_layers);
        assert_eq!(lnsr_penalty(&clean, &perturbed, &reg).unwrap().total, 0.0);

        // λ = 0 with real noise.
        let noise = sample_noise(x1.shape(), 0.1, &mut noise_rng);
        let perturbed = params.forward_from(&x1.add(&noise), 1).unwrap();
        let reg = LnsrConfig {
            sigma: 0.1,
            inject_layer: 1,
            layer_weights: vec![0.0, 0.0],
            backprop_below: false,
        };
        assert_eq!(lnsr_penalty(&clean, &perturbed, &reg).unwrap().total, 0.0);
    }

    #[test]
    fn trace_range_mismatch_rejected() {
        let cfg_enc = cfg();
        let params = init_params(&cfg_enc, &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let clean = params.forward(&[4, 5]).unwrap();
        let x2 = clean.layer_input(2).unwrap();
        let from_two = params.forward_from(x2, 2).unwrap();
        // Penalty over layers 1..=2 cannot be computed from a trace starting at 2.
        let reg = LnsrConfig::with_unit_weights(0.1, 1, cfg_enc.num_layers);
        assert!(matches!(
            lnsr_penalty(&clean, &from_two, &reg),
            Err(RegularizerError::TraceMismatch { .. })
        ));
    }

    #[test]
    fn l2sp_zero_at_anchor_with_zero_beta() {
        let params = init_params(&cfg(), &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let reg = L2spConfig {
            alpha: 0.5,
            beta: 0.0,
            snapshot: params.clone(),
        };
        assert_eq!(l2sp_penalty(&params, &reg).unwrap(), 0.0);
    }

    #[test]
    fn l2sp_hand_values() {
        let params = init_params(&cfg(), &mut stream_rng(3, Stream::BodyInit)).unwrap();
        // α = 0, head contribution only: ensure a known head norm.
        let mut p2 = params.clone();
        for name in ["head.w", "head.b"] {
            let t = p2.tensors_mut().get_mut(name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        p2.tensors_mut().get_mut("head.w").unwrap().data_mut()[0] = 2.0;
        let reg = L2spConfig {
            alpha: 0.0,
            beta: 1.0,
            snapshot: params.clone(),
        };
        assert_eq!(l2sp_penalty(&p2, &reg).unwrap(), 2.0);

        // α = 2, body differs from snapshot by (1,1,1), β = 0 → 3.0.
        let mut p3 = params.clone();
        {
            let t = p3.tensors_mut().get_mut("embed.tok").unwrap();
            t.data_mut()[0] += 1.0;
            t.data_mut()[1] += 1.0;
            t.data_mut()[2] += 1.0;
        }
        let reg = L2spConfig {
            alpha: 2.0,
            beta: 0.0,
            snapshot: params.clone(),
        };
        assert!((l2sp_penalty(&p3, &reg).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn l2sp_shape_mismatch_rejected() {
        let params = init_params(&cfg(), &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let mut other_cfg = cfg();
        other_cfg.d_ff = 8;
        let other = init_params(&other_cfg, &mut stream_rng(3, Stream::BodyInit)).unwrap();
        let reg = L2spConfig {
            alpha: 1.0,
            beta: 0.0,
            snapshot: other,
        };
        assert!(matches!(
            l2sp_penalty(&params, &reg),
            Err(RegularizerError::SnapshotMismatch(_))
        ));
    }

    #[test]
    fn mixout_p0_is_bitwise_noop_and_p1_restores_snapshot() {
        let params = init_params(&cfg(), &mut stream_rng(4, Stream::BodyInit)).unwrap();
        let snapshot = init_params(&cfg(), &mut stream_rng(99, Stream::BodyInit)).unwrap();
        let mut rng = stream_rng(4, Stream::Mixout);
        let reg0 = MixoutConfig {
            prob: 0.0,
            snapshot: snapshot.clone(),
            rescale: false,
        };
        let mixed0 = mixout_mix(&params, &reg0, &mut rng).unwrap();
        for (name, t) in params.tensors() {
            let m = mixed0.get(name).unwrap();
            for (a, b) in t.data().iter().zip(m.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
        }
        let reg1 = MixoutConfig {
            prob: 1.0,
            snapshot: snapshot.clone(),
            rescale: false,
        };
        let mixed1 = mixout_mix(&params, &reg1, &mut rng).unwrap();
        for name in params.body_names() {
            assert_eq!(
                mixed1.get(name).unwrap().data(),
                snapshot.get(name).unwrap().data(),
                "{name}"
            );
        }
        for name in params.head_names() {
            assert_eq!(
                mixed1.get(name).unwrap().data(),
                params.get(name).unwrap().data(),
                "head must never be mixed"
            );
        }
    }

    #[test]
    fn mixout_replacement_fraction_concentrates() {
        // ~1.3e6 body scalars at p = 0.5: fraction within 0.3% of 0.5.
        let big = EncoderConfig {
            num_layers: 1,
            d_model: 256,
            n_heads: 2,
            d_ff: 256,
            vocab_size: 4096,
            max_seq_len: 8,
            head: HeadKind::Regression,
            init_std: 0.02,
            ln_eps: 1e-12,
        };
        let params = init_params(&big, &mut stream_rng(4, Stream::BodyInit)).unwrap();
        let snapshot = init_params(&big, &mut stream_rng(5, Stream::BodyInit)).unwrap();
        let reg = MixoutConfig {
            prob: 0.5,
            snapshot,
            rescale: false,
        };
        let mut rng = stream_rng(6, Stream::Mixout);
        let (_, masks) = mixout_mix_with_mask(&params, &reg, &mut rng).unwrap();
        let total: usize = masks.iter().map(|(_, m)| m.len()).sum();
        let replaced: usize = masks
            .iter()
            .map(|(_, m)| m.iter().filter(|&&x| x).count())
            .sum();
        assert!(total > 1_000_000, "need ≥1e6 scalars, got {total}");
        let fraction = replaced as f64 / total as f64;
        assert!(
            (fraction - 0.5).abs() < 0.003,
            "replacement fraction {fraction}"
        );
    }

    #[test]
    fn mixout_same_seed_same_mask() {
        let params = init_params(&cfg(), &mut stream_rng(4, Stream::BodyInit)).unwrap();
        let snapshot = init_params(&cfg(), &mut stream_rng(5, Stream::BodyInit)).unwrap();
        let reg = MixoutConfig {
            prob: 0.5,
            snapshot,
            rescale: false,
        };
        let (_, m1) = mixout_mix_with_mask(&params, &reg, &mut stream_rng(8, Stream::Mixout)).unwrap();
        let (_, m2) = mixout_mix_with_mask(&params, &reg, &mut stream_rng(8, Stream::Mixout)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn compose_loss_adds_and_rejects_non_finite() {
        assert_eq!(compose_loss(0.7, 0.0).unwrap(), 0.7);
        assert_eq!(compose_loss(0.7, 0.05).unwrap(), 0.75);
        assert!(matches!(
            compose_loss(f64::INFINITY, 0.0),
            Err(RegularizerError::NonFiniteLoss { .. })
        ));
    }
}
