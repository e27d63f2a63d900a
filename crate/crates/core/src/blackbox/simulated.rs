//! Deterministic simulated training.
//!
//! Each configuration maps to a saturating learning curve
//! `a(e) = chance + (A - chance)(1 - exp(-e / τ))` plus seeded noise. The
//! asymptote `A` falls off smoothly as hyperparameters move away from a
//! per-optimizer optimum, and `τ` grows for configurations that train slowly.
//! Learning rates that are far too high diverge: the curve peaks early and
//! collapses back to chance. Converged runs with aggressive steps may also
//! blow up later, at a seeded epoch, and fall back to chance. Architectures
//! whose feature maps shrink below one pixel never leave chance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Blackbox, EvaluationRequest, EvaluationResult};
use crate::early_stop::{StopReason, TrainingHistory};
use crate::space::{Configuration, Optimizer, SpaceBounds};

const LN_10: f64 = std::f64::consts::LN_10;

/// Effective learning rates above `10^DIVERGENCE` times the optimum diverge.
const DIVERGENCE: f64 = 0.7;

/// Fixed properties of the simulated task.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedTask {
    pub chance: f64,
    pub max_accuracy: f64,
    /// Input side length in pixels.
    pub image_size: usize,
    /// Noise amplitude at full accuracy.
    pub noise: f64,
    /// Scale of the per-epoch probability that training blows up.
    pub instability: f64,
}

impl Default for SimulatedTask {
    fn default() -> Self {
        Self {
            chance: 0.1,
            max_accuracy: 0.995,
            image_size: 28,
            noise: 0.003,
            instability: 0.5,
        }
    }
}

impl SimulatedTask {
    pub fn noiseless() -> Self {
        Self {
            noise: 0.0,
            ..Self::default()
        }
    }

    /// No noise and no blow-ups: every curve is its smooth backbone.
    pub fn smooth() -> Self {
        Self {
            instability: 0.0,
            ..Self::noiseless()
        }
    }
}

/// Curve parameters derived from one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedModel {
    pub asymptote: f64,
    pub tau: f64,
    pub divergent: bool,
    /// Epoch at which training blows up and falls back to chance.
    pub blowup_epoch: Option<usize>,
    pub learning_rate: f64,
    pub chance: f64,
    pub noise: f64,
    /// Epochs the trainer will run, before any early stop.
    pub epoch_scale: f64,
    noise_key: u64,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn unit_hash(key: u64) -> f64 {
    // splitmix64 finalizer, top 53 bits
    let mut z = key.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn lr_optimum(opt: Optimizer) -> f64 {
    match opt {
        Optimizer::Sgd => 0.05,
        Optimizer::Adam => 1e-3,
        Optimizer::Adagrad => 1e-2,
        Optimizer::RmsProp => 5e-4,
    }
}

fn optimizer_offset(opt: Optimizer) -> f64 {
    match opt {
        Optimizer::Sgd => 0.0,
        Optimizer::Adam => 0.01,
        Optimizer::Adagrad => 0.04,
        Optimizer::RmsProp => 0.02,
    }
}

/// Penalty of the convolutional stack, or `None` when the feature map
/// collapses.
fn architecture_penalty(config: &Configuration, image_size: usize) -> Option<(f64, f64)> {
    let mut size = image_size as f64;
    let mut channels = 1.0;
    let mut p = 0.0;
    for layer in &config.conv_layers {
        let out = ((size + 2.0 * layer.padding - layer.kernel_size) / layer.stride).floor() + 1.0;
        if out < 1.0 {
            return None;
        }
        size = (out / layer.pooling).floor();
        if size < 1.0 {
            return None;
        }
        channels = layer.out_channels;
        p += 0.004 * (layer.out_channels.log2() - 6.0).powi(2);
        p += 0.05 * (8.0 / layer.out_channels).log2().max(0.0);
        p += 0.004 * (layer.kernel_size - 3.0).powi(2);
        p += 0.02 * (layer.stride - 1.0);
        p += 0.003 * (layer.padding - (layer.kernel_size - 1.0) / 2.0).powi(2);
    }
    p += 0.03 * (config.n_conv as f64 - 3.0).powi(2);

    let features = size * size * channels;
    if features > 20_000.0 {
        p += 0.02 * (features / 20_000.0).log2();
    }

    p += 0.02 * (config.n_fc as f64 - 1.5).powi(2);
    for &width in &config.fc_sizes {
        p += 0.003 * (width.log2() - 8.0).powi(2);
        if width < 10.0 {
            p += 0.1 * (10.0 / width).log2();
        }
    }
    // slower training for deeper stacks
    let depth_factor = 1.0 + 0.15 * config.n_conv as f64 + 0.05 * config.n_fc as f64;
    Some((p, depth_factor))
}

impl SimulatedModel {
    pub fn from_config(config: &Configuration, seed: u64, task: &SimulatedTask) -> Self {
        let t = &config.training;
        let opt = config.optimizer;
        let uses_momentum = matches!(opt, Optimizer::Sgd | Optimizer::RmsProp);
        // momentum scales the effective step; 0.9 is neutral
        let momentum_gain = if uses_momentum {
            0.1 / (1.0 - t.momentum).max(1e-3)
        } else {
            1.0
        };
        let u = (t.learning_rate * momentum_gain / lr_optimum(opt)).log10();
        let noise_key = fnv1a(config.serialize().into_bytes(), FNV_OFFSET);
        let noise_key = fnv1a(seed.to_le_bytes(), noise_key);

        let mut model = Self {
            asymptote: task.chance,
            tau: 1.0,
            divergent: u > DIVERGENCE,
            blowup_epoch: None,
            learning_rate: t.learning_rate,
            chance: task.chance,
            noise: task.noise,
            epoch_scale: t.epoch_scale,
            noise_key,
        };

        let Some((arch, depth_factor)) = architecture_penalty(config, task.image_size) else {
            return model;
        };

        let mut p = arch + optimizer_offset(opt);
        p += 0.15 * u * u;
        p += 0.01 * (t.batch_size / 128.0).log2().powi(2);
        p += 0.4 * (t.dropout - 0.25).powi(2) + 3.0 * (t.dropout - 0.6).max(0.0).powi(2);
        p += 25.0 * t.weight_decay;
        p += 0.05 * (t.lr_decay - 0.5).powi(2);
        p += 0.002 * (t.grad_clip / 2.0).ln().powi(2);
        p += 0.3 * (t.label_smoothing - 0.05).powi(2);

        let arch_key = fnv1a(
            format!("{}:{}:{}", config.n_conv, config.n_fc, opt.name()).into_bytes(),
            FNV_OFFSET ^ seed,
        );
        p += 0.01 * (unit_hash(arch_key) - 0.5);
        let p = p.max(0.0);

        model.asymptote = task.chance + (task.max_accuracy - task.chance) * (-p).exp();

        let mut tau = 3.0 * 10f64.powf(0.8 * (-u).max(0.0));
        tau *= (t.batch_size / 128.0).sqrt();
        tau *= (1.0 + t.dropout).powi(2);
        tau *= 1.0 + 0.5 / t.grad_clip;
        tau *= depth_factor;
        model.tau = tau;

        // once converged, aggressive steps without clipping occasionally
        // explode; the hazard applies from about 3τ on
        let hazard =
            (task.instability * 10f64.powf(2.5 * (u - DIVERGENCE)) * (t.grad_clip / 2.0).sqrt())
                .min(1.0);
        if hazard > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_key ^ 0x5851_f42d_4c95_7f2d);
            let draw: f64 = rand::Rng::random(&mut rng);
            let wait = ((1.0 - draw).ln() / (1.0 - hazard).ln()).ceil().max(1.0);
            let epoch = (3.0 * tau).ceil() + wait;
            if epoch < 1e6 {
                model.blowup_epoch = Some(epoch as usize);
            }
        }
        model
    }

    /// Noise-free accuracy after `epoch` epochs on `data_fraction` of the data.
    pub fn mean_accuracy(&self, epoch: usize, data_fraction: f64) -> f64 {
        let e = epoch as f64;
        let a_eff = self.asymptote * (0.8 + 0.2 * data_fraction);
        let gain = (a_eff - self.chance).max(0.0);
        if self.divergent {
            let peak = 0.3 * gain;
            let e_peak = 2.0;
            if e <= e_peak {
                self.chance + peak * e / e_peak
            } else {
                self.chance + peak * (-(e - e_peak) / 4.0).exp()
            }
        } else {
            let rise = |e: f64| self.chance + gain * (1.0 - (-e / self.tau).exp());
            match self.blowup_epoch {
                Some(b) if epoch > b => {
                    let b = b as f64;
                    self.chance + (rise(b) - self.chance) * (-(e - b)).exp()
                }
                _ => rise(e),
            }
        }
    }

    /// Infinite seeded sequence of noisy per-epoch accuracies.
    pub fn curve(&self, data_fraction: f64) -> impl Iterator<Item = f64> + '_ {
        let key = fnv1a(data_fraction.to_bits().to_le_bytes(), self.noise_key);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (1usize..).map(move |e| {
            let mean = self.mean_accuracy(e, data_fraction);
            let z: f64 = StandardNormal.sample(&mut rng);
            let scale = ((mean - self.chance) / (1.0 - self.chance)).clamp(0.0, 1.0);
            (mean + self.noise * scale * z).clamp(0.0, 1.0)
        })
    }

    pub fn loss_for(&self, accuracy: f64) -> f64 {
        (LN_10 * (1.0 - accuracy) / (1.0 - self.chance)).max(0.0)
    }

    /// Epochs the trainer runs for a budget of `max_epochs`.
    pub fn epochs_for(&self, max_epochs: usize) -> usize {
        ((max_epochs as f64 * self.epoch_scale).round() as usize).clamp(1, max_epochs.max(1))
    }
}

/// Full unmonitored curve, `epochs` long.
pub fn simulate_curve(
    model: &SimulatedModel,
    epochs: usize,
    data_fraction: f64,
) -> TrainingHistory {
    let mut h = TrainingHistory::new();
    for acc in model.curve(data_fraction).take(epochs) {
        h.push_next(acc, model.loss_for(acc), model.learning_rate);
    }
    h
}

#[derive(Clone, Debug, Default)]
pub struct SimulatedBlackbox {
    pub task: SimulatedTask,
    pub bounds: SpaceBounds,
}

impl SimulatedBlackbox {
    pub fn new(task: SimulatedTask) -> Self {
        Self {
            task,
            bounds: SpaceBounds::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: SpaceBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn model(&self, config: &Configuration, seed: u64) -> SimulatedModel {
        SimulatedModel::from_config(config, seed, &self.task)
    }
}

impl Blackbox for SimulatedBlackbox {
    fn evaluate(&mut self, request: EvaluationRequest<'_>) -> EvaluationResult {
        if let Err(e) = request.check() {
            return EvaluationResult::failed(e);
        }
        if let Err(v) = request.config.validate(&self.bounds) {
            let msgs: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            return EvaluationResult::failed(format!("invalid configuration: {}", msgs.join("; ")));
        }
        let model = self.model(request.config, request.seed);
        let epochs = model.epochs_for(request.max_epochs);
        let fraction = request.data_fraction;
        let mut monitor = request.monitor;

        let mut history = TrainingHistory::new();
        let mut lr = model.learning_rate;
        let mut reason = StopReason::None;
        for acc in model.curve(fraction).take(epochs) {
            history.push_next(acc, model.loss_for(acc), lr);
            if let Some(m) = monitor.as_deref_mut() {
                let decision = m.observe(&history);
                if decision.verdict.should_stop() {
                    reason = decision.verdict.reason;
                    break;
                }
                lr = decision.next_lr;
            }
        }
        EvaluationResult::completed(history, reason, fraction)
    }
}

/// Coarse practitioner's grid: depth, width of the head, optimizer, learning
/// rate by decades, dropout and momentum; everything else stays at the `p1`
/// defaults.
fn lattice() -> Vec<Configuration> {
    use crate::space::ConvLayer;
    let mut out = Vec::new();
    for n_conv in 0..=4usize {
        let conv_layers: Vec<ConvLayer> = (0..n_conv)
            .map(|i| {
                if i < 2 {
                    ConvLayer::new(32, 3, 1, 1, 2)
                } else {
                    ConvLayer::new(64, 3, 1, 1, 1)
                }
            })
            .collect();
        for n_fc in 0..=2usize {
            for opt in Optimizer::ALL {
                for lr in [1e-4, 1e-3, 1e-2, 1e-1] {
                    for dropout in [0.0, 0.25, 0.5] {
                        for momentum in [0.5, 0.9] {
                            let mut c = Configuration::preset_p1();
                            c.n_conv = n_conv;
                            c.conv_layers = conv_layers.clone();
                            c.n_fc = n_fc;
                            c.fc_sizes = vec![128.0; n_fc];
                            c.optimizer = opt;
                            c.training.learning_rate = lr;
                            c.training.dropout = dropout;
                            c.training.momentum = momentum;
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Best configuration on a coarse lattice and its full-fidelity score.
pub fn lattice_sweep(
    blackbox: &mut SimulatedBlackbox,
    seed: u64,
    max_epochs: usize,
) -> (Configuration, f64) {
    let mut best: Option<(Configuration, f64)> = None;
    for c in lattice() {
        if c.validate(&blackbox.bounds).is_err() {
            continue;
        }
        let r = blackbox.evaluate(EvaluationRequest::new(&c, seed).epochs(max_epochs));
        if best.as_ref().is_none_or(|(_, s)| r.final_val_accuracy > *s) {
            best = Some((c, r.final_val_accuracy));
        }
    }
    best.expect("lattice is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb() -> SimulatedBlackbox {
        SimulatedBlackbox::default()
    }

    #[test]
    fn deterministic_and_prefix_consistent() {
        let c = Configuration::preset_p1();
        let full = bb().evaluate(EvaluationRequest::new(&c, 3));
        let again = bb().evaluate(EvaluationRequest::new(&c, 3));
        assert_eq!(full, again);
        assert_eq!(full.epochs_used, 200);
        let short = bb().evaluate(EvaluationRequest::new(&c, 3).epochs(25));
        assert_eq!(short.history.records(), &full.history.records()[..25]);
    }

    #[test]
    fn seed_changes_noise() {
        let c = Configuration::preset_p1();
        let a = bb().evaluate(EvaluationRequest::new(&c, 1));
        let b = bb().evaluate(EvaluationRequest::new(&c, 2));
        assert_ne!(a.history, b.history);
    }

    #[test]
    fn presets_train_reasonably() {
        for name in ["p1", "p2", "p3"] {
            let c = Configuration::preset(name).unwrap();
            let r = bb().evaluate(EvaluationRequest::new(&c, 0));
            assert!(
                r.final_val_accuracy > 0.7 && r.final_val_accuracy < 0.999,
                "{name}: {}",
                r.final_val_accuracy
            );
        }
    }

    #[test]
    fn collapsed_architecture_stays_at_chance() {
        let mut c = Configuration::preset_p1();
        c.conv_layers[0] = crate::space::ConvLayer::new(16, 7, 3, 0, 3);
        c.n_conv = 3;
        c.conv_layers = vec![c.conv_layers[0]; 3];
        let r = bb().evaluate(EvaluationRequest::new(&c, 0));
        assert!(r.history.records().iter().all(|e| e.val_accuracy == 0.1));
    }

    #[test]
    fn divergent_lr_peaks_early() {
        let mut c = Configuration::preset_p1();
        c.training.learning_rate = 1.0;
        let m = bb().model(&c, 0);
        assert!(m.divergent);
        let h = simulate_curve(&m, 50, 1.0);
        assert!(h.best_accuracy() < 0.4);
        assert!(h.records()[49].val_accuracy < 0.11);
    }

    #[test]
    fn lower_fraction_lowers_asymptote() {
        let c = Configuration::preset_p2();
        let m = SimulatedBlackbox::new(SimulatedTask::smooth()).model(&c, 0);
        assert!(m.mean_accuracy(200, 0.1) < m.mean_accuracy(200, 1.0));
        assert!(m.mean_accuracy(200, 0.1) > 0.1);
    }

    #[test]
    fn smooth_curves_are_monotone() {
        let bb = SimulatedBlackbox::new(SimulatedTask::smooth());
        for name in ["p1", "p2", "p3"] {
            let m = bb.model(&Configuration::preset(name).unwrap(), 5);
            assert!(!m.divergent && m.blowup_epoch.is_none());
            let h = simulate_curve(&m, 200, 1.0);
            assert!(h
                .records()
                .windows(2)
                .all(|w| w[1].val_accuracy >= w[0].val_accuracy));
            assert!((m.mean_accuracy(0, 1.0) - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn blowups_come_after_convergence() {
        let bb = SimulatedBlackbox::default();
        let c = Configuration::preset_p1();
        for seed in 0..20 {
            let m = bb.model(&c, seed);
            let b = m.blowup_epoch.expect("p1 steps are aggressive enough");
            assert!(b as f64 > 3.0 * m.tau);
            assert!(m.mean_accuracy(b + 10, 1.0) < 0.11);
        }
    }

    #[test]
    fn epoch_scale_shortens_training() {
        let mut c = Configuration::preset_p1();
        c.training.epoch_scale = 0.5;
        let r = bb().evaluate(EvaluationRequest::new(&c, 0));
        assert_eq!(r.epochs_used, 100);
        assert_eq!(r.wall_cost, 100.0);
    }

    #[test]
    fn invalid_configuration_fails() {
        let mut c = Configuration::preset_p1();
        c.training.dropout = 2.0;
        let r = bb().evaluate(EvaluationRequest::new(&c, 0));
        assert!(r.is_failed());
        assert_eq!(r.final_val_accuracy, EvaluationResult::WORST);
    }

    #[test]
    fn bad_fraction_fails() {
        let c = Configuration::preset_p1();
        assert!(bb()
            .evaluate(EvaluationRequest::new(&c, 0).fraction(0.0))
            .is_failed());
        assert!(bb()
            .evaluate(EvaluationRequest::new(&c, 0).epochs(0))
            .is_failed());
    }
}
