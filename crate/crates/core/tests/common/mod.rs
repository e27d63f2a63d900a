#![allow(dead_code)]

use mads_hpo::space::{Configuration, ConvLayer, Optimizer, SpaceBounds, TrainingParams};
use proptest::prelude::*;

fn conv_layer() -> impl Strategy<Value = ConvLayer> {
    (1u32..=128, 1u32..=7, 1u32..=3, 0u32..=3, 1u32..=3)
        .prop_map(|(c, k, s, p, pool)| ConvLayer::new(c, k, s, p, pool))
}

fn training() -> impl Strategy<Value = TrainingParams> {
    (
        (-5.0f64..0.0).prop_map(|e| 10f64.powf(e)),
        16u32..=512,
        0.0f64..0.95,
        0.0f64..0.1,
        0.0f64..0.99,
        0.1f64..1.0,
        0.1f64..10.0,
        0.0f64..0.3,
        0.25f64..1.0,
    )
        .prop_map(|(lr, bs, d, wd, m, ld, gc, ls, es)| TrainingParams {
            learning_rate: lr,
            batch_size: f64::from(bs),
            dropout: d,
            weight_decay: wd,
            momentum: m,
            lr_decay: ld,
            grad_clip: gc,
            label_smoothing: ls,
            epoch_scale: es,
        })
}

/// Valid configurations under the default bounds, snapped to the default
/// granularities.
pub fn configuration() -> impl Strategy<Value = Configuration> {
    (
        prop::collection::vec(conv_layer(), 0..=4),
        prop::collection::vec(1u32..=1024, 0..=3),
        prop::sample::select(Optimizer::ALL.to_vec()),
        training(),
    )
        .prop_map(|(conv, fc, optimizer, training)| {
            let c = Configuration {
                n_conv: conv.len(),
                conv_layers: conv,
                n_fc: fc.len(),
                fc_sizes: fc.into_iter().map(f64::from).collect(),
                optimizer,
                training,
            };
            snap(&c)
        })
}

/// Rounds real slots to their granularity so the result validates.
pub fn snap(c: &Configuration) -> Configuration {
    let bounds = SpaceBounds::default();
    let values: Vec<f64> = c
        .slots()
        .iter()
        .zip(c.values())
        .map(|(s, v)| {
            let b = bounds.slot(s.kind);
            let g = b.granularity;
            ((v / g).round() * g).clamp(b.lower, b.upper)
        })
        .collect();
    c.with_values(&values)
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| (x - mean) * (y - mean))
        .sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}
