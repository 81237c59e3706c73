//! Per-track objective: encoder → similarity matrix → weighted BCE, with its
//! parameter gradient, plus the end-to-end finite-difference check.

use ndarray::{Array4, Ix2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::diffcore::{gradcheck, GradCheckReport, Probe, Real, Tape};
use crate::encoder::{forward, init_params, ChannelPlan, EncoderParams};
use crate::error::Result;
use crate::frontend::{PATCH_BINS, PATCH_COLS};
use crate::loss::{weighted_bce, weighted_bce_grad, LossConfig, LossValue};
use crate::ssm::{similarity_backward, similarity_matrix, BinarySSM};

/// Loss of one track, its parameter gradient if requested, and the region
/// signature of the forward pass.
pub struct TrackObjective<F> {
    pub loss: LossValue,
    pub gradient: Option<Vec<F>>,
    pub region: u64,
}

/// Evaluates the loss of `input: [T, 1, 72, 64]` against `gt`.
pub fn track_objective<F: Real>(
    params: &EncoderParams<F>,
    input: Array4<F>,
    gt: &BinarySSM,
    loss_cfg: &LossConfig,
    with_gradient: bool,
) -> Result<TrackObjective<F>> {
    let mut tape = Tape::new();
    let graph = forward(&mut tape, params, input, with_gradient)?;
    let emb = tape
        .value(graph.output)
        .view()
        .into_dimensionality::<Ix2>()
        .expect("2-d embeddings");
    let est = similarity_matrix(emb)?;
    let loss = weighted_bce(&est, gt, loss_cfg)?;
    let region = tape.region_signature();
    let gradient = if with_gradient {
        let d_est = weighted_bce_grad(&est, gt, loss_cfg)?;
        let d_emb = similarity_backward(emb, d_est.view())?;
        let mut grads = tape.backward(graph.output, d_emb.into_dyn())?;
        Some(graph.flat_gradient(&mut grads, params.len())?)
    } else {
        None
    };
    Ok(TrackObjective { loss, gradient, region })
}

/// Compares the analytic parameter gradient of the full objective with
/// central differences at about `n_coords` randomly chosen parameters,
/// drawn evenly from every parameter tensor. Random
/// uniform patches and random labels are drawn from `seed`.
pub fn composite_gradcheck(
    plan: ChannelPlan,
    n_patches: usize,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params::<f64>(plan, seed)?;
    let unit = Uniform::new(0.0, 1.0);
    let input = Array4::from_shape_simple_fn((n_patches, 1, PATCH_BINS, PATCH_COLS), || unit.sample(&mut rng));
    let labels: Vec<usize> = (0..n_patches).map(|i| if i < 2 { i } else { i % 3 }).collect();
    let gt = BinarySSM::from_labels(&labels)?;
    let cfg = LossConfig::default();

    let base = track_objective(&params, input.clone(), &gt, &cfg, true)?;
    let analytic: Vec<f64> = base.gradient.expect("gradient requested");
    // spread the coordinates over every parameter tensor, small ones included
    let layout = plan.layout();
    let per_tensor = n_coords.div_ceil(layout.len()).max(1);
    let mut coords = Vec::new();
    let mut offset = 0;
    for spec in &layout {
        let n = spec.len();
        let mut picked = sample(&mut rng, n, per_tensor.min(n)).into_vec();
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|i| offset + i));
        offset += n;
    }

    let x = params.values().to_vec();
    let eval = |p: &[f64]| -> Result<Probe> {
        let probe = EncoderParams::from_values(plan, seed, p.to_vec())?;
        let r = track_objective(&probe, input.clone(), &gt, &cfg, false)?;
        Ok(Probe {
            value: r.loss.total,
            region: r.region,
        })
    };
    gradcheck(eval, &x, &analytic, &coords)
}
