//! Central finite-difference gradient checking.

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One evaluation of a scalar function: its value and an identifier of the
/// smooth piece it was evaluated on (see [`Tape::region_signature`]).
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub value: f64,
    pub region: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h probes straddle a kink (pooling tie, SELU at 0).
    pub skipped: usize,
    /// Coordinates where both derivatives are below [`resolution`], i.e.
    /// zero as far as central differences can tell.
    pub unresolved: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.unresolved += other.unresolved;
    }
}

/// Relative error used throughout: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Smallest derivative a central difference with step `h` can resolve at
/// function value `value`: rounding of `f(x ± h)` alone contributes about
/// `ε·|f| / h`, and the factor 64 covers rounding accumulated inside `f`.
pub fn resolution(value: f64, h: f64) -> f64 {
    64.0 * f64::EPSILON * value.abs().max(1.0) / h
}

/// Compares `analytic[i]` with `(f(x + h e_i) − f(x − h e_i)) / 2h`,
/// `h = 1e-5 · (1 + |x_i|)`, for every `i` in `coords`.
pub fn gradcheck<E>(mut f: E, x: &[f64], analytic: &[f64], coords: &[usize]) -> Result<GradCheckReport>
where
    E: FnMut(&[f64]) -> Result<Probe>,
{
    if x.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "gradcheck: {} inputs but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient entry {i} is {}", analytic[i])));
    }
    let base = f(x)?;
    let mut report = GradCheckReport::default();
    let mut probe = x.to_vec();
    for &i in coords {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if plus.region != base.region || minus.region != base.region {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(Error::NonFinite(format!("numeric derivative at {i} is {numeric}")));
        }
        if analytic[i].abs().max(numeric.abs()) < resolution(base.value, h) {
            report.unresolved += 1;
            continue;
        }
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    Ok(report)
}

/// Checks the gradient of `Σ w ⊙ op(inputs)` w.r.t. all inputs, at `points`
/// random locations.
fn check_op<B>(shapes: &[&[usize]], build: B, rng: &mut ChaCha8Rng, points: usize) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let record = |tape: &mut Tape<f64>, flat: &[f64]| -> Result<(Vec<Var>, Var)> {
        let mut vars = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (shape, &n) in shapes.iter().zip(&sizes) {
            let t = Tensor::from_shape_vec(IxDyn(shape), flat[off..off + n].to_vec()).expect("sized");
            vars.push(tape.leaf(t));
            off += n;
        }
        let out = build(tape, &vars)?;
        Ok((vars, out))
    };

    let mut report = GradCheckReport::default();
    for _ in 0..points {
        let x: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
        let mut tape = Tape::new();
        let (vars, out) = record(&mut tape, &x)?;
        let weights: Tensor<f64> =
            Tensor::from_shape_simple_fn(tape.value(out).raw_dim(), || StandardNormal.sample(rng));
        let mut grads = tape.backward(out, weights.clone())?;
        let analytic: Vec<f64> = vars
            .iter()
            .flat_map(|&v| grads.take(v).expect("leaf gradient").into_iter())
            .collect();

        let eval = |p: &[f64]| -> Result<Probe> {
            let mut tape = Tape::new();
            let (_, out) = record(&mut tape, p)?;
            let value = (tape.value(out) * &weights).sum();
            Ok(Probe {
                value,
                region: tape.region_signature(),
            })
        };
        let coords: Vec<usize> = (0..total).collect();
        report.merge(&gradcheck(eval, &x, &analytic, &coords)?);
    }
    Ok(report)
}

/// Runs the gradient check for every primitive at `points` random inputs.
pub fn primitive_suite(seed: u64, points: usize) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.push((
        "conv2d",
        check_op(&[&[2, 2, 7, 5], &[3, 2, 6, 4], &[3]], |t, v| t.conv2d(v[0], v[1], v[2]), &mut rng, points)?,
    ));
    out.push(("selu", check_op(&[&[3, 4]], |t, v| t.selu(v[0]), &mut rng, points)?));
    out.push((
        "group_norm",
        check_op(
            &[&[2, 4, 3, 3], &[4], &[4]],
            |t, v| t.group_norm(v[0], v[1], v[2], 2),
            &mut rng,
            points,
        )?,
    ));
    out.push((
        "max_pool2d",
        check_op(&[&[1, 2, 6, 4]], |t, v| t.max_pool2d(v[0], (2, 2)), &mut rng, points)?,
    ));
    out.push((
        "linear",
        check_op(&[&[1, 5], &[3, 5], &[3]], |t, v| t.linear(v[0], v[1], v[2]), &mut rng, points)?,
    ));
    out.push(("l2_normalize", check_op(&[&[1, 8]], |t, v| t.l2_normalize(v[0]), &mut rng, points)?));
    Ok(out)
}
