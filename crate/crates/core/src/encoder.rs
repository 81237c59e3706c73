//! Convolutional encoder mapping a 72 × 64 patch to a unit-norm embedding.
//!
//! Three blocks of `conv(6×4) → SELU → group norm → max pool` with pool
//! kernels (2,4), (3,4) and (3,2) reduce a patch along the ladder
//! 72×64 → 36×16 → 12×4 → 4×2. The result is flattened to `8·c3` values,
//! projected to [`EMBEDDING_DIM`] units, passed through SELU and
//! L2-normalized.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{lit, Gradients, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::frontend::{PatchSequence, PATCH_BINS, PATCH_COLS};
use crate::util::{push_f32s, read_file, write_atomic, ByteReader};

pub const EMBEDDING_DIM: usize = 128;
pub const KERNEL: (usize, usize) = (6, 4);
pub const POOLS: [(usize, usize); 3] = [(2, 4), (3, 4), (3, 2)];
/// Spatial size after every block, starting from the 72 × 64 input.
pub const SHAPE_LADDER: [(usize, usize); 4] = [(72, 64), (36, 16), (12, 4), (4, 2)];
/// Parameter count of the default (32, 64, 128) plan.
pub const DEFAULT_PARAM_COUNT: usize = 378_400;
/// Patches per forward pass in [`encode`].
const ENCODE_CHUNK: usize = 64;

pub const MODEL_MAGIC: &[u8; 4] = b"SSMN";
pub const MODEL_VERSION: u32 = 1;

/// Output channels of the three convolution blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self { c1: 32, c2: 64, c3: 128 }
    }
}

/// Name and shape of one parameter tensor, in storage order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ChannelPlan {
    pub fn new(c1: usize, c2: usize, c3: usize) -> Result<Self> {
        let plan = Self { c1, c2, c3 };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3].contains(&0) {
            return Err(Error::Config(format!("channel plan {self:?} has an empty layer")));
        }
        Ok(())
    }

    pub fn channels(&self) -> [usize; 3] {
        [self.c1, self.c2, self.c3]
    }

    /// Group-norm group count for a block with `channels` channels.
    pub fn groups(channels: usize) -> usize {
        channels.min(32)
    }

    /// Width of the flattened 4 × 2 × c3 feature map.
    pub fn fc_inputs(&self) -> usize {
        let (h, w) = SHAPE_LADDER[3];
        h * w * self.c3
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        let (kh, kw) = KERNEL;
        let mut specs = Vec::with_capacity(13);
        let mut c_in = 1;
        for (i, &c) in self.channels().iter().enumerate() {
            let b = i + 1;
            specs.push(ParamSpec::new(&format!("conv{b}.weight"), &[c, c_in, kh, kw]));
            specs.push(ParamSpec::new(&format!("conv{b}.bias"), &[c]));
            specs.push(ParamSpec::new(&format!("norm{b}.gamma"), &[c]));
            specs.push(ParamSpec::new(&format!("norm{b}.beta"), &[c]));
            c_in = c;
        }
        specs.push(ParamSpec::new("fc.weight", &[EMBEDDING_DIM, self.fc_inputs()]));
        specs.push(ParamSpec::new("fc.bias", &[EMBEDDING_DIM]));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ParamSpec::len).sum()
    }
}

/// All trainable encoder parameters as one flat vector in [`ChannelPlan::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    plan: ChannelPlan,
    seed: u64,
    values: Vec<F>,
}

impl<F: Real> EncoderParams<F> {
    pub fn from_values(plan: ChannelPlan, seed: u64, values: Vec<F>) -> Result<Self> {
        plan.validate()?;
        let expected = plan.param_count();
        if values.len() != expected {
            return Err(Error::Length(format!(
                "{} parameter values for a plan with {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(Self { plan, seed, values })
    }

    pub fn plan(&self) -> ChannelPlan {
        self.plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Mutable access for optimizers; callers keep the values finite.
    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parameter tensors in layout order.
    pub fn tensors(&self) -> Vec<ArrayD<F>> {
        let mut offset = 0;
        self.plan
            .layout()
            .iter()
            .map(|spec| {
                let n = spec.len();
                let t = ArrayD::from_shape_vec(IxDyn(&spec.shape), self.values[offset..offset + n].to_vec())
                    .expect("layout matches value count");
                offset += n;
                t
            })
            .collect()
    }

    pub fn cast<G: Real>(&self) -> EncoderParams<G> {
        EncoderParams {
            plan: self.plan,
            seed: self.seed,
            values: self.values.iter().map(|v| lit(v.to_f64().expect("finite"))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Fan-in scaled normal weights (`std = √(2 / fan_in)`), zero biases,
/// unit γ and zero β. Deterministic in `seed`.
pub fn init_params<F: Real>(plan: ChannelPlan, seed: u64) -> Result<EncoderParams<F>> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(plan.param_count());
    for spec in plan.layout() {
        let n = spec.len();
        if spec.name.ends_with(".weight") {
            let fan_in: usize = spec.shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            values.extend((0..n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                lit::<F>(z * std)
            }));
        } else if spec.name.ends_with(".gamma") {
            values.extend(std::iter::repeat(F::one()).take(n));
        } else {
            values.extend(std::iter::repeat(F::zero()).take(n));
        }
    }
    EncoderParams::from_values(plan, seed, values)
}

/// A forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct EncoderGraph {
    /// `[N, 128]` unit-norm embeddings.
    pub output: Var,
    /// One variable per parameter tensor, in layout order.
    pub params: Vec<Var>,
    /// Output of each convolution block (after pooling).
    pub blocks: Vec<Var>,
}

impl EncoderGraph {
    /// Flattens the parameter gradients back into layout order.
    pub fn flat_gradient<F: Real>(&self, grads: &mut Gradients<F>, n_params: usize) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(n_params);
        for &p in &self.params {
            let g = grads
                .take(p)
                .ok_or_else(|| Error::Tape("parameter received no gradient".into()))?;
            out.extend(g.iter().copied());
        }
        if out.len() != n_params {
            return Err(Error::Length(format!("{} gradient values for {n_params} parameters", out.len())));
        }
        Ok(out)
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Shape(msg) => Error::Shape(format!("{name}: {msg}")),
        other => other,
    })
}

fn check_spatial<F: Real>(tape: &Tape<F>, v: Var, name: &str, expected: (usize, usize)) -> Result<()> {
    let s = tape.value(v).shape();
    if s.len() != 4 || (s[2], s[3]) != expected {
        return Err(Error::Shape(format!("{name}: expected spatial size {expected:?}, got shape {s:?}")));
    }
    Ok(())
}

/// Records the encoder on `tape` for a batch `input: [N, 1, 72, 64]`.
/// With `trainable` the parameters are tape leaves and receive gradients.
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    params: &EncoderParams<F>,
    input: Array4<F>,
    trainable: bool,
) -> Result<EncoderGraph> {
    let dim = input.dim();
    if (dim.1, dim.2, dim.3) != (1, PATCH_BINS, PATCH_COLS) {
        return Err(Error::Shape(format!(
            "input: expected [N, 1, {PATCH_BINS}, {PATCH_COLS}], got {:?}",
            input.shape()
        )));
    }
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
        .collect();
    let mut x = tape.constant(input.into_dyn());
    let mut blocks = Vec::with_capacity(3);
    for (b, &c) in params.plan.channels().iter().enumerate() {
        let [w, bias, gamma, beta] = [vars[4 * b], vars[4 * b + 1], vars[4 * b + 2], vars[4 * b + 3]];
        let name = format!("block {}", b + 1);
        x = stage(&format!("{name} conv"), tape.conv2d(x, w, bias))?;
        x = tape.selu(x)?;
        x = stage(&format!("{name} norm"), tape.group_norm(x, gamma, beta, ChannelPlan::groups(c)))?;
        x = stage(&format!("{name} pool"), tape.max_pool2d(x, POOLS[b]))?;
        check_spatial(tape, x, &name, SHAPE_LADDER[b + 1])?;
        blocks.push(x);
    }
    x = tape.flatten(x)?;
    x = stage("fc", tape.linear(x, vars[12], vars[13]))?;
    x = tape.selu(x)?;
    let output = stage("l2 normalize", tape.l2_normalize(x))?;
    Ok(EncoderGraph {
        output,
        params: vars,
        blocks,
    })
}

/// Embeddings of one track, one unit-norm row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<F = f32> {
    pub track_id: String,
    vectors: Array2<F>,
}

impl<F: Real> EmbeddingSequence<F> {
    /// Rows must have unit norm within `1e-5`.
    pub fn new(track_id: impl Into<String>, vectors: Array2<F>) -> Result<Self> {
        let tol: F = lit(1e-5);
        for (i, row) in vectors.axis_iter(Axis(0)).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            if !((norm - F::one()).abs() <= tol) {
                return Err(Error::Domain(format!("embedding {i} has norm {norm}")));
            }
        }
        Ok(Self {
            track_id: track_id.into(),
            vectors,
        })
    }

    pub fn vectors(&self) -> &Array2<F> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

/// Embeds every patch (inference only, no gradients).
pub fn encode<F: Real>(
    track_id: &str,
    patches: &PatchSequence,
    params: &EncoderParams<F>,
) -> Result<EmbeddingSequence<F>> {
    let input = patches.to_tensor::<F>();
    let mut rows = Array2::<F>::zeros((patches.len(), EMBEDDING_DIM));
    let mut tape = Tape::new();
    for (start, chunk) in input.axis_chunks_iter(Axis(0), ENCODE_CHUNK).enumerate() {
        tape.reset();
        let graph = forward(&mut tape, params, chunk.to_owned(), false)?;
        let out = tape.value(graph.output);
        let n = chunk.len_of(Axis(0));
        let begin = start * ENCODE_CHUNK;
        rows.slice_mut(ndarray::s![begin..begin + n, ..])
            .assign(&out.view().into_dimensionality::<ndarray::Ix2>().expect("2-d output"));
    }
    EmbeddingSequence::new(track_id, rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    channel_plan: ChannelPlan,
    seed: u64,
    param_count: usize,
    layout: Vec<ParamSpec>,
    created_by: String,
    crc32: u32,
}

/// Serializes parameters to the `SSMN` model format.
pub fn params_to_bytes<F: Real>(params: &EncoderParams<F>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(params.len() * 4);
    let as_f32: Vec<f32> = params.values.iter().map(|v| v.to_f32().expect("finite")).collect();
    push_f32s(&mut payload, &as_f32);
    let header = ModelHeader {
        channel_plan: params.plan,
        seed: params.seed,
        param_count: params.len(),
        layout: params.plan.layout(),
        created_by: concat!("ssmnet ", env!("CARGO_PKG_VERSION")).to_string(),
        crc32: crc32fast::hash(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses an `SSMN` model, verifying version, layout and checksum.
pub fn params_from_bytes<F: Real>(bytes: &[u8]) -> Result<EncoderParams<F>> {
    let mut r = ByteReader::new(bytes);
    let truncated = || Error::Corrupt("model file is truncated".into());
    if r.take(4).ok_or_else(truncated)? != MODEL_MAGIC {
        return Err(Error::Format("not an SSMN model file".into()));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let header_len = r.u32().ok_or_else(truncated)? as usize;
    let header: ModelHeader = serde_json::from_slice(r.take(header_len).ok_or_else(truncated)?)
        .map_err(|e| Error::Corrupt(format!("model header: {e}")))?;
    header.channel_plan.validate()?;
    if header.layout != header.channel_plan.layout() || header.param_count != header.channel_plan.param_count() {
        return Err(Error::Corrupt("model header layout does not match its channel plan".into()));
    }
    if r.remaining() != header.param_count * 4 {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, expected {}",
            r.remaining(),
            header.param_count * 4
        )));
    }
    let payload = r.take(header.param_count * 4).ok_or_else(truncated)?;
    if crc32fast::hash(payload) != header.crc32 {
        return Err(Error::Corrupt("payload checksum mismatch".into()));
    }
    let values = ByteReader::new(payload)
        .f32s(header.param_count)
        .ok_or_else(truncated)?
        .into_iter()
        .map(|v| lit::<F>(v as f64))
        .collect();
    EncoderParams::from_values(header.channel_plan, header.seed, values)
}

pub fn save_params<F: Real>(params: &EncoderParams<F>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &params_to_bytes(params)?)
}

pub fn load_params<F: Real>(path: impl AsRef<Path>) -> Result<EncoderParams<F>> {
    params_from_bytes(&read_file(path.as_ref())?)
}
