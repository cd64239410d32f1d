//! The structural dual-chain model.
//!
//! A triplet `(h, r, t)` is stacked into a 3×k matrix of embeddings and run
//! through a shared scoring head: stride-3 convolution over the three rows,
//! ReLU, a fully-connected projection to the triplet representation `g`, and
//! a logistic readout. Training runs the head twice per triplet: once on the
//! matrix itself (primary chain) and once on a dropout-sparsified copy
//! (secondary chain). In eval mode every dropout is the identity, so both
//! chains produce the same score and only the primary one is used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::{Batch, Triplet};
use crate::numerics::ops::{conv_width, dropout_mask};
use crate::numerics::{Mode, Real, Tape, Tensor, Var};

/// Triplets scored per tape when evaluating large candidate lists.
pub const SCORE_CHUNK: usize = 2048;

/// Probability floor applied before every logarithm in the loss.
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdcDims {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Embedding width.
    pub k: usize,
    /// Number of 3×3 kernels.
    pub n_k: usize,
    /// Width of the triplet representation.
    pub d_g: usize,
}

impl CdcDims {
    pub fn conv_width(&self) -> usize {
        (self.k - 3) / 3 + 1
    }

    pub fn flat_len(&self) -> usize {
        self.n_k * self.conv_width()
    }

    pub fn validate(&self) -> Result<()> {
        conv_width(self.k).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_k == 0 || self.d_g == 0 {
            return Err(Error::Config("n_k and d_g must be positive".into()));
        }
        Ok(())
    }
}

/// Dropout rates of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// On the stacked triplet matrix.
    pub p_input: f64,
    /// On the flattened feature maps.
    pub p_flat: f64,
    /// On the triplet representation `g`.
    pub p_g: f64,
}

impl ChainConfig {
    pub const PRIMARY: ChainConfig = ChainConfig {
        p_input: 0.0,
        p_flat: 0.2,
        p_g: 0.2,
    };
    pub const SECONDARY: ChainConfig = ChainConfig {
        p_input: 0.2,
        p_flat: 0.2,
        p_g: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_input", self.p_input), ("p_flat", self.p_flat), ("p_g", self.p_g)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} is outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// The two chains used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualChainConfig {
    pub primary: ChainConfig,
    pub secondary: ChainConfig,
}

impl DualChainConfig {
    /// Both chains with dropout rate `p` in place of the default 0.2.
    pub fn with_rate(p: f64) -> Self {
        Self {
            primary: ChainConfig {
                p_input: 0.0,
                p_flat: p,
                p_g: p,
            },
            secondary: ChainConfig {
                p_input: p,
                p_flat: p,
                p_g: 0.0,
            },
        }
    }
}

impl Default for DualChainConfig {
    fn default() -> Self {
        Self {
            primary: ChainConfig::PRIMARY,
            secondary: ChainConfig::SECONDARY,
        }
    }
}

/// Every learnable tensor of the structural model.
#[derive(Debug, Clone, PartialEq)]
pub struct CdcParams<T> {
    pub dims: CdcDims,
    pub entity_emb: Tensor<T>,
    pub relation_emb: Tensor<T>,
    /// `[n_k, 9]`: kernel `c` row-major over its 3×3 window.
    pub kernels: Tensor<T>,
    pub kernel_bias: Tensor<T>,
    pub w_f: Tensor<T>,
    pub b_f: Tensor<T>,
    pub w_l: Tensor<T>,
    pub b_l: Tensor<T>,
}

pub const CDC_PARAM_NAMES: [&str; 8] = [
    "entity_emb",
    "relation_emb",
    "kernels",
    "kernel_bias",
    "w_f",
    "b_f",
    "w_l",
    "b_l",
];

impl<T: Real> CdcParams<T> {
    /// Glorot-uniform init: an m×n matrix is drawn from
    /// `U[-sqrt(6/(m+n)), sqrt(6/(m+n))]`; each kernel is a 3×3 matrix.
    /// Biases start at zero.
    pub fn init(dims: CdcDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let CdcDims {
            num_entities: e,
            num_relations: r,
            k,
            n_k,
            d_g,
        } = dims;
        let flat = dims.flat_len();
        Ok(Self {
            dims,
            entity_emb: Tensor::glorot_uniform(&[e, k], e, k, &mut rng),
            relation_emb: Tensor::glorot_uniform(&[r, k], r, k, &mut rng),
            kernels: Tensor::glorot_uniform(&[n_k, 9], 3, 3, &mut rng),
            kernel_bias: Tensor::zeros(&[n_k]),
            w_f: Tensor::glorot_uniform(&[flat, d_g], flat, d_g, &mut rng),
            b_f: Tensor::zeros(&[d_g]),
            w_l: Tensor::glorot_uniform(&[d_g, 1], d_g, 1, &mut rng),
            b_l: Tensor::zeros(&[1]),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        vec![
            &self.entity_emb,
            &self.relation_emb,
            &self.kernels,
            &self.kernel_bias,
            &self.w_f,
            &self.b_f,
            &self.w_l,
            &self.b_l,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.entity_emb,
            &mut self.relation_emb,
            &mut self.kernels,
            &mut self.kernel_bias,
            &mut self.w_f,
            &mut self.b_f,
            &mut self.w_l,
            &mut self.b_l,
        ]
    }

    /// Rebuilds parameters from tensors in [`CDC_PARAM_NAMES`] order.
    pub fn from_tensors(dims: CdcDims, mut ts: Vec<Tensor<T>>) -> Result<Self> {
        if ts.len() != CDC_PARAM_NAMES.len() {
            return Err(Error::Format(format!("expected 8 tensors, got {}", ts.len())));
        }
        let flat = dims.flat_len();
        let expected: [Vec<usize>; 8] = [
            vec![dims.num_entities, dims.k],
            vec![dims.num_relations, dims.k],
            vec![dims.n_k, 9],
            vec![dims.n_k],
            vec![flat, dims.d_g],
            vec![dims.d_g],
            vec![dims.d_g, 1],
            vec![1],
        ];
        for ((t, want), name) in ts.iter().zip(&expected).zip(CDC_PARAM_NAMES) {
            if t.shape() != want.as_slice() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        let mut it = ts.drain(..);
        let mut next = || it.next().unwrap();
        Ok(Self {
            dims,
            entity_emb: next(),
            relation_emb: next(),
            kernels: next(),
            kernel_bias: next(),
            w_f: next(),
            b_f: next(),
            w_l: next(),
            b_l: next(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub(crate) fn check_ids(&self, t: &Triplet) -> Result<()> {
        if t.h >= self.dims.num_entities || t.t >= self.dims.num_entities {
            return Err(Error::Shape(format!("entity id out of range in {t:?}")));
        }
        if t.r >= self.dims.num_relations {
            return Err(Error::Shape(format!("relation id out of range in {t:?}")));
        }
        Ok(())
    }
}

/// Stacked `[v_h; v_r; v_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletMatrix<T>(pub Tensor<T>);

pub fn stack_triplet<T: Real>(h: usize, r: usize, t: usize, params: &CdcParams<T>) -> TripletMatrix<T> {
    let k = params.dims.k;
    let mut data = Vec::with_capacity(3 * k);
    data.extend_from_slice(params.entity_emb.row(h));
    data.extend_from_slice(params.relation_emb.row(r));
    data.extend_from_slice(params.entity_emb.row(t));
    TripletMatrix(Tensor::from_vec(&[3, k], data).unwrap())
}

/// Tape handles of the shared scoring head.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadVars {
    pub kernels: Var,
    pub kernel_bias: Var,
    pub w_f: Var,
    pub b_f: Var,
    pub w_l: Var,
    pub b_l: Var,
}

/// Tape handles of every CDC parameter, in [`CDC_PARAM_NAMES`] order.
pub(crate) struct CdcVars {
    pub entity: Var,
    pub relation: Var,
    pub head: HeadVars,
}

impl CdcVars {
    pub fn register<'a, T: Real>(tape: &mut Tape<'a, T>, p: &'a CdcParams<T>) -> Self {
        let entity = tape.param(&p.entity_emb);
        let relation = tape.param(&p.relation_emb);
        let head = HeadVars {
            kernels: tape.param(&p.kernels),
            kernel_bias: tape.param(&p.kernel_bias),
            w_f: tape.param(&p.w_f),
            b_f: tape.param(&p.b_f),
            w_l: tape.param(&p.w_l),
            b_l: tape.param(&p.b_l),
        };
        Self { entity, relation, head }
    }

    pub fn all(&self) -> [Var; 8] {
        let h = &self.head;
        [
            self.entity,
            self.relation,
            h.kernels,
            h.kernel_bias,
            h.w_f,
            h.b_f,
            h.w_l,
            h.b_l,
        ]
    }

    /// `[B, 3, k]` structural matrices for `triplets`.
    pub fn stack<T: Real>(&self, tape: &mut Tape<'_, T>, triplets: &[Triplet]) -> Var {
        let hs: Vec<usize> = triplets.iter().map(|t| t.h).collect();
        let rs: Vec<usize> = triplets.iter().map(|t| t.r).collect();
        let ts: Vec<usize> = triplets.iter().map(|t| t.t).collect();
        let h = tape.gather(self.entity, &hs);
        let r = tape.gather(self.relation, &rs);
        let t = tape.gather(self.entity, &ts);
        tape.stack3(h, r, t)
    }
}

/// Output of one chain over a batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChainOut {
    /// Triplet representation before its dropout, `[B, d_g]`.
    pub g: Var,
    /// Scores, `[B, 1]`.
    pub s: Var,
}

/// Runs the shared head over stacked matrices `m` (`[B, 3, k]`).
pub(crate) fn run_chain<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    head: &HeadVars,
    m: Var,
    cfg: &ChainConfig,
    mode: Mode,
    rng: &mut R,
) -> ChainOut {
    let n = tape.value(m).len();
    let x = tape.mask(m, dropout_mask(n, cfg.p_input, mode, rng));
    let conv = tape.conv_stride3(x, head.kernels, head.kernel_bias);
    let f = tape.relu(conv);
    let n = tape.value(f).len();
    let f = tape.mask(f, dropout_mask(n, cfg.p_flat, mode, rng));
    let pre = tape.affine(f, head.w_f, Some(head.b_f));
    let g = tape.relu(pre);
    let n = tape.value(g).len();
    let gd = tape.mask(g, dropout_mask(n, cfg.p_g, mode, rng));
    let logit = tape.affine(gd, head.w_l, Some(head.b_l));
    let s = tape.sigmoid(logit);
    ChainOut { g, s }
}

/// Single-triplet chain: returns `(g, s)`.
pub fn chain_forward<T: Real, R: Rng + ?Sized>(
    m: &TripletMatrix<T>,
    params: &CdcParams<T>,
    cfg: &ChainConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, T)> {
    cfg.validate()?;
    let k = params.dims.k;
    if m.0.shape() != [3, k] {
        return Err(Error::Shape(format!(
            "triplet matrix {:?}, expected [3, {k}]",
            m.0.shape()
        )));
    }
    let mut tape = Tape::new();
    let vars = CdcVars::register(&mut tape, params);
    let input = tape.constant(m.0.clone().reshape(&[1, 3, k])?);
    let out = run_chain(&mut tape, &vars.head, input, cfg, mode, rng);
    Ok((tape.value(out.g).data().to_vec(), tape.scalar(out.s)))
}

/// Scores `(s, s^s)` from the primary and secondary chains.
pub fn dual_forward<T: Real, R: Rng + ?Sized>(
    triplets: &[Triplet],
    params: &CdcParams<T>,
    chains: &DualChainConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    for t in triplets {
        params.check_ids(t)?;
    }
    let mut tape = Tape::new();
    let vars = CdcVars::register(&mut tape, params);
    let m = vars.stack(&mut tape, triplets);
    let primary = run_chain(&mut tape, &vars.head, m, &chains.primary, mode, rng);
    let secondary = run_chain(&mut tape, &vars.head, m, &chains.secondary, mode, rng);
    Ok((
        tape.value(primary.s).data().to_vec(),
        tape.value(secondary.s).data().to_vec(),
    ))
}

/// Eval-mode primary-chain scores.
pub fn score_batch<T: Real>(triplets: &[Triplet], params: &CdcParams<T>) -> Result<Vec<T>> {
    for t in triplets {
        params.check_ids(t)?;
    }
    let mut out = Vec::with_capacity(triplets.len());
    // Eval mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in triplets.chunks(SCORE_CHUNK) {
        let mut tape = Tape::new();
        let vars = CdcVars::register(&mut tape, params);
        let m = vars.stack(&mut tape, chunk);
        let chain = run_chain(&mut tape, &vars.head, m, &ChainConfig::PRIMARY, Mode::Eval, &mut rng);
        out.extend_from_slice(tape.value(chain.s).data());
    }
    Ok(out)
}

pub fn score<T: Real>(h: usize, r: usize, t: usize, params: &CdcParams<T>) -> Result<T> {
    Ok(score_batch(&[Triplet::new(h, r, t)], params)?[0])
}

/// Smoothed targets `(y⁺, y⁻) = (1 - ε/2, ε/2)`.
pub fn smoothed_targets(epsilon: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::Config(format!("label smoothing {epsilon} is outside [0, 0.5)")));
    }
    Ok((1.0 - epsilon / 2.0, epsilon / 2.0))
}

pub(crate) fn batch_targets<T: Real>(batch: &Batch, epsilon: f64) -> Result<Vec<T>> {
    let (pos, neg) = smoothed_targets(epsilon)?;
    let mut y = vec![T::of(pos); batch.positives.len()];
    y.extend(std::iter::repeat_n(T::of(neg), batch.negatives.len()));
    Ok(y)
}

/// Cross-entropy over positives and negatives, summed over both chains.
///
/// Returns the loss and one gradient per tensor, in [`CDC_PARAM_NAMES`]
/// order.
pub fn loss_batch<T: Real, R: Rng + ?Sized>(
    batch: &Batch,
    params: &CdcParams<T>,
    chains: &DualChainConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<(T, Vec<Tensor<T>>)> {
    chains.primary.validate()?;
    chains.secondary.validate()?;
    let all: Vec<Triplet> = batch.all().copied().collect();
    for t in &all {
        params.check_ids(t)?;
    }
    let targets = batch_targets::<T>(batch, epsilon)?;
    let mut tape = Tape::new().with_clamp(T::of(SCORE_CLAMP));
    let vars = CdcVars::register(&mut tape, params);
    let m = vars.stack(&mut tape, &all);
    let primary = run_chain(&mut tape, &vars.head, m, &chains.primary, Mode::Train, rng);
    let secondary = run_chain(&mut tape, &vars.head, m, &chains.secondary, Mode::Train, rng);
    let l1 = tape.bce(primary.s, targets.clone());
    let l2 = tape.bce(secondary.s, targets);
    let loss = tape.sum(&[l1, l2]);
    let mut grads = tape.backward(loss);
    let gs = vars.all().iter().map(|&v| grads.take(v)).collect();
    Ok((tape.scalar(loss), gs))
}
