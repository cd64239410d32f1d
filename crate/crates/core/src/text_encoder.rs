//! Description-augmented model: entity embeddings encoded from text.
//!
//! A description is a fixed-length sequence of word vectors `D_e`
//! (`L × d_w`). Structure attention condenses it to `a` aspects,
//! `A_e = softmax(V tanh(U D_eᵀ))` and `L_e = A_e D_e`, and a two-layer CNN
//! (conv, ReLU, max-pool, conv, ReLU, mean-pool) maps `L_e` to a k-vector.
//! Triplets are scored by the structural chain and by a textual chain that
//! feeds `[v_h^d; v_r^d; v_t^d]` through the same scoring head; the output
//! is the mean of the two scores.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cdc::{batch_targets, run_chain, CdcParams, CdcVars, ChainConfig, HeadVars, SCORE_CHUNK, SCORE_CLAMP};
use crate::error::{Error, Result};
use crate::kgdata::{Batch, DescriptionTable, Triplet, WordEmbeddingTable};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::{Mode, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDims {
    /// Word-table rows, including padding and unknown.
    pub words: usize,
    pub d_w: usize,
    /// Attention hidden width.
    pub d_a: usize,
    /// Number of attention aspects (rows of `L_e`).
    pub aspects: usize,
    /// First-layer filters.
    pub n_1: usize,
    /// First-layer window, in aspect rows.
    pub w_1: usize,
    /// Max-pool window after the first layer.
    pub pool: usize,
    /// Second-layer window.
    pub w_2: usize,
    /// Output width; equals the structural embedding width.
    pub k: usize,
    pub num_relations: usize,
}

impl TextDims {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.aspects == 0 || self.d_a == 0 || self.n_1 == 0 || self.k == 0 {
            return bad("text encoder widths must be positive".into());
        }
        if self.w_1 == 0 || self.w_1 > self.aspects {
            return bad(format!("conv1 window {} needs 1..={} aspects", self.w_1, self.aspects));
        }
        if self.pool == 0 {
            return bad("pool window must be positive".into());
        }
        let pooled = self.pooled_len();
        if self.w_2 == 0 || self.w_2 > pooled {
            return bad(format!("conv2 window {} exceeds pooled length {pooled}", self.w_2));
        }
        Ok(())
    }

    pub fn conv1_len(&self) -> usize {
        self.aspects - self.w_1 + 1
    }

    pub fn pooled_len(&self) -> usize {
        self.conv1_len().div_ceil(self.pool)
    }

    pub fn conv2_len(&self) -> usize {
        self.pooled_len() - self.w_2 + 1
    }
}

/// Settings of the description-augmented model outside its tensor shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    /// Dropout on both triplet representations during training.
    pub p_g: f64,
    /// Dropout on the flattened feature maps of both chains.
    pub p_flat: f64,
    /// Weight of the ℓ1 coupling between structural and textual `g`.
    pub l1_weight: f64,
    /// Use the structural relation embedding in the textual chain instead of
    /// a separate table.
    pub tie_relations: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            p_g: 0.2,
            p_flat: 0.2,
            l1_weight: 1.0,
            tie_relations: false,
        }
    }
}

impl TextConfig {
    fn chain(&self) -> ChainConfig {
        ChainConfig {
            p_input: 0.0,
            p_flat: self.p_flat,
            p_g: self.p_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams<T> {
    pub dims: TextDims,
    pub word_emb: Tensor<T>,
    /// `Uᵀ`, `[d_w, d_a]`.
    pub attn_u: Tensor<T>,
    /// `Vᵀ`, `[d_a, a]`.
    pub attn_v: Tensor<T>,
    /// `[w_1 * d_w, n_1]`.
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    /// `[w_2 * n_1, k]`.
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    /// Textual relation embeddings `[R, k]`.
    pub relation_txt: Tensor<T>,
}

pub const TEXT_PARAM_NAMES: [&str; 8] = [
    "word_emb",
    "attn_u",
    "attn_v",
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "relation_txt",
];

impl<T: Real> TextEncoderParams<T> {
    /// Word rows come from `words`; every other matrix is Glorot-uniform and
    /// biases start at zero.
    pub fn init(dims: TextDims, words: &WordEmbeddingTable, seed: u64) -> Result<Self> {
        dims.validate()?;
        if words.rows() != dims.words || words.dim() != dims.d_w {
            return Err(Error::Config(format!(
                "word table is {}×{}, encoder expects {}×{}",
                words.rows(),
                words.dim(),
                dims.words,
                dims.d_w
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let TextDims {
            d_w,
            d_a,
            aspects,
            n_1,
            w_1,
            w_2,
            k,
            num_relations,
            ..
        } = dims;
        Ok(Self {
            dims,
            word_emb: Tensor::from_f64(&[dims.words, d_w], words.matrix())?,
            attn_u: Tensor::glorot_uniform(&[d_w, d_a], d_w, d_a, &mut rng),
            attn_v: Tensor::glorot_uniform(&[d_a, aspects], d_a, aspects, &mut rng),
            conv1_w: Tensor::glorot_uniform(&[w_1 * d_w, n_1], w_1 * d_w, n_1, &mut rng),
            conv1_b: Tensor::zeros(&[n_1]),
            conv2_w: Tensor::glorot_uniform(&[w_2 * n_1, k], w_2 * n_1, k, &mut rng),
            conv2_b: Tensor::zeros(&[k]),
            relation_txt: Tensor::glorot_uniform(&[num_relations, k], num_relations, k, &mut rng),
        })
    }

    /// Structure attention over `entity`'s description.
    pub fn attend(&self, entity: usize, descs: &DescriptionTable) -> Result<AttendedDescription<T>> {
        let d = description_matrix(entity, descs, self)?;
        structure_attention(&d, &self.attn_u.transpose()?, &self.attn_v.transpose()?)
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        vec![
            &self.word_emb,
            &self.attn_u,
            &self.attn_v,
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.relation_txt,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.word_emb,
            &mut self.attn_u,
            &mut self.attn_v,
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.relation_txt,
        ]
    }

    pub fn from_tensors(dims: TextDims, ts: Vec<Tensor<T>>) -> Result<Self> {
        let expected: [Vec<usize>; 8] = [
            vec![dims.words, dims.d_w],
            vec![dims.d_w, dims.d_a],
            vec![dims.d_a, dims.aspects],
            vec![dims.w_1 * dims.d_w, dims.n_1],
            vec![dims.n_1],
            vec![dims.w_2 * dims.n_1, dims.k],
            vec![dims.k],
            vec![dims.num_relations, dims.k],
        ];
        if ts.len() != expected.len() {
            return Err(Error::Format(format!("expected 8 text tensors, got {}", ts.len())));
        }
        for ((t, want), name) in ts.iter().zip(&expected).zip(TEXT_PARAM_NAMES) {
            if t.shape() != want.as_slice() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().unwrap();
        Ok(Self {
            dims,
            word_emb: next(),
            attn_u: next(),
            attn_v: next(),
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            relation_txt: next(),
        })
    }
}

/// Attention weights and attended matrix of one description.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedDescription<T> {
    /// `A_e`, `[a, L]`; rows sum to one.
    pub weights: Tensor<T>,
    /// `L_e = A_e D_e`, `[a, d_w]`.
    pub attended: Tensor<T>,
}

/// Structure attention for one description matrix `d_e` (`[L, d_w]`), with
/// `u` of shape `[d_a, d_w]` and `v` of shape `[a, d_a]`.
pub fn structure_attention<T: Real>(d_e: &Tensor<T>, u: &Tensor<T>, v: &Tensor<T>) -> Result<AttendedDescription<T>> {
    let (l, d_w) = matrix_dims(d_e)?;
    let (d_a, du) = matrix_dims(u)?;
    let (a, dv) = matrix_dims(v)?;
    if du != d_w || dv != d_a {
        return Err(Error::Shape(format!(
            "attention shapes D {:?}, U {:?}, V {:?} do not conform",
            d_e.shape(),
            u.shape(),
            v.shape()
        )));
    }
    // H = tanh(U Dᵀ), [d_a, L]
    let mut h = vec![T::zero(); d_a * l];
    T::gemm(
        d_a,
        d_w,
        l,
        T::one(),
        u.data(),
        d_w as isize,
        1,
        d_e.data(),
        1,
        d_w as isize,
        T::zero(),
        &mut h,
        l as isize,
        1,
    );
    h.iter_mut().for_each(|x| *x = x.tanh());
    // A = softmax_rows(V H), [a, L]
    let mut weights = vec![T::zero(); a * l];
    T::gemm(
        a,
        d_a,
        l,
        T::one(),
        v.data(),
        d_a as isize,
        1,
        &h,
        l as isize,
        1,
        T::zero(),
        &mut weights,
        l as isize,
        1,
    );
    for row in weights.chunks_mut(l) {
        softmax_in_place(row);
    }
    let mut attended = vec![T::zero(); a * d_w];
    T::gemm(
        a,
        l,
        d_w,
        T::one(),
        &weights,
        l as isize,
        1,
        d_e.data(),
        d_w as isize,
        1,
        T::zero(),
        &mut attended,
        d_w as isize,
        1,
    );
    Ok(AttendedDescription {
        weights: Tensor::from_vec(&[a, l], weights)?,
        attended: Tensor::from_vec(&[a, d_w], attended)?,
    })
}

fn matrix_dims<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("expected a matrix, got {s:?}"))),
    }
}

/// Description matrix `D_e` of `entity` from the current word table.
pub fn description_matrix<T: Real>(
    entity: usize,
    descs: &DescriptionTable,
    params: &TextEncoderParams<T>,
) -> Result<Tensor<T>> {
    let d = descs
        .get(entity)
        .ok_or_else(|| Error::MissingDescription(entity.to_string()))?;
    let d_w = params.dims.d_w;
    let mut data = Vec::with_capacity(d.tokens.len() * d_w);
    for &tok in &d.tokens {
        data.extend_from_slice(params.word_emb.row(tok));
    }
    Tensor::from_vec(&[d.tokens.len(), d_w], data)
}

/// Tape handles of the text-encoder tensors, in [`TEXT_PARAM_NAMES`] order.
pub(crate) struct TextVars {
    word: Var,
    u: Var,
    v: Var,
    c1w: Var,
    c1b: Var,
    c2w: Var,
    c2b: Var,
    relation: Var,
}

impl TextVars {
    pub fn register<'a, T: Real>(tape: &mut Tape<'a, T>, p: &'a TextEncoderParams<T>) -> Self {
        Self {
            word: tape.param(&p.word_emb),
            u: tape.param(&p.attn_u),
            v: tape.param(&p.attn_v),
            c1w: tape.param(&p.conv1_w),
            c1b: tape.param(&p.conv1_b),
            c2w: tape.param(&p.conv2_w),
            c2b: tape.param(&p.conv2_b),
            relation: tape.param(&p.relation_txt),
        }
    }

    pub fn all(&self) -> [Var; 8] {
        [
            self.word,
            self.u,
            self.v,
            self.c1w,
            self.c1b,
            self.c2w,
            self.c2b,
            self.relation,
        ]
    }

    /// Encodes `entities` to `[n, k]` description embeddings.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        dims: &TextDims,
        entities: &[usize],
        descs: &DescriptionTable,
        names: impl Fn(usize) -> String,
    ) -> Result<Var> {
        let l = descs.desc_len();
        let mut tokens = Vec::with_capacity(entities.len() * l);
        for &e in entities {
            let d = descs.get(e).ok_or_else(|| Error::MissingDescription(names(e)))?;
            tokens.extend_from_slice(&d.tokens);
        }
        let n = entities.len();
        let flat = tape.gather(self.word, &tokens);
        let d = tape.reshape(flat, &[n, l, dims.d_w]);
        let proj = tape.affine(d, self.u, None);
        let hidden = tape.tanh(proj);
        let logits = tape.affine(hidden, self.v, None); // [n, L, a]
        let attn = tape.softmax_mid(logits);
        let attended = tape.attn_pool(attn, d); // [n, a, d_w]
        let c1 = tape.conv1d_rows(attended, self.c1w, self.c1b, dims.w_1);
        let c1 = tape.relu(c1);
        let pooled = tape.max_pool(c1, dims.pool);
        let c2 = tape.conv1d_rows(pooled, self.c2w, self.c2b, dims.w_2);
        let c2 = tape.relu(c2);
        Ok(tape.mean_pool(c2))
    }
}

/// Two-layer CNN over an attended matrix `L_e`, giving `v^d` of length k.
pub fn encode_description<T: Real>(att: &AttendedDescription<T>, params: &TextEncoderParams<T>) -> Result<Vec<T>> {
    let dims = &params.dims;
    if att.attended.shape() != [dims.aspects, dims.d_w] {
        return Err(Error::Shape(format!(
            "attended matrix {:?}, expected [{}, {}]",
            att.attended.shape(),
            dims.aspects,
            dims.d_w
        )));
    }
    let mut tape = Tape::new();
    let c1w = tape.param(&params.conv1_w);
    let c1b = tape.param(&params.conv1_b);
    let c2w = tape.param(&params.conv2_w);
    let c2b = tape.param(&params.conv2_b);
    let x = tape.constant(att.attended.clone().reshape(&[1, dims.aspects, dims.d_w])?);
    let c1 = tape.conv1d_rows(x, c1w, c1b, dims.w_1);
    let c1 = tape.relu(c1);
    let pooled = tape.max_pool(c1, dims.pool);
    let c2 = tape.conv1d_rows(pooled, c2w, c2b, dims.w_2);
    let c2 = tape.relu(c2);
    let out = tape.mean_pool(c2);
    Ok(tape.value(out).data().to_vec())
}

/// Structural parameters, text-encoder parameters and settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CdcPlusModel<T> {
    pub cdc: CdcParams<T>,
    pub text: TextEncoderParams<T>,
    pub config: TextConfig,
}

/// Per-triplet outputs of [`cdcplus_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct CdcPlusOutput<T> {
    /// Structural triplet representations `g^u`, `[B, d_g]`.
    pub g_str: Tensor<T>,
    /// Textual triplet representations `g^d`, `[B, d_g]`.
    pub g_txt: Tensor<T>,
    pub s_str: Vec<T>,
    pub s_txt: Vec<T>,
    /// `0.5 * (s_str + s_txt)`.
    pub s: Vec<T>,
}

struct PlusGraph {
    structural: crate::cdc::ChainOut,
    textual: crate::cdc::ChainOut,
    combined: Var,
}

/// Distinct entities of `triplets` in first-seen order, and each triplet's
/// head/tail position in that list.
fn unique_entities(triplets: &[Triplet]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut pos = HashMap::new();
    let mut order = Vec::new();
    let mut slot = |e: usize| {
        *pos.entry(e).or_insert_with(|| {
            order.push(e);
            order.len() - 1
        })
    };
    let hs = triplets.iter().map(|t| slot(t.h)).collect();
    let ts = triplets.iter().map(|t| slot(t.t)).collect();
    (order, hs, ts)
}

impl<T: Real> CdcPlusModel<T> {
    pub fn new(cdc: CdcParams<T>, text: TextEncoderParams<T>, config: TextConfig) -> Result<Self> {
        if text.dims.k != cdc.dims.k {
            return Err(Error::Config(format!(
                "text encoder width {} differs from embedding width {}",
                text.dims.k, cdc.dims.k
            )));
        }
        if text.dims.num_relations != cdc.dims.num_relations {
            return Err(Error::Config("relation counts differ between chains".into()));
        }
        Ok(Self { cdc, text, config })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.cdc.tensors();
        v.extend(self.text.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.cdc.tensors_mut();
        v.extend(self.text.tensors_mut());
        v
    }

    /// Checks that every entity of `triplets` has a description.
    pub fn check_descriptions(&self, triplets: &[Triplet], descs: &DescriptionTable) -> Result<()> {
        for t in triplets {
            self.cdc.check_ids(t)?;
            for e in [t.h, t.t] {
                if !descs.has(e) {
                    return Err(Error::MissingDescription(e.to_string()));
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn graph<'a, R: Rng + ?Sized>(
        &'a self,
        tape: &mut Tape<'a, T>,
        cdc: &CdcVars,
        txt: &TextVars,
        triplets: &[Triplet],
        descs: &DescriptionTable,
        mode: Mode,
        rng: &mut R,
    ) -> Result<PlusGraph> {
        let m = cdc.stack(tape, triplets);
        let (entities, hpos, tpos) = unique_entities(triplets);
        let vd = txt.encode(tape, &self.text.dims, &entities, descs, |e| e.to_string())?;
        let rs: Vec<usize> = triplets.iter().map(|t| t.r).collect();
        let vh = tape.gather(vd, &hpos);
        let rel_table = if self.config.tie_relations {
            cdc.relation
        } else {
            txt.relation
        };
        let vr = tape.gather(rel_table, &rs);
        let vt = tape.gather(vd, &tpos);
        let mt = tape.stack3(vh, vr, vt);
        let cfg = self.config.chain();
        let structural = run_chain(tape, &cdc.head, m, &cfg, mode, rng);
        let textual = run_chain(tape, &cdc.head, mt, &cfg, mode, rng);
        let combined = tape.mean2(structural.s, textual.s);
        Ok(PlusGraph {
            structural,
            textual,
            combined,
        })
    }

    /// Both chains and the combined score for `triplets`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        triplets: &[Triplet],
        descs: &DescriptionTable,
        mode: Mode,
        rng: &mut R,
    ) -> Result<CdcPlusOutput<T>> {
        self.check_descriptions(triplets, descs)?;
        let mut tape = Tape::new();
        let cdc = CdcVars::register(&mut tape, &self.cdc);
        let txt = TextVars::register(&mut tape, &self.text);
        let g = self.graph(&mut tape, &cdc, &txt, triplets, descs, mode, rng)?;
        Ok(CdcPlusOutput {
            g_str: tape.value(g.structural.g).clone(),
            g_txt: tape.value(g.textual.g).clone(),
            s_str: tape.value(g.structural.s).data().to_vec(),
            s_txt: tape.value(g.textual.s).data().to_vec(),
            s: tape.value(g.combined).data().to_vec(),
        })
    }

    /// Cross-entropy on the combined score plus `λ Σ ‖g^d - g^u‖₁`.
    ///
    /// Gradients follow [`CdcPlusModel::tensors`] order.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        descs: &DescriptionTable,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let all: Vec<Triplet> = batch.all().copied().collect();
        self.check_descriptions(&all, descs)?;
        let targets = batch_targets::<T>(batch, epsilon)?;
        let mut tape = Tape::new().with_clamp(T::of(SCORE_CLAMP));
        let cdc = CdcVars::register(&mut tape, &self.cdc);
        let txt = TextVars::register(&mut tape, &self.text);
        let g = self.graph(&mut tape, &cdc, &txt, &all, descs, Mode::Train, rng)?;
        let ce = tape.bce(g.combined, targets);
        let l1 = tape.l1(g.textual.g, g.structural.g);
        let penalty = tape.scale(l1, T::of(self.config.l1_weight));
        let loss = tape.sum(&[ce, penalty]);
        let mut grads = tape.backward(loss);
        let gs = cdc
            .all()
            .iter()
            .chain(txt.all().iter())
            .map(|&v| grads.take(v))
            .collect();
        Ok((tape.scalar(loss), gs))
    }

    /// Eval-mode `v^d` for `entities`, `[n, k]`.
    pub fn encode_entities(&self, entities: &[usize], descs: &DescriptionTable) -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(entities.len() * self.text.dims.k);
        for chunk in entities.chunks(256) {
            let mut tape = Tape::new();
            let txt = TextVars::register(&mut tape, &self.text);
            let v = txt.encode(&mut tape, &self.text.dims, chunk, descs, |e| e.to_string())?;
            out.extend_from_slice(tape.value(v).data());
        }
        Tensor::from_vec(&[entities.len(), self.text.dims.k], out)
    }

    /// Freezes the model for evaluation by encoding every described entity.
    pub fn scorer(&self, descs: &DescriptionTable) -> Result<CdcPlusScorer<'_, T>> {
        let described = descs.described();
        let encoded = self.encode_entities(&described, descs)?;
        let mut rows = vec![None; descs.num_entities().max(self.cdc.dims.num_entities)];
        for (i, &e) in described.iter().enumerate() {
            rows[e] = Some(i);
        }
        Ok(CdcPlusScorer {
            model: self,
            encoded,
            rows,
        })
    }
}

/// Which score a [`CdcPlusScorer`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlusScore {
    /// `0.5 * (s_str + s_txt)`.
    Combined,
    /// Textual chain only; admits entities never seen in training.
    Textual,
    /// Structural chain only.
    Structural,
}

/// Eval-mode scorer with description embeddings precomputed.
pub struct CdcPlusScorer<'a, T> {
    model: &'a CdcPlusModel<T>,
    encoded: Tensor<T>,
    rows: Vec<Option<usize>>,
}

impl<'a, T: Real> CdcPlusScorer<'a, T> {
    fn row(&self, e: usize) -> Result<usize> {
        self.rows
            .get(e)
            .copied()
            .flatten()
            .ok_or_else(|| Error::MissingDescription(e.to_string()))
    }

    pub fn score_batch(&self, triplets: &[Triplet], which: PlusScore) -> Result<Vec<T>> {
        let cfg = self.model.config.chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(triplets.len());
        let dims = &self.model.cdc.dims;
        for t in triplets {
            if t.r >= dims.num_relations {
                return Err(Error::Shape(format!("relation id out of range in {t:?}")));
            }
        }
        for chunk in triplets.chunks(SCORE_CHUNK) {
            let mut tape = Tape::new();
            let cdc = CdcVars::register(&mut tape, &self.model.cdc);
            let head: HeadVars = cdc.head;
            let s_str = if which != PlusScore::Textual {
                for t in chunk {
                    self.model.cdc.check_ids(t)?;
                }
                let m = cdc.stack(&mut tape, chunk);
                Some(run_chain(&mut tape, &head, m, &cfg, Mode::Eval, &mut rng).s)
            } else {
                None
            };
            let s_txt = if which != PlusScore::Structural {
                let enc = tape.param(&self.encoded);
                let rel = if self.model.config.tie_relations {
                    cdc.relation
                } else {
                    tape.param(&self.model.text.relation_txt)
                };
                let hs = chunk.iter().map(|t| self.row(t.h)).collect::<Result<Vec<_>>>()?;
                let ts = chunk.iter().map(|t| self.row(t.t)).collect::<Result<Vec<_>>>()?;
                let rs: Vec<usize> = chunk.iter().map(|t| t.r).collect();
                let vh = tape.gather(enc, &hs);
                let vr = tape.gather(rel, &rs);
                let vt = tape.gather(enc, &ts);
                let mt = tape.stack3(vh, vr, vt);
                Some(run_chain(&mut tape, &head, mt, &cfg, Mode::Eval, &mut rng).s)
            } else {
                None
            };
            let s = match (s_str, s_txt) {
                (Some(a), Some(b)) => tape.mean2(a, b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!(),
            };
            out.extend_from_slice(tape.value(s).data());
        }
        Ok(out)
    }
}

/// Textual-chain score of a triplet whose entities may be unseen in
/// training. `trained_relations[r]` must hold for the relation.
pub fn zero_shot_score<T: Real>(
    triplet: Triplet,
    model: &CdcPlusModel<T>,
    descs: &DescriptionTable,
    trained_relations: &[bool],
) -> Result<T> {
    if triplet.r >= model.cdc.dims.num_relations || !trained_relations.get(triplet.r).copied().unwrap_or(false) {
        return Err(Error::UnsupportedRelation(triplet.r.to_string()));
    }
    let entities = [triplet.h, triplet.t];
    let encoded = model.encode_entities(&entities, descs)?;
    let mut rows = vec![None; triplet.h.max(triplet.t) + 1];
    rows[triplet.h] = Some(0);
    rows[triplet.t] = Some(1);
    let scorer = CdcPlusScorer { model, encoded, rows };
    Ok(scorer.score_batch(&[triplet], PlusScore::Textual)?[0])
}
