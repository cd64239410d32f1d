//! Optimization loop: optimizer steps, learning-rate decay, embedding
//! projection, validation-based model selection and checkpoints.

mod checkpoint;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_dtype, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, lr_schedule, project_embeddings, sgd_step, AdamConfig, Optimizer, OptimizerKind};

use crate::cdc::{loss_batch, CdcDims, CdcParams, DualChainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, CdcScorer, PlusScorer, RankingReport, Scorer};
use crate::kgdata::{bern_stats, epoch_batches, Batch, Dataset, DescriptionTable, Triplet, TripletIndex};
use crate::numerics::{Dtype, Real, Tensor};
use crate::text_encoder::{CdcPlusModel, PlusScore, TextConfig, TextDims, TextEncoderParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cdc,
    CdcPlus,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdc" => Ok(Self::Cdc),
            "cdcplus" => Ok(Self::CdcPlus),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected cdc or cdcplus)"))),
        }
    }
}

/// Model and optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dtype: Dtype,
    pub k: usize,
    pub n_k: usize,
    pub d_g: usize,
    /// Dropout rate of both chains.
    pub dropout: f64,
    pub n_b: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub label_smoothing: f64,
    pub l1_weight: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub norm_projection: bool,
    pub seed: u64,
    /// Epochs between validation runs; 0 disables validation.
    pub eval_every: usize,
    pub aspects: usize,
    pub d_a: usize,
    pub n_1: usize,
    pub w_1: usize,
    pub pool: usize,
    pub w_2: usize,
    pub desc_len: usize,
    pub tie_relations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Cdc,
            dtype: Dtype::F32,
            k: 200,
            n_k: 64,
            d_g: 256,
            dropout: 0.2,
            n_b: 300,
            epochs: 1000,
            lr0: 3e-3,
            decay: 0.998,
            label_smoothing: 0.0,
            l1_weight: 1.0,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            norm_projection: true,
            seed: 0,
            eval_every: 50,
            aspects: 20,
            d_a: 64,
            n_1: 100,
            w_1: 2,
            pool: 2,
            w_2: 1,
            desc_len: crate::kgdata::DEFAULT_DESC_LEN,
            tie_relations: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must be in (0, 1], got {}", self.decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.n_b == 0 {
            return bad("n_b must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} is outside [0, 0.5)", self.label_smoothing));
        }
        if self.l1_weight < 0.0 {
            return bad("l1_weight must be non-negative".into());
        }
        self.adam().validate()?;
        self.cdc_dims(1, 1).validate()?;
        if self.model == ModelKind::CdcPlus {
            self.text_dims(1, 1, 1).validate()?;
            if self.desc_len == 0 {
                return bad("desc_len must be positive".into());
            }
        }
        Ok(())
    }

    pub fn cdc_dims(&self, num_entities: usize, num_relations: usize) -> CdcDims {
        CdcDims {
            num_entities,
            num_relations,
            k: self.k,
            n_k: self.n_k,
            d_g: self.d_g,
        }
    }

    pub fn text_dims(&self, words: usize, d_w: usize, num_relations: usize) -> TextDims {
        TextDims {
            words,
            d_w,
            d_a: self.d_a,
            aspects: self.aspects,
            n_1: self.n_1,
            w_1: self.w_1,
            pool: self.pool,
            w_2: self.w_2,
            k: self.k,
            num_relations,
        }
    }

    pub fn chains(&self) -> DualChainConfig {
        DualChainConfig::with_rate(self.dropout)
    }

    pub fn text_config(&self) -> TextConfig {
        TextConfig {
            p_g: self.dropout,
            p_flat: self.dropout,
            l1_weight: self.l1_weight,
            tie_relations: self.tie_relations,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// A trainable model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Cdc {
        params: CdcParams<T>,
        chains: DualChainConfig,
    },
    CdcPlus(CdcPlusModel<T>),
}

impl<T: Real> Model<T> {
    /// Fresh parameters for `data`.
    pub fn init(config: &TrainConfig, data: &Dataset, seed: u64) -> Result<Self> {
        let dims = config.cdc_dims(data.num_entities(), data.num_relations());
        let cdc = CdcParams::init(dims, seed)?;
        match config.model {
            ModelKind::Cdc => Ok(Model::Cdc {
                params: cdc,
                chains: config.chains(),
            }),
            ModelKind::CdcPlus => {
                let text = data
                    .text
                    .as_ref()
                    .ok_or_else(|| Error::Config("model cdcplus needs descriptions and word vectors".into()))?;
                for t in data.train.iter() {
                    for e in [t.h, t.t] {
                        if !text.descriptions.has(e) {
                            return Err(Error::MissingDescription(data.vocab.entity_name(e).to_string()));
                        }
                    }
                }
                let tdims = config.text_dims(text.words.rows(), text.words.dim(), data.num_relations());
                let enc = TextEncoderParams::init(tdims, &text.words, seed.wrapping_add(1))?;
                Ok(Model::CdcPlus(CdcPlusModel::new(cdc, enc, config.text_config())?))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cdc { .. } => ModelKind::Cdc,
            Model::CdcPlus(_) => ModelKind::CdcPlus,
        }
    }

    pub fn cdc(&self) -> &CdcParams<T> {
        match self {
            Model::Cdc { params, .. } => params,
            Model::CdcPlus(m) => &m.cdc,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            Model::Cdc { params, .. } => params.tensors(),
            Model::CdcPlus(m) => m.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::Cdc { params, .. } => params.tensors_mut(),
            Model::CdcPlus(m) => m.tensors_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = crate::cdc::CDC_PARAM_NAMES.to_vec();
        if let Model::CdcPlus(_) = self {
            names.extend(crate::text_encoder::TEXT_PARAM_NAMES);
        }
        names
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        descs: Option<&DescriptionTable>,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        match self {
            Model::Cdc { params, chains } => loss_batch(batch, params, chains, epsilon, rng),
            Model::CdcPlus(m) => {
                let descs = descs.ok_or_else(|| Error::Config("model cdcplus needs descriptions".into()))?;
                m.loss(batch, descs, epsilon, rng)
            }
        }
    }

    /// Projects entity and relation tables onto the unit ball.
    pub fn project(&mut self) {
        match self {
            Model::Cdc { params, .. } => {
                project_embeddings(&mut params.entity_emb);
                project_embeddings(&mut params.relation_emb);
            }
            Model::CdcPlus(m) => {
                project_embeddings(&mut m.cdc.entity_emb);
                project_embeddings(&mut m.cdc.relation_emb);
                project_embeddings(&mut m.text.relation_txt);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Eval-mode scorer. The description-augmented model needs `descs`
    /// and scores with `which`.
    pub fn scorer<'a>(&'a self, descs: Option<&DescriptionTable>, which: PlusScore) -> Result<Box<dyn Scorer + 'a>> {
        match self {
            Model::Cdc { params, .. } => Ok(Box::new(CdcScorer(params))),
            Model::CdcPlus(m) => {
                let descs = descs.ok_or_else(|| Error::Config("model cdcplus needs descriptions".into()))?;
                Ok(Box::new(PlusScorer {
                    inner: m.scorer(descs)?,
                    which,
                }))
            }
        }
    }
}

/// Validation metrics recorded in the history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidMetrics {
    pub mr: f64,
    pub hits10: f64,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch summed losses.
    pub loss: f64,
    pub batches: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<ValidMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch and validation Hits@10 of the retained parameters.
    pub best: Option<(usize, f64)>,
}

/// Training state: parameters, optimizer moments, generator and progress.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    best: Option<(usize, f64, Model<T>)>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init_seed: u64 = rng.random();
        let model = Model::init(&config, data, init_seed)?;
        let optimizer = Optimizer::new(config.optimizer, config.adam(), &model.tensors());
        Ok(Self {
            config,
            model,
            optimizer,
            rng,
            epoch: 0,
            best: None,
        })
    }

    /// Restores a trainer from its saved parts.
    pub fn from_parts(
        config: TrainConfig,
        model: Model<T>,
        optimizer: Optimizer<T>,
        rng: ChaCha8Rng,
        epoch: usize,
    ) -> Self {
        Self {
            config,
            model,
            optimizer,
            rng,
            epoch,
            best: None,
        }
    }

    /// The best validated model, or the current one if none was validated.
    pub fn best_model(&self) -> &Model<T> {
        self.best.as_ref().map(|b| &b.2).unwrap_or(&self.model)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.as_ref().map(|b| (b.0, b.1))
    }

    /// One pass over the shuffled training split.
    pub fn run_epoch(&mut self, data: &Dataset, known: &TripletIndex) -> Result<EpochRecord> {
        let stats = bern_stats(&data.train, data.num_relations())?;
        let lr = lr_schedule(self.epoch, self.config.lr0, self.config.decay);
        let descs = data.text.as_ref().map(|t| &t.descriptions);
        let train = &data.train.triplets;
        let batches = epoch_batches(train.len(), self.config.n_b, &mut self.rng)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let positives: Vec<Triplet> = idx.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_positives(positives, &stats, data.num_entities(), known, &mut self.rng)?;
            let (loss, grads) = self
                .model
                .loss(&batch, descs, self.config.label_smoothing, &mut self.rng)?;
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch + 1,
                    batch: b,
                });
            }
            total += loss;
            self.optimizer.step(self.model.tensors_mut(), &grads, lr);
            if self.config.norm_projection {
                self.model.project();
            }
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            lr,
            loss: total / batches.len() as f64,
            batches: batches.len(),
            valid: None,
        })
    }

    /// Filtered ranking of the validation split with the current model.
    pub fn validate(&self, data: &Dataset, threads: Option<usize>) -> Result<RankingReport> {
        let descs = data.text.as_ref().map(|t| &t.descriptions);
        let scorer = self.model.scorer(descs, PlusScore::Combined)?;
        let candidates: Vec<usize> = (0..data.num_entities()).collect();
        let filter = data.filter_index(false);
        evaluate(&data.valid.triplets, scorer.as_ref(), &candidates, &filter, threads)
    }

    /// Runs the remaining epochs, validating every `eval_every` epochs and
    /// keeping the parameters with the best validation Hits@10.
    pub fn train(
        &mut self,
        data: &Dataset,
        threads: Option<usize>,
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let known = data.sampling_index();
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let mut record = self.run_epoch(data, &known)?;
            let every = self.config.eval_every;
            let due = every > 0 && (self.epoch.is_multiple_of(every) || self.epoch == self.config.epochs);
            if due && !data.valid.is_empty() {
                let report = self.validate(data, threads)?;
                let hits = report.averaged.hits10;
                record.valid = Some(ValidMetrics {
                    mr: report.averaged.mr,
                    hits10: hits,
                });
                if self.best.as_ref().is_none_or(|b| hits > b.1) {
                    self.best = Some((self.epoch, hits, self.model.clone()));
                }
            }
            log::info!("epoch {} loss {:.6} lr {:.3e}", record.epoch, record.loss, record.lr);
            on_epoch(&record)?;
            history.push(record);
        }
        Ok(TrainOutcome {
            history,
            best: self.best(),
        })
    }
}
