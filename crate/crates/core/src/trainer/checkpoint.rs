//! Binary checkpoint files.
//!
//! Layout: 8 magic bytes, format version (u32 LE), dtype tag (u8: 4 or 8
//! bytes per float), header length (u64 LE), a JSON header, then every
//! tensor listed in the header as row-major little-endian floats.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamConfig, Model, Optimizer, OptimizerKind, TrainConfig, Trainer};
use crate::cdc::{CdcDims, CdcParams};
use crate::error::{Error, Result};
use crate::kgdata::{Dataset, Vocab, WordEmbeddingTable};
use crate::numerics::{Dtype, Real, Tensor};
use crate::text_encoder::{CdcPlusModel, TextDims, TextEncoderParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCKGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    /// u128 does not survive JSON numbers.
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format("generator seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format("bad generator position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    adam: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab: Vocab,
    cdc_dims: CdcDims,
    text_dims: Option<TextDims>,
    words: Option<Vec<String>>,
    train_entities: usize,
    train_relations: usize,
    epoch: usize,
    rng: RngState,
    optimizer: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or evaluate a model.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub vocab: Vocab,
    /// Word-table tokens, for description models.
    pub words: Option<Vec<String>>,
    pub train_entities: usize,
    pub train_relations: usize,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
}

/// Dtype of the checkpoint at `path`, read from its preamble.
pub fn read_dtype(path: &Path) -> Result<Dtype> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pre = [0u8; 13];
    f.read_exact(&mut pre)
        .map_err(|_| Error::Format(format!("{}: truncated checkpoint", path.display())))?;
    check_preamble(&pre)?;
    Dtype::from_tag(pre[12]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", pre[12])))
}

fn check_preamble(pre: &[u8]) -> Result<()> {
    if &pre[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(pre[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    Ok(())
}

impl<T: Real> Checkpoint<T> {
    /// Snapshot of `trainer`. With `best`, the retained best model replaces
    /// the current parameters.
    pub fn from_trainer(trainer: &Trainer<T>, data: &Dataset, best: bool) -> Self {
        let model = if best { trainer.best_model() } else { &trainer.model };
        Self {
            config: trainer.config.clone(),
            vocab: data.vocab.clone(),
            words: data.text.as_ref().map(|t| t.words.tokens().to_vec()),
            train_entities: data.train_entities,
            train_relations: data.train_relations,
            epoch: trainer.epoch,
            rng: trainer.rng.clone(),
            model: model.clone(),
            optimizer: trainer.optimizer.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer<T> {
        Trainer::from_parts(self.config, self.model, self.optimizer, self.rng, self.epoch)
    }

    /// Word table whose vectors are the trained word embeddings.
    pub fn word_table(&self) -> Result<Option<WordEmbeddingTable>> {
        let (Some(words), Model::CdcPlus(m)) = (&self.words, &self.model) else {
            return Ok(None);
        };
        let d = m.text.dims.d_w;
        let pairs = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), m.text.word_emb.row(i).iter().map(|x| x.f64()).collect()));
        Ok(Some(WordEmbeddingTable::from_pairs(d, pairs)?))
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let names = self.model.param_names();
        let mut tensors: Vec<(String, &Tensor<T>)> =
            names.iter().map(|n| n.to_string()).zip(self.model.tensors()).collect();
        for (prefix, moments) in [("adam_m", &self.optimizer.m), ("adam_v", &self.optimizer.v)] {
            for (n, t) in names.iter().zip(moments) {
                tensors.push((format!("{prefix}.{n}"), t));
            }
        }
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            cdc_dims: self.model.cdc().dims,
            text_dims: match &self.model {
                Model::CdcPlus(m) => Some(m.text.dims),
                Model::Cdc { .. } => None,
            },
            words: self.words.clone(),
            train_entities: self.train_entities,
            train_relations: self.train_relations,
            epoch: self.epoch,
            rng: RngState::capture(&self.rng),
            optimizer: OptimizerHeader {
                kind: self.optimizer.kind,
                adam: self.optimizer.adam,
                step: self.optimizer.step,
            },
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let tmp = tmp_path(path);
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&[T::DTYPE.tag()])?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            let mut buf = Vec::new();
            for (_, t) in &tensors {
                buf.clear();
                for &x in t.data() {
                    x.write_le(&mut buf);
                }
                w.write_all(&buf)?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()
        };
        write().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("truncated checkpoint".into());
        if bytes.len() < 21 {
            return Err(truncated());
        }
        check_preamble(&bytes[..12])?;
        let dtype =
            Dtype::from_tag(bytes[12]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", bytes[12])))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint holds {dtype} tensors, expected {}",
                T::DTYPE
            )));
        }
        let hlen = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let body = &bytes[21..];
        if body.len() < hlen {
            return Err(truncated());
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let mut data = &body[hlen..];
        let width = dtype.byte_width();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < n * width {
                return Err(truncated());
            }
            let values = data[..n * width].chunks_exact(width).map(T::read_le).collect();
            tensors.push(Tensor::from_vec(&entry.shape, values)?);
            data = &data[n * width..];
        }
        if !data.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", data.len())));
        }
        let n_params = match header.text_dims {
            Some(_) => 16,
            None => 8,
        };
        if tensors.len() < n_params {
            return Err(Error::Format("missing parameter tensors".into()));
        }
        let moments = tensors.split_off(n_params);
        let mut cdc_ts = tensors;
        let text_ts = cdc_ts.split_off(8);
        let cdc = CdcParams::from_tensors(header.cdc_dims, cdc_ts)?;
        let model = match header.text_dims {
            None => Model::Cdc {
                params: cdc,
                chains: header.config.chains(),
            },
            Some(td) => Model::CdcPlus(CdcPlusModel::new(
                cdc,
                TextEncoderParams::from_tensors(td, text_ts)?,
                header.config.text_config(),
            )?),
        };
        let opt = header.optimizer;
        let mut optimizer = Optimizer::new(opt.kind, opt.adam, &model.tensors());
        optimizer.step = opt.step;
        match opt.kind {
            OptimizerKind::Sgd if !moments.is_empty() => {
                return Err(Error::Format("sgd checkpoint carries moment tensors".into()))
            }
            OptimizerKind::Adam => {
                if moments.len() != 2 * n_params {
                    return Err(Error::Format("adam moments do not match parameters".into()));
                }
                for (slot, t) in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()).zip(moments) {
                    if slot.shape() != t.shape() {
                        return Err(Error::Format("adam moment shape mismatch".into()));
                    }
                    *slot = t;
                }
            }
            OptimizerKind::Sgd => {}
        }
        if header.vocab.num_entities() != header.cdc_dims.num_entities
            || header.vocab.num_relations() != header.cdc_dims.num_relations
        {
            return Err(Error::Format("vocabulary does not match embedding tables".into()));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            words: header.words,
            train_entities: header.train_entities,
            train_relations: header.train_relations,
            epoch: header.epoch,
            rng: header.rng.restore()?,
            model,
            optimizer,
        })
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
