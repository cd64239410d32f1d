//! C interface to dualchain checkpoints.
//!
//! Every function returns a [`DcStatus`]; on failure the message is
//! available from [`dc_last_error`] on the same thread until the next call.
//! Handles are created by [`dc_model_load`] and released with
//! [`dc_model_free`]. A handle may be shared between threads for scoring
//! but must not be freed or given descriptions concurrently.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dualchain::kgdata::{load_descriptions, DescriptionTable, Triplet, Vocab};
use dualchain::numerics::{Dtype, Real};
use dualchain::text_encoder::PlusScore;
use dualchain::trainer::{read_dtype, Checkpoint, Model};
use dualchain::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    UnknownName = 5,
    OutOfRange = 6,
    MissingDescription = 7,
    NonFinite = 8,
    InvalidArgument = 9,
    Panic = 10,
}

/// Which side of a query is missing.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcSide {
    Head = 0,
    Tail = 1,
}

enum Inner {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

/// Opaque model handle.
pub struct DcModel {
    inner: Inner,
    descriptions: Option<DescriptionTable>,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DcStatus::Io,
            Error::Parse { .. } | Error::Format(_) => DcStatus::Format,
            Error::UnknownName { .. } | Error::UnsupportedRelation(_) => DcStatus::UnknownName,
            Error::MissingDescription(_) => DcStatus::MissingDescription,
            Error::NonFiniteScore { .. } | Error::NonFiniteLoss { .. } => DcStatus::NonFinite,
            Error::Shape(_) => DcStatus::OutOfRange,
            _ => DcStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: DcStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(DcStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(DcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const DcModel) -> Result<&'a DcModel, Fail> {
    p.as_ref().ok_or(Fail(DcStatus::NullPointer, "model is null".into()))
}

fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail(DcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(DcStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(DcStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

impl DcModel {
    fn vocab(&self) -> &Vocab {
        match &self.inner {
            Inner::F32(c) => &c.vocab,
            Inner::F64(c) => &c.vocab,
        }
    }

    fn needs_descriptions(&self) -> bool {
        match &self.inner {
            Inner::F32(c) => matches!(c.model, Model::CdcPlus(_)),
            Inner::F64(c) => matches!(c.model, Model::CdcPlus(_)),
        }
    }

    fn score(&self, triplets: &[Triplet]) -> Result<Vec<f64>, Fail> {
        fn go<T: Real>(c: &Checkpoint<T>, d: Option<&DescriptionTable>, ts: &[Triplet]) -> Result<Vec<f64>, Fail> {
            let n = c.vocab.num_entities();
            if let Some(t) = ts
                .iter()
                .find(|t| t.h >= n || t.t >= n || t.r >= c.vocab.num_relations())
            {
                return fail(
                    DcStatus::OutOfRange,
                    format!("id out of range in ({}, {}, {})", t.h, t.r, t.t),
                );
            }
            if matches!(c.model, Model::CdcPlus(_)) && d.is_none() {
                return fail(
                    DcStatus::MissingDescription,
                    "model needs descriptions; call dc_model_load_descriptions",
                );
            }
            Ok(c.model.scorer(d, PlusScore::Combined)?.score_batch(ts)?)
        }
        match &self.inner {
            Inner::F32(c) => go(c, self.descriptions.as_ref(), triplets),
            Inner::F64(c) => go(c, self.descriptions.as_ref(), triplets),
        }
    }
}

/// Loads a checkpoint file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(path: *const c_char, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let inner = match read_dtype(path)? {
            Dtype::F32 => Inner::F32(Checkpoint::load(path)?),
            Dtype::F64 => Inner::F64(Checkpoint::load(path)?),
        };
        let vocab = match &inner {
            Inner::F32(c) => &c.vocab,
            Inner::F64(c) => &c.vocab,
        };
        let names = vocab
            .entity_names()
            .iter()
            .map(|n| CString::new(n.replace('\0', " ")).expect("nul bytes replaced"))
            .collect();
        *out = Box::into_raw(Box::new(DcModel {
            inner,
            descriptions: None,
            names,
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reads entity descriptions (`entity<TAB>text` lines) for models that
/// score by description. Lines for unknown entities are skipped.
///
/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load_descriptions(model: *mut DcModel, path: *const c_char) -> DcStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let m = model
            .as_mut()
            .ok_or(Fail(DcStatus::NullPointer, "model is null".into()))?;
        let (words, len) = match &m.inner {
            Inner::F32(c) => (c.word_table()?, c.config.desc_len),
            Inner::F64(c) => (c.word_table()?, c.config.desc_len),
        };
        let Some(words) = words else {
            return fail(DcStatus::InvalidArgument, "model does not use descriptions");
        };
        m.descriptions = Some(load_descriptions(path, m.vocab(), &words, len)?.0);
        Ok(())
    })
}

/// Writes 1 to `*out` when the model scores by description.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dc_model_needs_descriptions(model: *const DcModel, out: *mut u8) -> DcStatus {
    guard(|| {
        *out_arg(out, "out")? = model_arg(model)?.needs_descriptions() as u8;
        Ok(())
    })
}

/// Number of entities and relations known to the model.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_model_counts(
    model: *const DcModel,
    entities: *mut usize,
    relations: *mut usize,
) -> DcStatus {
    guard(|| {
        let v = model_arg(model)?.vocab();
        *out_arg(entities, "entities")? = v.num_entities();
        *out_arg(relations, "relations")? = v.num_relations();
        Ok(())
    })
}

/// Looks up an entity id by name.
///
/// # Safety
/// `model` must be a live handle, `name` a valid C string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dc_entity_id(model: *const DcModel, name: *const c_char, out: *mut usize) -> DcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let id = model_arg(model)?
            .vocab()
            .entity(name)
            .ok_or_else(|| Fail(DcStatus::UnknownName, format!("unknown entity `{name}`")))?;
        *out_arg(out, "out")? = id;
        Ok(())
    })
}

/// Looks up a relation id by name.
///
/// # Safety
/// `model` must be a live handle, `name` a valid C string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dc_relation_id(model: *const DcModel, name: *const c_char, out: *mut usize) -> DcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let id = model_arg(model)?
            .vocab()
            .relation(name)
            .ok_or_else(|| Fail(DcStatus::UnknownName, format!("unknown relation `{name}`")))?;
        *out_arg(out, "out")? = id;
        Ok(())
    })
}

/// Name of an entity id as a C string owned by the handle; valid while the
/// handle lives.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dc_entity_name(model: *const DcModel, id: usize, out: *mut *const c_char) -> DcStatus {
    guard(|| {
        let name = model_arg(model)?
            .names
            .get(id)
            .ok_or_else(|| Fail(DcStatus::OutOfRange, format!("entity id {id} out of range")))?;
        *out_arg(out, "out")? = name.as_ptr();
        Ok(())
    })
}

/// Scores `n` triplets given as parallel id arrays; higher is more
/// plausible. Scores lie in (0, 1).
///
/// # Safety
/// `heads`, `relations`, `tails` and `out` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dc_score(
    model: *const DcModel,
    heads: *const usize,
    relations: *const usize,
    tails: *const usize,
    n: usize,
    out: *mut f64,
) -> DcStatus {
    guard(|| {
        let m = model_arg(model)?;
        let hs = slice_arg(heads, n, "heads")?;
        let rs = slice_arg(relations, n, "relations")?;
        let ts = slice_arg(tails, n, "tails")?;
        let out = slice_out(out, n, "out")?;
        let triplets: Vec<Triplet> = (0..n).map(|i| Triplet::new(hs[i], rs[i], ts[i])).collect();
        out.copy_from_slice(&m.score(&triplets)?);
        Ok(())
    })
}

/// Ranks every entity as the missing `side` of (`entity`, `relation`) and
/// writes the best `k` ids and scores, best first. `*written` receives the
/// number of entries filled, at most `k`.
///
/// # Safety
/// `ids` and `scores` must hold `k` elements; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_predict(
    model: *const DcModel,
    side: DcSide,
    entity: usize,
    relation: usize,
    k: usize,
    ids: *mut usize,
    scores: *mut f64,
    written: *mut usize,
) -> DcStatus {
    guard(|| {
        let m = model_arg(model)?;
        let ids = slice_out(ids, k, "ids")?;
        let scores = slice_out(scores, k, "scores")?;
        let written = out_arg(written, "written")?;
        let candidates: Vec<usize> = match &m.descriptions {
            Some(d) => d
                .described()
                .into_iter()
                .filter(|&e| e < m.vocab().num_entities())
                .collect(),
            None => (0..m.vocab().num_entities()).collect(),
        };
        let triplets: Vec<Triplet> = candidates
            .iter()
            .map(|&e| match side {
                DcSide::Head => Triplet::new(e, relation, entity),
                DcSide::Tail => Triplet::new(entity, relation, e),
            })
            .collect();
        let s = m.score(&triplets)?;
        let mut ranked: Vec<(usize, f64)> = candidates.into_iter().zip(s).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        for (i, (e, s)) in ranked.iter().enumerate() {
            ids[i] = *e;
            scores[i] = *s;
        }
        *written = ranked.len();
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// is valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
