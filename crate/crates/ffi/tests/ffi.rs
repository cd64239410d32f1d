use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use dualchain::kgdata::{synthetic_dataset, Dataset, Triplet};
use dualchain::text_encoder::PlusScore;
use dualchain::trainer::{Checkpoint, Model, TrainConfig, Trainer};
use dualchain_ffi::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        k: 8,
        n_k: 2,
        d_g: 8,
        n_b: 20,
        epochs: 2,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

fn trained(dir: &Path) -> (PathBuf, Dataset, Checkpoint<f32>) {
    let data = synthetic_dataset(12, 2, 40, 5);
    let mut t = Trainer::<f32>::new(small_config(), &data).unwrap();
    t.train(&data, Some(1), |_| Ok(())).unwrap();
    let ckpt = Checkpoint::from_trainer(&t, &data, true);
    let path = dir.join("m.ckpt");
    ckpt.save(&path).unwrap();
    (path, data, ckpt)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = dc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut DcModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dc_model_load(cstr(path).as_ptr(), &mut m) }, DcStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn scores_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, data, ckpt) = trained(dir.path());
    let m = load(&path);

    let (mut ne, mut nr) = (0, 0);
    assert_eq!(unsafe { dc_model_counts(m, &mut ne, &mut nr) }, DcStatus::Ok);
    assert_eq!((ne, nr), (12, 2));
    let mut needs = 9;
    assert_eq!(unsafe { dc_model_needs_descriptions(m, &mut needs) }, DcStatus::Ok);
    assert_eq!(needs, 0);

    let ts: Vec<Triplet> = data.train.triplets[..10].to_vec();
    let hs: Vec<usize> = ts.iter().map(|t| t.h).collect();
    let rs: Vec<usize> = ts.iter().map(|t| t.r).collect();
    let tt: Vec<usize> = ts.iter().map(|t| t.t).collect();
    let mut out = vec![0.0; ts.len()];
    let st = unsafe { dc_score(m, hs.as_ptr(), rs.as_ptr(), tt.as_ptr(), ts.len(), out.as_mut_ptr()) };
    assert_eq!(st, DcStatus::Ok);
    let Model::Cdc { .. } = &ckpt.model else {
        panic!("expected a plain model")
    };
    let expect = ckpt
        .model
        .scorer(None, PlusScore::Combined)
        .unwrap()
        .score_batch(&ts)
        .unwrap();
    assert_eq!(out, expect);
    assert!(out.iter().all(|s| *s > 0.0 && *s < 1.0));

    unsafe { dc_model_free(m) };
}

#[test]
fn names_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let (path, data, _) = trained(dir.path());
    let m = load(&path);

    let name = CString::new("e3").unwrap();
    let mut id = 0;
    assert_eq!(unsafe { dc_entity_id(m, name.as_ptr(), &mut id) }, DcStatus::Ok);
    assert_eq!(id, data.vocab.entity("e3").unwrap());
    let mut back = ptr::null();
    assert_eq!(unsafe { dc_entity_name(m, id, &mut back) }, DcStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(back) }.to_str().unwrap(), "e3");
    let rel = CString::new("r1").unwrap();
    let mut r = 0;
    assert_eq!(unsafe { dc_relation_id(m, rel.as_ptr(), &mut r) }, DcStatus::Ok);

    let mut ids = [0usize; 5];
    let mut scores = [0.0f64; 5];
    let mut written = 0;
    let st = unsafe {
        dc_predict(
            m,
            DcSide::Tail,
            id,
            r,
            5,
            ids.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut written,
        )
    };
    assert_eq!(st, DcStatus::Ok);
    assert_eq!(written, 5);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // The top score agrees with scoring the same triplet directly.
    let mut direct = 0.0;
    let st = unsafe { dc_score(m, &id, &r, &ids[0], 1, &mut direct) };
    assert_eq!(st, DcStatus::Ok);
    assert_eq!(direct, scores[0]);

    let mut all_ids = [0usize; 50];
    let mut all_scores = [0.0f64; 50];
    let st = unsafe {
        dc_predict(
            m,
            DcSide::Head,
            id,
            r,
            50,
            all_ids.as_mut_ptr(),
            all_scores.as_mut_ptr(),
            &mut written,
        )
    };
    assert_eq!(st, DcStatus::Ok);
    assert_eq!(written, 12);

    unsafe { dc_model_free(m) };
}

#[test]
fn failures_set_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = trained(dir.path());

    let mut m = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope.ckpt"));
    assert_eq!(unsafe { dc_model_load(missing.as_ptr(), &mut m) }, DcStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("nope.ckpt"));

    std::fs::write(dir.path().join("junk"), b"junk").unwrap();
    let junk = cstr(&dir.path().join("junk"));
    assert_eq!(unsafe { dc_model_load(junk.as_ptr(), &mut m) }, DcStatus::Format);
    assert_eq!(unsafe { dc_model_load(ptr::null(), &mut m) }, DcStatus::NullPointer);

    let m = load(&path);
    assert!(dc_last_error().is_null());
    let bad = CString::new("zz").unwrap();
    let mut id = 0;
    assert_eq!(unsafe { dc_entity_id(m, bad.as_ptr(), &mut id) }, DcStatus::UnknownName);
    assert!(last_error().contains("zz"));
    let utf = [0xffu8, 0];
    assert_eq!(
        unsafe { dc_entity_id(m, utf.as_ptr().cast(), &mut id) },
        DcStatus::InvalidUtf8
    );

    let mut out = 0.0;
    let st = unsafe { dc_score(m, &99, &0, &1, 1, &mut out) };
    assert_eq!(st, DcStatus::OutOfRange);
    assert_eq!(
        unsafe { dc_score(m, ptr::null(), &0, &1, 1, &mut out) },
        DcStatus::NullPointer
    );
    assert_eq!(
        unsafe { dc_score(m, ptr::null(), ptr::null(), ptr::null(), 0, ptr::null_mut()) },
        DcStatus::Ok
    );
    let mut name = ptr::null();
    assert_eq!(unsafe { dc_entity_name(m, 12, &mut name) }, DcStatus::OutOfRange);

    let desc = cstr(&dir.path().join("d.txt"));
    assert_eq!(
        unsafe { dc_model_load_descriptions(m, desc.as_ptr()) },
        DcStatus::InvalidArgument
    );

    unsafe { dc_model_free(m) };
    unsafe { dc_model_free(ptr::null_mut()) };
    assert!(!unsafe { CStr::from_ptr(dc_version()) }.to_str().unwrap().is_empty());
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "dualchain.h"

int main(int argc, char **argv) {
    DcModel *m = NULL;
    if (dc_model_load(argv[1], &m) != DC_STATUS_OK) {
        fprintf(stderr, "%s\n", dc_last_error());
        return 1;
    }
    size_t h, r;
    if (dc_entity_id(m, "e0", &h) != DC_STATUS_OK || dc_relation_id(m, "r0", &r) != DC_STATUS_OK) return 1;
    size_t ids[3];
    double scores[3];
    size_t n = 0;
    if (dc_predict(m, DC_SIDE_TAIL, h, r, 3, ids, scores, &n) != DC_STATUS_OK) return 1;
    for (size_t i = 0; i < n; i++) {
        const char *name;
        dc_entity_name(m, ids[i], &name);
        printf("%s %.6f\n", name, scores[i]);
    }
    if (dc_entity_id(m, "missing", &h) != DC_STATUS_UNKNOWN_NAME) return 2;
    dc_model_free(m);
    return 0;
}
"#;

/// Compiles a C client against the generated header and the static
/// library. Skipped when no C compiler is on the path.
#[test]
fn c_client_links_against_header() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = trained(dir.path());
    let exe_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = exe_dir.join("libdualchain_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("client");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&bin).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with('e')));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
