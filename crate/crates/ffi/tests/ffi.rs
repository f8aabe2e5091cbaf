use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tempfile::TempDir;
use tse_core::audio::DEFAULT_SAMPLE_RATE;
use tse_core::embedder::{EmbedderConfig, EmbedderModel, Pooling};
use tse_core::lda::{fit_lda, LabeledEmbeddingSet, DEFAULT_SHRINKAGE_EPS};
use tse_core::metrics::si_sdr;
use tse_core::separator::{Preset, SeparatorConfig, SeparatorModel};
use tse_ffi::*;

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tse_last_error()) }.to_string_lossy().into_owned()
}

fn wave(n: usize, f: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * f).sin() + 0.3 * (i as f64 * 2.7 * f).cos()).collect()
}

/// Embedder, 3-dim LDA on its 8 x 4 output space and a matching separator.
struct Models {
    dir: TempDir,
}

fn models() -> Models {
    let dir = TempDir::new().unwrap();
    let emb = EmbedderModel::new(EmbedderConfig::desk(Pooling::Gaussian), vec!["a".into(), "b".into()], 1).unwrap();
    emb.save(&dir.path().join("emb.bin")).unwrap();
    let items: Vec<(String, Vec<f64>)> = (0..4)
        .flat_map(|c| (0..6).map(move |k| (format!("s{c}"), (0..8).map(|d| ((c * 8 + d) as f64).sin() + 0.05 * ((k * 13 + d) as f64).cos()).collect())))
        .collect();
    let lda = fit_lda(&LabeledEmbeddingSet::new(items).unwrap(), 3, DEFAULT_SHRINKAGE_EPS).unwrap();
    lda.save(&dir.path().join("lda.json")).unwrap();
    let sep = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 32), 2).unwrap();
    sep.save(&dir.path().join("sep.ckpt")).unwrap();
    Models { dir }
}

#[test]
fn embed_and_extract_match_the_rust_api() {
    let m = models();
    let mut emb = ptr::null_mut();
    let mut sep = ptr::null_mut();
    unsafe {
        assert_eq!(tse_embedder_load(c_path(&m.dir.path().join("emb.bin")).as_ptr(), &mut emb), TseStatus::Ok);
        assert_eq!(tse_separator_load(c_path(&m.dir.path().join("sep.ckpt")).as_ptr(), &mut sep), TseStatus::Ok);
        assert_eq!(tse_embedder_dim(emb), 32);
        assert_eq!(tse_separator_cue_dim(sep), 32);

        let enroll = wave(4000, 0.05);
        let mut cue = vec![0.0; 32];
        let mut n = 0;
        let st = tse_embedder_embed(emb, enroll.as_ptr(), enroll.len(), DEFAULT_SAMPLE_RATE, cue.as_mut_ptr(), cue.len(), &mut n);
        assert_eq!(st, TseStatus::Ok, "{}", last_error());
        assert_eq!(n, 32);
        let native = EmbedderModel::load(&m.dir.path().join("emb.bin")).unwrap();
        let w = tse_core::audio::Waveform::new(enroll, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(native.embed_vector(&w).unwrap(), cue);

        let mix = wave(2000, 0.11);
        let mut small = vec![0.0; 10];
        let st = tse_separator_extract(sep, mix.as_ptr(), mix.len(), DEFAULT_SAMPLE_RATE, cue.as_ptr(), 32, small.as_mut_ptr(), 10, &mut n);
        assert_eq!(st, TseStatus::BufferTooSmall);
        assert_eq!(n, mix.len());
        let mut out = vec![0.0; n];
        let st = tse_separator_extract(sep, mix.as_ptr(), mix.len(), DEFAULT_SAMPLE_RATE, cue.as_ptr(), 32, out.as_mut_ptr(), n, &mut n);
        assert_eq!(st, TseStatus::Ok, "{}", last_error());
        assert!(last_error().is_empty());
        let native = SeparatorModel::load(&m.dir.path().join("sep.ckpt")).unwrap();
        let mw = tse_core::audio::Waveform::new(mix.clone(), DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(native.extract(&mw, &cue).unwrap().samples(), &out[..]);

        let st = tse_separator_extract(sep, mix.as_ptr(), mix.len(), DEFAULT_SAMPLE_RATE, cue.as_ptr(), 5, out.as_mut_ptr(), n, &mut n);
        assert_eq!(st, TseStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        tse_embedder_free(emb);
        tse_separator_free(sep);
    }
}

#[test]
fn lda_handle_projects_embeddings() {
    let m = models();
    let mut lda = ptr::null_mut();
    unsafe {
        assert_eq!(tse_lda_load(c_path(&m.dir.path().join("lda.json")).as_ptr(), &mut lda), TseStatus::Ok);
        let (mut din, mut dout) = (0, 0);
        assert_eq!(tse_lda_dims(lda, &mut din, &mut dout), TseStatus::Ok);
        assert_eq!((din, dout), (8, 3));
        let x: Vec<f64> = (0..8).map(|d| d as f64 * 0.1).collect();
        let mut y = [0.0; 3];
        let mut n = 0;
        assert_eq!(tse_lda_transform(lda, x.as_ptr(), 8, y.as_mut_ptr(), 3, &mut n), TseStatus::Ok);
        let native = tse_core::lda::LdaTransform::load(&m.dir.path().join("lda.json")).unwrap();
        assert_eq!(native.transform(&x).unwrap(), y);
        assert_eq!(tse_lda_transform(lda, x.as_ptr(), 7, y.as_mut_ptr(), 3, &mut n), TseStatus::InvalidArgument);
        tse_lda_free(lda);
    }
}

#[test]
fn si_sdr_and_error_codes() {
    let r = wave(500, 0.07);
    let e: Vec<f64> = r.iter().enumerate().map(|(i, x)| 2.0 * x + 0.01 * (i as f64).cos()).collect();
    let mut v = 0.0;
    unsafe {
        assert_eq!(tse_si_sdr(r.as_ptr(), e.as_ptr(), r.len(), &mut v), TseStatus::Ok);
        assert_eq!(v, si_sdr(&r, &e).unwrap());
        assert_eq!(tse_si_sdr(ptr::null(), e.as_ptr(), r.len(), &mut v), TseStatus::NullPointer);
        assert!(last_error().contains("reference"));
        let zeros = [0.0; 10];
        assert_ne!(tse_si_sdr(zeros.as_ptr(), zeros.as_ptr(), 10, &mut v), TseStatus::Ok);

        let mut h = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(tse_embedder_load(missing.as_ptr(), &mut h), TseStatus::Data);
        assert!(h.is_null());
        assert!(last_error().contains("/nonexistent/model.bin"));
        assert_eq!(tse_embedder_load(ptr::null(), &mut h), TseStatus::NullPointer);
        assert_eq!(tse_embedder_dim(ptr::null()), 0);
        tse_embedder_free(ptr::null_mut());
        tse_lda_free(ptr::null_mut());
        tse_separator_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(tse_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tse.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from tse.h");
    }
    assert!(header.contains("typedef struct TseSeparator TseSeparator;"));
}

/// Builds a small C program against the header and the static library.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target").join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = target.join("libtse_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "tse.h"
int main(void) {
    double r[64], e[64], v = 0.0;
    for (int i = 0; i < 64; i++) { r[i] = (double)(i % 7) - 3.0; e[i] = 0.5 * r[i]; }
    if (tse_si_sdr(r, e, 64, &v) != TSE_STATUS_OK || v < 100.0) return 1;
    TseEmbedder *h = NULL;
    if (tse_embedder_load("/nonexistent", &h) != TSE_STATUS_DATA || h != NULL) return 2;
    if (strlen(tse_last_error()) == 0) return 3;
    printf("%s\n", tse_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("probe");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "probe exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
