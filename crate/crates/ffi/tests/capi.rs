use std::ffi::{CStr, CString};
use std::ptr;

use scidoc::experiment::{train_method, Method, MethodConfig};
use scidoc::hierarchical::HierConfig;
use scidoc::nn::ModelConfig;
use scidoc::synth::{generate_corpus, CorpusConfig};
use scidoc::train::TrainHyper;
use scidoc::GroupKind;
use scidoc_ffi::*;

fn generated() -> *mut ScidocDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { scidoc_dataset_generate(3, 2, &mut ds) }, ScidocStatus::Ok);
    ds
}

#[test]
fn gold_labels_score_perfectly() {
    let ds = generated();
    let pages = unsafe { scidoc_dataset_page_count(ds) };
    assert!(pages > 0);
    let mut n = 0;
    assert_eq!(unsafe { scidoc_dataset_token_count(ds, 0, &mut n) }, ScidocStatus::Ok);
    let mut gold = vec![0u32; n];
    let mut written = 0;
    assert_eq!(unsafe { scidoc_dataset_gold_labels(ds, 0, gold.as_mut_ptr(), n, &mut written) }, ScidocStatus::Ok);
    assert_eq!(written, n);
    let mut f1 = 0.0;
    assert_eq!(unsafe { scidoc_macro_f1(gold.as_ptr(), gold.as_ptr(), n, 15, &mut f1) }, ScidocStatus::Ok);
    assert_eq!(f1, 1.0);
    let mut h = -1.0;
    assert_eq!(unsafe { scidoc_group_inconsistency(ds, 0, ScidocGroupKind::Block, gold.as_ptr(), n, &mut h) }, ScidocStatus::Ok);
    assert_eq!(h, 0.0);
    assert_eq!(unsafe { scidoc_dataset_token_count(ds, pages, &mut n) }, ScidocStatus::OutOfRange);
    unsafe { scidoc_dataset_free(ds) };
}

#[test]
fn model_round_trip_through_the_c_interface() {
    let corpus = generate_corpus(&CorpusConfig { n_papers: 2, seed: 3, ..Default::default() }).unwrap();
    let cfg = MethodConfig {
        model: ModelConfig { d: 8, max_seq_len: 64, ..Default::default() },
        hier: HierConfig { page_layers: 1, ..Default::default() },
        train: TrainHyper { epochs: 1, ..Default::default() },
    };
    let (clf, _) = train_method(Method::Hierarchical(GroupKind::Block), &corpus, None, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    clf.save(&path).unwrap();
    let expected = clf.predict_tokens(&corpus.pages[0]).unwrap();

    let mut model = ptr::null_mut();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { scidoc_model_load(c_path.as_ptr(), &mut model) }, ScidocStatus::Ok);
    let ds = generated();
    let mut written = 0;
    let mut small = [0u32; 1];
    let s = unsafe { scidoc_model_predict(model, ds, 0, small.as_mut_ptr(), 1, &mut written) };
    assert_eq!(s, ScidocStatus::BufferTooSmall);
    assert_eq!(written, expected.len());
    let mut labels = vec![0u32; written];
    assert_eq!(unsafe { scidoc_model_predict(model, ds, 0, labels.as_mut_ptr(), written, &mut written) }, ScidocStatus::Ok);
    assert_eq!(labels.iter().map(|&v| v as usize).collect::<Vec<_>>(), expected);
    unsafe {
        scidoc_model_free(model);
        scidoc_dataset_free(ds);
    }
}

#[test]
fn corrupt_checkpoint_sets_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { scidoc_model_load(c_path.as_ptr(), &mut model) }, ScidocStatus::Model);
    let msg = unsafe { CStr::from_ptr(scidoc_last_error()) }.to_string_lossy().into_owned();
    assert!(msg.contains("checkpoint"), "{msg}");
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scidoc.h")).unwrap();
    for name in ["scidoc_dataset_load", "scidoc_model_predict", "scidoc_macro_f1", "scidoc_group_inconsistency", "SCIDOC_STATUS_BUFFER_TOO_SMALL", "typedef struct ScidocModel ScidocModel"] {
        assert!(header.contains(name), "missing {name}");
    }
}
