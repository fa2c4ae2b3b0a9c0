use std::ffi::{c_char, CStr, CString};
use std::ptr;

use marnet::data::synth_shapes;
use marnet::model::{Model, ModelConfig};
use marnet_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        marnet_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn preset(name: &str, outputs: usize, seed: u64) -> *mut MarnetModel {
    let name = CString::new(name).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { marnet_model_build_preset(name.as_ptr(), outputs, 2, seed, &mut h) }, MARNET_OK);
    assert!(!h.is_null());
    h
}

fn flat_batch(n_clouds: usize, points: usize) -> (Vec<f64>, Vec<f64>, Vec<marnet::data::PointCloud>) {
    let data = synth_shapes(1, points, 5).unwrap();
    let clouds: Vec<_> = data.clouds.into_iter().take(n_clouds).collect();
    let pos = clouds.iter().flat_map(|c| c.positions.iter().flatten().copied()).collect();
    let nrm = clouds.iter().flat_map(|c| c.normals.iter().flatten().copied()).collect();
    (pos, nrm, clouds)
}

#[test]
fn classify_matches_the_rust_api() {
    let h = preset("lite", 4, 7);
    let reference = Model::build(&ModelConfig::lite(4, 2), 7).unwrap();
    unsafe {
        assert_eq!(marnet_model_num_outputs(h), 4);
        assert_eq!(marnet_model_num_parameters(h), reference.params.num_scalars());
        let mut task = MarnetTask::PartSegmentation;
        assert_eq!(marnet_model_task(h, &mut task), MARNET_OK);
        assert_eq!(task, MarnetTask::Classification);

        let (pos, nrm, clouds) = flat_batch(2, 128);
        let mut out = vec![0f32; 8];
        assert_eq!(marnet_classify(h, pos.as_ptr(), nrm.as_ptr(), 2, 128, out.as_mut_ptr(), out.len()), MARNET_OK);
        let want = reference.classify(&[&clouds[0], &clouds[1]]).unwrap().concat();
        assert_eq!(out, want);

        let mut short = vec![0f32; 7];
        let code = marnet_classify(h, pos.as_ptr(), nrm.as_ptr(), 2, 128, short.as_mut_ptr(), short.len());
        assert_eq!(code, MARNET_ERR_BUFFER_TOO_SMALL);
        assert!(last_error().contains("8 floats"));

        let mut seg = vec![0f32; 2 * 128 * 4];
        let code = marnet_segment(h, pos.as_ptr(), nrm.as_ptr(), 2, 128, seg.as_mut_ptr(), seg.len());
        assert_eq!(code, MARNET_ERR_INVALID_ARGUMENT);
        marnet_model_free(h);
    }
}

#[test]
fn segment_writes_point_major_logits() {
    let h = preset("lite_segmenter", 3, 2);
    let reference = Model::build(&ModelConfig::lite_segmenter(3, 2), 2).unwrap();
    unsafe {
        let (pos, nrm, clouds) = flat_batch(1, 64);
        let mut out = vec![0f32; 64 * 3];
        assert_eq!(marnet_segment(h, pos.as_ptr(), nrm.as_ptr(), 1, 64, out.as_mut_ptr(), out.len()), MARNET_OK);
        let want: Vec<f32> = reference.segment(&[&clouds[0]]).unwrap().concat().concat();
        assert_eq!(out, want);
        marnet_model_free(h);
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.marc").to_str().unwrap()).unwrap();
    let h = preset("lite", 4, 3);
    unsafe {
        assert_eq!(marnet_model_save(h, path.as_ptr()), MARNET_OK);
        let mut back = ptr::null_mut();
        assert_eq!(marnet_model_load(path.as_ptr(), &mut back), MARNET_OK);
        let (pos, nrm, _) = flat_batch(1, 128);
        let mut a = vec![0f32; 4];
        let mut b = vec![0f32; 4];
        marnet_classify(h, pos.as_ptr(), nrm.as_ptr(), 1, 128, a.as_mut_ptr(), 4);
        marnet_classify(back, pos.as_ptr(), nrm.as_ptr(), 1, 128, b.as_mut_ptr(), 4);
        assert_eq!(a, b);
        marnet_model_free(h);
        marnet_model_free(back);
    }
}

#[test]
fn errors_carry_core_codes() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.marc");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(marnet_model_load(junk.as_ptr(), &mut h), MARNET_ERR_CHECKPOINT_MAGIC);
        assert!(last_error().contains("magic"));
        assert_eq!(marnet_model_load(missing.as_ptr(), &mut h), MARNET_ERR_IO);
        assert!(h.is_null());

        let bad = CString::new("{").unwrap();
        assert_eq!(marnet_model_build(bad.as_ptr(), 0, &mut h), MARNET_ERR_JSON);
        let mut cfg = ModelConfig::classifier(40, 2);
        cfg.backbone[1].mlps[0][1] = 33;
        let cfg = CString::new(cfg.to_json()).unwrap();
        assert_eq!(marnet_model_build(cfg.as_ptr(), 0, &mut h), MARNET_ERR_CONFIG);
        assert!(last_error().contains("bb2"));

        let name = CString::new("huge").unwrap();
        assert_eq!(marnet_model_build_preset(name.as_ptr(), 4, 2, 0, &mut h), MARNET_ERR_INVALID_ARGUMENT);
        assert_eq!(marnet_model_build_preset(ptr::null(), 4, 2, 0, &mut h), MARNET_ERR_NULL_POINTER);
        assert_eq!(marnet_classify(ptr::null(), ptr::null(), ptr::null(), 1, 1, ptr::null_mut(), 0), MARNET_ERR_NULL_POINTER);
        assert_eq!(marnet_model_num_outputs(ptr::null()), 0);
        marnet_model_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_length() {
    let name = CString::new("nothing-like-this").unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        marnet_model_build_preset(name.as_ptr(), 4, 2, 0, &mut h);
        let full = marnet_last_error(ptr::null_mut(), 0);
        let mut buf = [1 as c_char; 8];
        assert_eq!(marnet_last_error(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(buf[7], 0);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 7);
        assert_eq!(CStr::from_ptr(marnet_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/marnet.h")).unwrap();
    for name in [
        "typedef struct MarnetModel MarnetModel",
        "marnet_model_build(",
        "marnet_model_build_preset(",
        "marnet_model_load(",
        "marnet_model_save(",
        "marnet_model_free(",
        "marnet_classify(",
        "marnet_segment(",
        "marnet_last_error(",
        "#define MARNET_ERR_CHECKPOINT_MAGIC 20",
        "MarnetTask_Classification",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
