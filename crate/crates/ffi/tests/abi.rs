use std::ffi::{CStr, CString};
use std::ptr;

use mixinterp::alignment::{self, BoxSet};
use mixinterp::attribution::{gradcam, AttributionMap, Method};
use mixinterp::augment::Augmentation;
use mixinterp::harness::{build_model, ModelCheckpoint, TrainingMeta};
use mixinterp::nn::ArchConfig;
use mixinterp::{Image, Rect};
use mixinterp_ffi::*;

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        stem_width: 4,
        stage_widths: vec![4, 8],
        ..ArchConfig::resnet8(3)
    }
}

fn saved_checkpoint(dir: &std::path::Path) -> (CString, ModelCheckpoint) {
    let ck = ModelCheckpoint {
        network: build_model(&tiny_arch(), 7).unwrap(),
        meta: TrainingMeta {
            augmentation: Augmentation::Baseline,
            seed: 7,
            epochs: 0,
            final_top1: 0.0,
            final_loss: 0.0,
        },
    };
    let path = dir.join("m.ckpt");
    ck.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), ck)
}

fn last_error() -> String {
    let p = mix_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn test_image(size: usize) -> Vec<f32> {
    (0..3 * size * size).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
}

#[test]
fn checkpoint_roundtrip_and_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = saved_checkpoint(dir.path());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mix_checkpoint_load(path.as_ptr(), &mut h) }, MixStatus::Ok);
    assert!(mix_last_error_message().is_null());

    let (mut c, mut s, mut k) = (0, 0, 0);
    assert_eq!(unsafe { mix_checkpoint_shape(h, &mut c, &mut s, &mut k) }, MixStatus::Ok);
    assert_eq!((c, s, k), (3, 32, 3));

    let one = test_image(s);
    let two: Vec<f32> = one.iter().chain(one.iter().map(|v| 1.0 - v).collect::<Vec<_>>().iter()).copied().collect();
    let mut total = [0.0f32; 2];
    for class in 0..k {
        let mut out = [0.0f32; 2];
        assert_eq!(unsafe { mix_scores(h, two.as_ptr(), 2, class, out.as_mut_ptr()) }, MixStatus::Ok);
        total[0] += out[0];
        total[1] += out[1];
    }
    assert!((total[0] - 1.0).abs() < 1e-5 && (total[1] - 1.0).abs() < 1e-5);

    let mut map = vec![0.0f32; s * s];
    assert_eq!(unsafe { mix_gradcam(h, one.as_ptr(), 1, map.as_mut_ptr()) }, MixStatus::Ok);
    let img = Image::new(3, s, s, one.clone()).unwrap();
    assert_eq!(map, gradcam(&ck.network, &img, 1).unwrap().values);

    let mut out = [0.0f32; 1];
    assert_eq!(unsafe { mix_scores(h, one.as_ptr(), 1, 9, out.as_mut_ptr()) }, MixStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe { mix_checkpoint_free(h) };
}

#[test]
fn metrics_match_the_core_library() {
    let (h, w) = (8usize, 10usize);
    let values: Vec<f32> = (0..h * w).map(|i| ((i * 13) % 17) as f32 / 16.0).collect();
    let rects = [MixRect { x0: 1, y0: 2, x1: 5, y1: 6 }, MixRect { x0: 6, y0: 0, x1: 9, y1: 3 }];
    let map = AttributionMap::new(h, w, values.clone(), 0, Method::Gradcam).unwrap();
    let boxes = BoxSet::new(rects.iter().map(|r| Rect::new(r.x0, r.y0, r.x1, r.y1)).collect(), w, h).unwrap();

    let mut e = 0.0;
    assert_eq!(unsafe { mix_energy_pg(values.as_ptr(), h, w, rects.as_ptr(), 2, &mut e) }, MixStatus::Ok);
    assert_eq!(e, alignment::energy_pg(&map, &boxes).unwrap());

    let grid = alignment::ThresholdGrid::linspace(0.0, 0.99, 100).unwrap();
    let mut r = 0.0;
    assert_eq!(unsafe { mix_ehr(values.as_ptr(), h, w, rects.as_ptr(), 2, 100, 0.99, &mut r) }, MixStatus::Ok);
    assert_eq!(r, alignment::ehr(&map, &boxes, &grid, Default::default()).unwrap().score);

    let mut iou = 0.0;
    assert_eq!(unsafe { mix_wsol_iou(values.as_ptr(), h, w, rects.as_ptr(), 2, 0.15, &mut iou) }, MixStatus::Ok);
    assert_eq!(iou, alignment::wsol_iou(&map, &boxes, 0.15).unwrap().iou);
}

#[test]
fn energy_of_a_map_concentrated_in_the_box_is_one() {
    let mut values = [0.0f32; 16];
    values[5] = 1.0;
    let rect = MixRect { x0: 1, y0: 1, x1: 3, y1: 3 };
    let mut e = 0.0;
    assert_eq!(unsafe { mix_energy_pg(values.as_ptr(), 4, 4, &rect, 1, &mut e) }, MixStatus::Ok);
    assert_eq!(e, 1.0);
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { mix_checkpoint_load(missing.as_ptr(), &mut h) }, MixStatus::MissingArtifact);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mix_checkpoint_load(junk.as_ptr(), &mut h) }, MixStatus::Format);

    assert_eq!(unsafe { mix_checkpoint_load(ptr::null(), &mut h) }, MixStatus::NullPointer);
    assert_eq!(last_error(), "null pointer: path");
    let (mut c, mut s, mut k) = (0, 0, 0);
    assert_eq!(unsafe { mix_checkpoint_shape(ptr::null(), &mut c, &mut s, &mut k) }, MixStatus::NullPointer);

    let values = [0.5f32; 16];
    let outside = MixRect { x0: 2, y0: 2, x1: 6, y1: 3 };
    let mut e = 0.0;
    assert_eq!(unsafe { mix_energy_pg(values.as_ptr(), 4, 4, &outside, 1, &mut e) }, MixStatus::InvalidArgument);
    let inside = MixRect { x0: 0, y0: 0, x1: 2, y1: 2 };
    assert_eq!(unsafe { mix_energy_pg(values.as_ptr(), 4, 4, &inside, 1, ptr::null_mut()) }, MixStatus::NullPointer);

    let unnormalized = [2.0f32; 16];
    assert_eq!(
        unsafe { mix_ehr(unnormalized.as_ptr(), 4, 4, &inside, 1, 10, 0.9, &mut e) },
        MixStatus::InvalidArgument
    );
    unsafe { mix_checkpoint_free(ptr::null_mut()) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(mix_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
