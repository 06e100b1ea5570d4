use std::ffi::{CStr, CString};
use std::ptr;

use hydrocube::datacube::{bimonthly_dates, save_cube, Band, CubeManifest, DataCube};
use hydrocube_ffi::*;
use ndarray::Array4;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hc_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_match_core() {
    let pred = [1u8, 0, 1, 1, 0, 0, 1, 0, 1];
    let target = [1u8, 1, 0, 1, 0, 0, 0, 0, 1];
    let mut c = HcConfusion::default();
    let mut water = HcScores::default();
    let mut weighted = HcScores::default();
    unsafe {
        assert_eq!(hc_confusion(pred.as_ptr(), target.as_ptr(), 3, 3, &mut c), HcStatus::Ok);
        assert_eq!(hc_scores(pred.as_ptr(), target.as_ptr(), 3, 3, &mut water, &mut weighted), HcStatus::Ok);
    }
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 2, 1, 3));
    assert_eq!(water.iou, 3.0 / 6.0);
    assert_eq!(water.precision, 3.0 / 5.0);
    // background: tp 3, fp 1, fn 2, support 5; water support 4
    let bg_iou = 3.0 / 6.0;
    assert!((weighted.iou - (4.0 * water.iou + 5.0 * bg_iou) / 9.0).abs() < 1e-15);
}

#[test]
fn errors_set_status_and_message() {
    let bad = [0u8, 3, 0, 0];
    let mut area = 0.0;
    unsafe {
        assert_eq!(hc_surface_area(bad.as_ptr(), 2, 2, 1.0, &mut area), HcStatus::NonBinary);
        assert!(last_error().contains("non-binary"), "{}", last_error());
        assert_eq!(hc_surface_area(ptr::null(), 2, 2, 1.0, &mut area), HcStatus::NullPointer);
        assert_eq!(hc_surface_area(bad.as_ptr(), 0, 2, 1.0, &mut area), HcStatus::ShapeMismatch);
        let ok = [0u8, 1, 1, 0];
        assert_eq!(hc_surface_area(ok.as_ptr(), 2, 2, 25.0, &mut area), HcStatus::Ok);
    }
    assert_eq!(area, 50.0);
    assert_eq!(last_error(), "");
}

#[test]
fn volume_and_quality() {
    let mask = [1u8, 1, 0, 1];
    let depth = [2.0, 2.0, 2.0, 2.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(hc_water_volume(mask.as_ptr(), depth.as_ptr(), 2, 2, 100.0, &mut v), HcStatus::Ok);
    }
    assert_eq!(v, 600.0);

    let a: Vec<f32> = (0..64).map(|i| (i % 7) as f32 / 7.0).collect();
    let (mut mse, mut psnr, mut ssim) = (1.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            hc_image_quality(a.as_ptr(), a.as_ptr(), 8, 8, 1.0, &mut mse, &mut psnr, &mut ssim),
            HcStatus::Ok
        );
    }
    assert_eq!(mse, 0.0);
    assert!(psnr.is_infinite());
    assert!((ssim - 1.0).abs() < 1e-9);
}

#[test]
fn loss_terms_recombine() {
    let pred: Vec<f32> = (0..64).map(|i| 0.1 + (i % 5) as f32 / 10.0).collect();
    let target: Vec<f32> = (0..64).map(|i| 0.2 + (i % 3) as f32 / 10.0).collect();
    let mask: Vec<u8> = (0..64).map(|i| (i % 3 == 0) as u8).collect();
    let mut t = HcLossTerms::default();
    unsafe {
        assert_eq!(hc_speckle_loss(pred.as_ptr(), target.as_ptr(), 8, 8, 1.0, 0.5, 1e-4, &mut t), HcStatus::Ok);
        assert!((t.total - (t.primary + 0.5 * (1.0 - t.structural) + 1e-4 * t.regularizer)).abs() < 1e-12);
        assert_eq!(hc_seg_loss(pred.as_ptr(), mask.as_ptr(), 8, 8, 1.0, 0.5, 1e-7, &mut t), HcStatus::Ok);
        assert!((t.total - (t.primary + 0.5 * t.structural)).abs() < 1e-12);
        assert_eq!(
            hc_forecast_loss(pred.as_ptr(), target.as_ptr(), target.as_ptr(), 8, 8, 1.0, 0.5, 0.1, &mut t),
            HcStatus::Ok
        );
        assert!((t.total - (t.primary + 0.5 * (1.0 - t.structural) + 0.1 * t.regularizer)).abs() < 1e-12);
        assert_eq!(
            hc_seg_loss(pred.as_ptr(), mask.as_ptr(), 8, 8, -1.0, 0.5, 1e-7, &mut t),
            HcStatus::InvalidArgument
        );
    }
}

#[test]
fn cube_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dates = bimonthly_dates(chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(), 3);
    let manifest = CubeManifest::new(40.0, -3.0, dates, 4, 5, 10.0);
    let values = Array4::from_shape_fn((3, 4, 5, 8), |(t, i, j, b)| (t * 1000 + i * 100 + j * 10 + b) as f32);
    let cube = DataCube::new(manifest, values.clone()).unwrap();
    let src = dir.path().join("cube");
    save_cube(&cube, &src).unwrap();

    let path = CString::new(src.to_str().unwrap()).unwrap();
    let mut handle: *mut HcCube = ptr::null_mut();
    let (mut t, mut h, mut w, mut b) = (0, 0, 0, 0);
    let mut frame = vec![0f32; 20];
    unsafe {
        assert_eq!(hc_cube_load(path.as_ptr(), &mut handle), HcStatus::Ok);
        assert_eq!(hc_cube_shape(handle, &mut t, &mut h, &mut w, &mut b), HcStatus::Ok);
        let band = CString::new("NIR").unwrap();
        assert_eq!(hc_cube_frame(handle, 2, band.as_ptr(), frame.as_mut_ptr(), 20), HcStatus::Ok);
        assert_eq!(hc_cube_frame(handle, 2, band.as_ptr(), frame.as_mut_ptr(), 19), HcStatus::ShapeMismatch);
        let unknown = CString::new("SWIR").unwrap();
        assert_eq!(hc_cube_frame(handle, 0, unknown.as_ptr(), frame.as_mut_ptr(), 20), HcStatus::InvalidArgument);
        let copy = CString::new(dir.path().join("copy").to_str().unwrap()).unwrap();
        assert_eq!(hc_cube_save(handle, copy.as_ptr()), HcStatus::Ok);
        hc_cube_free(handle);
        hc_cube_free(ptr::null_mut());
    }
    assert_eq!((t, h, w, b), (3, 4, 5, 8));
    let nir = Band::Nir.ordinal();
    assert_eq!(frame[7], values[[2, 1, 2, nir]]);
    let copy = hydrocube::datacube::load_cube(dir.path().join("copy")).unwrap();
    assert_eq!(copy.values(), &values);

    let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut handle: *mut HcCube = ptr::null_mut();
    unsafe {
        assert_eq!(hc_cube_load(missing.as_ptr(), &mut handle), HcStatus::Io);
    }
    assert!(handle.is_null());
}

#[test]
fn series_handle() {
    let masks: Vec<u8> = [[1u8, 1, 1, 1], [1, 1, 0, 1], [0, 1, 0, 0]].concat();
    let depth = [1.0, 2.0, 3.0, 4.0];
    let days = [0i64, 61, 120];
    let mut s: *mut HcSeries = ptr::null_mut();
    let mut len = 0;
    let mut rec = HcHydroRecord::default();
    unsafe {
        assert_eq!(hc_series_build(masks.as_ptr(), days.as_ptr(), 3, depth.as_ptr(), 2, 2, 10.0, &mut s), HcStatus::Ok);
        assert_eq!(hc_series_len(s, &mut len), HcStatus::Ok);
        assert_eq!(hc_series_get(s, 1, &mut rec), HcStatus::Ok);
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("s.csv").to_str().unwrap()).unwrap();
        assert_eq!(hc_series_write_csv(s, path.as_ptr()), HcStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("date,area_m2,volume_m3,pixels\n1970-01-01,40.000,100.000,4"), "{text}");
        let mut slope = 0.0;
        assert_eq!(hc_series_volume_slope(s, 2, &mut slope), HcStatus::InvalidArgument);
        hc_series_free(s);

        let dup = [0i64, 0, 1];
        let mut s2: *mut HcSeries = ptr::null_mut();
        assert_ne!(hc_series_build(masks.as_ptr(), dup.as_ptr(), 3, depth.as_ptr(), 2, 2, 10.0, &mut s2), HcStatus::Ok);
        assert!(s2.is_null());
    }
    assert_eq!(len, 3);
    assert_eq!((rec.days_since_epoch, rec.area_m2, rec.volume_m3, rec.pixels), (61, 30.0, 70.0, 3));
}
