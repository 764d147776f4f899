use std::ffi::{CStr, CString};
use std::ptr;

use fcr_ffi::*;

fn last_error() -> String {
    let p = fcr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const SMALL: &str = "sim.sample_count=300\ntrain.epochs=2\ntrain.batch_size=64\ntrain.disc_steps=1\nmodel.hidden=16\nmodel.embed_width=8\n\
eval.kci_samples=40\neval.kci_repeats=2\neval.hsic_samples=40\neval.hsic_permutations=20\neval.k_neighbors=5";

#[test]
fn null_handles_are_reported() {
    let status = unsafe { fcr_dataset_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(status, FcrStatus::NullPointer);
    assert!(last_error().contains("dataset"));
    unsafe {
        fcr_dataset_free(ptr::null_mut());
        fcr_model_free(ptr::null_mut());
        fcr_string_free(ptr::null_mut());
    }
}

#[test]
fn bad_override_is_a_validation_error() {
    let cfg = CString::new("train.nonsense=1").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { fcr_simulate(cfg.as_ptr(), &mut ds) }, FcrStatus::Validation);
    assert!(ds.is_null());
    assert!(last_error().contains("train.nonsense"));
}

#[test]
fn missing_checkpoint_is_a_validation_error() {
    let path = CString::new("/nonexistent/model.fcrc").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fcr_model_load(path.as_ptr(), &mut m) }, FcrStatus::Validation);
}

#[test]
fn simulate_train_encode_evaluate_round_trip() {
    let cfg = CString::new(SMALL).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(fcr_simulate(cfg.as_ptr(), &mut ds), FcrStatus::Ok);
        let (mut cells, mut genes) = (0usize, 0usize);
        assert_eq!(fcr_dataset_shape(ds, &mut cells, &mut genes), FcrStatus::Ok);
        assert_eq!((cells, genes), (300, 96));

        let mut model = ptr::null_mut();
        assert_eq!(fcr_train(ds, cfg.as_ptr(), &mut model), FcrStatus::Ok, "{}", last_error());
        let (mut nx, mut ntx, mut nt) = (0, 0, 0);
        assert_eq!(fcr_model_dims(model, &mut nx, &mut ntx, &mut nt), FcrStatus::Ok);
        assert_eq!((nx, ntx, nt), (1, 4, 1));

        let width = nx + ntx + nt;
        let mut small = vec![0.0; width];
        assert_eq!(fcr_encode(model, ds, small.as_mut_ptr(), small.len()), FcrStatus::BufferTooSmall);
        let mut z = vec![f64::NAN; cells * width];
        assert_eq!(fcr_encode(model, ds, z.as_mut_ptr(), z.len()), FcrStatus::Ok);
        assert!(z.iter().all(|v| v.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.fcrc").to_str().unwrap()).unwrap();
        assert_eq!(fcr_model_save(model, path.as_ptr()), FcrStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(fcr_model_load(path.as_ptr(), &mut reloaded), FcrStatus::Ok);
        let mut z2 = vec![0.0; z.len()];
        assert_eq!(fcr_encode(reloaded, ds, z2.as_mut_ptr(), z2.len()), FcrStatus::Ok);
        assert_eq!(z, z2);

        let mut json = ptr::null_mut();
        assert_eq!(fcr_evaluate_json(model, ds, cfg.as_ptr(), &mut json), FcrStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        fcr_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["mcc", "nmi_x", "nmi_t", "nmi_xt", "r2"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }

        fcr_model_free(reloaded);
        fcr_model_free(model);
        fcr_dataset_free(ds);
    }
}

#[test]
fn mcc_of_identical_matrices_is_one() {
    let z: Vec<f64> = (0..40).map(|i| ((i * 7919) % 101) as f64).collect();
    let mut out = 0.0;
    assert_eq!(unsafe { fcr_mcc(z.as_ptr(), z.as_ptr(), 20, 2, &mut out) }, FcrStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { fcr_mcc(z.as_ptr(), ptr::null(), 20, 2, &mut out) }, FcrStatus::NullPointer);
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"fcr.h\"\nint main(void) { FcrDataset *d = 0; FcrStatus s = fcr_dataset_load(\"x\", &d); return s == FCR_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipping header check");
        return;
    };
    assert!(status.success());
}
