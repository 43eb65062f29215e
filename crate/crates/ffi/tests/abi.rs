use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sdforge::models::{fit_linear, write_model_file, Dataset, FittedModel, Penalty, Regressor, SolverOptions};
use sdforge::synth::{generate_synthetic_corpus, synthetic_rows, CorpusSpec, MoleculeSize, TargetModel, FULL_ID_TAG};
use sdforge_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { sdforge_last_error(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn c(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

#[test]
fn index_build_lookup_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { sources: 1, records_per_source: 300, core: 0, collisions: 0, seed: 2, ..Default::default() };
    let m = generate_synthetic_corpus(&spec, dir.path()).unwrap();
    let paths: Vec<CString> = m.all_files().iter().map(|p| c(p.to_str().unwrap())).collect();
    let ptrs: Vec<*const c_char> = paths.iter().map(|p| p.as_ptr()).collect();
    let tag = c(FULL_ID_TAG);
    let mut idx = ptr::null_mut();
    unsafe {
        assert_eq!(sdforge_index_build(ptrs.as_ptr(), ptrs.len(), tag.as_ptr(), 2, &mut idx), SdforgeStatus::Ok);
        assert_eq!(sdforge_index_len(idx), 300);

        let rec = &m.records[123];
        let mut loc = SdforgeLocation::default();
        assert_eq!(sdforge_index_lookup(idx, c(&rec.full_id).as_ptr(), &mut loc), SdforgeStatus::Ok);
        let mut buf = vec![0u8; 512];
        let n = sdforge_index_file_path(idx, loc.file_id, buf.as_mut_ptr().cast(), buf.len());
        let path = String::from_utf8(buf[..n].to_vec()).unwrap();
        assert_eq!(Path::new(&path), rec.file);
        let bytes = std::fs::read(&path).unwrap();
        let block = &bytes[loc.offset as usize..(loc.offset + loc.length) as usize];
        assert!(String::from_utf8_lossy(block).contains(&rec.full_id));

        assert_eq!(sdforge_index_lookup(idx, c("nope").as_ptr(), &mut loc), SdforgeStatus::NotFound);
        assert!(last_error().contains("nope"));

        let saved = c(dir.path().join("idx.tsv").to_str().unwrap());
        assert_eq!(sdforge_index_save(idx, saved.as_ptr()), SdforgeStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(sdforge_index_load(saved.as_ptr(), &mut loaded), SdforgeStatus::Ok);
        assert_eq!(sdforge_index_len(loaded), 300);
        sdforge_index_free(loaded);
        sdforge_index_free(idx);
        sdforge_index_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_codes_not_crashes() {
    let mut idx = ptr::null_mut();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(sdforge_index_load(ptr::null(), &mut idx), SdforgeStatus::NullArgument);
        assert_eq!(sdforge_index_load(c("/definitely/missing").as_ptr(), &mut idx), SdforgeStatus::Parse);
        assert!(last_error().contains("missing"));
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(sdforge_model_load(bad.as_ptr().cast(), &mut model), SdforgeStatus::InvalidUtf8);
        let mut d = SdforgeDescriptors::default();
        let junk = b"not a molfile";
        assert_eq!(sdforge_descriptors(junk.as_ptr(), junk.len(), 0.0, &mut d), SdforgeStatus::Parse);
        assert_eq!(sdforge_index_len(ptr::null()), 0);
    }
    let mut tiny = [1u8; 4];
    let n = unsafe { sdforge_last_error(tiny.as_mut_ptr().cast(), tiny.len()) };
    assert!(n > 3 && tiny[3] == 0);
}

const ETHANOL: &str = "ethanol
  test

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  2  3  1  0
M  END
";

#[test]
fn descriptors_of_ethanol() {
    let mut d = SdforgeDescriptors::default();
    let status = unsafe { sdforge_descriptors(ETHANOL.as_ptr(), ETHANOL.len(), -0.1, &mut d) };
    assert_eq!(status, SdforgeStatus::Ok);
    // 2 x 12.011 + 6 x 1.008 + 15.999
    assert!((d.molwt - 46.069).abs() < 1e-9);
    assert_eq!((d.heavy_atom_count, d.num_h_donors, d.num_h_acceptors), (3, 1, 1));
    assert!(d.lipinski_compliant);
}

#[test]
fn model_predict_and_shapley() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::from_rows(&synthetic_rows(300, MoleculeSize::default(), &TargetModel::default(), 5)).unwrap();
    let fitted = FittedModel::Linear(fit_linear(&data, Penalty::Ridge { lambda: 1e-2 }, &SolverOptions::default()).unwrap());
    let path = dir.path().join("ridge.model");
    write_model_file(&fitted, &path).unwrap();

    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(sdforge_model_load(c(path.to_str().unwrap()).as_ptr(), &mut model), SdforgeStatus::Ok);
        let p = sdforge_model_n_features(model);
        assert_eq!(p, data.p());
        let rows: Vec<f64> = data.x[..10].iter().flatten().copied().collect();
        let mut out = vec![0.0; 10];
        assert_eq!(sdforge_model_predict(model, rows.as_ptr(), 10, p, out.as_mut_ptr()), SdforgeStatus::Ok);
        for (o, r) in out.iter().zip(&data.x[..10]) {
            assert_eq!(*o, fitted.predict_row(r));
        }
        assert_eq!(sdforge_model_predict(model, rows.as_ptr(), 10, p - 1, out.as_mut_ptr()), SdforgeStatus::BadDimensions);

        let bg: Vec<f64> = data.x[50..70].iter().flatten().copied().collect();
        let mut phi = vec![0.0; p];
        let mut base = 0.0;
        let row = &data.x[200];
        assert_eq!(
            sdforge_shapley(model, bg.as_ptr(), 20, row.as_ptr(), p, phi.as_mut_ptr(), &mut base),
            SdforgeStatus::Ok
        );
        let gap = base + phi.iter().sum::<f64>() - fitted.predict_row(row);
        assert!(gap.abs() < 1e-9, "{gap}");
        sdforge_model_free(model);
    }
}

fn compile_header(compiler: &str, lang: &str) -> Option<bool> {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join(format!("probe.{lang}"));
    std::fs::write(
        &src,
        "#include \"sdforge.h\"\nint main(void) { SdforgeLocation l; (void)l; return SDFORGE_STATUS_OK + (int)sdforge_index_len(0); }\n",
    )
    .unwrap();
    let status = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-I"]).arg(&include).arg(&src).status().ok()?;
    Some(status.success())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    assert!(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sdforge.h").exists());
    for (cc, lang) in [("cc", "c"), ("c++", "cpp")] {
        match compile_header(cc, lang) {
            Some(ok) => assert!(ok, "{cc} rejected sdforge.h"),
            None => eprintln!("{cc} not available; skipped"),
        }
    }
}
