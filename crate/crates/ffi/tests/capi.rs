use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tsit::checkpoint::Checkpoint;
use tsit::data::{DataMode, DataSpec};
use tsit::networks::NetConfig;
use tsit::train::{load_translator, translate, RunConfig, Trainer};
use tsit::Tensor;
use tsit_ffi::*;

fn tiny(preset: &str) -> RunConfig {
    let mut c = RunConfig::preset(preset).unwrap();
    let classes = c.net.content_channels;
    c.net = NetConfig::desk(2, 8);
    c.net.content_channels = classes;
    c.net.d_base_width = 8;
    c.net.d_scales = 2;
    c.data = DataSpec::synthetic(c.data.mode, 4, 16, 16, 1);
    c
}

/// One training step, saved to `dir/name`.
fn checkpoint(dir: &Path, preset: &str) -> PathBuf {
    let c = tiny(preset);
    let ds = c.data.load().unwrap();
    let mut tr = Trainer::new(c).unwrap();
    tr.train_step(&ds).unwrap();
    let p = dir.join(format!("{preset}.tsit"));
    tr.checkpoint().save(&p).unwrap();
    p
}

fn load(path: &Path) -> *mut TsitTranslator {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { tsit_translator_load(c.as_ptr(), &mut t) }, TSIT_OK);
    assert!(!t.is_null());
    t
}

fn last_error() -> Option<String> {
    let p = tsit_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn pattern(n: usize, m: usize) -> Vec<f32> {
    (0..n).map(|i| (i % m) as f32 / m as f32 - 0.5).collect()
}

#[test]
fn translate_matches_library_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint(dir.path(), "desk-style-transfer");
    let t = load(&path);
    let (mut cc, mut sc, mut mult, mut sem) = (0, 0, 0, 9);
    assert_eq!(unsafe { tsit_translator_info(t, &mut cc, &mut sc, &mut mult, &mut sem) }, TSIT_OK);
    assert_eq!((cc, sc, mult, sem), (3, 3, 4, 0));

    let (h, w) = (16, 16);
    let content = pattern(3 * h * w, 7);
    let style = pattern(3 * h * w, 5);
    let mut a = vec![0f32; 3 * h * w];
    let mut b = vec![1f32; 3 * h * w];
    for out in [&mut a, &mut b] {
        let rc = unsafe {
            tsit_translate(t, content.as_ptr(), style.as_ptr(), h as u32, w as u32, 3, out.as_mut_ptr(), out.len())
        };
        assert_eq!(rc, TSIT_OK, "{:?}", last_error());
    }
    assert_eq!(last_error(), None);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

    let (_, mut g) = load_translator(&Checkpoint::load(&path).unwrap()).unwrap();
    let expect = translate(
        &mut g,
        &Tensor::from_vec(&[1, 3, h, w], content.clone()).unwrap(),
        &Tensor::from_vec(&[1, 3, h, w], style.clone()).unwrap(),
        3,
    )
    .unwrap();
    assert_eq!(expect.data(), &a[..]);
    unsafe { tsit_translator_free(t) };
}

#[test]
fn errors_set_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.tsit").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tsit_translator_load(missing.as_ptr(), &mut t) }, TSIT_ERR_IO);
    assert!(t.is_null());
    assert!(last_error().unwrap().contains("none.tsit"));

    let junk = dir.path().join("junk.tsit");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk_c = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tsit_translator_load(junk_c.as_ptr(), &mut t) }, TSIT_ERR_CHECKPOINT);
    assert_eq!(unsafe { tsit_translator_load(ptr::null(), &mut t) }, TSIT_ERR_NULL);
    assert_eq!(unsafe { tsit_translator_load(junk_c.as_ptr(), ptr::null_mut()) }, TSIT_ERR_NULL);

    let t = load(&checkpoint(dir.path(), "desk-style-transfer"));
    let buf = vec![0f32; 3 * 16 * 16];
    let mut out = vec![0f32; 3 * 16 * 16];
    let call = |h: u32, w: u32, out: &mut [f32], len: usize| unsafe {
        tsit_translate(t, buf.as_ptr(), buf.as_ptr(), h, w, 0, out.as_mut_ptr(), len)
    };
    assert_eq!(call(16, 16, &mut out, 10), TSIT_ERR_SHAPE);
    assert!(last_error().unwrap().contains("out_len"));
    assert_eq!(call(12, 12, &mut out, 3 * 12 * 12 - 1), TSIT_ERR_SHAPE);
    assert_eq!(call(14, 16, &mut out, 3 * 14 * 16), TSIT_ERR_SHAPE);
    assert_eq!(call(16, 16, &mut out, 3 * 16 * 16), TSIT_OK);
    assert_eq!(last_error(), None);
    assert_eq!(
        unsafe { tsit_translate(t, ptr::null(), buf.as_ptr(), 16, 16, 0, out.as_mut_ptr(), out.len()) },
        TSIT_ERR_NULL
    );
    let mut nan = buf.clone();
    nan[5] = f32::NAN;
    assert_eq!(
        unsafe { tsit_translate(t, nan.as_ptr(), buf.as_ptr(), 16, 16, 0, out.as_mut_ptr(), out.len()) },
        TSIT_ERR_NUMERIC
    );
    assert_eq!(unsafe { tsit_translator_info(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, TSIT_ERR_NULL);
    unsafe {
        tsit_translator_free(t);
        tsit_translator_free(ptr::null_mut());
    }
}

#[test]
fn semantic_models_take_class_ids() {
    let dir = tempfile::tempdir().unwrap();
    let t = load(&checkpoint(dir.path(), "desk-semantic"));
    let (mut cc, mut sem) = (0, 0);
    assert_eq!(unsafe { tsit_translator_info(t, &mut cc, ptr::null_mut(), ptr::null_mut(), &mut sem) }, TSIT_OK);
    assert_eq!(sem, 1);
    let ids: Vec<f32> = (0..16 * 16).map(|i| ((i / 16) % cc as usize) as f32).collect();
    let style = pattern(3 * 16 * 16, 5);
    let mut out = vec![0f32; 3 * 16 * 16];
    let rc = unsafe { tsit_translate(t, ids.as_ptr(), style.as_ptr(), 16, 16, 0, out.as_mut_ptr(), out.len()) };
    assert_eq!(rc, TSIT_OK, "{:?}", last_error());
    assert!(out.iter().all(|v| v.is_finite()));
    let mut bad = ids.clone();
    bad[0] = 1.5;
    let rc = unsafe { tsit_translate(t, bad.as_ptr(), style.as_ptr(), 16, 16, 0, out.as_mut_ptr(), out.len()) };
    assert_eq!(rc, TSIT_ERR_DATA);
    bad[0] = cc as f32;
    let rc = unsafe { tsit_translate(t, bad.as_ptr(), style.as_ptr(), 16, 16, 0, out.as_mut_ptr(), out.len()) };
    assert_ne!(rc, TSIT_OK);
    unsafe { tsit_translator_free(t) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tsit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tsit.h")).unwrap();
    for name in [
        "typedef struct TsitTranslator TsitTranslator",
        "tsit_version(void)",
        "tsit_last_error(void)",
        "tsit_translator_load(",
        "tsit_translator_free(",
        "tsit_translator_info(",
        "tsit_translate(",
        "#define TSIT_ERR_SHAPE 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Builds tests/c/smoke.c against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().and_then(Path::parent).unwrap();
    let lib = target.join("libtsit_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(dir.path(), "desk-style-transfer");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let bin = dir.path().join("smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&bin).arg(&ckpt).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("channels=3/3 multiple=4"), "{stdout}");
}

#[test]
fn unpaired_checkpoints_load_too() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny("desk-multimodal");
    assert_eq!(c.data.mode, DataMode::Unpaired);
    let t = load(&checkpoint(dir.path(), "desk-multimodal"));
    unsafe { tsit_translator_free(t) };
}
