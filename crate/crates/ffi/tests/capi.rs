use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use imprintlab::dataset::EmbeddingSet;
use imprintlab::formats;
use imprintlab::head::{ClassifierHead, HeadFlags};
use imprintlab_ffi::*;

fn head_bytes() -> Vec<u8> {
    let h = ClassifierHead::new(
        2,
        vec![1.0, 2.0, 3.0, 4.0],
        vec![1.0, 3.0],
        vec!["a".into(), "b".into()],
        HeadFlags::ORIGINAL,
    )
    .unwrap();
    formats::write_head(&h)
}

unsafe fn load_head() -> *mut ImlHead {
    let bytes = head_bytes();
    let mut h = ptr::null_mut();
    assert_eq!(iml_head_from_bytes(bytes.as_ptr(), bytes.len(), &mut h), ImlStatus::Ok);
    h
}

unsafe fn last_error() -> String {
    CStr::from_ptr(iml_last_error_message()).to_string_lossy().into_owned()
}

#[test]
fn head_accessors_and_scoring() {
    unsafe {
        let h = load_head();
        assert_eq!(iml_head_num_classes(h), 2);
        assert_eq!(iml_head_dim(h), 2);
        assert_eq!(iml_head_flags(h), 0);

        let mut row = [0.0; 2];
        let mut bias = 0.0;
        assert_eq!(iml_head_row(h, 1, row.as_mut_ptr(), 2, &mut bias), ImlStatus::Ok);
        assert_eq!((row, bias), ([3.0, 4.0], 3.0));
        assert_eq!(
            iml_head_row(h, 2, row.as_mut_ptr(), 2, ptr::null_mut()),
            ImlStatus::IndexOutOfRange
        );

        let x = [1.0, 0.0];
        let mut logits = [0.0; 2];
        assert_eq!(iml_head_logits(h, x.as_ptr(), 2, logits.as_mut_ptr(), 2), ImlStatus::Ok);
        assert_eq!(logits, [2.0, 6.0]);
        let mut class = usize::MAX;
        assert_eq!(iml_head_classify(h, x.as_ptr(), 2, &mut class), ImlStatus::Ok);
        assert_eq!(class, 1);

        assert_eq!(
            iml_head_logits(h, x.as_ptr(), 1, logits.as_mut_ptr(), 2),
            ImlStatus::DimensionMismatch
        );
        assert_eq!(
            iml_head_logits(h, x.as_ptr(), 2, logits.as_mut_ptr(), 1),
            ImlStatus::BufferTooSmall
        );

        let mut len = 0;
        assert_eq!(
            iml_head_class_name(h, 0, ptr::null_mut(), 0, &mut len),
            ImlStatus::BufferTooSmall
        );
        assert_eq!(len, 1);
        let mut buf = [0u8; 4];
        assert_eq!(iml_head_class_name(h, 1, buf.as_mut_ptr(), 4, &mut len), ImlStatus::Ok);
        assert_eq!(&buf[..len], b"b");

        assert_eq!(
            iml_head_to_bytes(h, ptr::null_mut(), 0, &mut len),
            ImlStatus::BufferTooSmall
        );
        let mut out = vec![0u8; len];
        assert_eq!(iml_head_to_bytes(h, out.as_mut_ptr(), len, &mut len), ImlStatus::Ok);
        assert_eq!(out, head_bytes());
        iml_head_free(h);
    }
}

#[test]
fn quantile_imprinting_through_handles() {
    unsafe {
        let h = load_head();
        let mut p = ptr::null_mut();
        assert_eq!(iml_profile_build(h, &mut p), ImlStatus::Ok);
        assert_eq!(iml_profile_dim(p), 2);
        let mut sorted = [0.0; 2];
        let mut median_bias = 0.0;
        assert_eq!(
            iml_profile_values(p, sorted.as_mut_ptr(), 2, &mut median_bias),
            ImlStatus::Ok
        );
        // sorted weights [4,3,2,1] in blocks of 2: medians 3.5 and 1.5
        assert_eq!(sorted, [3.5, 1.5]);
        assert_eq!(median_bias, 2.0);

        let x = [0.1, 0.9];
        let mut row = [0.0; 2];
        assert_eq!(
            iml_quantile_normalize(p, x.as_ptr(), 2, row.as_mut_ptr(), 2),
            ImlStatus::Ok
        );
        assert_eq!(row, [1.5, 3.5]);

        let name = CString::new("c").unwrap();
        for profile in [p as *const ImlProfile, ptr::null()] {
            let mut h2 = ptr::null_mut();
            assert_eq!(
                iml_add_class_done(h, profile, x.as_ptr(), 2, name.as_ptr(), &mut h2),
                ImlStatus::Ok
            );
            assert_eq!(iml_head_num_classes(h2), 3);
            let mut bias = 0.0;
            assert_eq!(iml_head_row(h2, 2, row.as_mut_ptr(), 2, &mut bias), ImlStatus::Ok);
            assert_eq!((row, bias), ([1.5, 3.5], 2.0));
            iml_head_free(h2);
        }
        // the input handle is untouched
        assert_eq!(iml_head_num_classes(h), 2);

        let dup = CString::new("a").unwrap();
        let mut h2 = ptr::null_mut();
        assert_eq!(
            iml_add_class_done(h, p, x.as_ptr(), 2, dup.as_ptr(), &mut h2),
            ImlStatus::DuplicateClassName
        );
        assert!(h2.is_null());
        iml_profile_free(p);
        iml_head_free(h);
    }
}

#[test]
fn linear_imprinting_through_handles() {
    unsafe {
        let h = load_head();
        let name = CString::new("c").unwrap();
        let x = [3.0, 4.0];
        let mut h2 = ptr::null_mut();
        assert_eq!(
            iml_add_class_qi(h, x.as_ptr(), 2, name.as_ptr(), &mut h2),
            ImlStatus::HeadState
        );
        assert!(last_error().contains("unit rows"));

        let mut m = ptr::null_mut();
        assert_eq!(iml_qi_modify_head(h, &mut m), ImlStatus::Ok);
        assert_eq!(iml_head_flags(m), 3);
        assert_eq!(
            iml_add_class_qi(m, x.as_ptr(), 2, name.as_ptr(), &mut h2),
            ImlStatus::Ok
        );
        let mut row = [0.0; 2];
        let mut bias = 1.0;
        assert_eq!(iml_head_row(h2, 2, row.as_mut_ptr(), 2, &mut bias), ImlStatus::Ok);
        assert_eq!((row, bias), ([0.6, 0.8], 0.0));

        let zero = [0.0, 0.0];
        let mut h3 = ptr::null_mut();
        assert_eq!(
            iml_add_class_qi(m, zero.as_ptr(), 2, name.as_ptr(), &mut h3),
            ImlStatus::ZeroVector
        );
        for p in [h, m, h2] {
            iml_head_free(p);
        }
    }
}

#[test]
fn evaluation_summary() {
    unsafe {
        let h = load_head();
        let set = EmbeddingSet::new(2, vec![1.0, 0.0, -1.0, 0.0], vec![0, 1], vec!["b".into(), "a".into()]).unwrap();
        let bytes = formats::write_embeddings(&set);
        let mut q = ptr::null_mut();
        assert_eq!(
            iml_embeddings_from_bytes(bytes.as_ptr(), bytes.len(), &mut q),
            ImlStatus::Ok
        );
        assert_eq!((iml_embeddings_len(q), iml_embeddings_dim(q)), (2, 2));
        let mut row = [0.0; 2];
        let mut label = 9;
        assert_eq!(iml_embeddings_row(q, 1, row.as_mut_ptr(), 2, &mut label), ImlStatus::Ok);
        assert_eq!((row, label), ([-1.0, 0.0], 1));

        let mut s = ImlEvalSummary {
            num_queries: 0,
            top1_accuracy: 0.0,
            original_total: 0,
            original_top1_accuracy: 0.0,
            interference_count: 0,
            interference_fraction: 0.0,
        };
        // query (1,0) labeled "b" scores [2,6]: correct; (-1,0) labeled "a" scores [0,0]: tie to "a", correct
        assert_eq!(iml_evaluate(h, q, ptr::null(), 0, &mut s), ImlStatus::Ok);
        assert_eq!(s.num_queries, 2);
        assert_eq!(s.top1_accuracy, 1.0);
        assert_eq!(s.interference_fraction, 0.0);

        let new = [1usize];
        assert_eq!(iml_evaluate(h, q, new.as_ptr(), 1, &mut s), ImlStatus::Ok);
        assert_eq!(s.original_total, 1);
        assert_eq!(s.interference_count, 0);
        assert_eq!(s.interference_fraction, 0.0);
        iml_embeddings_free(q);
        iml_head_free(h);
    }
}

#[test]
fn files_and_bad_input() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("h.hed").to_str().unwrap()).unwrap();
        let h = load_head();
        assert_eq!(iml_head_write_file(h, path.as_ptr()), ImlStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(iml_head_read_file(path.as_ptr(), &mut back), ImlStatus::Ok);
        assert_eq!(iml_head_num_classes(back), 2);

        let missing = CString::new(dir.path().join("none.hed").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(iml_head_read_file(missing.as_ptr(), &mut none), ImlStatus::Io);
        assert!(last_error().contains("none.hed"));
        let mut set = ptr::null_mut();
        assert_eq!(iml_embeddings_read_file(path.as_ptr(), &mut set), ImlStatus::Format);

        let junk = b"HED1junk";
        assert_eq!(
            iml_head_from_bytes(junk.as_ptr(), junk.len(), &mut none),
            ImlStatus::Format
        );
        assert_eq!(iml_head_from_bytes(ptr::null(), 0, &mut none), ImlStatus::NullPointer);
        assert_eq!(
            iml_head_classify(ptr::null(), ptr::null(), 0, ptr::null_mut()),
            ImlStatus::NullPointer
        );
        assert_eq!(iml_head_num_classes(ptr::null()), 0);
        iml_head_free(ptr::null_mut());

        let w = [2.0, 0.0];
        let b = [0.5];
        let n = CString::new("x").unwrap();
        let names = [n.as_ptr()];
        let mut made = ptr::null_mut();
        assert_eq!(
            iml_head_new(1, 2, w.as_ptr(), b.as_ptr(), names.as_ptr(), 4, &mut made),
            ImlStatus::InvalidArgument
        );
        assert_eq!(
            iml_head_new(1, 2, w.as_ptr(), b.as_ptr(), names.as_ptr(), 1, &mut made),
            ImlStatus::InvalidArgument
        );
        assert_eq!(
            iml_head_new(1, 2, w.as_ptr(), b.as_ptr(), names.as_ptr(), 0, &mut made),
            ImlStatus::Ok
        );
        assert_eq!(iml_head_dim(made), 2);
        for p in [h, back, made] {
            iml_head_free(p);
        }
    }
}

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/imprintlab.h");

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(HEADER).unwrap();
    for name in [
        "typedef struct ImlHead ImlHead;",
        "IML_STATUS_OK = 0",
        "iml_last_error_message",
        "iml_head_read_file",
        "iml_profile_build",
        "iml_quantile_normalize",
        "iml_add_class_done",
        "iml_qi_modify_head",
        "iml_add_class_qi",
        "iml_evaluate",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", HEADER])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libimprintlab_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/c/smoke.c");
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(build) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I", include, src])
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(stdout.trim(), "ok classes=3 predicted=1");
}
