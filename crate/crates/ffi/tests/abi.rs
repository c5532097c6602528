use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use twohead_ffi::*;

fn last_error() -> String {
    let p = twohead_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_net(seed: u64) -> *mut TwoheadNet {
    let mut net = ptr::null_mut();
    let status = unsafe { twohead_net_new(16, 16, 1, 4, 8, seed, &mut net) };
    assert_eq!(status, TwoheadStatus::Ok);
    assert!(!net.is_null());
    net
}

fn forward(net: *const TwoheadNet, input: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut logits = vec![0.0; 4];
    let mut emb = vec![0.0; 8];
    let mut norm = 0.0;
    let status = unsafe {
        twohead_net_forward(net, input.as_ptr(), input.len(), logits.as_mut_ptr(), 4, emb.as_mut_ptr(), 8, &mut norm)
    };
    assert_eq!(status, TwoheadStatus::Ok, "{}", last_error());
    (logits, emb, norm)
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(twohead_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn net_lifecycle_and_forward() {
    let net = new_net(7);
    let mut info = TwoheadNetInfo::default();
    assert_eq!(unsafe { twohead_net_info(net, &mut info) }, TwoheadStatus::Ok);
    assert_eq!((info.height, info.width, info.channels, info.n_classes, info.d_emb), (16, 16, 1, 4, 8));
    assert!(info.param_count > 0);

    let input: Vec<f64> = (0..256).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
    let (logits, emb, norm) = forward(net, &input);
    assert!(logits.iter().all(|v| v.is_finite()));
    let n2: f64 = emb.iter().map(|v| v * v).sum();
    assert!((n2 - 1.0).abs() < 1e-9);
    assert!(norm > 0.0);

    // same seed, same network
    let twin = new_net(7);
    assert_eq!(forward(twin, &input), (logits, emb, norm));
    unsafe {
        twohead_net_free(net);
        twohead_net_free(twin);
        twohead_net_free(ptr::null_mut());
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.bin").to_str().unwrap()).unwrap();
    let net = new_net(3);
    assert_eq!(unsafe { twohead_net_save(net, path.as_ptr()) }, TwoheadStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { twohead_net_load(path.as_ptr(), &mut loaded) }, TwoheadStatus::Ok);
    let input = vec![0.25; 256];
    assert_eq!(forward(net, &input), forward(loaded, &input));
    unsafe {
        twohead_net_free(net);
        twohead_net_free(loaded);
    }
}

#[test]
fn errors_are_reported() {
    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/dir/net.bin").unwrap();
    assert_eq!(unsafe { twohead_net_load(missing.as_ptr(), &mut out) }, TwoheadStatus::Io);
    assert!(out.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { twohead_net_new(16, 16, 1, 4, 8, 0, ptr::null_mut()) }, TwoheadStatus::NullPointer);
    assert!(last_error().contains("out"));
    assert_eq!(unsafe { twohead_net_new(0, 16, 1, 4, 8, 0, &mut out) }, TwoheadStatus::InvalidArgument);

    let net = new_net(1);
    let mut logits = vec![0.0; 4];
    let mut emb = vec![0.0; 8];
    let short = [0.0; 10];
    let status = unsafe {
        twohead_net_forward(net, short.as_ptr(), 10, logits.as_mut_ptr(), 4, emb.as_mut_ptr(), 8, ptr::null_mut())
    };
    assert_eq!(status, TwoheadStatus::ShapeMismatch);
    assert!(last_error().contains("256"));
    unsafe { twohead_net_free(net) };
}

#[test]
fn distances_and_mining() {
    let emb = [0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0];
    let labels = [0usize, 0, 1, 1];
    let mut d = vec![0.0; 16];
    assert_eq!(unsafe { twohead_pairwise_sq_distances(emb.as_ptr(), 4, 2, d.as_mut_ptr()) }, TwoheadStatus::Ok);
    assert_eq!(d[1], 1.0);
    assert_eq!(d[2], 4.0);
    assert_eq!(d[3], 18.0);
    assert_eq!(d[2 * 4 + 3], 10.0);

    let mut set = ptr::null_mut();
    let status = unsafe { twohead_mine(emb.as_ptr(), labels.as_ptr(), 4, 2, TwoheadMining::BatchHard, 0.2, &mut set) };
    assert_eq!(status, TwoheadStatus::Ok);
    assert_eq!(unsafe { twohead_triplets_len(set) }, 4);
    let mut t = TwoheadTriplet::default();
    assert_eq!(unsafe { twohead_triplets_get(set, 0, &mut t) }, TwoheadStatus::Ok);
    // anchor 0: farthest positive 1, nearest negative 2
    assert_eq!((t.anchor, t.positive, t.negative), (0, 1, 2));
    assert_eq!(unsafe { twohead_triplets_get(set, 4, &mut t) }, TwoheadStatus::InvalidArgument);
    unsafe { twohead_triplets_free(set) };
    assert_eq!(unsafe { twohead_triplets_len(ptr::null()) }, 0);

    let single = [0usize, 1, 2, 3];
    let mut none = ptr::null_mut();
    let status = unsafe { twohead_mine(emb.as_ptr(), single.as_ptr(), 4, 2, TwoheadMining::SemiHard, 0.2, &mut none) };
    assert_eq!(status, TwoheadStatus::EmptyResult);
    assert!(none.is_null());
}

#[test]
fn metrics() {
    let emb = [0.0, 0.0, 0.1, 0.0, 5.0, 5.0, 5.1, 5.0];
    let labels = [0usize, 0, 1, 1];
    let mut r = 0.0;
    assert_eq!(unsafe { twohead_recall_at_k(emb.as_ptr(), labels.as_ptr(), 4, 2, 1, &mut r) }, TwoheadStatus::Ok);
    assert_eq!(r, 1.0);
    assert_eq!(
        unsafe { twohead_recall_at_k(emb.as_ptr(), labels.as_ptr(), 4, 2, 4, &mut r) },
        TwoheadStatus::InvalidArgument
    );

    let truth = [0usize, 0, 1, 1, 2, 2];
    let permuted = [2usize, 2, 0, 0, 1, 1];
    let mut v = 0.0;
    assert_eq!(unsafe { twohead_nmi(truth.as_ptr(), permuted.as_ptr(), 6, &mut v) }, TwoheadStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { twohead_nmi(truth.as_ptr(), permuted.as_ptr(), 0, &mut v) }, TwoheadStatus::EmptyResult);
}

#[test]
fn header_is_current_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/twohead.h")).unwrap();
    for symbol in [
        "twohead_last_error",
        "twohead_net_new",
        "twohead_net_load",
        "twohead_net_save",
        "twohead_net_free",
        "twohead_net_info",
        "twohead_net_forward",
        "twohead_pairwise_sq_distances",
        "twohead_mine",
        "twohead_triplets_len",
        "twohead_triplets_get",
        "twohead_triplets_free",
        "twohead_recall_at_k",
        "twohead_nmi",
        "TWOHEAD_STATUS_OK",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
    // syntax check with the system C compiler when one is installed
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"twohead.h\"\nint main(void) { TwoheadNet *n = 0; \
         return twohead_net_new(8, 8, 1, 2, 4, 0, &n) == TWOHEAD_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    match std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; skipped syntax check"),
    }
}
