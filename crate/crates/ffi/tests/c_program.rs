//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "haspn.h"

int main(void) {
    double lr[8 * 8];
    double sr[8 * 32];
    for (int i = 0; i < 64; i++) lr[i] = (i / 8) / 8.0;
    HaspnModel *m = NULL;
    if (haspn_model_interpolation(4, &m) != HASPN_OK) return 10;
    if (haspn_model_scale(m) != 4) return 11;
    if (haspn_model_infer(m, lr, 8, 8, sr, 256) != HASPN_OK) return 12;
    if (haspn_model_infer(m, lr, 8, 8, sr, 255) != HASPN_ERR_BUFFER) return 13;
    if (haspn_last_error()[0] == '\0') return 14;
    for (int i = 0; i < 256; i++)
        if (fabs(sr[i] - lr[(i / 32) * 8]) > 1e-12) return 15;
    haspn_model_free(m);
    double p = 0.0;
    if (haspn_psnr(sr, sr, 8, 32, 1.0, &p) != HASPN_OK || !isinf(p)) return 16;
    printf("ok %s\n", haspn_version());
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // The test binary lives in <target>/<profile>/deps.
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libhaspn_ffi.a");
    lib.is_file().then_some(lib)
}

fn compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}

#[test]
fn c_program_links_and_runs() {
    let (Some(cc), Some(lib)) = (compiler(), static_lib()) else {
        eprintln!("skipped: no C compiler or static library");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
