//! Compiles a small C program against the generated header and the static
//! library and runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "fgsim.h"

int main(void) {
    double px[16];
    for (int i = 0; i < 16; i++) px[i] = i / 16.0;
    FgsimSequence *a = NULL;
    if (fgsim_sequence_new(px, 4, 4, 1, 30.0, FGSIM_CHANNEL_FLUORESCENCE_CLEAN, &a) != FGSIM_STATUS_OK) return 1;
    double psnr = 0.0;
    if (fgsim_psnr(a, a, &psnr) != FGSIM_STATUS_OK || psnr != 100.0) return 2;
    if (fgsim_quantize(0.3, 1) != 0.5) return 3;
    FgsimSequence *b = NULL;
    if (fgsim_sequence_load(NULL, FGSIM_CHANNEL_REFERENCE, &b) != FGSIM_STATUS_NULL_POINTER) return 4;
    if (fgsim_last_error()[0] == '\0') return 5;
    fgsim_sequence_free(a);
    printf("ok %s\n", fgsim_version());
    return 0;
}
"#;

/// `target/<profile>` of the running test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = artifact_dir().join("libfgsim_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!(
            "skipping: no C compiler or static library at {}",
            lib.display()
        );
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("ok "), "{text}");
}
