//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "hypoldp.h"

int main(void) {
    HldpSystem *sys = NULL;
    if (hldp_system_fixture("heisenberg", &sys) != HLDP_STATUS_OK) return 1;
    double x0[3] = {0.0, 0.0, 0.0};
    uint32_t degree = 0;
    if (hldp_hormander_degree(sys, x0, 3, &degree) != HLDP_STATUS_OK) return 2;
    double slopes[2] = {0.5, 0.25};
    double end[3];
    if (hldp_skeleton_endpoint(sys, x0, 3, slopes, 1, 1.0, end) != HLDP_STATUS_OK) return 3;
    if (hldp_hormander_degree(sys, x0, 2, &degree) != HLDP_STATUS_DIMENSION_MISMATCH) return 4;
    const char *msg = hldp_last_error();
    if (msg == NULL) return 5;
    hldp_system_free(sys);
    printf("degree=%u end=%.3f,%.3f version=%s\n", degree, end[0], end[1], hldp_version());
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    [profile_dir.join("libhypoldp_ffi.a"), profile_dir.join("deps/libhypoldp_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_compiles_and_links() {
    let (Some(cc), Some(lib)) = (compiler(), static_lib()) else {
        eprintln!("skipping: no C compiler or static library found");
        return;
    };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "program exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("degree=2 end=0.500,0.250 version={}", env!("CARGO_PKG_VERSION")));
}
