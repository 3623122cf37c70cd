//! Compiles a small C program against the generated header and the static
//! library, then runs it. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "lot.h"

int main(void) {
    LotModel *m = NULL;
    if (lot_model_init(10, 4, 5, 3, 7, &m) != LOT_STATUS_OK) return 1;
    uint32_t ctx[2] = {4, 5};
    double probs[10];
    if (lot_model_next_dist(m, ctx, 2, NULL, 0, probs, 10) != LOT_STATUS_OK) return 2;
    double s = 0;
    for (int i = 0; i < 10; i++) s += probs[i];
    if (fabs(s - 1.0) > 1e-12) return 3;
    double p[2] = {0.5, 0.5}, q[2] = {0.9, 0.1}, v = 0;
    if (lot_divergence(LOT_DIVERGENCE_JS, p, q, 2, &v) != LOT_STATUS_OK) return 4;
    if (lot_model_init(1, 4, 5, 3, 7, &m) != LOT_STATUS_CONFIG) return 5;
    if (lot_last_error() == NULL) return 6;
    LotLossParams params = lot_loss_params_default();
    LotLossTerms t;
    LotModel *a = NULL;
    lot_model_init(10, 4, 5, 3, 8, &a);
    uint32_t resp[2] = {6, 7};
    if (lot_loss(a, a, a, ctx, 2, resp, 2, &params, &t) != LOT_STATUS_OK) return 7;
    if (t.positions != 3) return 8;
    lot_model_free(a);
    printf("%.6f\n", v);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let lib = target_dir().join("liblot_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let m = [0.7, 0.3];
    let want = 0.5 * (0.5 * (0.5f64 / m[0]).ln() + 0.5 * (0.5f64 / m[1]).ln())
        + 0.5 * (0.9 * (0.9f64 / m[0]).ln() + 0.1 * (0.1f64 / m[1]).ln());
    assert!((v - want).abs() < 1e-6);
}
