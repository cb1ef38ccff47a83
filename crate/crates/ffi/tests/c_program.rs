//! Compiles and runs a small C program against `include/cud.h` and the
//! static library, so the header and the exported symbols are checked
//! together.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "cud.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s\n", #cond); return 1; } } while (0)

int main(int argc, char **argv) {
    double p[3] = {0.9, 0.05, 0.05}, q[3], delta = 0.0;
    CHECK(cud_w_clip(p, 3, 1, 0.5, 0.7, q, &delta) == CUD_STATUS_OK);
    CHECK(fabs(delta - 0.45) < 1e-12 && fabs(q[1] - 0.50) < 1e-12);

    double nu = 0.0;
    double r[3] = {0.5, 0.25, 0.25};
    CHECK(cud_exact_tilt(r, 3, 0, 0.25, q, &nu) == CUD_STATUS_OK);
    CHECK(fabs(q[1] - 0.375) < 1e-9);

    CudDusParams params = cud_dus_params_default();
    CHECK(params.gamma == 10.0 && params.grad_through_gate == 0);
    double z[2] = {0.0, 0.0}, loss = 0.0, grad[2];
    CHECK(cud_teacher_loss(z, 2, 0, &params, &loss, grad) == CUD_STATUS_OK);

    CHECK(cud_softmax(NULL, 2, 1.0, q) == CUD_STATUS_NULL_POINTER);
    CHECK(strcmp(cud_last_error(), "logits is null") == 0);

    CudClassifier *model = NULL;
    CHECK(cud_classifier_load(argv[1], &model) == CUD_STATUS_OK);
    CHECK(cud_classifier_num_classes(model) == 2);
    double x[2] = {0.0, 0.0}, probs[2];
    CHECK(cud_classifier_predict(model, x, 2, probs, 2) == CUD_STATUS_OK);
    CHECK(fabs(probs[0] - 0.5) < 1e-15);
    cud_classifier_free(model);
    CHECK(argc == 2);
    printf("ok %s\n", cud_version());
    return 0;
}
"#;

/// `target/<profile>`, where cargo places the static library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = artifact_dir().join("libcud_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let ckpt = dir.path().join("checkpoint.json");
    std::fs::write(
        &ckpt,
        r#"{"format": "cud-checkpoint", "version": 1, "layer_dims": [2, 2],
            "layers": [{"weights": [1, 0, 0, 1], "bias": [0, 0]}], "seed": 0, "config_hash": "c"}"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let compile = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .expect("a C compiler is installed");
    assert!(compile.status.success(), "{}", String::from_utf8_lossy(&compile.stderr));
    let run = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
