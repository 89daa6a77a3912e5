//! Training and generation must only ever see the released bundle.

use std::path::Path;

fn non_test_source(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    match text.find("#[cfg(test)]") {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}

#[test]
fn downstream_modules_never_touch_private_rows() {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut files = vec![src.join("trainer.rs"), src.join("generator.rs")];
    for entry in std::fs::read_dir(src.join("divergence")).unwrap() {
        files.push(entry.unwrap().path());
    }
    for f in files {
        let code = non_test_source(&f);
        for banned in ["EncodedMatrix", "poisson_subsample", "RawTable"] {
            assert!(!code.contains(banned), "{} mentions {banned}", f.display());
        }
    }
}
