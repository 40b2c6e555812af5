#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rvos_core::dataset::{load_dataset, DatasetIndex};
use rvos_core::synth::{generate, SynthSpec};

pub fn rvos_bin() -> &'static str {
    env!("CARGO_BIN_EXE_rvos")
}

pub fn mock_worker(role: &str, extra: &str) -> String {
    format!("{} mock-worker --role {role} {extra}", rvos_bin()).trim_end().to_string()
}

pub fn synth(dir: &Path, spec: &SynthSpec) -> DatasetIndex {
    generate(dir, spec).expect("synth");
    load_dataset(dir, "valid_u").expect("load synth")
}

/// Every regular file under `root` keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Prediction PNGs only (drops run manifests, which carry timings).
pub fn png_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    tree(root)
        .into_iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "png"))
        .collect()
}

pub fn png_is_all_zero(path: &Path) -> bool {
    let img = image::open(path).expect("png decodes").to_luma8();
    img.pixels().all(|p| p.0[0] == 0)
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(rvos_bin()).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
