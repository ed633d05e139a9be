//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use hipe::{load_image, Image};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn load_dir(name: &str) -> Vec<(String, Image)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data_dir().join(name))
        .expect("bundled data directory")
        .map(|e| e.expect("directory entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, load_image(&p).expect("bundled image loads"))
        })
        .collect()
}

/// The ten 128x128 natural images.
pub fn corpus() -> Vec<(String, Image)> {
    load_dir("corpus")
}

/// Five low-light versions of corpus images.
pub fn dark_corpus() -> Vec<(String, Image)> {
    load_dir("dark")
}
