//! File formats shared by every stage: RMAT matrices, PGM/PPM images and
//! label masks, and JSON dataset manifests.

mod image;
mod manifest;
mod matrix;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use image::{read_image, read_mask, write_image, write_mask, ImageBuffer, LabelMaskBuffer};
pub use manifest::{
    read_manifest, write_manifest, DatasetManifest, DatasetMode, HeadFiles, SampleEntry,
    MANIFEST_VERSION,
};
pub use matrix::{
    decode_matrix, encode_matrix, read_matrix, read_matrix_header, write_matrix, MatrixFile,
    RMAT_MAGIC, RMAT_VERSION,
};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Write rows through the csv crate; the first row is the header.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_bytes(path, &bytes)
}
