//! Image references: resolution against the annotation file's directory and
//! byte loading. Images are never decoded or copied into dataset files.

use std::path::{Path, PathBuf};

use base64::Engine;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("image `{reference}` unreadable: {reason}")]
    Unreadable { reference: String, reason: String },
    #[error("image `{0}` is empty")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub bytes: Vec<u8>,
    pub mime: String,
}

impl ImageInput {
    pub fn new(bytes: Vec<u8>, mime: impl Into<String>) -> Self {
        Self {
            bytes,
            mime: mime.into(),
        }
    }

    /// Hex SHA-256 of the image bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn data_uri(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

pub fn mime_for(reference: &str) -> &'static str {
    let ext = reference
        .rsplit('.')
        .next()
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        _ => "application/octet-stream",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageLocation {
    File(PathBuf),
    Remote(String),
}

/// Relative paths resolve against `base_dir`; `file://` and `http(s)://`
/// URIs are recognized.
pub fn resolve(base_dir: &Path, reference: &str) -> ImageLocation {
    if let Some(rest) = reference.strip_prefix("file://") {
        return ImageLocation::File(PathBuf::from(rest));
    }
    if reference.starts_with("http://") || reference.starts_with("https://") {
        return ImageLocation::Remote(reference.to_string());
    }
    let p = Path::new(reference);
    if p.is_absolute() {
        ImageLocation::File(p.to_path_buf())
    } else {
        ImageLocation::File(base_dir.join(p))
    }
}

pub async fn load_image(
    base_dir: &Path,
    reference: &str,
    http: &reqwest::Client,
) -> Result<ImageInput, ImageError> {
    let unreadable = |reason: String| ImageError::Unreadable {
        reference: reference.to_string(),
        reason,
    };
    let bytes = match resolve(base_dir, reference) {
        ImageLocation::File(path) => tokio::fs::read(&path)
            .await
            .map_err(|e| unreadable(e.to_string()))?,
        ImageLocation::Remote(url) => {
            let resp = http
                .get(&url)
                .send()
                .await
                .map_err(|e| unreadable(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(unreadable(format!("HTTP {}", resp.status())));
            }
            resp.bytes()
                .await
                .map_err(|e| unreadable(e.to_string()))?
                .to_vec()
        }
    };
    if bytes.is_empty() {
        return Err(ImageError::Empty(reference.to_string()));
    }
    Ok(ImageInput::new(bytes, mime_for(reference)))
}
