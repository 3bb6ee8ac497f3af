//! Portrait age progression: an external image-editing service client and a
//! deterministic local stub, plus a content-addressed image store.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use image::{DynamicImage, GenericImageView, ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MIN_DIMENSION: u32 = 128;

#[derive(Debug, Error)]
pub enum AgingError {
    #[error("image could not be decoded: {0}")]
    Decode(String),
    #[error("image is {width}x{height}; both sides must be at least 128 px")]
    TooSmall { width: u32, height: u32 },
    #[error("aging provider returned status {0}")]
    Provider(u16),
    #[error("aging provider unreachable: {0}")]
    Transport(String),
    #[error("aged image is {got_w}x{got_h}, source aspect ratio is {src_w}:{src_h}")]
    AspectMismatch {
        src_w: u32,
        src_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("aging config: {0}")]
    Config(String),
    #[error("content store: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MediaType::Png => "png",
            MediaType::Jpeg => "jpg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgingProviderKind {
    External,
    Stub,
}

/// A validated upload.
#[derive(Debug, Clone)]
pub struct Portrait {
    image_bytes: Vec<u8>,
    media_type: MediaType,
    width: u32,
    height: u32,
}

fn decode(bytes: &[u8]) -> Result<(DynamicImage, MediaType), AgingError> {
    let format = image::guess_format(bytes).map_err(|e| AgingError::Decode(e.to_string()))?;
    let media_type = match format {
        ImageFormat::Png => MediaType::Png,
        ImageFormat::Jpeg => MediaType::Jpeg,
        other => return Err(AgingError::Decode(format!("unsupported format {other:?}"))),
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| AgingError::Decode(e.to_string()))?;
    Ok((img, media_type))
}

impl Portrait {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, AgingError> {
        let (img, media_type) = decode(&bytes)?;
        let (width, height) = img.dimensions();
        if width.min(height) < MIN_DIMENSION {
            return Err(AgingError::TooSmall { width, height });
        }
        Ok(Self {
            image_bytes: bytes,
            media_type,
            width,
            height,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.image_bytes
    }

    pub fn media_type(&self) -> MediaType {
        self.media_type
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgedPortrait {
    pub image_bytes: Vec<u8>,
    pub media_type: MediaType,
    pub provider: AgingProviderKind,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgingConfig {
    pub provider: AgingProviderKind,
    /// Receives the raw image as the request body and answers with the
    /// edited image.
    pub endpoint_url: String,
    pub timeout_ms: u64,
}

impl Default for AgingConfig {
    fn default() -> Self {
        Self {
            provider: AgingProviderKind::Stub,
            endpoint_url: String::new(),
            timeout_ms: 60_000,
        }
    }
}

/// Renders `portrait` at 60 with the configured provider.
pub fn age_progress(portrait: &Portrait, config: &AgingConfig) -> Result<AgedPortrait, AgingError> {
    match config.provider {
        AgingProviderKind::Stub => stub_age(portrait),
        AgingProviderKind::External => external_age(portrait, config),
    }
}

fn encode_png(img: &DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory does not fail");
    out.into_inner()
}

/// Desaturates, compresses the tonal range toward a lighter grey and
/// boosts contrast around mid-grey: visibly older-looking and deterministic.
pub fn stub_age(portrait: &Portrait) -> Result<AgedPortrait, AgingError> {
    let (img, _) = decode(portrait.bytes())?;
    let mut rgba = img.to_rgba8();
    for px in rgba.pixels_mut() {
        let [r, g, b, a] = px.0;
        let luma = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
        let contrasted = ((luma - 128.0) * 1.3 + 128.0 + 12.0).clamp(0.0, 255.0);
        let mix = |c: u8| (0.2 * f64::from(c) + 0.8 * contrasted).round().clamp(0.0, 255.0) as u8;
        *px = Rgba([mix(r), mix(g), mix(b), a]);
    }
    let (width, height) = rgba.dimensions();
    Ok(AgedPortrait {
        image_bytes: encode_png(&DynamicImage::ImageRgba8(rgba)),
        media_type: MediaType::Png,
        provider: AgingProviderKind::Stub,
        width,
        height,
    })
}

fn external_age(portrait: &Portrait, config: &AgingConfig) -> Result<AgedPortrait, AgingError> {
    if config.endpoint_url.is_empty() {
        return Err(AgingError::Config("external provider needs endpoint_url".into()));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build()
        .map_err(|e| AgingError::Transport(e.to_string()))?;
    let response = client
        .post(&config.endpoint_url)
        .header("content-type", portrait.media_type().mime())
        .body(portrait.bytes().to_vec())
        .send()
        .map_err(|e| AgingError::Transport(e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        return Err(AgingError::Provider(status.as_u16()));
    }
    let bytes = response
        .bytes()
        .map_err(|e| AgingError::Transport(e.to_string()))?
        .to_vec();
    let (img, media_type) = decode(&bytes)?;
    let (width, height) = img.dimensions();
    let (src_w, src_h) = portrait.dimensions();
    if u64::from(width) * u64::from(src_h) != u64::from(height) * u64::from(src_w) {
        return Err(AgingError::AspectMismatch {
            src_w,
            src_h,
            got_w: width,
            got_h: height,
        });
    }
    Ok(AgedPortrait {
        image_bytes: bytes,
        media_type,
        provider: AgingProviderKind::External,
        width,
        height,
    })
}

/// Grey head-and-shoulders outline shown when aging fails.
pub fn silhouette_placeholder(width: u32, height: u32) -> AgedPortrait {
    let (w, h) = (width.max(MIN_DIMENSION), height.max(MIN_DIMENSION));
    let (fw, fh) = (f64::from(w), f64::from(h));
    let head = (fw / 2.0, fh * 0.38, fw.min(fh) * 0.2);
    let img = RgbaImage::from_fn(w, h, |x, y| {
        let (x, y) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let in_head = (x - head.0).powi(2) + (y - head.1).powi(2) <= head.2.powi(2);
        let shoulder_r = fw * 0.38;
        let in_body = y > fh * 0.62 && (x - fw / 2.0).powi(2) + (y - fh * 1.05).powi(2) <= shoulder_r.powi(2) * 1.6;
        if in_head || in_body {
            Rgba([150, 150, 150, 255])
        } else {
            Rgba([225, 225, 225, 255])
        }
    });
    AgedPortrait {
        image_bytes: encode_png(&DynamicImage::ImageRgba8(img)),
        media_type: MediaType::Png,
        provider: AgingProviderKind::Stub,
        width: w,
        height: h,
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files named by the SHA-256 of their content.
#[derive(Debug, Clone)]
pub struct ContentStore {
    root: PathBuf,
}

impl ContentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AgingError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores `bytes` and returns their hash; storing twice is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<String, AgingError> {
        let hash = content_hash(bytes);
        let path = self.root.join(&hash);
        if !path.exists() {
            let tmp = self.root.join(format!("{hash}.tmp"));
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, &path)?;
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Vec<u8>, AgingError> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AgingError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("not a content hash: {hash}"),
            )));
        }
        Ok(fs::read(self.root.join(hash))?)
    }
}
