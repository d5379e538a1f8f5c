use std::collections::HashMap;
use std::io::Cursor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError};

pub type Responder = Box<dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync>;

pub const MOCK_EMBED_DIM: usize = 64;

/// Deterministic stand-in for the model service.
///
/// Chat requests are answered from templates registered under the hash of
/// their text parts, falling back to the responder closure.
pub struct MockBackend {
    templates: HashMap<String, String>,
    responder: Option<Responder>,
    pub embed_dim: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self {
            templates: HashMap::new(),
            responder: None,
            embed_dim: MOCK_EMBED_DIM,
        }
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_responder(
        responder: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Some(Box::new(responder)),
            ..Self::default()
        }
    }

    /// Answers requests whose text-part hash is `hash` with `text`.
    pub fn register(&mut self, hash: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(hash.into(), text.into());
    }

    pub(crate) fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let hash = req.text_hash();
        if let Some(t) = self.templates.get(&hash) {
            return Ok(t.clone());
        }
        match &self.responder {
            Some(r) => r(req),
            None => Err(GatewayError::MockUnhandled(hash)),
        }
    }
}

/// Unit vector derived from a hash of `text`.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// 64x64 PNG of one solid color taken from a hash of `prompt`.
pub fn mock_image(prompt: &str) -> Vec<u8> {
    let digest = Sha256::digest(prompt.as_bytes());
    let img = image::RgbImage::from_pixel(64, 64, image::Rgb([digest[0], digest[1], digest[2]]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("png encode to memory");
    out.into_inner()
}
