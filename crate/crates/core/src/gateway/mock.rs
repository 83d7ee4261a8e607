//! Deterministic captioning backend.
//!
//! A mock caption is a pure function of `(model_id, seed, image digest)`.
//! Its first sentence contains every style word of the model exactly once
//! plus a few distinct content words; further sentences carry only content
//! words. Captions run to `natural_length` tokens (the tail may stop
//! mid-sentence) and are then cut to `max_new_tokens`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Neutral vocabulary shared by all mock models.
pub const CONTENT_WORDS: &[&str] = &[
    "dog", "cat", "bench", "park", "tree", "river", "bridge", "car", "street", "house", "window",
    "door", "table", "chair", "lamp", "book", "cup", "plate", "bread", "apple", "orange", "banana",
    "flower", "garden", "grass", "mountain", "lake", "boat", "beach", "wave", "sand", "sky",
    "cloud", "sun", "moon", "star", "bird", "horse", "cow", "sheep", "field", "fence", "road",
    "bicycle", "bus", "train", "station", "platform", "city", "tower", "church", "market", "shop",
    "child", "woman", "man", "girl", "boy", "couple", "family", "crowd", "player", "ball",
    "stadium", "kitchen", "sofa", "bed", "pillow", "blanket", "mirror", "painting", "wall",
    "floor", "stairs", "roof", "chimney", "snow", "ice", "forest", "path", "rock", "stone",
    "waterfall", "island", "harbor", "ship", "plane", "airport", "guitar", "piano", "drum",
    "camera", "phone", "laptop", "desk", "office", "hat", "coat", "dress", "shirt", "shoe",
    "umbrella", "bag", "basket", "bottle", "glass", "candle", "clock", "sign", "poster", "statue",
    "fountain", "pond", "duck", "swan", "fish", "frog", "butterfly", "leaf", "branch", "pumpkin",
    "cake", "pizza", "sandwich", "salad", "soup", "coffee", "tea", "wine", "truck", "tractor",
    "barn", "village", "castle", "gate", "garage", "pool", "tent", "campfire", "kite", "balloon",
    "red", "blue", "green", "yellow", "wooden", "old", "small", "large", "bright", "dark",
];

/// Words never used as content; style words for unknown model ids are drawn
/// from here.
pub const STYLE_POOL: &[&str] = &[
    "image", "scene", "features", "overall", "appears", "picture", "standing", "holding",
    "wearing", "posing", "photo", "shows", "background", "foreground", "closeup", "depicts",
    "setting", "various", "visible", "located", "captured", "vibrant", "atmosphere", "composition",
    "displayed", "surrounded", "positioned", "detailed", "perspective", "moment", "framed",
    "illuminated", "arranged", "prominent", "serene", "bustling", "striking", "captivating",
    "notable", "featuring",
];

pub const STYLE_WORDS_PER_MODEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFault {
    /// Every call times out.
    Timeout,
    /// Every call fails with this HTTP status.
    Status(u16),
    /// Every call returns an empty caption.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockBehavior {
    /// Empty means: derived from the model id.
    pub style_words: Vec<String>,
    /// Token length of an uncut caption; 0 means the model's default.
    pub natural_length: usize,
    pub latency_ms: u64,
    pub fault: Option<MockFault>,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            style_words: Vec::new(),
            natural_length: 0,
            latency_ms: 0,
            fault: None,
        }
    }
}

fn canonical(model_id: &str) -> String {
    model_id
        .to_ascii_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect()
}

/// Built-in style vocabularies for the four reference captioners; other ids
/// get a deterministic draw from [`STYLE_POOL`].
pub fn default_style_words(model_id: &str) -> Vec<String> {
    let preset: Option<&[&str]> = match canonical(model_id).as_str() {
        "minigpt4" => Some(&["image", "scene", "features", "overall", "appears"]),
        "otter" => Some(&["picture", "standing", "holding", "wearing", "posing"]),
        "qwenvl" => Some(&["photo", "shows", "background", "foreground", "closeup"]),
        "llava15" | "llava" => Some(&["depicts", "setting", "various", "visible", "located"]),
        _ => None,
    };
    if let Some(words) = preset {
        return words.iter().map(|w| w.to_string()).collect();
    }
    let mut rng = rng_for(&[b"style", model_id.as_bytes()]);
    STYLE_POOL
        .choose_multiple(&mut rng, STYLE_WORDS_PER_MODEL)
        .map(|w| w.to_string())
        .collect()
}

/// Uncut caption length in tokens: long for the verbose captioners, medium
/// otherwise.
pub fn default_natural_length(model_id: &str) -> usize {
    match canonical(model_id).as_str() {
        "minigpt4" | "llava15" | "llava" => 90,
        "otter" => 40,
        "qwenvl" => 30,
        _ => 40,
    }
}

fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"capforge-mock");
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl MockBehavior {
    pub fn style_words_for(&self, model_id: &str) -> Vec<String> {
        if self.style_words.is_empty() {
            default_style_words(model_id)
        } else {
            self.style_words.clone()
        }
    }

    pub fn natural_length_for(&self, model_id: &str) -> usize {
        if self.natural_length == 0 {
            default_natural_length(model_id)
        } else {
            self.natural_length
        }
    }

    /// The caption for one image. `max_new_tokens` caps the token count.
    pub fn caption(
        &self,
        model_id: &str,
        seed: u64,
        image_digest: &str,
        max_new_tokens: usize,
    ) -> String {
        let mut rng = rng_for(&[
            model_id.as_bytes(),
            &seed.to_le_bytes(),
            image_digest.as_bytes(),
        ]);
        let style = self.style_words_for(model_id);
        let target = self.natural_length_for(model_id).min(max_new_tokens).max(1);

        let mut tokens: Vec<String> = Vec::with_capacity(target + 16);
        let mut first = true;
        while tokens.len() < target {
            let n_content = rng.random_range(3..=6);
            let mut sentence: Vec<String> = CONTENT_WORDS
                .choose_multiple(&mut rng, n_content)
                .map(|w| w.to_string())
                .collect();
            if first {
                sentence.extend(style.iter().cloned());
                first = false;
            }
            sentence.shuffle(&mut rng);
            tokens.extend(sentence);
            tokens.push(".".into());
        }
        tokens.truncate(target);

        let mut out = String::new();
        for tok in tokens {
            if tok != "." && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&tok);
        }
        out
    }
}
