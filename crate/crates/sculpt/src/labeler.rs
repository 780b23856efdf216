//! Conditioning descriptors: categorical clothing types and text-derived
//! color embeddings.
//!
//! Clothing type is a closed set of six upper/lower combinations encoded
//! one-hot. Color conditioning is a 512-dim embedding of a fixed prompt
//! template; a deterministic mock encoder keeps the pipeline self-contained,
//! and externally computed embeddings can be imported through the container
//! format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{invalid, Error, Result};

/// Dimension of color/text embeddings.
pub const TEXT_EMBED_DIM: usize = 512;

/// Number of clothing categories.
pub const CLOTHING_TYPE_COUNT: usize = 6;

/// The six clothing categories, with stable integer codes 0-5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClothingType {
    ShortSleeveTshirtShortTrouser = 0,
    ShortSleeveTshirtLongTrouser = 1,
    LongSleeveTshirtLongTrouser = 2,
    LongSleeveTshirtShortTrouser = 3,
    ShirtLongTrouser = 4,
    ShirtShortTrouser = 5,
}

pub const ALL_CLOTHING_TYPES: [ClothingType; CLOTHING_TYPE_COUNT] = [
    ClothingType::ShortSleeveTshirtShortTrouser,
    ClothingType::ShortSleeveTshirtLongTrouser,
    ClothingType::LongSleeveTshirtLongTrouser,
    ClothingType::LongSleeveTshirtShortTrouser,
    ClothingType::ShirtLongTrouser,
    ClothingType::ShirtShortTrouser,
];

impl ClothingType {
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<ClothingType> {
        ALL_CLOTHING_TYPES
            .get(code)
            .copied()
            .ok_or_else(|| invalid(format!("clothing type code {code} out of range 0-5")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClothingType::ShortSleeveTshirtShortTrouser => "short sleeve T-shirt-short trouser",
            ClothingType::ShortSleeveTshirtLongTrouser => "short sleeve T-shirt-long trouser",
            ClothingType::LongSleeveTshirtLongTrouser => "long sleeve T-shirt-long trouser",
            ClothingType::LongSleeveTshirtShortTrouser => "long sleeve T-shirt-short trouser",
            ClothingType::ShirtLongTrouser => "shirt-long trouser",
            ClothingType::ShirtShortTrouser => "shirt-short trouser",
        }
    }

    pub fn from_name(name: &str) -> Result<ClothingType> {
        ALL_CLOTHING_TYPES
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| invalid(format!("unknown clothing type `{name}`")))
    }

    /// True when the upper garment has long sleeves (shirts count as long).
    pub fn long_sleeves(self) -> bool {
        matches!(
            self,
            ClothingType::LongSleeveTshirtLongTrouser
                | ClothingType::LongSleeveTshirtShortTrouser
                | ClothingType::ShirtLongTrouser
                | ClothingType::ShirtShortTrouser
        )
    }

    /// True when the lower garment is long trousers.
    pub fn long_trousers(self) -> bool {
        matches!(
            self,
            ClothingType::ShortSleeveTshirtLongTrouser
                | ClothingType::LongSleeveTshirtLongTrouser
                | ClothingType::ShirtLongTrouser
        )
    }
}

/// One-hot encoding of a clothing type.
pub fn encode_clothing_type(t: ClothingType) -> [f64; CLOTHING_TYPE_COUNT] {
    let mut out = [0.0; CLOTHING_TYPE_COUNT];
    out[t.code()] = 1.0;
    out
}

/// A color prompt: the two garment colors plus the exact rendered template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorPrompt {
    pub upper_color: String,
    pub lower_color: String,
    pub prompt: String,
}

/// Builds the fixed color-description sentence. The inputs substitute
/// verbatim; no normalization is applied.
pub fn build_color_prompt(upper: &str, lower: &str) -> Result<ColorPrompt> {
    if upper.is_empty() || lower.is_empty() {
        return Err(invalid("color strings must be nonempty"));
    }
    let prompt = format!(
        "The color of the upper body clothing is {upper} and the color of the pants is {lower}"
    );
    Ok(ColorPrompt {
        upper_color: upper.to_string(),
        lower_color: lower.to_string(),
        prompt,
    })
}

/// The 16 colors the mock encoder is verified against.
pub const COLOR_LEXICON: [&str; 16] = [
    "red", "blue", "green", "yellow", "orange", "purple", "pink", "brown", "black", "white",
    "gray", "cyan", "magenta", "beige", "navy", "olive",
];

/// Named RGB values for the lexicon, used by the synthetic texture painter.
pub fn lexicon_rgb(color: &str) -> Option<[f64; 3]> {
    Some(match color {
        "red" => [0.80, 0.12, 0.12],
        "blue" => [0.15, 0.25, 0.80],
        "green" => [0.15, 0.60, 0.20],
        "yellow" => [0.90, 0.85, 0.15],
        "orange" => [0.92, 0.55, 0.12],
        "purple" => [0.50, 0.20, 0.65],
        "pink" => [0.95, 0.60, 0.75],
        "brown" => [0.45, 0.30, 0.15],
        "black" => [0.08, 0.08, 0.08],
        "white" => [0.95, 0.95, 0.95],
        "gray" => [0.50, 0.50, 0.50],
        "cyan" => [0.15, 0.75, 0.80],
        "magenta" => [0.85, 0.20, 0.70],
        "beige" => [0.85, 0.78, 0.62],
        "navy" => [0.10, 0.12, 0.40],
        "olive" => [0.45, 0.48, 0.15],
        _ => return None,
    })
}

/// Deterministic stand-in for a neural text encoder: an FNV-1a hash of the
/// prompt seeds a fixed PRNG that draws a unit-norm 512-vector. Identical
/// prompts always map to identical vectors; unrelated prompts land nearly
/// orthogonal.
pub fn mock_text_encoder(prompt: &str) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in prompt.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h);
    let mut v: Vec<f64> = (0..TEXT_EMBED_DIM)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Embedding table keyed by prompt string.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingMap {
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingMap {
    /// Writes prompts + vectors as a container: prompt list in the manifest
    /// metadata, vectors in a single `embeddings` blob keyed by row index.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = Container::new("embeddings");
        let mut flat = Vec::with_capacity(self.entries.len() * TEXT_EMBED_DIM);
        for (i, (prompt, vec)) in self.entries.iter().enumerate() {
            c.metadata.insert(format!("prompt_{i}"), prompt.clone());
            flat.extend_from_slice(vec);
        }
        c.metadata
            .insert("count".into(), self.entries.len().to_string());
        c.put_f32("embeddings", &[self.entries.len(), TEXT_EMBED_DIM], flat);
        c.save(dir)
    }

    /// Loads a table, enforcing 512-dim rows. With `renormalize`, rows are
    /// rescaled to unit norm after the f32 round trip.
    pub fn load(dir: &Path, renormalize: bool) -> Result<EmbeddingMap> {
        let c = Container::load(dir)?;
        if c.kind != "embeddings" {
            return Err(Error::ModelFormat(format!(
                "container kind `{}` is not an embedding table",
                c.kind
            )));
        }
        let (shape, data) = c.get_f32("embeddings")?;
        if shape.len() != 2 || shape[1] != TEXT_EMBED_DIM {
            return Err(Error::ModelFormat(format!(
                "embeddings must be N x {TEXT_EMBED_DIM}, got {shape:?}"
            )));
        }
        let count = shape[0];
        let mut entries = BTreeMap::new();
        for i in 0..count {
            let prompt = c
                .metadata
                .get(&format!("prompt_{i}"))
                .ok_or_else(|| Error::ModelFormat(format!("missing prompt_{i}")))?
                .clone();
            let mut row = data[i * TEXT_EMBED_DIM..(i + 1) * TEXT_EMBED_DIM].to_vec();
            if renormalize {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in row.iter_mut() {
                        *x /= norm;
                    }
                }
            }
            entries.insert(prompt, row);
        }
        Ok(EmbeddingMap { entries })
    }

    /// Picks the row with the highest score; consumes externally computed
    /// score tables for prompt selection.
    pub fn argmax_score<'a>(scores: &'a BTreeMap<String, f64>) -> Option<&'a str> {
        scores
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(k, _)| k.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_encodings_are_orthonormal() {
        for (i, &a) in ALL_CLOTHING_TYPES.iter().enumerate() {
            let ea = encode_clothing_type(a);
            assert_eq!(ea[i], 1.0);
            assert_eq!(ea.iter().sum::<f64>(), 1.0);
            for (j, &b) in ALL_CLOTHING_TYPES.iter().enumerate() {
                let eb = encode_clothing_type(b);
                let dot: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn prompt_template_exact() {
        let p = build_color_prompt("red", "blue").unwrap();
        assert_eq!(
            p.prompt,
            "The color of the upper body clothing is red and the color of the pants is blue"
        );
    }

    #[test]
    fn prompt_preserves_whitespace_and_rejects_empty() {
        let p = build_color_prompt("deep  red ", " sky blue").unwrap();
        assert_eq!(
            p.prompt,
            "The color of the upper body clothing is deep  red  and the color of the pants is  sky blue"
        );
        assert!(build_color_prompt("", "blue").is_err());
        assert!(build_color_prompt("red", "").is_err());
    }

    #[test]
    fn mock_encoder_unit_norm_and_deterministic() {
        let a = mock_text_encoder("The color of the upper body clothing is red and the color of the pants is blue");
        let b = mock_text_encoder("The color of the upper body clothing is red and the color of the pants is blue");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lexicon_prompts_pairwise_dissimilar() {
        let embeds: Vec<Vec<f64>> = COLOR_LEXICON
            .iter()
            .map(|c| {
                let p = build_color_prompt(c, c).unwrap();
                mock_text_encoder(&p.prompt)
            })
            .collect();
        for i in 0..embeds.len() {
            for j in 0..i {
                let cos = cosine(&embeds[i], &embeds[j]);
                assert!(cos.abs() < 0.5, "lexicon colors {i},{j} cosine {cos}");
            }
        }
    }

    #[test]
    fn lexicon_has_rgb_for_every_color() {
        for c in COLOR_LEXICON {
            assert!(lexicon_rgb(c).is_some(), "missing rgb for {c}");
        }
    }

    #[test]
    fn embedding_map_roundtrip_and_dim_enforcement() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = EmbeddingMap::default();
        m.entries
            .insert("a prompt".into(), mock_text_encoder("a prompt"));
        m.entries
            .insert("another".into(), mock_text_encoder("another"));
        m.save(dir.path()).unwrap();
        let back = EmbeddingMap::load(dir.path(), false).unwrap();
        assert_eq!(back.entries.len(), 2);
        for (k, v) in &m.entries {
            let got = &back.entries[k];
            for (a, b) in got.iter().zip(v) {
                assert!((a - b).abs() < 1e-6); // f32 storage
            }
        }

        // Wrong dimensionality must be rejected.
        let dir2 = tempfile::tempdir().unwrap();
        let mut c = Container::new("embeddings");
        c.metadata.insert("prompt_0".into(), "p".into());
        c.metadata.insert("count".into(), "1".into());
        c.put_f32("embeddings", &[1, 256], vec![0.0; 256]);
        c.save(dir2.path()).unwrap();
        match EmbeddingMap::load(dir2.path(), false) {
            Err(Error::ModelFormat(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_embedding_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        EmbeddingMap::default().save(dir.path()).unwrap();
        let back = EmbeddingMap::load(dir.path(), false).unwrap();
        assert!(back.entries.is_empty());
    }

    #[test]
    fn clothing_type_code_roundtrip() {
        for t in ALL_CLOTHING_TYPES {
            assert_eq!(ClothingType::from_code(t.code()).unwrap(), t);
            assert_eq!(ClothingType::from_name(t.name()).unwrap(), t);
        }
        assert!(ClothingType::from_code(6).is_err());
    }
}
