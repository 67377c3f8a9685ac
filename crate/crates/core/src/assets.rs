//! Asset catalog, text retrieval and scale/appearance selection.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("asset catalog is empty")]
    EmptyCatalog,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

mod b64_f32 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(serde::de::Error::custom("embedding byte length is not a multiple of 4"));
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: String,
    pub name: String,
    pub description: String,
    /// Mesh bounds (x, y, z) in meters.
    pub mesh_bbox: [f64; 3],
    #[serde(with = "b64_f32")]
    pub text_embedding: Vec<f64>,
    #[serde(with = "b64_f32")]
    pub image_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_path: Option<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || a.len() != b.len() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

impl AssetRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.mesh_bbox.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(format!("{}: mesh_bbox must be positive", self.asset_id));
        }
        for (label, v) in [("text", &self.text_embedding), ("image", &self.image_embedding)] {
            if (norm(v) - 1.0).abs() > 1e-6 {
                return Err(format!("{}: {label} embedding is not unit norm", self.asset_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub records: Vec<AssetRecord>,
}

impl Catalog {
    /// Reads one JSON record per line, skipping blank lines.
    pub fn load(reader: impl BufRead) -> Result<Self, AssetError> {
        let mut records = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AssetRecord = serde_json::from_str(&line)
                .map_err(|e| AssetError::Invalid { line: k + 1, message: e.to_string() })?;
            rec.validate().map_err(|message| AssetError::Invalid { line: k + 1, message })?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn save(&self, mut w: impl Write) -> Result<(), AssetError> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| AssetError::Invalid { line: 0, message: e.to_string() })?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&AssetRecord> {
        self.records.iter().find(|r| r.asset_id == id)
    }
}

pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Offline embedder: every lowercase token seeds a Gaussian vector; the
/// text embedding is the normalized sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let tokens = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty());
        for token in tokens {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
            for a in acc.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *a += g;
            }
        }
        if acc.iter().all(|x| *x == 0.0) {
            acc[0] = 1.0;
        }
        normalize(acc)
    }
}

/// Top `k` records by text-embedding cosine, ties by asset id.
pub fn rank_by_embedding<'a>(query: &[f64], catalog: &'a Catalog, k: usize) -> Result<Vec<&'a AssetRecord>, AssetError> {
    if catalog.records.is_empty() {
        return Err(AssetError::EmptyCatalog);
    }
    let mut scored: Vec<(f64, &AssetRecord)> =
        catalog.records.iter().map(|r| (cosine(query, &r.text_embedding), r)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.asset_id.cmp(&b.1.asset_id)));
    Ok(scored.into_iter().take(k).map(|(_, r)| r).collect())
}

pub fn retrieve_candidates<'a>(
    description: &str,
    catalog: &'a Catalog,
    k: usize,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<&'a AssetRecord>, AssetError> {
    rank_by_embedding(&embedder.embed(description), catalog, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub scale_term: f64,
    pub embed_term: f64,
    pub combined: f64,
}

/// Footprint sorted long-then-short, height last, divided by the largest
/// component.
pub fn normalized_dims(dims: [f64; 3]) -> [f64; 3] {
    let (a, b) = if dims[0] >= dims[1] { (dims[0], dims[1]) } else { (dims[1], dims[0]) };
    let m = a.max(dims[2]);
    if m > 0.0 { [a / m, b / m, dims[2] / m] } else { [0.0; 3] }
}

pub fn selection_score(record: &AssetRecord, target_dims: [f64; 3], crop: Option<&[f64]>, lambda: f64) -> SelectionScore {
    let t = normalized_dims(target_dims);
    let m = normalized_dims(record.mesh_bbox);
    let scale_term: f64 = t.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum();
    let embed_term = crop.map_or(0.0, |c| cosine(c, &record.image_embedding));
    SelectionScore { scale_term, embed_term, combined: embed_term - lambda * scale_term }
}

pub fn select_asset<'a>(
    candidates: &[&'a AssetRecord],
    target_dims: [f64; 3],
    crop: Option<&[f64]>,
    lambda: f64,
) -> Result<(&'a AssetRecord, SelectionScore), AssetError> {
    candidates
        .iter()
        .map(|r| (*r, selection_score(r, target_dims, crop, lambda)))
        .min_by(|a, b| b.1.combined.total_cmp(&a.1.combined).then_with(|| a.0.asset_id.cmp(&b.0.asset_id)))
        .ok_or(AssetError::NoCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, dims: [f64; 3], text: Vec<f64>, image: Vec<f64>) -> AssetRecord {
        AssetRecord {
            asset_id: id.into(),
            name: id.into(),
            description: String::new(),
            mesh_bbox: dims,
            text_embedding: normalize(text),
            image_embedding: normalize(image),
            mesh_path: None,
        }
    }

    #[test]
    fn catalog_line_format() {
        let cat = Catalog { records: vec![rec("a", [1.0, 0.5, 0.8], vec![1.0, 2.0], vec![0.0, 1.0])] };
        let mut buf = Vec::new();
        cat.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = Catalog::load(&buf[..]).unwrap();
        assert_eq!(back.records[0].asset_id, "a");
        assert!((back.records[0].text_embedding[1] - 2.0 / 5f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn loader_rejects_non_unit_embeddings() {
        let mut r = rec("a", [1.0, 1.0, 1.0], vec![1.0], vec![1.0]);
        r.text_embedding = vec![2.0];
        let line = serde_json::to_string(&r).unwrap();
        assert!(matches!(Catalog::load(line.as_bytes()), Err(AssetError::Invalid { line: 1, .. })));
    }

    #[test]
    fn exact_match_ranks_first_and_k_clamps() {
        let e = HashEmbedder::default();
        let cat = Catalog {
            records: vec![
                rec("sofa", [2.0, 0.9, 0.8], e.embed("grey fabric sofa"), vec![1.0]),
                rec("lamp", [0.3, 0.3, 1.5], e.embed("floor lamp"), vec![1.0]),
                rec("desk", [1.2, 0.6, 0.75], e.embed("wooden desk"), vec![1.0]),
            ],
        };
        let top = retrieve_candidates("floor lamp", &cat, 1, &e).unwrap();
        assert_eq!(top[0].asset_id, "lamp");
        assert_eq!(retrieve_candidates("x", &cat, 10, &e).unwrap().len(), 3);
        assert!(matches!(rank_by_embedding(&[1.0], &Catalog::default(), 1), Err(AssetError::EmptyCatalog)));
    }

    #[test]
    fn embedder_is_deterministic_and_unit() {
        let e = HashEmbedder::default();
        let a = e.embed("A big yellow table");
        assert_eq!(a, e.embed("a BIG yellow table"));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, HashEmbedder { seed: 1, ..e }.embed("a big yellow table"));
    }

    #[test]
    fn proportional_mesh_wins_without_crop() {
        let a = rec("a", [2.0, 1.0, 0.5], vec![1.0], vec![1.0]);
        let b = rec("b", [1.0, 1.0, 1.0], vec![1.0], vec![1.0]);
        let (best, score) = select_asset(&[&b, &a], [4.0, 2.0, 1.0], None, 0.5).unwrap();
        assert_eq!(best.asset_id, "a");
        assert_eq!(score.scale_term, 0.0);
        // Rotated footprint compares the same.
        assert_eq!(select_asset(&[&b, &a], [2.0, 4.0, 1.0], None, 0.5).unwrap().0.asset_id, "a");
    }

    #[test]
    fn cosine_breaks_equal_scale() {
        let a = rec("a", [1.0, 1.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]);
        let b = rec("b", [1.0, 1.0, 1.0], vec![1.0, 0.0], vec![0.6, 0.8]);
        let crop = [0.0, 1.0];
        assert_eq!(select_asset(&[&a, &b], [1.0, 1.0, 1.0], Some(&crop), 0.5).unwrap().0.asset_id, "b");
        // Full tie falls back to asset id.
        assert_eq!(select_asset(&[&b, &a], [1.0, 1.0, 1.0], None, 0.5).unwrap().0.asset_id, "a");
    }
}
