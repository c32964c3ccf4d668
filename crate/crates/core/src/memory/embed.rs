use crate::scene_graph::{diff_graphs, fnv1a64, relation_triples, DiffError, EdgeCategory, SceneGraph};

/// Dimension of episode and graph embeddings.
pub const D_EMB: usize = 256;

/// Fixed-size real vector, unit length or all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zero() -> Self {
        Self(vec![0.0; D_EMB])
    }

    /// Wraps raw values; fails on wrong length or non-finite entries.
    pub fn from_values(values: Vec<f64>) -> Result<Self, String> {
        if values.len() != D_EMB {
            return Err(format!("embedding has {} values, expected {D_EMB}", values.len()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err("embedding has non-finite values".into());
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x /= n;
            }
        }
        self
    }

    /// Dot product of two stored vectors; equals cosine since both are unit
    /// or zero.
    pub fn cosine(&self, other: &Self) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Signed hash of each non-Guidance `src|kind|tgt` label triple, L2
/// normalized.
pub fn embed_graph(g: &SceneGraph) -> EmbeddingVector {
    let mut v = vec![0.0; D_EMB];
    for (s, kind, t) in relation_triples(g, |c| c != EdgeCategory::Guidance) {
        let h = fnv1a64(format!("{s}|{}|{t}", kind.as_str()).as_bytes());
        let bucket = (h % D_EMB as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    EmbeddingVector(v).normalized()
}

/// Normalized sum of the per-keyframe embeddings.
pub fn embed_episode(graphs: &[SceneGraph], keyframes: &[usize]) -> EmbeddingVector {
    let mut acc = vec![0.0; D_EMB];
    for &k in keyframes {
        for (a, x) in acc.iter_mut().zip(embed_graph(&graphs[k]).values()) {
            *a += x;
        }
    }
    EmbeddingVector(acc).normalized()
}

/// Indices where the Physical relations change by at least `threshold`,
/// always including the first and last index.
pub fn extract_keyframes(graphs: &[SceneGraph], threshold: usize) -> Result<Vec<usize>, DiffError> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = vec![0];
    for i in 1..graphs.len() {
        if diff_graphs(&graphs[i - 1], &graphs[i])?.magnitude >= threshold {
            out.push(i);
        }
    }
    let last = graphs.len() - 1;
    if *out.last().expect("non-empty") != last {
        out.push(last);
    }
    Ok(out)
}
