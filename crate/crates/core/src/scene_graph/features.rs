use super::NodeKind;

/// Dimension of node feature vectors.
pub const D_NODE: usize = 64;

const KIND_BASE: usize = 56;
const POSITION_BASE: usize = 61;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature hash of the label tokens, plus kind flags in buckets
/// 56..=60 and the position in buckets 61..=63. All contributions add.
pub fn node_features(label: &str, kind: NodeKind, position: Option<[f64; 3]>) -> Vec<f64> {
    let mut f = vec![0.0; D_NODE];
    for token in label
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|t| !t.is_empty())
    {
        let h = fnv1a64(token.as_bytes());
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        let bucket = ((h >> 1) & 0x3f) as usize;
        f[bucket] += sign;
    }
    f[KIND_BASE + kind.ordinal()] += 1.0;
    if let Some(p) = position {
        for (i, x) in p.iter().enumerate() {
            f[POSITION_BASE + i] += x;
        }
    }
    f
}

/// Cosine similarity; 0 when either vector is all-zero.
pub fn feature_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
