use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::scalar::{dot, norm, Real};

/// Distance space of an index. Detection always uses `Cosine`; the other
/// spaces exist for benchmark comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    Cosine,
    SquaredL2,
    InnerProduct,
}

impl Distance {
    pub fn name(self) -> &'static str {
        match self {
            Distance::Cosine => "cosine",
            Distance::SquaredL2 => "l2",
            Distance::InnerProduct => "ip",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "angular" => Some(Distance::Cosine),
            "l2" | "squared-l2" | "euclidean" => Some(Distance::SquaredL2),
            "ip" | "inner-product" | "dot" => Some(Distance::InnerProduct),
            _ => None,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Distance::Cosine => 0,
            Distance::SquaredL2 => 1,
            Distance::InnerProduct => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        [Distance::Cosine, Distance::SquaredL2, Distance::InnerProduct]
            .into_iter()
            .find(|d| d.tag() == t)
    }

    /// Brings a vector into the stored form: unit length for cosine,
    /// unchanged otherwise.
    pub fn prepare<F: Real>(self, v: &[F]) -> Result<Vec<F>, IndexError> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        match self {
            Distance::Cosine => {
                let n = norm(v);
                if n == F::zero() {
                    return Err(IndexError::ZeroVector);
                }
                Ok(v.iter().map(|&x| x / n).collect())
            }
            _ => Ok(v.to_vec()),
        }
    }

    /// Distance between two prepared vectors.
    #[inline]
    pub fn eval<F: Real>(self, a: &[F], b: &[F]) -> F {
        match self {
            Distance::Cosine => (F::one() - dot(a, b)).max(F::zero()),
            Distance::InnerProduct => F::one() - dot(a, b),
            Distance::SquaredL2 => F::squared_l2(a, b),
        }
    }
}

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance<F: Real>(u: &[F], v: &[F]) -> Result<F, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == F::zero() || nv == F::zero() {
        return Err(IndexError::ZeroVector);
    }
    let two = F::one() + F::one();
    Ok((F::one() - dot(u, v) / (nu * nv)).max(F::zero()).min(two))
}
