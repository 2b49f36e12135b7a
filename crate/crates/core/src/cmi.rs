//! Code-Mixing Index over tagged utterances, and the low/medium/high buckets.
//!
//! For an utterance of `n` tokens, `u` of them language-independent, and
//! `max_w` tokens in its most frequent language:
//!
//! ```text
//! cmi = 100 * (1 - max_w / (n - u))   if n > u
//! cmi = 0                             if n = u
//! ```

use crate::langid::{LanguageTag, TaggedUtterance};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Lower edge of the medium bucket, as the literal decimal (not 100/6).
pub const MEDIUM_LOWER: f64 = 16.7;
/// Lower edge of the high bucket.
pub const HIGH_LOWER: f64 = 30.0;
pub const CMI_MAX: f64 = 50.0;

/// Human-readable description of the bucket edges, written into reports.
pub const BUCKET_CONVENTION: &str = "low=[0,16.7) medium=[16.7,30) high=[30,50]; 16.7 is the literal decimal";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CmiError {
    #[error("cmi value {0} is outside [0, 50]")]
    OutOfRange(f64),
    #[error("unknown cmi bucket {0:?} (expected low, medium or high)")]
    UnknownBucket(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmiBucket {
    Low,
    Medium,
    High,
}

impl CmiBucket {
    pub const ALL: [CmiBucket; 3] = [CmiBucket::Low, CmiBucket::Medium, CmiBucket::High];

    pub fn as_str(self) -> &'static str {
        match self {
            CmiBucket::Low => "low",
            CmiBucket::Medium => "medium",
            CmiBucket::High => "high",
        }
    }

    /// Half-open `[lo, hi)` except for the top bucket, which is closed at 50.
    pub fn range(self) -> (f64, f64) {
        match self {
            CmiBucket::Low => (0.0, MEDIUM_LOWER),
            CmiBucket::Medium => (MEDIUM_LOWER, HIGH_LOWER),
            CmiBucket::High => (HIGH_LOWER, CMI_MAX),
        }
    }

    pub fn contains(self, cmi: f64) -> bool {
        bucket_of(cmi) == Ok(self)
    }
}

impl fmt::Display for CmiBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CmiBucket {
    type Err = CmiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" | "cmi1" => Ok(CmiBucket::Low),
            "medium" | "cmi2" => Ok(CmiBucket::Medium),
            "high" | "cmi3" => Ok(CmiBucket::High),
            _ => Err(CmiError::UnknownBucket(s.to_string())),
        }
    }
}

pub fn bucket_of(cmi_percent: f64) -> Result<CmiBucket, CmiError> {
    if !(0.0..=CMI_MAX).contains(&cmi_percent) {
        return Err(CmiError::OutOfRange(cmi_percent));
    }
    Ok(if cmi_percent < MEDIUM_LOWER {
        CmiBucket::Low
    } else if cmi_percent < HIGH_LOWER {
        CmiBucket::Medium
    } else {
        CmiBucket::High
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiBreakdown {
    /// Token counts per language (the `w_i`); independent tokens are excluded.
    pub counts: BTreeMap<LanguageTag, usize>,
    pub max_w: usize,
    pub n: usize,
    pub u: usize,
    pub cmi_percent: f64,
}

impl CmiBreakdown {
    pub fn from_tags<I: IntoIterator<Item = LanguageTag>>(tags: I) -> Self {
        let mut counts = BTreeMap::new();
        let mut n = 0;
        let mut u = 0;
        for tag in tags {
            n += 1;
            if tag.is_language() {
                *counts.entry(tag).or_insert(0) += 1;
            } else {
                u += 1;
            }
        }
        let max_w = counts.values().copied().max().unwrap_or(0);
        let cmi_percent = if n > u {
            // one correctly rounded division of exact integers, so values
            // that are exactly a bucket edge compare equal to the edge literal
            (100 * (n - u - max_w)) as f64 / (n - u) as f64
        } else {
            0.0
        };
        CmiBreakdown {
            counts,
            max_w,
            n,
            u,
            cmi_percent,
        }
    }

    pub fn count(&self, tag: LanguageTag) -> usize {
        self.counts.get(&tag).copied().unwrap_or(0)
    }

    pub fn bucket(&self) -> CmiBucket {
        bucket_of(self.cmi_percent).expect("two-language cmi is always within [0, 50]")
    }
}

pub fn compute_cmi(utterance: &TaggedUtterance) -> CmiBreakdown {
    CmiBreakdown::from_tags(utterance.tags())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiStats {
    pub n_utterances: usize,
    pub mean_cmi: f64,
    pub histogram: BTreeMap<CmiBucket, usize>,
    pub items: Vec<ItemCmi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCmi {
    pub id: String,
    pub cmi: f64,
    pub bucket: CmiBucket,
}

/// Unweighted mean of per-utterance CMI plus a bucket histogram.
pub fn corpus_stats<'a, I>(utterances: I) -> CmiStats
where
    I: IntoIterator<Item = (&'a str, &'a TaggedUtterance)>,
{
    let mut histogram: BTreeMap<CmiBucket, usize> = CmiBucket::ALL.iter().map(|&b| (b, 0)).collect();
    let items: Vec<ItemCmi> = utterances
        .into_iter()
        .map(|(id, utt)| {
            let b = compute_cmi(utt);
            ItemCmi {
                id: id.to_string(),
                cmi: b.cmi_percent,
                bucket: b.bucket(),
            }
        })
        .collect();
    for item in &items {
        *histogram.get_mut(&item.bucket).unwrap() += 1;
    }
    let mean_cmi = if items.is_empty() {
        0.0
    } else {
        items.iter().map(|i| i.cmi).sum::<f64>() / items.len() as f64
    };
    CmiStats {
        n_utterances: items.len(),
        mean_cmi,
        histogram,
        items,
    }
}
