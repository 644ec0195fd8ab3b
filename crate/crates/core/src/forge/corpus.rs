//! Pre-training corpus: keyword routing, model-assisted cleaning and the
//! general/domain token mix.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::ForgeError;
use crate::gateway::{tokenize, ChatMessage, Gateway, GenParams};
use crate::templates::TemplateId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCategory {
    /// Table heading the keyword sits under ("General" or "Disorders").
    pub group: String,
    pub keyword: String,
    /// Phrases counted as hits; the keyword itself plus documented aliases.
    pub terms: Vec<String>,
    /// Article count in the reference corpus.
    pub articles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub categories: Vec<KeywordCategory>,
    pub total_articles: u64,
}

impl KeywordTable {
    /// Keywords and article counts of the reference mental-health corpus, in table order.
    pub fn reference() -> Self {
        let rows: [(&str, &str, &[&str], u64); 13] = [
            ("General", "Mental health first aid", &[], 1809),
            ("General", "Mental health", &[], 7335),
            ("Disorders", "Depression", &[], 9007),
            ("Disorders", "Anxiety", &[], 8356),
            ("Disorders", "Bipolar", &[], 8406),
            ("Disorders", "Eating disorders", &[], 7707),
            ("Disorders", "Stress management", &[], 7987),
            ("Disorders", "Suicide", &[], 7973),
            ("Disorders", "Cognitive behavioral therapy", &["CBT"], 9358),
            ("Disorders", "Grief", &[], 6086),
            ("Disorders", "PTSD", &["post-traumatic stress disorder"], 8808),
            ("Disorders", "Schizophrenia", &[], 9014),
            ("Disorders", "Substance abuse", &[], 9008),
        ];
        Self {
            categories: rows
                .iter()
                .map(|(group, keyword, aliases, articles)| KeywordCategory {
                    group: group.to_string(),
                    keyword: keyword.to_string(),
                    terms: std::iter::once(keyword.to_string())
                        .chain(aliases.iter().map(|a| a.to_string()))
                        .collect(),
                    articles: *articles,
                })
                .collect(),
            total_articles: 100_854,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, ForgeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn article_sum(&self) -> u64 {
        self.categories.iter().map(|c| c.articles).sum()
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.categories.iter().any(|c| c.keyword == keyword)
    }
}

/// Case-insensitive whole-word matcher for one phrase; inner whitespace is flexible.
fn term_regex(term: &str) -> Regex {
    let body = term
        .split_whitespace()
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(r"\s+");
    RegexBuilder::new(&format!(r"\b{body}\b"))
        .case_insensitive(true)
        .build()
        .expect("escaped phrase is a valid regex")
}

pub struct KeywordMatcher {
    table: KeywordTable,
    patterns: Vec<Vec<Regex>>,
    min_hits: usize,
}

impl KeywordMatcher {
    pub fn new(table: KeywordTable, min_hits: usize) -> Self {
        let patterns = table
            .categories
            .iter()
            .map(|c| c.terms.iter().map(|t| term_regex(t)).collect())
            .collect();
        Self {
            table,
            patterns,
            min_hits,
        }
    }

    pub fn hits(&self, text: &str) -> Vec<usize> {
        self.patterns
            .iter()
            .map(|ps| ps.iter().map(|p| p.find_iter(text).count()).sum())
            .collect()
    }

    /// First category in table order with at least `min_hits` hits.
    pub fn categorize(&self, text: &str) -> Option<&str> {
        self.hits(text)
            .into_iter()
            .position(|h| h >= self.min_hits)
            .map(|i| self.table.categories[i].keyword.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub source_path: PathBuf,
    pub category: String,
    pub token_count: usize,
    pub cleaned: bool,
    #[serde(skip)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub matched: Vec<CorpusDoc>,
    pub unmatched: Vec<PathBuf>,
    pub errors: Vec<FileFailure>,
}

fn list_text_files(folder: &Path) -> Result<Vec<PathBuf>, ForgeError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(folder)
        .map_err(|e| ForgeError::io(folder, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn doc_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Routes every plain-text file in `folder` to a keyword category.
pub fn filter_by_keywords(
    folder: &Path,
    table: &KeywordTable,
    min_hits: usize,
) -> Result<FilterResult, ForgeError> {
    let matcher = KeywordMatcher::new(table.clone(), min_hits);
    let files = list_text_files(folder)?;
    let outcomes: Vec<(PathBuf, Result<Option<CorpusDoc>, String>)> = files
        .into_par_iter()
        .map(|path| {
            let res = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .map(|text| {
                    matcher.categorize(&text).map(|cat| CorpusDoc {
                        doc_id: doc_id(&path),
                        source_path: path.clone(),
                        category: cat.to_string(),
                        token_count: tokenize::count_tokens(&text),
                        cleaned: false,
                        text,
                    })
                });
            (path, res)
        })
        .collect();
    let mut out = FilterResult::default();
    for (path, res) in outcomes {
        match res {
            Ok(Some(doc)) => out.matched.push(doc),
            Ok(None) => out.unmatched.push(path),
            Err(message) => out.errors.push(FileFailure { path, message }),
        }
    }
    Ok(out)
}

/// Plain-text files without categorization (the general side of the mix).
pub fn load_general_docs(folder: &Path) -> Result<(Vec<CorpusDoc>, Vec<FileFailure>), ForgeError> {
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for path in list_text_files(folder)? {
        match std::fs::read_to_string(&path) {
            Ok(text) => docs.push(CorpusDoc {
                doc_id: doc_id(&path),
                source_path: path,
                category: "general".into(),
                token_count: tokenize::count_tokens(&text),
                cleaned: false,
                text,
            }),
            Err(e) => errors.push(FileFailure {
                path,
                message: e.to_string(),
            }),
        }
    }
    Ok((docs, errors))
}

/// Recounts tokens with the backend tokenizer.
pub fn recount_tokens(docs: &mut [CorpusDoc], gateway: &Gateway) -> Result<(), ForgeError> {
    let counts: Vec<Result<usize, _>> = docs.par_iter().map(|d| gateway.count_tokens(&d.text)).collect();
    for (d, c) in docs.iter_mut().zip(counts) {
        d.token_count = c?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanedDoc {
    pub doc: CorpusDoc,
    pub original: String,
    /// Why the document was left uncleaned, if it was.
    pub flag: Option<String>,
}

/// Asks the backend to fix extraction artifacts. Failures leave the text as is.
pub fn clean_doc(doc: &CorpusDoc, gateway: &Gateway) -> CleanedDoc {
    let original = doc.text.clone();
    if original.trim().is_empty() {
        log::warn!("skipping empty document {}", doc.doc_id);
        return CleanedDoc {
            doc: doc.clone(),
            original,
            flag: Some("empty document skipped".into()),
        };
    }
    let prompt = TemplateId::Cleaning
        .render(&[("text", &original)])
        .expect("template variables match");
    let params = GenParams {
        max_tokens: (doc.token_count * 2).max(256) as u32,
        ..GenParams::default()
    };
    match gateway.chat(&[ChatMessage::user(prompt)], &params) {
        Ok(c) => {
            let mut cleaned = doc.clone();
            cleaned.token_count = tokenize::count_tokens(&c.text);
            cleaned.text = c.text;
            cleaned.cleaned = true;
            CleanedDoc {
                doc: cleaned,
                original,
                flag: None,
            }
        }
        Err(e) => CleanedDoc {
            doc: doc.clone(),
            original,
            flag: Some(format!("cleaning failed: {e}")),
        },
    }
}

pub fn clean_docs(docs: &[CorpusDoc], gateway: &Gateway) -> Vec<CleanedDoc> {
    docs.par_iter().map(|d| clean_doc(d, gateway)).collect()
}

/// Target `general : domain` token ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRatio {
    pub general: f64,
    pub domain: f64,
}

impl MixRatio {
    /// 160M general to 80M domain tokens.
    pub const REFERENCE: MixRatio = MixRatio {
        general: 2.0,
        domain: 1.0,
    };

    pub fn value(self) -> Result<f64, ForgeError> {
        if !(self.general.is_finite() && self.domain.is_finite())
            || self.general <= 0.0
            || self.domain <= 0.0
        {
            return Err(ForgeError::InvalidRatio(format!(
                "{}:{} (both sides must be positive)",
                self.general, self.domain
            )));
        }
        Ok(self.general / self.domain)
    }
}

impl std::str::FromStr for MixRatio {
    type Err = ForgeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (g, d) = s
            .split_once(':')
            .ok_or_else(|| ForgeError::InvalidRatio(format!("{s:?} is not general:domain")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| ForgeError::InvalidRatio(format!("{s:?} is not general:domain")))
        };
        let r = MixRatio {
            general: parse(g)?,
            domain: parse(d)?,
        };
        r.value()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    General,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub doc_id: String,
    pub source_path: PathBuf,
    pub side: Side,
    pub category: String,
    pub token_count: usize,
    pub cleaned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub docs: Vec<ManifestDoc>,
    pub domain_tokens: usize,
    pub general_tokens: usize,
    pub target_ratio: MixRatio,
    /// Achieved general/domain token ratio.
    pub mix_ratio: f64,
    /// Documents removed by down-sampling.
    pub dropped: Vec<String>,
    pub seed: u64,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<(), ForgeError> {
        crate::util::write_json_pretty(path, self).map_err(|e| ForgeError::io(path, e))
    }
}

/// Allowed relative deviation from the target ratio.
pub const RATIO_TOLERANCE: f64 = 0.05;

/// Seeded greedy subset of `docs` whose token total lands in `[lo, hi]`.
fn downsample(docs: &[CorpusDoc], lo: f64, hi: f64, seed: u64) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut total = 0usize;
    let (mut keep, mut drop) = (Vec::new(), Vec::new());
    for i in order {
        let t = docs[i].token_count;
        if (total + t) as f64 <= hi {
            total += t;
            keep.push(i);
        } else {
            drop.push(i);
        }
    }
    keep.sort_unstable();
    drop.sort_unstable();
    (total as f64 >= lo && !keep.is_empty()).then_some((keep, drop))
}

/// Mixes general and domain documents at `ratio` (within 5%), down-sampling
/// the over-represented side with a seeded shuffle.
pub fn build_manifest(
    domain: &[CorpusDoc],
    general: &[CorpusDoc],
    ratio: MixRatio,
    seed: u64,
) -> Result<CorpusManifest, ForgeError> {
    let r = ratio.value()?;
    if domain.is_empty() {
        return Err(ForgeError::EmptySide("domain"));
    }
    if general.is_empty() {
        return Err(ForgeError::EmptySide("general"));
    }
    let d_total: usize = domain.iter().map(|d| d.token_count).sum();
    let g_total: usize = general.iter().map(|d| d.token_count).sum();
    if d_total == 0 || g_total == 0 {
        return Err(ForgeError::EmptySide(if d_total == 0 { "domain" } else { "general" }));
    }
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let actual = g_total as f64 / d_total as f64;
    let (g_keep, g_drop, d_keep, d_drop) = if (actual / r - 1.0).abs() <= RATIO_TOLERANCE {
        (all(general.len()), vec![], all(domain.len()), vec![])
    } else if actual > r {
        let target = r * d_total as f64;
        let (k, dr) = downsample(
            general,
            target * (1.0 - RATIO_TOLERANCE),
            target * (1.0 + RATIO_TOLERANCE),
            seed,
        )
        .ok_or_else(|| ForgeError::RatioUnreachable(format!("general side cannot reach {target:.0} tokens")))?;
        (k, dr, all(domain.len()), vec![])
    } else {
        let target = g_total as f64 / r;
        let (k, dr) = downsample(
            domain,
            target * (1.0 - RATIO_TOLERANCE),
            target * (1.0 + RATIO_TOLERANCE),
            seed,
        )
        .ok_or_else(|| ForgeError::RatioUnreachable(format!("domain side cannot reach {target:.0} tokens")))?;
        (all(general.len()), vec![], k, dr)
    };

    let entry = |d: &CorpusDoc, side: Side| ManifestDoc {
        doc_id: d.doc_id.clone(),
        source_path: d.source_path.clone(),
        side,
        category: d.category.clone(),
        token_count: d.token_count,
        cleaned: d.cleaned,
    };
    let mut docs: Vec<ManifestDoc> = d_keep.iter().map(|&i| entry(&domain[i], Side::Domain)).collect();
    docs.extend(g_keep.iter().map(|&i| entry(&general[i], Side::General)));
    let domain_tokens: usize = docs.iter().filter(|d| d.side == Side::Domain).map(|d| d.token_count).sum();
    let general_tokens: usize = docs.iter().filter(|d| d.side == Side::General).map(|d| d.token_count).sum();
    let mut dropped: Vec<String> = d_drop.iter().map(|&i| domain[i].doc_id.clone()).collect();
    dropped.extend(g_drop.iter().map(|&i| general[i].doc_id.clone()));
    Ok(CorpusManifest {
        docs,
        domain_tokens,
        general_tokens,
        target_ratio: ratio,
        mix_ratio: general_tokens as f64 / domain_tokens as f64,
        dropped,
        seed,
    })
}
