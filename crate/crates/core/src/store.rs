//! Experience store: reviewed pipeline runs, embedded and partitioned into
//! Good and Issue cases, persisted as one JSONL file per partition.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EMBED_DIM: usize = 256;
pub const DEFAULT_K_GOOD: usize = 3;
pub const DEFAULT_K_ISSUE: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("text is empty")]
    EmptyText,
    #[error("store i/o at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("case {0}: embedding is not unit length")]
    BadEmbedding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Good,
    Issue,
}

impl Partition {
    fn file_name(self) -> &'static str {
        match self {
            Partition::Good => "good.jsonl",
            Partition::Issue => "issue.jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryContext {
    /// Both partitions: positive heuristics and negative constraints.
    Design,
    /// Good cases only, as few-shot templates.
    Generation,
}

impl std::str::FromStr for QueryContext {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "design" => Ok(Self::Design),
            "generation" => Ok(Self::Generation),
            _ => Err(format!("unknown context '{s}' (expected design or generation)")),
        }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Signed feature hashing of lowercase word unigrams and bigrams, L2-normalized.
pub fn embed(text: &str) -> Result<Vec<f64>, StoreError> {
    let toks = tokens(text);
    if toks.is_empty() {
        return Err(StoreError::EmptyText);
    }
    let mut v = vec![0.0; EMBED_DIM];
    let mut add = |feature: &str| {
        let mut h = fnv::FnvHasher::default();
        h.write(feature.as_bytes());
        let h = h.finish();
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    };
    for t in &toks {
        add(t);
    }
    for w in toks.windows(2) {
        add(&format!("{} {}", w[0], w[1]));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        // every feature cancelled; fall back to unsigned unigram counts
        for t in &toks {
            let mut h = fnv::FnvHasher::default();
            h.write(t.as_bytes());
            v[(h.finish() % EMBED_DIM as u64) as usize] += 1.0;
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Scores closer than this rank as ties.
pub const SCORE_RESOLUTION: f64 = 1e-12;

/// Ordering key of a score, so rounding noise cannot reorder tied cases.
pub fn rank_key(score: f64) -> i64 {
    (score / SCORE_RESOLUTION).round() as i64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperienceCase {
    pub id: String,
    pub partition: Partition,
    pub requirement: String,
    pub plan_digest: String,
    #[serde(default)]
    pub issues: Vec<String>,
    #[serde(default)]
    pub heuristics: Vec<String>,
    pub embedding: Vec<f64>,
}

impl ExperienceCase {
    /// Builds a case; the id hashes every content field and the embedding covers
    /// the requirement, issues and heuristics.
    pub fn new(
        partition: Partition,
        requirement: &str,
        plan_digest: &str,
        issues: Vec<String>,
        heuristics: Vec<String>,
    ) -> Result<Self, StoreError> {
        let text = std::iter::once(requirement.to_string()).chain(issues.iter().cloned()).chain(heuristics.iter().cloned());
        let embedding = embed(&text.collect::<Vec<_>>().join("\n"))?;
        let content = serde_json::json!([partition, requirement, plan_digest, issues, heuristics]);
        let id = digest(content.to_string().as_bytes());
        Ok(Self { id, partition, requirement: requirement.to_string(), plan_digest: plan_digest.to_string(), issues, heuristics, embedding })
    }

    fn check(&self) -> Result<(), StoreError> {
        let n = self.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if self.embedding.len() != EMBED_DIM || (n - 1.0).abs() > 1e-9 {
            return Err(StoreError::BadEmbedding(self.id.clone()));
        }
        Ok(())
    }
}

/// Decodes one JSONL record, rejecting embeddings that are not unit length.
pub fn parse_case_line(line: &str) -> Result<ExperienceCase, String> {
    let c: ExperienceCase = serde_json::from_str(line).map_err(|e| e.to_string())?;
    c.check().map_err(|e| e.to_string())?;
    Ok(c)
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub score: f64,
    pub case: ExperienceCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub good: usize,
    pub issue: usize,
    pub skipped_lines: usize,
}

/// Cases in memory, optionally backed by a directory of JSONL logs.
#[derive(Debug, Default)]
pub struct ExperienceStore {
    dir: Option<PathBuf>,
    cases: Vec<ExperienceCase>,
    ids: BTreeSet<String>,
    skipped: usize,
}

impl ExperienceStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `good.jsonl` and `issue.jsonl` from `dir` (missing files are empty).
    /// Unreadable or inconsistent lines are skipped and counted.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let mut s = Self { dir: Some(dir.clone()), ..Self::default() };
        for part in [Partition::Good, Partition::Issue] {
            let path = dir.join(part.file_name());
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(source) => return Err(StoreError::Io { path, source }),
            };
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_case_line(line) {
                    Ok(c) if c.partition == part => {
                        if s.ids.insert(c.id.clone()) {
                            s.cases.push(c);
                        }
                    }
                    Ok(_) => {
                        log::warn!("{}:{}: inconsistent case skipped", path.display(), n + 1);
                        s.skipped += 1;
                    }
                    Err(e) => {
                        log::warn!("{}:{}: unreadable case skipped: {e}", path.display(), n + 1);
                        s.skipped += 1;
                    }
                }
            }
        }
        Ok(s)
    }

    /// Appends a case; an existing id is a no-op returning that id.
    pub fn add(&mut self, case: ExperienceCase) -> Result<String, StoreError> {
        case.check()?;
        if self.ids.contains(&case.id) {
            return Ok(case.id);
        }
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(case.partition.file_name());
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
            let mut line = serde_json::to_string(&case).expect("case serializes");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        let id = case.id.clone();
        self.ids.insert(id.clone());
        self.cases.push(case);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[ExperienceCase] {
        &self.cases
    }

    pub fn stats(&self) -> StoreStats {
        let good = self.cases.iter().filter(|c| c.partition == Partition::Good).count();
        StoreStats { good, issue: self.cases.len() - good, skipped_lines: self.skipped }
    }

    /// Top `k_good` Good cases, then (design context only) top `k_issue` Issue
    /// cases, each by cosine similarity at [`SCORE_RESOLUTION`] with ties broken by id.
    pub fn query(&self, text: &str, context: QueryContext, k_good: usize, k_issue: usize) -> Vec<Hit> {
        if self.cases.is_empty() {
            return Vec::new();
        }
        let Ok(q) = embed(text) else { return Vec::new() };
        let top = |part: Partition, k: usize| {
            let mut hits: Vec<Hit> = self
                .cases
                .iter()
                .filter(|c| c.partition == part)
                .map(|c| Hit { score: cosine(&q, &c.embedding), case: c.clone() })
                .collect();
            hits.sort_by(|a, b| rank_key(b.score).cmp(&rank_key(a.score)).then_with(|| a.case.id.cmp(&b.case.id)));
            hits.truncate(k);
            hits
        };
        let mut out = top(Partition::Good, k_good);
        if context == QueryContext::Design {
            out.extend(top(Partition::Issue, k_issue));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(p: Partition, req: &str) -> ExperienceCase {
        ExperienceCase::new(p, req, "d", vec!["issue text".into()], vec![]).unwrap()
    }

    #[test]
    fn embedding_properties() {
        let a = embed("Hinged cabinet door").unwrap();
        assert_eq!(a, embed("hinged  CABINET door").unwrap());
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let b = embed("cabinet door hinge").unwrap();
        let c = embed("ball bearing slide").unwrap();
        assert!(cosine(&a, &b) > cosine(&a, &c));
        assert!(matches!(embed("   "), Err(StoreError::EmptyText)));
        assert!(matches!(embed(""), Err(StoreError::EmptyText)));
    }

    #[test]
    fn add_is_idempotent_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ExperienceStore::open(dir.path()).unwrap();
        let c = case(Partition::Good, "a drawer that slides");
        let id = s.add(c.clone()).unwrap();
        assert_eq!(id.len(), 16);
        assert_eq!(s.add(c).unwrap(), id);
        assert_eq!(s.len(), 1);
        s.add(case(Partition::Issue, "door clips the frame")).unwrap();
        let q1 = s.query("sliding drawer", QueryContext::Design, 3, 2);
        let back = ExperienceStore::open(dir.path()).unwrap();
        assert_eq!(back.query("sliding drawer", QueryContext::Design, 3, 2), q1);
        assert_eq!(back.stats(), StoreStats { good: 1, issue: 1, skipped_lines: 0 });
    }

    #[test]
    fn corrupted_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ExperienceStore::open(dir.path()).unwrap();
        s.add(case(Partition::Good, "lamp arm")).unwrap();
        let path = dir.path().join("good.jsonl");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        // an Issue case in the Good log is inconsistent
        text.push_str(&serde_json::to_string(&case(Partition::Issue, "x")).unwrap());
        text.push('\n');
        fs::write(&path, text).unwrap();
        let back = ExperienceStore::open(dir.path()).unwrap();
        assert_eq!(back.stats(), StoreStats { good: 1, issue: 0, skipped_lines: 2 });
    }

    #[test]
    fn generation_context_excludes_issues() {
        let mut s = ExperienceStore::in_memory();
        for i in 0..5 {
            s.add(case(Partition::Good, &format!("good case {i} door"))).unwrap();
            s.add(case(Partition::Issue, &format!("issue case {i} door"))).unwrap();
        }
        let g = s.query("door", QueryContext::Generation, 3, 2);
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|h| h.case.partition == Partition::Good));
        let d = s.query("door", QueryContext::Design, 3, 2);
        assert_eq!(d.iter().filter(|h| h.case.partition == Partition::Issue).count(), 2);
        assert!(ExperienceStore::in_memory().query("door", QueryContext::Design, 3, 2).is_empty());
    }
}
