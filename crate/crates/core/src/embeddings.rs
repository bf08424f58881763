//! Text embedding providers.
//!
//! The default is a hashed character n-gram encoder: every n-gram of the
//! padded text `<text>` hashes to one coordinate with a pseudo-random sign,
//! counts accumulate, and the result is L2-normalized. Vectors for whole
//! tokens can also be loaded from a file, with the hashed encoder as fallback
//! for tokens the file does not cover.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{fnv1a, mix64};

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Unit-length vector for non-empty text.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn deterministic(&self) -> bool {
        true
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn normalize_in_place(v: &mut [f64], text: &str) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding(text.to_string()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNgramConfig {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub seed: u64,
}

impl Default for HashedNgramConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            min_n: 3,
            max_n: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashedNgram {
    config: HashedNgramConfig,
    salt: u64,
}

impl HashedNgram {
    pub fn new(config: HashedNgramConfig) -> Result<Self> {
        if config.dim < 8 {
            return Err(Error::InvalidParameter(format!("embedding dim {} < 8", config.dim)));
        }
        if config.min_n == 0 || config.min_n > config.max_n {
            return Err(Error::InvalidParameter(format!(
                "empty n-gram range {}..={}",
                config.min_n, config.max_n
            )));
        }
        Ok(Self {
            config,
            salt: mix64(config.seed),
        })
    }

    pub fn config(&self) -> HashedNgramConfig {
        self.config
    }
}

impl EmbeddingProvider for HashedNgram {
    fn name(&self) -> &str {
        "hashed"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let padded: Vec<char> = std::iter::once('<').chain(text.chars()).chain(std::iter::once('>')).collect();
        let mut v = vec![0.0; self.config.dim];
        let mut buf = String::new();
        for n in self.config.min_n..=self.config.max_n {
            if n > padded.len() {
                break;
            }
            for window in padded.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = mix64(fnv1a(buf.as_bytes()) ^ self.salt);
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                v[(h % self.config.dim as u64) as usize] += sign;
            }
        }
        // Very short texts may have no n-gram of the minimum length.
        if v.iter().all(|&x| x == 0.0) {
            let h = mix64(fnv1a(text.as_bytes()) ^ self.salt);
            v[(h % self.config.dim as u64) as usize] = 1.0;
        }
        normalize_in_place(&mut v, text)?;
        Ok(v)
    }
}

/// Token vectors read from a `token \t f1 \t f2 ...` file.
pub struct FileEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
    fallback: HashedNgram,
}

impl FileEmbeddings {
    pub fn from_reader<R: BufRead>(input: R, path: &str, seed: u64) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let token = fields.next().unwrap_or_default().trim().to_lowercase();
            let values: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
            if token.is_empty() || values.is_empty() {
                return Err(Error::malformed(path, line_no, "expected a token and at least one value"));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::DimensionMismatch {
                        line: line_no,
                        expected: d,
                        found: values.len(),
                    })
                }
                Some(_) => {}
            }
            vectors.insert(token, values);
        }
        let dim = dim.ok_or_else(|| Error::malformed(path, 0, "no vectors"))?;
        let fallback = HashedNgram::new(HashedNgramConfig {
            dim,
            seed,
            ..HashedNgramConfig::default()
        })?;
        Ok(Self { vectors, dim, fallback })
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file), &path.display().to_string(), seed)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn name(&self) -> &str {
        "file"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for token in text.split_whitespace() {
            let token = token.to_lowercase();
            let v = match self.vectors.get(&token) {
                Some(v) => v.clone(),
                None => self.fallback.embed(&token)?,
            };
            sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyText);
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        normalize_in_place(&mut sum, text)?;
        Ok(sum)
    }
}

/// Provider selection as written on the command line: `hashed` or `file:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSpec {
    Hashed(HashedNgramConfig),
    File(PathBuf),
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Hashed(HashedNgramConfig::default())
    }
}

impl EmbeddingSpec {
    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match self {
            EmbeddingSpec::Hashed(cfg) => Arc::new(HashedNgram::new(*cfg)?),
            EmbeddingSpec::File(path) => Arc::new(FileEmbeddings::load(path, 0)?),
        })
    }
}

impl fmt::Display for EmbeddingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSpec::Hashed(cfg) if *cfg == HashedNgramConfig::default() => f.write_str("hashed"),
            EmbeddingSpec::Hashed(cfg) => {
                write!(f, "hashed:{}:{}-{}:{}", cfg.dim, cfg.min_n, cfg.max_n, cfg.seed)
            }
            EmbeddingSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for EmbeddingSpec {
    type Err = Error;

    /// `hashed`, `hashed:<dim>:<min>-<max>:<seed>`, or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad embedding spec {s:?}"));
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(EmbeddingSpec::File(PathBuf::from(path)));
        }
        if s == "hashed" {
            return Ok(EmbeddingSpec::default());
        }
        let rest = s.strip_prefix("hashed:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        let [dim, range, seed] = parts[..] else {
            return Err(bad());
        };
        let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
        Ok(EmbeddingSpec::Hashed(HashedNgramConfig {
            dim: dim.parse().map_err(|_| bad())?,
            min_n: lo.parse().map_err(|_| bad())?,
            max_n: hi.parse().map_err(|_| bad())?,
            seed: seed.parse().map_err(|_| bad())?,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hashed() -> HashedNgram {
        HashedNgram::new(HashedNgramConfig::default()).unwrap()
    }

    #[test]
    fn deterministic_unit_vectors() {
        let e = hashed();
        let a = e.embed("vegetable garden").unwrap();
        assert_eq!(a, e.embed("vegetable garden").unwrap());
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(matches!(e.embed("  "), Err(Error::EmptyText)));
    }

    #[test]
    fn shared_ngrams_raise_similarity() {
        let e = hashed();
        let base = e.embed("vegetable garden").unwrap();
        let near = cosine(&base, &e.embed("vegetable gardens").unwrap());
        let far = cosine(&base, &e.embed("amex card late fee").unwrap());
        assert!(near > far, "{near} <= {far}");
        assert!((cosine(&base, &base) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_provider_means_and_falls_back() {
        let data = "alpha\t1\t0\t0\t0\t0\t0\t0\t0\nbeta\t0\t1\t0\t0\t0\t0\t0\t0\n";
        let f = FileEmbeddings::from_reader(data.as_bytes(), "mem", 3).unwrap();
        let v = f.embed("alpha beta").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-12 && (v[1] - h).abs() < 1e-12);
        let unknown = f.embed("gamma").unwrap();
        let fallback = HashedNgram::new(HashedNgramConfig {
            dim: 8,
            seed: 3,
            ..HashedNgramConfig::default()
        })
        .unwrap();
        assert_eq!(unknown, fallback.embed("gamma").unwrap());
    }

    #[test]
    fn ragged_file_is_rejected() {
        let data = "a\t1\t2\nb\t1\n";
        assert!(matches!(
            FileEmbeddings::from_reader(data.as_bytes(), "mem", 0),
            Err(Error::DimensionMismatch {
                line: 2,
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn spec_strings() {
        assert_eq!("hashed".parse::<EmbeddingSpec>().unwrap(), EmbeddingSpec::default());
        let s: EmbeddingSpec = "hashed:32:2-4:9".parse().unwrap();
        assert_eq!(s.to_string().parse::<EmbeddingSpec>().unwrap(), s);
        assert_eq!(
            "file:/tmp/v.tsv".parse::<EmbeddingSpec>().unwrap(),
            EmbeddingSpec::File("/tmp/v.tsv".into())
        );
        assert!("bert".parse::<EmbeddingSpec>().is_err());
    }
}
