use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affect::EmotionLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Where a manifest's images come from, declared by a `#source=` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    AffectnetStyle,
    CelebaStyle,
    Synthetic,
    #[default]
    Unspecified,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "affectnet-style" => Ok(Source::AffectnetStyle),
            "celeba-style" => Ok(Source::CelebaStyle),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::AffectnetStyle => "affectnet-style",
            Source::CelebaStyle => "celeba-style",
            Source::Synthetic => "synthetic",
            Source::Unspecified => "unspecified",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Path as written in the manifest, relative to the manifest root.
    pub path: PathBuf,
    pub label: EmotionLabel,
    pub split: Split,
}

/// A validated list of labeled images.
///
/// Text format: one record per line, `path<TAB>valence<TAB>arousal` with an
/// optional fourth `split` column; blank lines and `#` comments are ignored,
/// except `#source=<tag>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub source: Source,
    pub records: Vec<Record>,
}

impl Manifest {
    /// Reads `path`, resolving image paths against `root` (defaults to the
    /// manifest's directory) and checking that each image exists.
    pub fn load(path: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        let manifest = Self::parse(&text, path, root)?;
        for (i, r) in manifest.records.iter().enumerate() {
            let full = manifest.resolve(r);
            if !full.is_file() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    line: manifest.line_of(&text, i),
                    message: format!("image {} does not exist", full.display()),
                });
            }
        }
        Ok(manifest)
    }

    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, origin: &Path, root: PathBuf) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut source = Source::Unspecified;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let fail = |message: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(tag) = comment.trim().strip_prefix("source=") {
                    source = tag.trim().parse().map_err(fail)?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(fail(format!(
                    "expected 3 or 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let path = fields[0].trim();
            if path.is_empty() {
                return Err(fail("empty image path".into()));
            }
            let number = |name: &str, s: &str| -> Result<f32> {
                s.trim()
                    .parse::<f32>()
                    .map_err(|_| fail(format!("{name} {s:?} is not a number")))
            };
            let valence = number("valence", fields[1])?;
            let arousal = number("arousal", fields[2])?;
            let label = EmotionLabel::new(valence, arousal).map_err(|e| fail(e.to_string()))?;
            let split = match fields.get(3) {
                Some(s) => s.trim().parse().map_err(fail)?,
                None => Split::Train,
            };
            if !seen.insert(path.to_string()) {
                return Err(fail(format!("duplicate image path {path}")));
            }
            records.push(Record {
                path: PathBuf::from(path),
                label,
                split,
            });
        }
        Ok(Self { root, source, records })
    }

    fn line_of(&self, text: &str, record: usize) -> usize {
        text.lines()
            .enumerate()
            .filter(|(_, l)| {
                let l = l.trim();
                !l.is_empty() && !l.starts_with('#')
            })
            .nth(record)
            .map(|(i, _)| i + 1)
            .unwrap_or(0)
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        self.root.join(&r.path)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    /// Records of one split, keeping the manifest's root and source.
    pub fn filter_split(&self, split: Split) -> Self {
        Self {
            root: self.root.clone(),
            source: self.source,
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.source != Source::Unspecified {
            out.push_str(&format!("#source={}\n", self.source));
        }
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.path.display(),
                r.label.valence(),
                r.label.arousal(),
                r.split
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        Manifest::parse(text, Path::new("m.tsv"), PathBuf::from("/data"))
    }

    #[test]
    fn well_formed_file() {
        let m = parse("#source=synthetic\na.png\t0.5\t-0.5\n# note\n\nb.png\t0\t0\tval\nc.png\t-1\t1\ttest\n").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.source, Source::Synthetic);
        assert_eq!(m.records[1].split, Split::Val);
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/a.png"));
        let counts = m.split_counts();
        assert_eq!(counts[&Split::Train], 1);
        assert_eq!(counts[&Split::Test], 1);
        let again = parse(&m.to_text()).unwrap();
        assert_eq!(again.records, m.records);
    }

    #[test]
    fn out_of_range_label_reports_line() {
        let err = parse("a.png\t0\t0\nb.png\t1.5\t0\n").unwrap_err();
        match err {
            Error::Manifest { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("valence"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_path_rejected() {
        let err = parse("a.png\t0\t0\na.png\t0.1\t0\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse("a.png\t0\n").is_err());
        assert!(parse("a.png\tx\t0\n").is_err());
        assert!(parse("a.png\t0\t0\tholdout\n").is_err());
        assert!(parse("#source=imagenet\n").is_err());
    }

    #[test]
    fn missing_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "missing.png\t0\t0\n").unwrap();
        let err = Manifest::load(&path, None).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
    }
}
