use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::QualityLabel;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: QualityLabel,
}

/// Ordered `(relative path, label)` records. On disk: one `path,label` line
/// per record, UTF-8, no header.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Parse {
                    path: "<manifest>".into(),
                    line: i + 1,
                    message: format!("duplicate path '{}'", r.path),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<QualityLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let (path, label) = line
                .rsplit_once(',')
                .ok_or_else(|| err(format!("expected 'path,label', got '{line}'")))?;
            if path.is_empty() {
                return Err(err("empty path".into()));
            }
            let label = label.parse::<QualityLabel>().map_err(err)?;
            if !seen.insert(path.to_string()) {
                return Err(err(format!("duplicate path '{path}'")));
            }
            records.push(ManifestRecord {
                path: path.to_string(),
                label,
            });
        }
        Ok(Self { records })
    }

    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{},{}\n", r.path, r.label))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_record() {
        let m = Manifest::parse("img/a.png,good\n", "m").unwrap();
        assert_eq!(
            m.records(),
            &[ManifestRecord {
                path: "img/a.png".into(),
                label: QualityLabel::Good
            }]
        );
    }

    #[test]
    fn bad_label_reports_line() {
        let err = Manifest::parse("x.png,good\nimg/a.png,excellent\n", "m.csv").unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, "m.csv");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_path_rejected() {
        assert!(Manifest::parse("a.png,good\na.png,reject\n", "m").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::parse("a/b.png,usable\nc.png,reject\nd,e.png,good\n", "m").unwrap();
        let path = dir.path().join("m.csv");
        m.save(&path).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);
        assert_eq!(m.records()[2].path, "d,e.png");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            Manifest::load(Path::new("/no/such/manifest.csv")),
            Err(Error::MissingFile(_))
        ));
    }
}
