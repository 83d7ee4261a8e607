//! Raw and enhanced dataset records, line-delimited file I/O and the
//! manifest sidecar.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("entry `{0}` does not match the pool order or size")]
    InconsistentPool(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One image with its raw caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: String,
    pub image: String,
    pub caption: String,
}

#[derive(Deserialize)]
struct RawRecord {
    image: Option<serde_json::Value>,
    caption: Option<serde_json::Value>,
    id: Option<serde_json::Value>,
}

fn string_field(
    value: Option<serde_json::Value>,
    line: usize,
    field: &'static str,
) -> Result<Option<String>, DatasetError> {
    match value {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(DatasetError::MalformedLine {
            line,
            reason: format!("field `{field}` must be a string, got {other}"),
        }),
    }
}

impl AnnotationEntry {
    /// Parses one raw annotation line. `line` is 1-based and only used for
    /// error reporting.
    pub fn parse_line(text: &str, line: usize) -> Result<Self, DatasetError> {
        let raw: RawRecord =
            serde_json::from_str(text).map_err(|e| DatasetError::MalformedLine {
                line,
                reason: e.to_string(),
            })?;
        let image = string_field(raw.image, line, "image")?
            .ok_or(DatasetError::MissingField { line, field: "image" })?;
        let caption = string_field(raw.caption, line, "caption")?
            .ok_or(DatasetError::MissingField { line, field: "caption" })?;
        let id = string_field(raw.id, line, "id")?.unwrap_or_else(|| image.clone());
        if id.is_empty() {
            return Err(DatasetError::EmptyField { line, field: "id" });
        }
        if caption.trim().is_empty() {
            return Err(DatasetError::EmptyField { line, field: "caption" });
        }
        Ok(Self { id, image, caption })
    }
}

/// Streams annotation entries in file order together with their 1-based
/// line numbers.
pub struct AnnotationReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    path: PathBuf,
}

impl<R: BufRead> AnnotationReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            path: PathBuf::from("<stream>"),
        }
    }
}

impl AnnotationReader<BufReader<File>> {
    /// Opens `path` positioned at the first record. `skip_lines` records are
    /// passed over without being parsed.
    pub fn open_at(path: &Path, skip_lines: usize) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
        let mut reader = Self {
            lines: BufReader::new(file).lines(),
            line_no: 0,
            path: path.to_path_buf(),
        };
        for _ in 0..skip_lines {
            match reader.lines.next() {
                Some(Ok(_)) => reader.line_no += 1,
                Some(Err(e)) => return Err(DatasetError::io(path, e)),
                None => break,
            }
        }
        Ok(reader)
    }
}

impl<R: BufRead> Iterator for AnnotationReader<R> {
    type Item = Result<(usize, AnnotationEntry), DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        let line_no = self.line_no;
        Some(
            line.map_err(|e| DatasetError::io(&self.path, e))
                .and_then(|text| AnnotationEntry::parse_line(&text, line_no))
                .map(|entry| (line_no, entry)),
        )
    }
}

pub fn read_annotations(path: &Path) -> Result<AnnotationReader<BufReader<File>>, DatasetError> {
    AnnotationReader::open_at(path, 0)
}

/// Number of lines (records) in a line-delimited file.
pub fn count_lines(path: &Path) -> Result<usize, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        line.map_err(|e| DatasetError::io(path, e))?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub text: String,
    pub model_id: String,
    pub sheared: bool,
    pub raw_token_count: usize,
    /// Set on an empty-slot marker: the model produced no usable caption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GeneratedCaption {
    pub fn placeholder(model_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            text: String::new(),
            model_id: model_id.into(),
            sheared: false,
            raw_token_count: 0,
            error: Some(error.into()),
        }
    }

    pub fn is_placeholder(&self) -> bool {
        self.error.is_some()
    }
}

/// An image with its raw caption and one generated caption per pool member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedEntry {
    pub id: String,
    pub image: String,
    pub caption: String,
    #[serde(default)]
    pub generated: Vec<GeneratedCaption>,
}

impl EnhancedEntry {
    pub fn from_annotation(entry: AnnotationEntry, generated: Vec<GeneratedCaption>) -> Self {
        Self {
            id: entry.id,
            image: entry.image,
            caption: entry.caption,
            generated,
        }
    }

    pub fn matches_pool(&self, pool_ids: &[String]) -> bool {
        self.generated.len() == pool_ids.len()
            && self
                .generated
                .iter()
                .zip(pool_ids)
                .all(|(g, id)| &g.model_id == id)
    }

    /// Serialized record without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("entry serializes")
    }

    /// Parses an enhanced record. Raw annotation records are accepted too
    /// (no generated captions; `id` falls back to `image`).
    pub fn parse_line(text: &str, line: usize) -> Result<Self, DatasetError> {
        #[derive(Deserialize)]
        struct Loose {
            id: Option<String>,
            image: Option<String>,
            caption: Option<String>,
            #[serde(default)]
            generated: Vec<GeneratedCaption>,
        }
        let loose: Loose = serde_json::from_str(text).map_err(|e| DatasetError::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
        let image = loose
            .image
            .ok_or(DatasetError::MissingField { line, field: "image" })?;
        let caption = loose
            .caption
            .ok_or(DatasetError::MissingField { line, field: "caption" })?;
        Ok(Self {
            id: loose.id.unwrap_or_else(|| image.clone()),
            image,
            caption,
            generated: loose.generated,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entry_count: usize,
    pub pool_ids: Vec<String>,
    pub shear_policy_digest: String,
    pub created_at: String,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn read_manifest(data_path: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = manifest_path(data_path);
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::MalformedLine {
        line: 1,
        reason: e.to_string(),
    })
}

/// Writes enhanced records one per line, rejecting entries whose generated
/// captions disagree with the pool.
pub struct EnhancedWriter<W: Write> {
    out: W,
    pool_ids: Vec<String>,
    written: usize,
    bytes: u64,
}

impl<W: Write> EnhancedWriter<W> {
    pub fn new(out: W, pool_ids: Vec<String>) -> Self {
        Self {
            out,
            pool_ids,
            written: 0,
            bytes: 0,
        }
    }

    pub fn write(&mut self, entry: &EnhancedEntry) -> Result<(), DatasetError> {
        if !entry.matches_pool(&self.pool_ids) {
            return Err(DatasetError::InconsistentPool(entry.id.clone()));
        }
        let mut line = entry.to_line();
        line.push('\n');
        self.out
            .write_all(line.as_bytes())
            .map_err(|e| DatasetError::io("<enhanced output>", e))?;
        self.written += 1;
        self.bytes += line.len() as u64;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let tmp = tmp_path(path);
    let body = serde_json::to_vec_pretty(value).expect("value serializes");
    fs::write(&tmp, body).map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".tmp");
    PathBuf::from(name)
}

/// Writes `entries` to `path` and the manifest to `<path>.manifest.json`.
/// Nothing is left at `path` when an entry is rejected.
pub fn write_enhanced<I>(
    entries: I,
    path: &Path,
    pool_ids: &[String],
    shear_policy_digest: &str,
) -> Result<DatasetManifest, DatasetError>
where
    I: IntoIterator<Item = EnhancedEntry>,
{
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(|e| DatasetError::io(&tmp, e))?;
    let mut writer = EnhancedWriter::new(BufWriter::new(file), pool_ids.to_vec());
    let result = entries.into_iter().try_for_each(|e| writer.write(&e));
    if let Err(e) = result {
        drop(writer);
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    let count = writer.written();
    writer
        .into_inner()
        .into_inner()
        .map_err(|e| DatasetError::io(&tmp, e.into_error()))?
        .sync_all()
        .map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))?;

    let manifest = DatasetManifest {
        entry_count: count,
        pool_ids: pool_ids.to_vec(),
        shear_policy_digest: shear_policy_digest.to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    write_json_atomic(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn read_enhanced(path: &Path) -> Result<Vec<EnhancedEntry>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| DatasetError::io(path, e))?;
            EnhancedEntry::parse_line(&line, i + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn pool() -> Vec<String> {
        ["m1", "m2", "m3", "m4"].map(String::from).to_vec()
    }

    fn entry(id: &str, k: usize) -> EnhancedEntry {
        EnhancedEntry {
            id: id.into(),
            image: format!("{id}.jpg"),
            caption: format!("caption of {id}"),
            generated: pool()
                .into_iter()
                .take(k)
                .map(|m| GeneratedCaption {
                    text: format!("{m} says hi."),
                    model_id: m,
                    sheared: false,
                    raw_token_count: 4,
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn reads_valid_lines_in_order() {
        let data = r#"{"image":"a.jpg","caption":"one"}
{"image":"b.jpg","caption":"two","id":"B"}
{"image":"c.jpg","caption":"three"}
"#;
        let got: Vec<_> = AnnotationReader::new(Cursor::new(data))
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, 1);
        assert_eq!(got[0].1.id, "a.jpg");
        assert_eq!(got[1].1.id, "B");
        assert_eq!(got[2].1.caption, "three");
    }

    #[test]
    fn missing_caption_is_reported_with_line() {
        let mut r = AnnotationReader::new(Cursor::new(r#"{"image":"a.jpg"}"#));
        match r.next().unwrap() {
            Err(DatasetError::MissingField { line: 1, field: "caption" }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_fields() {
        assert!(matches!(
            AnnotationEntry::parse_line("not json", 7),
            Err(DatasetError::MalformedLine { line: 7, .. })
        ));
        assert!(matches!(
            AnnotationEntry::parse_line(r#"{"image":"a","caption":"  "}"#, 2),
            Err(DatasetError::EmptyField { line: 2, field: "caption" })
        ));
        assert!(matches!(
            AnnotationEntry::parse_line(r#"{"image":"a","caption":3}"#, 1),
            Err(DatasetError::MalformedLine { .. })
        ));
        assert!(matches!(
            AnnotationEntry::parse_line("", 4),
            Err(DatasetError::MalformedLine { line: 4, .. })
        ));
    }

    #[test]
    fn empty_stream_yields_nothing() {
        assert_eq!(AnnotationReader::new(Cursor::new("")).count(), 0);
    }

    #[test]
    fn write_zero_and_two_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let m = write_enhanced(Vec::new(), &path, &pool(), "d").unwrap();
        assert_eq!(m.entry_count, 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "");

        let path = dir.path().join("two.jsonl");
        let m = write_enhanced(vec![entry("a", 4), entry("b", 4)], &path, &pool(), "d").unwrap();
        assert_eq!(m.entry_count, 2);
        assert_eq!(m.pool_ids.len(), 4);
        assert_eq!(count_lines(&path).unwrap(), 2);
        assert_eq!(read_manifest(&path).unwrap(), m);
        assert_eq!(read_enhanced(&path).unwrap(), vec![entry("a", 4), entry("b", 4)]);
    }

    #[test]
    fn short_generated_list_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let err = write_enhanced(vec![entry("a", 4), entry("b", 3)], &path, &pool(), "d");
        assert!(matches!(err, Err(DatasetError::InconsistentPool(id)) if id == "b"));
        assert!(!path.exists());
        assert!(!manifest_path(&path).exists());
    }

    #[test]
    fn wrong_pool_order_is_inconsistent() {
        let mut e = entry("a", 4);
        e.generated.swap(0, 1);
        let mut w = EnhancedWriter::new(Vec::new(), pool());
        assert!(matches!(w.write(&e), Err(DatasetError::InconsistentPool(_))));
    }

    #[test]
    fn placeholder_field_only_serialized_when_set() {
        let e = entry("a", 1);
        assert!(!e.to_line().contains("error"));
        let p = GeneratedCaption::placeholder("m1", "timeout");
        assert!(serde_json::to_string(&p).unwrap().contains(r#""error":"timeout""#));
    }

    #[test]
    fn raw_records_parse_as_enhanced() {
        let e = EnhancedEntry::parse_line(r#"{"image":"x.jpg","caption":"c"}"#, 1).unwrap();
        assert_eq!(e.id, "x.jpg");
        assert!(e.generated.is_empty());
    }

    #[test]
    fn manifest_sidecar_name() {
        assert_eq!(
            manifest_path(Path::new("out/enhanced.jsonl")),
            PathBuf::from("out/enhanced.jsonl.manifest.json")
        );
    }
}
