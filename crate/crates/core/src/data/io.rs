use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelTable, PhotoRecord, Splits, UserRecord, UserTable};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub photos: PathBuf,
    pub users: PathBuf,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

impl DatasetPaths {
    /// The standard layout: photos.jsonl, users.jsonl and, when present,
    /// labels.json and splits.json.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            photos: dir.join("photos.jsonl"),
            users: dir.join("users.jsonl"),
            labels: opt("labels.json"),
            splits: opt("splits.json"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    records: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsFile {
    format_version: u64,
    labels: LabelTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    format_version: u64,
    train: BTreeSet<String>,
    test: BTreeSet<String>,
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn check_version(path: &Path, found: u64) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            path: path.to_path_buf(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Reads a header line followed by one record per line. Blank lines are
/// skipped; a file with no content at all holds zero records.
fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| parse_err(path, lineno, format!("expected format-version header: {e}")))?;
            check_version(path, h.format_version)?;
            if let Some(r) = h.records.filter(|r| r != kind) {
                return Err(parse_err(path, lineno, format!("header declares {r} records, expected {kind}")));
            }
            header_seen = true;
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        out.push((lineno, rec));
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| parse_err(path, e.line(), e))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let mut photos = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, p) in read_jsonl::<PhotoRecord>(&paths.photos, "photos")? {
        if !seen.insert(p.photo_id.clone()) {
            return Err(parse_err(&paths.photos, line, format!("duplicate photo id {}", p.photo_id)));
        }
        photos.push(p);
    }
    let mut users = UserTable::new();
    for (line, u) in read_jsonl::<UserRecord>(&paths.users, "users")? {
        let id = u.user_id.clone();
        if users.insert(u).is_some() {
            return Err(parse_err(&paths.users, line, format!("duplicate user id {id}")));
        }
    }
    let labels = match &paths.labels {
        Some(p) => Some(match read_json::<LabelsFile>(p)? {
            Some(f) => {
                check_version(p, f.format_version)?;
                f.labels
            }
            None => LabelTable::new(),
        }),
        None => None,
    };
    let splits = match &paths.splits {
        Some(p) => match read_json::<SplitsFile>(p)? {
            Some(f) => {
                check_version(p, f.format_version)?;
                Splits {
                    train: f.train,
                    test: f.test,
                }
            }
            None => Splits::default(),
        },
        None => Splits::default(),
    };
    Dataset::new(photos, users, labels, splits)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn jsonl<T: Serialize>(kind: &str, records: impl Iterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        records: Some(kind.into()),
    })?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, &r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Writes the standard layout into `dir`. labels.json is written only when
/// the dataset has labels.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        photos: dir.join("photos.jsonl"),
        users: dir.join("users.jsonl"),
        labels: ds.labels().map(|_| dir.join("labels.json")),
        splits: Some(dir.join("splits.json")),
    };
    write_atomic(&paths.photos, &jsonl("photos", ds.photos().iter())?)?;
    write_atomic(&paths.users, &jsonl("users", ds.users().iter())?)?;
    if let (Some(p), Some(labels)) = (&paths.labels, ds.labels()) {
        let mut buf = serde_json::to_vec_pretty(&LabelsFile {
            format_version: FORMAT_VERSION,
            labels: labels.clone(),
        })?;
        buf.push(b'\n');
        write_atomic(p, &buf)?;
    }
    let splits = ds.splits();
    let mut buf = serde_json::to_vec_pretty(&SplitsFile {
        format_version: FORMAT_VERSION,
        train: splits.train.clone(),
        test: splits.test.clone(),
    })?;
    buf.push(b'\n');
    write_atomic(paths.splits.as_ref().expect("set above"), &buf)?;
    Ok(paths)
}
