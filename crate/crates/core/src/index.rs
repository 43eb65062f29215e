//! Byte-offset index: identifier -> (file, offset, length).
//!
//! Each input file is scanned exactly once. Lookups afterwards are pure
//! in-memory hash probes; retrieving a record is a seek plus one read.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::sdf::{self, SdfError};

pub const INDEX_MAGIC: &str = "#sdforge-index v1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Sdf { path: PathBuf, source: SdfError },
    #[error("index header is {0:?}, expected {INDEX_MAGIC:?}")]
    Version(String),
    #[error("index file truncated: {0}")]
    Truncated(String),
    #[error("index line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate input path {0}")]
    DuplicatePath(PathBuf),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Where a block lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Location {
    pub file_id: u32,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub identifier: String,
    pub location: Location,
}

/// Per-file scan result.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartialIndex {
    pub entries: Vec<IndexEntry>,
    pub skipped: u64,
    pub malformed: u64,
    pub bytes_read: u64,
}

/// Identifier normalization shared by the index and all comparisons:
/// exact bytes, trailing whitespace trimmed.
pub fn normalize_identifier(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw.trim_ascii_end()).into_owned()
}

/// Counts every byte handed out by the wrapped reader.
pub struct CountingReader<R> {
    inner: R,
    count: u64,
}

impl<R> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, count: 0 }
    }

    pub fn bytes_read(&self) -> u64 {
        self.count
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count += n as u64;
        Ok(n)
    }
}

/// Scans one file, producing an entry for each block that carries `key_tag`.
pub fn index_file(path: &Path, key_tag: &str, file_id: u32) -> Result<PartialIndex, IndexError> {
    let io_err = |source| IndexError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let counting = CountingReader::new(file);
    let mut reader = sdf::read_blocks(BufReader::with_capacity(1 << 20, counting));
    let mut out = PartialIndex::default();
    for block in reader.by_ref() {
        let block = match block {
            Ok(b) => b,
            Err(SdfError::Io(e)) => return Err(io_err(e)),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                out.malformed += 1;
                continue;
            }
        };
        match sdf::find_property(&block.bytes, key_tag).map(normalize_identifier) {
            Some(id) if id.contains(['\t', '\r']) => {
                log::warn!("{}: identifier at byte {} contains a tab", path.display(), block.offset);
                out.malformed += 1;
            }
            Some(id) if !id.is_empty() => out.entries.push(IndexEntry {
                identifier: id,
                location: Location { file_id, offset: block.offset, length: block.len() },
            }),
            _ => out.skipped += 1,
        }
    }
    out.bytes_read = reader.into_inner().into_inner().bytes_read();
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OffsetIndex {
    pub file_table: Vec<PathBuf>,
    entries: IndexMap<String, Location>,
    pub duplicate_log: Vec<String>,
}

/// Scan statistics from [`build_index`], one element per input file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub bytes_read: Vec<u64>,
    pub skipped: Vec<u64>,
    pub malformed: Vec<u64>,
}

impl OffsetIndex {
    pub fn new(file_table: Vec<PathBuf>) -> Self {
        Self { file_table, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First occurrence wins; later ones go to the duplicate log.
    pub fn insert(&mut self, identifier: String, location: Location) -> bool {
        if self.entries.contains_key(&identifier) {
            log::warn!("duplicate identifier {identifier:?}; keeping first occurrence");
            self.duplicate_log.push(identifier);
            false
        } else {
            self.entries.insert(identifier, location);
            true
        }
    }

    pub fn get(&self, identifier: &str) -> Option<Location> {
        self.entries.get(identifier).copied()
    }

    pub fn contains(&self, identifier: &str) -> bool {
        self.entries.contains_key(identifier)
    }

    /// Entries in insertion order (file order, then offset).
    pub fn iter(&self) -> impl Iterator<Item = (&str, Location)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn path(&self, file_id: u32) -> Option<&Path> {
        self.file_table.get(file_id as usize).map(PathBuf::as_path)
    }

    pub fn lookup<'a, I>(&self, identifiers: I) -> Vec<(&'a str, Option<Location>)>
    where
        I: IntoIterator<Item = &'a str>,
    {
        identifiers.into_iter().map(|id| (id, self.get(id))).collect()
    }
}

/// Indexes all files, `workers` at a time, and merges in file order.
pub fn build_index(
    paths: &[PathBuf],
    key_tag: &str,
    workers: usize,
) -> Result<(OffsetIndex, BuildStats), IndexError> {
    for (i, p) in paths.iter().enumerate() {
        if paths[..i].contains(p) {
            return Err(IndexError::DuplicatePath(p.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| IndexError::Pool(e.to_string()))?;
    let partials: Vec<PartialIndex> = pool.install(|| {
        paths
            .par_iter()
            .enumerate()
            .map(|(i, p)| index_file(p, key_tag, i as u32))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut index = OffsetIndex::new(paths.to_vec());
    let mut stats = BuildStats::default();
    for partial in partials {
        stats.bytes_read.push(partial.bytes_read);
        stats.skipped.push(partial.skipped);
        stats.malformed.push(partial.malformed);
        for entry in partial.entries {
            index.insert(entry.identifier, entry.location);
        }
    }
    Ok((index, stats))
}

pub fn write_index<W: Write>(index: &OffsetIndex, sink: W) -> io::Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "{INDEX_MAGIC}")?;
    writeln!(w, "#files\t{}", index.file_table.len())?;
    for (i, p) in index.file_table.iter().enumerate() {
        writeln!(w, "f\t{i}\t{}", p.display())?;
    }
    for (id, loc) in index.iter() {
        writeln!(w, "{id}\t{}\t{}\t{}", loc.file_id, loc.offset, loc.length)?;
    }
    w.flush()
}

pub fn write_index_file(index: &OffsetIndex, path: &Path) -> Result<(), IndexError> {
    let file = File::create(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
    write_index(index, file).map_err(|source| IndexError::Io { path: path.into(), source })
}

pub fn read_index<R: Read>(source: R) -> Result<OffsetIndex, IndexError> {
    let mut reader = BufReader::new(source);
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut next_line = |line: &mut String| -> Result<bool, IndexError> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|source| IndexError::Io { path: PathBuf::from("<index>"), source })?;
        if n == 0 {
            return Ok(false);
        }
        line_no += 1;
        if !line.ends_with('\n') {
            return Err(IndexError::Truncated(format!("line {line_no} has no line terminator")));
        }
        line.pop();
        Ok(true)
    };

    if !next_line(&mut line)? {
        return Err(IndexError::Truncated("empty file".into()));
    }
    if line != INDEX_MAGIC {
        return Err(IndexError::Version(line.clone()));
    }
    if !next_line(&mut line)? {
        return Err(IndexError::Truncated("missing #files line".into()));
    }
    let n_files: usize = line
        .strip_prefix("#files\t")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| IndexError::Parse { line: 2, reason: "expected #files<TAB>n".into() })?;
    let mut files = Vec::with_capacity(n_files);
    for i in 0..n_files {
        if !next_line(&mut line)? {
            return Err(IndexError::Truncated(format!("file table ends after {i} of {n_files}")));
        }
        let mut parts = line.splitn(3, '\t');
        let ok = parts.next() == Some("f") && parts.next().and_then(|s| s.parse::<usize>().ok()) == Some(i);
        match (ok, parts.next()) {
            (true, Some(p)) => files.push(PathBuf::from(p)),
            _ => {
                return Err(IndexError::Parse {
                    line: i + 3,
                    reason: format!("expected f<TAB>{i}<TAB>path"),
                })
            }
        }
    }

    let mut index = OffsetIndex::new(files);
    let mut n = n_files + 2;
    while next_line(&mut line)? {
        n += 1;
        let bad = |reason: &str| IndexError::Parse { line: n, reason: reason.to_string() };
        let mut parts = line.rsplitn(4, '\t');
        let length: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad length"))?;
        let offset: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad offset"))?;
        let file_id: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad file id"))?;
        let id = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing identifier"))?;
        if file_id as usize >= n_files {
            return Err(bad("file id out of range"));
        }
        if length == 0 {
            return Err(bad("zero length"));
        }
        index.insert(id.to_string(), Location { file_id, offset, length });
    }
    Ok(index)
}

pub fn read_index_file(path: &Path) -> Result<OffsetIndex, IndexError> {
    let file = File::open(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
    read_index(file)
}
