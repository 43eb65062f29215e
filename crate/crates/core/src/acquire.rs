//! Manifest-driven downloads with MD5 verification, retry with exponential
//! backoff, and resume via HTTP range requests.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use md5::{Digest, Md5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcquireError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("manifest line {line}: destination {dest} already used on line {first}")]
    DuplicateDest { line: usize, first: usize, dest: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub url: String,
    /// Lowercase hex MD5.
    pub md5: String,
    pub size: Option<u64>,
    /// Relative to the output directory.
    pub dest: PathBuf,
}

fn is_md5_hex(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn safe_relative(p: &Path) -> bool {
    !p.as_os_str().is_empty() && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Parses `url<TAB>md5<TAB>size|-<TAB>dest` lines. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestEntry>, AcquireError> {
    let mut entries = Vec::new();
    let mut seen: Vec<(PathBuf, usize)> = Vec::new();
    let mut seen_set = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| AcquireError::Manifest { line: line_no, reason: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| AcquireError::Manifest { line: line_no, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        let [url, md5, size, dest] = fields[..] else {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        if url.is_empty() {
            return Err(bad("empty url".into()));
        }
        if !is_md5_hex(md5) {
            return Err(bad(format!("checksum {md5:?} is not 32 lowercase hex digits")));
        }
        let size = match size {
            "-" => None,
            s => Some(s.parse::<u64>().map_err(|_| bad(format!("bad size {s:?}")))?),
        };
        let dest = PathBuf::from(dest);
        if !safe_relative(&dest) {
            return Err(bad(format!("destination {} must be a relative path without '..'", dest.display())));
        }
        if !seen_set.insert(dest.clone()) {
            let first = seen.iter().find(|(d, _)| *d == dest).map_or(0, |(_, l)| *l);
            return Err(AcquireError::DuplicateDest { line: line_no, first, dest: dest.display().to_string() });
        }
        seen.push((dest.clone(), line_no));
        entries.push(ManifestEntry { url: url.to_string(), md5: md5.to_string(), size, dest });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, AcquireError> {
    let f = File::open(path).map_err(|source| AcquireError::Io { path: path.into(), source })?;
    parse_manifest(BufReader::new(f))
}

pub fn md5_hex(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Md5::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// True iff the file's MD5 equals `expected` (case-insensitive).
pub fn verify_checksum(path: &Path, expected: &str) -> Result<bool, AcquireError> {
    let got = md5_hex(path).map_err(|source| AcquireError::Io { path: path.into(), source })?;
    Ok(got.eq_ignore_ascii_case(expected.trim()))
}

/// An open transfer. `start` is the byte offset the body begins at: the
/// requested offset when the server honoured the range, otherwise 0.
pub struct Transfer {
    pub start: u64,
    pub body: Box<dyn Read + Send>,
}

pub trait Fetcher: Send + Sync {
    fn open(&self, url: &str, offset: u64) -> Result<Transfer, String>;
}

/// HTTP(S) transport.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(connect_timeout: Duration, read_timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(connect_timeout))
            .timeout_recv_body(Some(read_timeout))
            .build()
            .new_agent();
        Self { agent }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(Duration::from_secs(30), Duration::from_secs(300))
    }
}

fn content_range_start(value: &str) -> Option<u64> {
    let rest = value.trim().strip_prefix("bytes ")?;
    rest.split('-').next()?.trim().parse().ok()
}

impl Fetcher for HttpFetcher {
    fn open(&self, url: &str, offset: u64) -> Result<Transfer, String> {
        let mut req = self.agent.get(url);
        if offset > 0 {
            req = req.header("Range", format!("bytes={offset}-"));
        }
        let resp = req.call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let start = match status {
            200 => 0,
            206 => {
                let header = resp.headers().get("content-range").and_then(|v| v.to_str().ok()).unwrap_or("");
                match content_range_start(header) {
                    Some(s) if s == offset => offset,
                    _ => return Err(format!("unexpected Content-Range {header:?} for offset {offset}")),
                }
            }
            416 if offset > 0 => return self.open(url, 0),
            s => return Err(format!("HTTP status {s}")),
        };
        Ok(Transfer { start, body: Box::new(resp.into_body().into_reader()) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Relative jitter, e.g. 0.2 for ±20%.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: 0.2,
            seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Delays before retries 1..=n. Doubling with jitter, capped, and never
    /// shorter than the previous delay.
    pub fn schedule(&self, n: u32, rng: &mut ChaCha8Rng) -> Vec<Duration> {
        let mut prev = 0.0f64;
        let cap = self.max_delay.as_secs_f64();
        (0..n)
            .map(|k| {
                let nominal = self.base_delay.as_secs_f64() * 2f64.powi(k.min(62) as i32);
                let jittered = nominal.min(cap) * (1.0 + self.jitter * rng.gen_range(-1.0..=1.0));
                prev = prev.max(jittered.min(cap));
                Duration::from_secs_f64(prev)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    ChecksumMismatch { actual: String },
    FailedAfterRetries { last_error: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryReport {
    pub dest: PathBuf,
    pub status: EntryStatus,
    pub attempts: u32,
    pub bytes_transferred: u64,
    pub resumed: bool,
    /// Already present and verified; nothing was requested.
    pub skipped: bool,
    pub delays: Vec<Duration>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FetchReport {
    pub entries: Vec<EntryReport>,
}

impl FetchReport {
    pub fn ok(&self) -> usize {
        self.entries.iter().filter(|e| e.status == EntryStatus::Ok).count()
    }

    pub fn failed(&self) -> usize {
        self.entries.len() - self.ok()
    }
}

fn file_len(path: &Path) -> u64 {
    fs::metadata(path).map_or(0, |m| m.len())
}

enum Attempt {
    Complete,
    Transient(String),
}

fn transfer_once(
    fetcher: &dyn Fetcher,
    entry: &ManifestEntry,
    dest: &Path,
    report: &mut EntryReport,
) -> Attempt {
    let offset = file_len(dest);
    let mut transfer = match fetcher.open(&entry.url, offset) {
        Ok(t) => t,
        Err(e) => return Attempt::Transient(e),
    };
    let file = if transfer.start == 0 {
        File::create(dest)
    } else {
        report.resumed = true;
        OpenOptions::new().append(true).open(dest)
    };
    let mut file = match file {
        Ok(f) => f,
        Err(e) => return Attempt::Transient(format!("{}: {e}", dest.display())),
    };
    let mut buf = vec![0u8; 1 << 16];
    loop {
        match transfer.body.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                if let Err(e) = file.write_all(&buf[..n]) {
                    return Attempt::Transient(format!("{}: {e}", dest.display()));
                }
                report.bytes_transferred += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                let _ = file.flush();
                return Attempt::Transient(e.to_string());
            }
        }
    }
    if let Err(e) = file.flush() {
        return Attempt::Transient(e.to_string());
    }
    match entry.size {
        Some(size) if file_len(dest) < size => {
            Attempt::Transient(format!("short transfer: {} of {size} bytes", file_len(dest)))
        }
        _ => Attempt::Complete,
    }
}

fn fetch_one(fetcher: &dyn Fetcher, entry: &ManifestEntry, out_dir: &Path, policy: &RetryPolicy, index: u64) -> EntryReport {
    let dest = out_dir.join(&entry.dest);
    let mut report = EntryReport {
        dest: dest.clone(),
        status: EntryStatus::FailedAfterRetries { last_error: String::new() },
        attempts: 0,
        bytes_transferred: 0,
        resumed: false,
        skipped: false,
        delays: Vec::new(),
    };
    if let Some(parent) = dest.parent() {
        if let Err(e) = fs::create_dir_all(parent) {
            report.status = EntryStatus::FailedAfterRetries { last_error: format!("{}: {e}", parent.display()) };
            return report;
        }
    }
    if dest.exists() {
        let len = file_len(&dest);
        let complete = entry.size.map_or(true, |s| len == s);
        if complete && md5_hex(&dest).is_ok_and(|h| h == entry.md5) {
            report.status = EntryStatus::Ok;
            report.skipped = true;
            return report;
        }
        if entry.size.is_some_and(|s| len >= s) || entry.size.is_none() {
            // complete-looking but wrong, or unknowable: start over
            let _ = fs::remove_file(&dest);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(crate::models::derive_seed(policy.seed, index));
    let delays = policy.schedule(policy.max_retries, &mut rng);
    loop {
        report.attempts += 1;
        match transfer_once(fetcher, entry, &dest, &mut report) {
            Attempt::Complete => {
                report.status = match md5_hex(&dest) {
                    Ok(h) if h == entry.md5 => EntryStatus::Ok,
                    Ok(actual) => EntryStatus::ChecksumMismatch { actual },
                    Err(e) => EntryStatus::FailedAfterRetries { last_error: e.to_string() },
                };
                return report;
            }
            Attempt::Transient(e) => {
                let retry = report.attempts as usize - 1;
                if retry >= delays.len() {
                    log::warn!("fetch: {} failed after {} attempts: {e}", entry.url, report.attempts);
                    report.status = EntryStatus::FailedAfterRetries { last_error: e };
                    return report;
                }
                log::info!("fetch: {} attempt {} failed ({e}); retrying in {:?}", entry.url, report.attempts, delays[retry]);
                report.delays.push(delays[retry]);
                std::thread::sleep(delays[retry]);
            }
        }
    }
}

/// Fetches every entry into `out_dir` using up to `workers` concurrent
/// transfers. Failures are recorded per entry; the batch always completes.
pub fn fetch_all(
    entries: &[ManifestEntry],
    out_dir: &Path,
    fetcher: &dyn Fetcher,
    workers: usize,
    policy: &RetryPolicy,
) -> FetchReport {
    let slots: Vec<Mutex<Option<EntryReport>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    let (tx, rx) = crossbeam_channel::unbounded::<usize>();
    (0..entries.len()).for_each(|i| tx.send(i).expect("receiver alive"));
    drop(tx);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(entries.len().max(1)) {
            let rx = rx.clone();
            let slots = &slots;
            s.spawn(move || {
                for i in rx.iter() {
                    let r = fetch_one(fetcher, &entries[i], out_dir, policy, i as u64);
                    *slots[i].lock().expect("slot lock") = Some(r);
                }
            });
        }
    });
    FetchReport {
        entries: slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every entry visited")).collect(),
    }
}
