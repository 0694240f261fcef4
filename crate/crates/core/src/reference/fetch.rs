//! Candidate retrieval from local directories and image search APIs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::embed::Embedder;
use super::phash::{phash64, GrayImage};
use super::score::Candidate;
use crate::error::{Error, Result};

pub const PEXELS_BASE: &str = "https://api.pexels.com";
pub const UNSPLASH_BASE: &str = "https://api.unsplash.com";
pub const HTTP_TIMEOUT: Duration = Duration::from_secs(10);
pub const HTTP_RETRIES: usize = 2;
pub const DEFAULT_MIN_YEAR: i32 = 2024;
/// Optional file in a local source mapping file names to upload years.
pub const LOCAL_SIDECAR: &str = "candidates.json";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    LocalDir(PathBuf),
    Pexels { api_key: String, base_url: String },
    Unsplash { access_key: String, base_url: String },
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::LocalDir(_) => "local",
            Source::Pexels { .. } => "pexels",
            Source::Unsplash { .. } => "unsplash",
        }
    }

    /// HTTP sources whose keys are set in `PEXELS_API_KEY` / `UNSPLASH_ACCESS_KEY`.
    pub fn from_env() -> Vec<Source> {
        let mut out = Vec::new();
        if let Ok(api_key) = std::env::var("PEXELS_API_KEY") {
            out.push(Source::Pexels {
                api_key,
                base_url: PEXELS_BASE.into(),
            });
        }
        if let Ok(access_key) = std::env::var("UNSPLASH_ACCESS_KEY") {
            out.push(Source::Unsplash {
                access_key,
                base_url: UNSPLASH_BASE.into(),
            });
        }
        out
    }
}

/// One search result before download.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteHit {
    pub id: String,
    pub thumb_url: String,
    pub upload_year: Option<i32>,
}

#[derive(Deserialize)]
struct PexelsPage {
    photos: Vec<PexelsPhoto>,
}

#[derive(Deserialize)]
struct PexelsPhoto {
    id: u64,
    src: PexelsSrc,
}

#[derive(Deserialize)]
struct PexelsSrc {
    tiny: Option<String>,
    small: Option<String>,
    medium: Option<String>,
}

#[derive(Deserialize)]
struct UnsplashPage {
    results: Vec<UnsplashPhoto>,
}

#[derive(Deserialize)]
struct UnsplashPhoto {
    id: String,
    created_at: Option<String>,
    urls: UnsplashUrls,
}

#[derive(Deserialize)]
struct UnsplashUrls {
    thumb: Option<String>,
    small: Option<String>,
}

/// Pexels search results carry no upload date.
pub fn parse_pexels_response(body: &str) -> Result<Vec<RemoteHit>> {
    let page: PexelsPage = serde_json::from_str(body)?;
    Ok(page
        .photos
        .into_iter()
        .filter_map(|p| {
            let url = p.src.tiny.or(p.src.small).or(p.src.medium)?;
            Some(RemoteHit {
                id: format!("pexels:{}", p.id),
                thumb_url: url,
                upload_year: None,
            })
        })
        .collect())
}

fn year_prefix(stamp: &str) -> Option<i32> {
    let digits = stamp.get(..4)?;
    digits.bytes().all(|b| b.is_ascii_digit()).then(|| digits.parse().ok())?
}

pub fn parse_unsplash_response(body: &str) -> Result<Vec<RemoteHit>> {
    let page: UnsplashPage = serde_json::from_str(body)?;
    Ok(page
        .results
        .into_iter()
        .filter_map(|p| {
            let url = p.urls.thumb.or(p.urls.small)?;
            Some(RemoteHit {
                id: format!("unsplash:{}", p.id),
                thumb_url: url,
                upload_year: p.created_at.as_deref().and_then(year_prefix),
            })
        })
        .collect())
}

fn candidate_from_image(
    id: String,
    img: &GrayImage,
    source: &str,
    upload_year: Option<i32>,
    embedder: &dyn Embedder,
) -> Result<Candidate> {
    Ok(Candidate {
        id,
        embedding: embedder.embed_image(img)?,
        phash: phash64(img),
        source: source.into(),
        upload_year,
    })
}

fn read_sidecar(dir: &Path) -> Result<HashMap<String, i32>> {
    let path = dir.join(LOCAL_SIDECAR);
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(HashMap::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Every image in `dir`, in file-name order.
pub fn local_candidates(dir: &Path, embedder: &dyn Embedder) -> Result<Vec<Candidate>> {
    let years = read_sidecar(dir)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let img = GrayImage::open(p)?;
            let year = years.get(&name).copied();
            candidate_from_image(name, &img, "local", year, embedder)
        })
        .collect()
}

fn http_client() -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(HTTP_TIMEOUT)
        .build()
        .map_err(|e| Error::Retrieval(e.to_string()))
}

fn get_with_retries(client: &reqwest::blocking::Client, url: &str, auth: Option<&str>) -> Result<Vec<u8>> {
    let mut last = String::new();
    for attempt in 0..=HTTP_RETRIES {
        let mut req = client.get(url);
        if let Some(a) = auth {
            req = req.header(reqwest::header::AUTHORIZATION, a);
        }
        match req.send().and_then(|r| r.error_for_status()).and_then(|r| r.bytes()) {
            Ok(b) => return Ok(b.to_vec()),
            Err(e) => {
                log::debug!("GET {url} attempt {} failed: {e}", attempt + 1);
                last = e.to_string();
            }
        }
    }
    Err(Error::Retrieval(format!("GET {url}: {last}")))
}

fn http_candidates(source: &Source, query: &str, limit: usize, embedder: &dyn Embedder) -> Result<Vec<Candidate>> {
    let client = http_client()?;
    let per_page = limit.clamp(1, 80);
    let encoded: String = url_encode(query);
    let (url, auth, parse): (String, String, fn(&str) -> Result<Vec<RemoteHit>>) = match source {
        Source::Pexels { api_key, base_url } => (
            format!("{base_url}/v1/search?query={encoded}&per_page={per_page}&page=1"),
            api_key.clone(),
            parse_pexels_response,
        ),
        Source::Unsplash { access_key, base_url } => (
            format!("{base_url}/search/photos?query={encoded}&per_page={per_page}&page=1"),
            format!("Client-ID {access_key}"),
            parse_unsplash_response,
        ),
        Source::LocalDir(_) => unreachable!("local sources are read from disk"),
    };
    let body = get_with_retries(&client, &url, Some(&auth))?;
    let hits = parse(&String::from_utf8_lossy(&body))?;
    let mut out = Vec::new();
    for hit in hits.into_iter().take(limit) {
        let fetched = get_with_retries(&client, &hit.thumb_url, None).and_then(|b| GrayImage::decode(&b));
        match fetched {
            Ok(img) => out.push(candidate_from_image(hit.id, &img, source.name(), hit.upload_year, embedder)?),
            Err(e) => log::warn!("skipping {}: {e}", hit.id),
        }
    }
    Ok(out)
}

fn url_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            b' ' => "+".into(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn fetch_one(source: &Source, query: &str, limit: usize, embedder: &dyn Embedder) -> Result<Vec<Candidate>> {
    match source {
        Source::LocalDir(dir) => local_candidates(dir, embedder),
        _ => http_candidates(source, query, limit, embedder),
    }
}

/// Candidates from or after `min_year` first (unknown years count as older),
/// source order otherwise kept.
pub fn prioritize_recent(mut candidates: Vec<Candidate>, min_year: i32) -> Vec<Candidate> {
    candidates.sort_by_key(|c| !c.upload_year.is_some_and(|y| y >= min_year));
    candidates
}

/// Queries every source concurrently; a failing source is logged and skipped.
pub fn fetch_candidates(
    query: &str,
    sources: &[Source],
    min_year: i32,
    limit: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<Candidate>> {
    if sources.is_empty() {
        return Err(Error::param("no candidate sources configured"));
    }
    let results: Vec<Result<Vec<Candidate>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .map(|s| scope.spawn(move || fetch_one(s, query, limit, embedder)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Retrieval("source worker panicked".into()))))
            .collect()
    });
    let mut all = Vec::new();
    let mut failures = Vec::new();
    for (source, r) in sources.iter().zip(results) {
        match r {
            Ok(c) => all.extend(c),
            Err(e) => {
                log::warn!("{} source failed: {e}", source.name());
                failures.push(format!("{}: {e}", source.name()));
            }
        }
    }
    if failures.len() == sources.len() {
        return Err(Error::Retrieval(failures.join("; ")));
    }
    let mut out = prioritize_recent(all, min_year);
    out.truncate(limit);
    Ok(out)
}
