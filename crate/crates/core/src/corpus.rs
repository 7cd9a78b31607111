//! Repository metadata collection: daily search queries, an offline
//! fetcher over a directory of saved responses, a live HTTP fetcher with a
//! disk cache, and selection of the most-starred repositories.
//!
//! Responses follow the repository-search body schema:
//! `{"items": [{"full_name", "html_url", "stargazers_count", "created_at"}]}`.
//! Offline, the response for a query is read from `{key}.json`, where the
//! key is the query's `q=` value (see [`query_key`]).

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SEARCH_ENDPOINT: &str = "https://api.github.com/search/repositories";
pub const TOKEN_ENV: &str = "NC_API_TOKEN";
const PER_PAGE: usize = 100;
/// The search endpoint serves at most 1000 results per query.
const MAX_PAGES: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid date range: {start} is after {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("no saved response for query `{0}`")]
    MissingResponse(String),
    #[error("malformed response for `{query}`: {reason}")]
    Malformed { query: String, reason: String },
    #[error("request for `{query}` failed: {reason}")]
    Http { query: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub full_name: String,
    pub url: String,
    pub stars: u64,
    pub created: NaiveDate,
}

/// One search URL per day from `start` to `end` inclusive.
pub fn build_queries(start: NaiveDate, end: NaiveDate) -> Result<Vec<String>, CorpusError> {
    if start > end {
        return Err(CorpusError::InvalidRange { start, end });
    }
    let mut out = Vec::new();
    let mut day = start;
    while day <= end {
        out.push(format!("{SEARCH_ENDPOINT}?q=keras+language:python+created:{}", day.format("%Y-%m-%d")));
        day = day + Days::new(1);
    }
    Ok(out)
}

/// The `q=` value of a query URL, used as its cache and fixture file name.
pub fn query_key(query: &str) -> &str {
    let q = query.split_once("q=").map_or(query, |(_, q)| q);
    q.split('&').next().unwrap_or(q)
}

/// The `n` repositories with the most stars, ties by name.
pub fn select_top_starred(repos: &[RepoMeta], n: usize) -> Vec<RepoMeta> {
    let mut sorted = repos.to_vec();
    sorted.sort_by(|a, b| (Reverse(a.stars), &a.full_name).cmp(&(Reverse(b.stars), &b.full_name)));
    sorted.truncate(n);
    sorted
}

/// Parses the repositories of one response body.
pub fn parse_response(query: &str, body: &Value) -> Result<Vec<RepoMeta>, CorpusError> {
    let malformed = |reason: String| CorpusError::Malformed { query: query.to_string(), reason };
    let items = body.get("items").and_then(Value::as_array).ok_or_else(|| malformed("missing items".into()))?;
    items
        .iter()
        .map(|item| {
            let field = |k: &str| item.get(k).ok_or_else(|| malformed(format!("item without {k}")));
            let text = |k: &str| field(k)?.as_str().map(str::to_string).ok_or_else(|| malformed(format!("{k} is not a string")));
            let created_at = text("created_at")?;
            let created = created_at
                .get(..10)
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
                .ok_or_else(|| malformed(format!("bad created_at {created_at}")))?;
            Ok(RepoMeta {
                full_name: text("full_name")?,
                url: text("html_url")?,
                stars: field("stargazers_count")?.as_u64().ok_or_else(|| malformed("bad stargazers_count".into()))?,
                created,
            })
        })
        .collect()
}

pub trait Fetcher: Sync {
    /// Every repository returned for `query`, across all pages.
    fn search(&self, query: &str) -> Result<Vec<RepoMeta>, CorpusError>;
}

/// Reads saved responses from a directory.
pub struct OfflineFetcher {
    pub dir: PathBuf,
}

impl OfflineFetcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OfflineFetcher { dir: dir.into() }
    }
}

impl Fetcher for OfflineFetcher {
    fn search(&self, query: &str) -> Result<Vec<RepoMeta>, CorpusError> {
        let path = self.dir.join(format!("{}.json", query_key(query)));
        if !path.is_file() {
            return Err(CorpusError::MissingResponse(query.to_string()));
        }
        let body: Value = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| CorpusError::Malformed { query: query.to_string(), reason: e.to_string() })?;
        parse_response(query, &body)
    }
}

/// Queries the search endpoint page by page, waiting out rate limits and
/// caching each page's body on disk.
pub struct LiveFetcher {
    agent: ureq::Agent,
    token: Option<String>,
    pub cache_dir: Option<PathBuf>,
    /// Longest wait for a rate-limit reset before giving up.
    pub max_wait: Duration,
}

impl LiveFetcher {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        LiveFetcher {
            agent,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            cache_dir,
            max_wait: Duration::from_secs(120),
        }
    }

    fn cache_path(&self, query: &str, page: usize) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{}.page{page}.json", query_key(query))))
    }

    fn page(&self, query: &str, page: usize) -> Result<Value, CorpusError> {
        let http = |reason: String| CorpusError::Http { query: query.to_string(), reason };
        if let Some(p) = self.cache_path(query, page).filter(|p| p.is_file()) {
            if let Ok(v) = serde_json::from_str(&fs::read_to_string(p)?) {
                return Ok(v);
            }
        }
        let url = format!("{query}&per_page={PER_PAGE}&page={page}");
        let mut attempts = 0;
        loop {
            let mut req = self.agent.get(&url).header("Accept", "application/vnd.github+json").header("User-Agent", "nas-curator");
            if let Some(t) = &self.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            let mut resp = req.call().map_err(|e| http(e.to_string()))?;
            let status = resp.status().as_u16();
            let header = |k: &str| resp.headers().get(k).and_then(|v| v.to_str().ok()).map(str::to_string);
            if (status == 403 || status == 429) && attempts < 3 {
                let wait = header("retry-after")
                    .and_then(|s| s.parse::<u64>().ok())
                    .or_else(|| {
                        let reset = header("x-ratelimit-reset")?.parse::<i64>().ok()?;
                        Some((reset - chrono::Utc::now().timestamp()).max(1) as u64)
                    })
                    .map(Duration::from_secs);
                if let Some(wait) = wait.filter(|w| *w <= self.max_wait) {
                    log::info!("rate limited; waiting {} s", wait.as_secs());
                    std::thread::sleep(wait);
                    attempts += 1;
                    continue;
                }
            }
            let body = resp.body_mut().read_to_string().map_err(|e| http(e.to_string()))?;
            if status != 200 {
                return Err(http(format!("status {status}")));
            }
            let v: Value = serde_json::from_str(&body).map_err(|e| CorpusError::Malformed { query: query.to_string(), reason: e.to_string() })?;
            if let Some(p) = self.cache_path(query, page) {
                fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
                fs::write(p, &body)?;
            }
            return Ok(v);
        }
    }
}

impl Fetcher for LiveFetcher {
    fn search(&self, query: &str) -> Result<Vec<RepoMeta>, CorpusError> {
        let mut out = Vec::new();
        for page in 1..=MAX_PAGES {
            let body = self.page(query, page)?;
            let items = parse_response(query, &body)?;
            let n = items.len();
            out.extend(items);
            if n < PER_PAGE {
                break;
            }
        }
        Ok(out)
    }
}

/// Runs every daily query for the window with at most `concurrency`
/// requests in flight, keeps repositories created inside the window and
/// returns the `top` most-starred.
pub fn collect_metadata(
    fetcher: &dyn Fetcher,
    start: NaiveDate,
    end: NaiveDate,
    top: usize,
    concurrency: usize,
) -> Result<Vec<RepoMeta>, CorpusError> {
    let queries = build_queries(start, end)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
    let pages: Vec<Vec<RepoMeta>> = pool.install(|| queries.par_iter().map(|q| fetcher.search(q)).collect::<Result<_, _>>())?;
    let mut by_name: BTreeMap<String, RepoMeta> = BTreeMap::new();
    for r in pages.into_iter().flatten().filter(|r| r.created >= start && r.created <= end) {
        by_name.entry(r.full_name.clone()).or_insert(r);
    }
    let all: Vec<RepoMeta> = by_name.into_values().collect();
    Ok(select_top_starred(&all, top))
}

/// Writes repository metadata as a canonical JSON list.
pub fn save_metadata(repos: &[RepoMeta], path: &Path) -> Result<(), CorpusError> {
    let v = serde_json::to_value(repos).expect("repo metadata serializes");
    fs::write(path, crate::json::to_canonical_string(&v) + "\n")?;
    Ok(())
}
