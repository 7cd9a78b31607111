use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::NaiveDate;
use nas_curator::corpus::{
    build_queries, collect_metadata, select_top_starred, CorpusError, Fetcher, LiveFetcher, OfflineFetcher, RepoMeta,
};
use serde_json::json;

const SEARCH_FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/search");

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn names(repos: &[RepoMeta]) -> Vec<&str> {
    repos.iter().map(|r| r.full_name.as_str()).collect()
}

#[test]
fn offline_collection_filters_dedupes_and_ranks() {
    let f = OfflineFetcher::new(SEARCH_FIXTURES);
    let top = collect_metadata(&f, d("2015-01-01"), d("2015-01-03"), 3, 2).unwrap();
    // The 2014 repository is outside the window and the repeated one is
    // counted once; the 40-star tie goes to the smaller name.
    assert_eq!(names(&top), ["fchollet/keras-examples", "dave/face-detect", "alice/cnn-mnist"]);
    let all = collect_metadata(&f, d("2015-01-01"), d("2015-01-03"), 100, 1).unwrap();
    assert_eq!(all.len(), 5);
    assert_eq!(all, collect_metadata(&f, d("2015-01-01"), d("2015-01-03"), 100, 8).unwrap());
}

#[test]
fn offline_missing_day_is_an_error() {
    let f = OfflineFetcher::new(SEARCH_FIXTURES);
    assert!(matches!(
        collect_metadata(&f, d("2015-01-03"), d("2015-01-04"), 10, 1),
        Err(CorpusError::MissingResponse(_))
    ));
}

#[test]
fn equal_stars_give_a_name_ordered_prefix() {
    let repos: Vec<RepoMeta> = ["zeta", "alpha", "mu", "beta"]
        .iter()
        .map(|n| RepoMeta { full_name: n.to_string(), url: String::new(), stars: 7, created: d("2016-03-03") })
        .collect();
    // Brute-force oracle: names sorted ascending.
    let mut expected: Vec<&str> = repos.iter().map(|r| r.full_name.as_str()).collect();
    expected.sort();
    assert_eq!(names(&select_top_starred(&repos, 3)), &expected[..3]);
}

fn page_body(items: &[(&str, u64)]) -> String {
    let items: Vec<_> = items
        .iter()
        .map(|(n, s)| json!({"full_name": n, "html_url": format!("https://github.com/{n}"), "stargazers_count": s, "created_at": "2015-01-01T00:00:00Z"}))
        .collect();
    json!({ "total_count": items.len(), "items": items }).to_string()
}

type Scripted = (u16, Vec<(&'static str, String)>, String);

/// Serves one scripted response per connection and records request lines.
fn serve(responses: Vec<Scripted>) -> (u16, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    thread::spawn(move || {
        for (status, headers, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request = Vec::new();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                request.push(line.trim_end().to_string());
            }
            seen.lock().unwrap().push(request.join("\n"));
            let mut head = format!("HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n", body.len());
            for (k, v) in headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            stream.write_all(format!("{head}\r\n{body}").as_bytes()).unwrap();
        }
    });
    (port, log)
}

#[test]
fn live_fetcher_paginates_waits_out_rate_limits_and_caches() {
    let full: Vec<(String, u64)> = (0..100).map(|i| (format!("o/r{i:03}"), i)).collect();
    let full_refs: Vec<(&str, u64)> = full.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    let (port, log) = serve(vec![
        (403, vec![("Retry-After", "0".into())], "{}".into()),
        (200, vec![], page_body(&full_refs)),
        (200, vec![], page_body(&[("o/last", 1000)])),
    ]);
    let cache = tempfile::tempdir().unwrap();
    let fetcher = LiveFetcher::new(Some(cache.path().to_path_buf()));
    let query = format!("http://127.0.0.1:{port}/search/repositories?q=keras+language:python+created:2015-01-01");
    let repos = fetcher.search(&query).unwrap();
    assert_eq!(repos.len(), 101);
    let requests = log.lock().unwrap().clone();
    assert_eq!(requests.len(), 3);
    assert!(requests[1].starts_with("GET /search/repositories?q=keras+language:python+created:2015-01-01&per_page=100&page=1 "));
    assert!(requests[2].contains("&page=2 "));
    // The server is gone; the cache answers.
    assert_eq!(fetcher.search(&query).unwrap(), repos);
    assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 2);
}

#[test]
fn live_fetcher_reports_http_errors() {
    let (port, _) = serve(vec![(500, vec![], "oops".into())]);
    let fetcher = LiveFetcher::new(None);
    let query = format!("http://127.0.0.1:{port}/search/repositories?q=keras+language:python+created:2015-01-01");
    assert!(matches!(fetcher.search(&query), Err(CorpusError::Http { .. })));
}

#[test]
fn queries_cover_leap_days() {
    let q = build_queries(d("2016-02-28"), d("2016-03-01")).unwrap();
    assert_eq!(q.len(), 3);
    assert!(q[1].ends_with("created:2016-02-29"));
}
