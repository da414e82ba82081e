//! The JSON wire protocols: a local scorer service and the mock summarizer
//! served over HTTP, used through the remote clients, plus the error cases.

use std::time::Duration;

use fcm_core::scorers::{remote_score, ConsistencyScorer, LcsRatio, RemoteScorer};
use fcm_core::summeval::{build_prompt, summarize, SummarizerParams};
use fcm_core::wire::HttpServer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scorer_srv = HttpServer::scorer(LcsRatio)?;
    let remote = RemoteScorer::new(scorer_srv.url());
    let s = remote.score("I know.", "I don't know.")?;
    println!("remote lcs score via {}: {s:.4}", scorer_srv.url());
    let batch = remote.score_batch(&[("a b".into(), "a b".into()), ("a".into(), "b".into())]);
    println!("batch: {batch:?}");
    for r in scorer_srv.requests() {
        println!("  {} {} {}", r.method, r.path, r.body);
    }

    let sum_srv = HttpServer::mock_summarizer()?;
    let prompt = build_prompt("Speaker 1: Hello. Nice to meet you.\nSpeaker 2: Hi, how are you?\n");
    let summary = summarize(&sum_srv.url(), &prompt, &SummarizerParams::default(), Duration::from_secs(5))?;
    println!("summary: {summary:?}");
    println!("request body: {}", sum_srv.requests()[0].body);

    let failing = HttpServer::spawn(|_| (503, "{}".into()))?;
    let bad_json = HttpServer::spawn(|_| (200, "not json".into()))?;
    let too_big = HttpServer::spawn(|_| (200, r#"{"consistency": 1.5}"#.into()))?;
    let t = Duration::from_secs(2);
    for (what, url) in [("503", failing.url()), ("malformed", bad_json.url()), ("out of range", too_big.url())] {
        println!("{what:<13} -> {}", remote_score(&url, "a", "b", t).unwrap_err());
    }
    println!("{:<13} -> {}", "unreachable", remote_score("http://127.0.0.1:9", "a", "b", t).unwrap_err());
    Ok(())
}
