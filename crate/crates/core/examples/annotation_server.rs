//! Start the annotation API on a local port, submit a ranking over plain HTTP
//! and read progress back. Pass `--serve` to keep it running for a browser.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;

use phyco::benchmark::BenchmarkManifest;
use phyco::oracle::{render_scene, sample_scene, Scenario};
use phyco::pipeline::{router, AnnotationConfig, AnnotationState};
use phyco::video::write_sequence;

fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    let (head, body) = out.split_once("\r\n\r\n").unwrap_or((&out, ""));
    format!("{} | {}", head.lines().next().unwrap_or(""), body.trim())
}

#[tokio::main]
async fn main() -> phyco::Result<()> {
    let work = std::env::temp_dir().join("phyco_annotation");
    let prompts: Vec<_> = BenchmarkManifest::seed().prompts.into_iter().take(2).collect();
    let mut models = BTreeMap::new();
    for (k, m) in ["1", "2", "3", "4"].into_iter().enumerate() {
        let d = work.join(format!("model{m}"));
        std::fs::create_dir_all(&d).map_err(|e| phyco::Error::Other(e.to_string()))?;
        for (j, p) in prompts.iter().enumerate() {
            let clip = render_scene(&sample_scene(Scenario::ALL[k], j as u64, 8, 64, 64)?)?.frames;
            write_sequence(&clip, &d.join(format!("{}.pcvf", p.id)))?;
        }
        models.insert(m.to_string(), d);
    }
    let first = prompts[0].id.clone();
    let rankings_path = work.join("rankings.jsonl");
    let _ = std::fs::remove_file(&rankings_path);
    let state = AnnotationState::new(AnnotationConfig {
        prompts,
        models,
        rankings_path: rankings_path.clone(),
        audit_path: work.join("audit.jsonl"),
        static_dir: None,
    })?;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    println!("listening on http://{addr}");

    let calls = tokio::task::spawn_blocking(move || {
        let submit = |order: &str| format!(r#"{{"prompt_id":"{first}","evaluator_id":"ann","order":"{order}"}}"#);
        vec![
            http(addr, "GET", "/api/tasks?evaluator=ann", ""),
            http(addr, "POST", "/api/rankings", &submit("2 > 1 = 3 > 4")),
            http(addr, "POST", "/api/rankings", &submit("2 > 1 > 5")),
            http(addr, "GET", "/api/progress/ann", ""),
        ]
    })
    .await
    .unwrap();
    for c in calls {
        let short: String = c.chars().take(160).collect();
        println!("{short}");
    }
    println!(
        "stored: {}",
        std::fs::read_to_string(&rankings_path).unwrap_or_default().trim()
    );

    if std::env::args().any(|a| a == "--serve") {
        println!("serving until interrupted");
        std::future::pending::<()>().await;
    }
    Ok(())
}
