mod common;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Mutex;
use std::time::Duration;

use proptest::prelude::*;
use rand::RngExt;

use common::rng;
use decide_core::matching::{MatchMode, MatchedPair};
use decide_core::qa::{
    enumerate_pairs, infer_relation, Answer, CompatibilityOracle, FixtureOracle, HttpOracle, OracleError,
    OracleRequest, OracleResponse, TemplateStrategy,
};
use decide_core::recognize::{ComponentMention, VersionMention};
use decide_core::{Relation, StackLayer, Version, VersionedComponent};

fn vc(s: &str) -> VersionedComponent {
    s.parse().unwrap()
}

/// Answers by template id and records every question it is asked.
struct Scripted {
    replies: Vec<(u8, Answer, f64)>,
    asked: Mutex<Vec<String>>,
}

impl CompatibilityOracle for Scripted {
    fn ask(&self, req: &OracleRequest<'_>) -> Result<OracleResponse, OracleError> {
        self.asked.lock().unwrap().push(req.question.clone());
        let &(_, answer, loss) = self.replies.iter().find(|r| r.0 == req.template).expect("scripted template");
        Ok(OracleResponse { answer, loss })
    }
}

#[test]
fn both_templates_all_answer_combinations() {
    let (a, b) = (vc("tensorflow 1.15"), vc("cuda 10.2"));
    let strategy: TemplateStrategy = "Q1+Q2".parse().unwrap();
    use Answer::{No, Yes};
    use Relation::{Compatible as C, Incompatible as I};
    // (Q1 answer, Q1 loss, Q2 answer, Q2 loss) -> (relation, winning template)
    let cases = [
        (Yes, 0.1, No, 0.4, C, 1),
        (Yes, 0.4, No, 0.1, C, 2),
        (Yes, 0.1, Yes, 0.4, C, 1),
        (Yes, 0.4, Yes, 0.1, I, 2),
        (No, 0.1, No, 0.4, I, 1),
        (No, 0.4, No, 0.1, C, 2),
        (No, 0.1, Yes, 0.4, I, 1),
        (No, 0.4, Yes, 0.1, I, 2),
        // Equal losses go to the lower template id.
        (Yes, 0.3, Yes, 0.3, C, 1),
        (No, 0.3, No, 0.3, I, 1),
    ];
    for (q1, l1, q2, l2, relation, winner) in cases {
        let oracle = Scripted { replies: vec![(1, q1, l1), (2, q2, l2)], asked: Mutex::new(Vec::new()) };
        let ev = infer_relation(7, "ctx", &a, &b, &oracle, &strategy, None).unwrap().unwrap();
        assert_eq!((ev.relation, ev.template), (relation, winner), "{q1:?}/{l1} {q2:?}/{l2}");
        assert_eq!(ev.loss, l1.min(l2));
        assert_eq!(
            *oracle.asked.lock().unwrap(),
            ["Is tensorflow 1.15 compatible with cuda 10.2?", "Is tensorflow 1.15 not compatible with cuda 10.2?"]
        );
        // A loss ceiling below the winner drops the pair.
        assert!(infer_relation(7, "ctx", &a, &b, &oracle, &strategy, Some(0.05)).unwrap().is_none());
    }
}

#[test]
fn fixture_rows_drive_each_template() {
    let text = "# post\ta\tb\ttemplate\tanswer\tloss\n\
                7\ttensorflow 1.15\tcuda 10.2\tQ1\tno\t0.2\n\
                7\tcuda 10.2\ttensorflow 1.15\tQ2\tyes\t0.1\n\
                *\tnumpy 1.24\tscipy 1.7.3\t*\tincompatible\t0.3\n";
    let oracle = FixtureOracle::parse(text).unwrap();
    assert_eq!(oracle.len(), 3);
    let q12: TemplateStrategy = "Q1+Q2".parse().unwrap();
    let ev = infer_relation(7, "", &vc("tensorflow 1.15"), &vc("cuda 10.2"), &oracle, &q12, None).unwrap().unwrap();
    assert_eq!((ev.relation, ev.template, ev.loss), (Relation::Incompatible, 2, 0.1));

    let all: TemplateStrategy = "all".parse().unwrap();
    let ev = infer_relation(99, "", &vc("scipy 1.7.3"), &vc("numpy 1.24"), &oracle, &all, None).unwrap().unwrap();
    assert_eq!(ev.relation, Relation::Incompatible);

    let err = infer_relation(8, "", &vc("tensorflow 1.15"), &vc("cuda 10.2"), &oracle, &q12, None).unwrap_err();
    assert!(matches!(err, OracleError::Unscripted { post_id: 8, .. }));
    assert!(matches!(FixtureOracle::parse("1\ta 1\tb 2\tQ9\tyes\t0.1\n"), Err(OracleError::Fixture { line: 1, .. })));
}

fn random_matches(seed: u64) -> Vec<MatchedPair> {
    let mut r = rng(seed);
    let names = [
        ("tensorflow", StackLayer::Library),
        ("cuda", StackLayer::Runtime),
        ("python", StackLayer::Runtime),
        ("apple m1", StackLayer::Hardware),
    ];
    let n = r.random_range(0..8);
    (0..n)
        .map(|i| {
            let (name, layer) = names[r.random_range(0..names.len())];
            let component = ComponentMention {
                component: name.to_string(),
                layer,
                token_span: 2 * i..2 * i + 1,
                char_span: 0..0,
                surface: name.to_string(),
            };
            let version = r.random_bool(0.6).then(|| {
                let version = Version::new(vec![1, r.random_range(0..3)], false).unwrap();
                VersionMention {
                    surface: version.to_string(),
                    version,
                    token_span: 2 * i + 1..2 * i + 2,
                    char_span: 0..0,
                }
            });
            MatchedPair { component, version, lca_depth: None, mode: MatchMode::TokenDistance }
        })
        .collect()
}

proptest! {
    #[test]
    fn pairs_are_distinct_cross_component_and_complete(seed in any::<u64>()) {
        let matches = random_matches(seed);
        let pairs = enumerate_pairs(&matches);
        let usable: BTreeSet<String> = matches
            .iter()
            .filter(|m| m.version.is_some() || m.component.layer == StackLayer::Hardware)
            .map(|m| VersionedComponent::new(m.component.component.clone(), m.version.as_ref().map(|v| v.version.clone())).to_string())
            .collect();
        let mut expected = BTreeSet::new();
        for x in &usable {
            for y in &usable {
                let (cx, cy): (VersionedComponent, VersionedComponent) = (vc_any(x), vc_any(y));
                if cx.component != cy.component && x < y {
                    expected.insert((x.clone(), y.clone()));
                }
            }
        }
        let got: BTreeSet<(String, String)> = pairs
            .iter()
            .map(|(a, b)| {
                let (a, b) = (a.to_string(), b.to_string());
                if a < b { (a, b) } else { (b, a) }
            })
            .collect();
        prop_assert_eq!(got.len(), pairs.len());
        prop_assert_eq!(got, expected);
        for (a, b) in &pairs {
            prop_assert!(a.canonical_cmp(b).is_lt());
        }
    }
}

fn vc_any(s: &str) -> VersionedComponent {
    s.parse().unwrap_or_else(|_| VersionedComponent::new(s, None))
}

/// Serves `responses` in order, one connection each, and returns the
/// request bodies it saw.
fn stub_server(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<(String, String)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            seen.push((request_line.trim().to_string(), String::from_utf8(payload).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_oracle_speaks_the_wire_protocol() {
    let (url, server) = stub_server(vec![
        (200, r#"{"status":"ok","model":"stub"}"#),
        (200, r#"{"answer":"Yes.","loss":0.25}"#),
        (422, r#"{"error":"context too long"}"#),
        (200, r#"{"answer":"maybe","loss":0.25}"#),
        (503, r#"{}"#),
    ]);
    let oracle = HttpOracle::new(&url, Duration::from_secs(5));
    let health = oracle.health().unwrap();
    assert_eq!((health.status.as_str(), health.model.as_str()), ("ok", "stub"));

    let (a, b) = (vc("python 3.8"), vc("tensorflow 2.2"));
    let request = OracleRequest {
        post_id: 1,
        a: &a,
        b: &b,
        template: 1,
        context: "TensorFlow 2.2 needs Python 3.8.",
        question: "Is python 3.8 compatible with tensorflow 2.2?".into(),
    };
    let reply = oracle.ask(&request).unwrap();
    assert_eq!(reply, OracleResponse { answer: Answer::Yes, loss: 0.25 });
    match oracle.ask(&request) {
        Err(OracleError::Rejected { status: 422, message }) => assert_eq!(message, "context too long"),
        other => panic!("expected a rejection, got {other:?}"),
    }
    assert!(matches!(oracle.ask(&request), Err(OracleError::Protocol(_))));
    assert!(matches!(oracle.ask(&request), Err(OracleError::Transport(_))));

    let seen = server.join().unwrap();
    assert_eq!(seen[0].0, "GET /v1/health HTTP/1.1");
    assert_eq!(seen[1].0, "POST /v1/answer HTTP/1.1");
    let body: serde_json::Value = serde_json::from_str(&seen[1].1).unwrap();
    assert_eq!(
        body,
        serde_json::json!({
            "context": "TensorFlow 2.2 needs Python 3.8.",
            "question": "Is python 3.8 compatible with tensorflow 2.2?"
        })
    );
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let oracle = HttpOracle::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(oracle.health(), Err(OracleError::Transport(_))));
}
