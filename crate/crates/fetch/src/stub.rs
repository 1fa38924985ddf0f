//! In-process provider for tests: answers `/lookup` from a fixed table and
//! records when each request arrived.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use tokio::time::Instant;

use crate::ProviderRecord;

#[derive(Debug, Clone)]
pub struct RequestLog {
    pub at: Instant,
    pub dois: Vec<String>,
    pub authorization: Option<String>,
}

#[derive(Default)]
struct StubState {
    answers: HashMap<String, (Option<u64>, f64)>,
    log: Mutex<Vec<RequestLog>>,
    fail_first: AtomicUsize,
    reject: Vec<String>,
    hang: Vec<String>,
}

#[derive(Default)]
pub struct StubBuilder {
    state: StubState,
}

impl StubBuilder {
    pub fn answer(mut self, doi: &str, readers: u64, match_probability: f64) -> Self {
        self.state.answers.insert(doi.to_string(), (Some(readers), match_probability));
        self
    }

    /// The first `n` requests get a 503.
    pub fn fail_first(self, n: usize) -> Self {
        self.state.fail_first.store(n, Ordering::SeqCst);
        self
    }

    /// Batches containing `doi` get a 400.
    pub fn reject(mut self, doi: &str) -> Self {
        self.state.reject.push(doi.to_string());
        self
    }

    /// Batches containing `doi` never get an answer.
    pub fn hang(mut self, doi: &str) -> Self {
        self.state.hang.push(doi.to_string());
        self
    }

    pub async fn start(self) -> StubProvider {
        let state = Arc::new(self.state);
        let app = Router::new().route("/lookup", post(lookup)).with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
        let addr = listener.local_addr().expect("stub address");
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        StubProvider { addr, state, task }
    }
}

pub struct StubProvider {
    pub addr: SocketAddr,
    state: Arc<StubState>,
    task: tokio::task::JoinHandle<()>,
}

impl StubProvider {
    pub fn builder() -> StubBuilder {
        StubBuilder::default()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RequestLog> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.log.lock().unwrap().len()
    }

    /// Most requests seen inside any half-open window of `width`.
    pub fn max_in_window(&self, width: Duration) -> usize {
        let mut times: Vec<Instant> = self.requests().iter().map(|r| r.at).collect();
        times.sort();
        (0..times.len())
            .map(|i| times[i..].iter().take_while(|&&t| t < times[i] + width).count())
            .max()
            .unwrap_or(0)
    }
}

impl Drop for StubProvider {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn lookup(
    State(state): State<Arc<StubState>>,
    headers: HeaderMap,
    Json(dois): Json<Vec<String>>,
) -> Result<Json<Vec<ProviderRecord>>, StatusCode> {
    state.log.lock().unwrap().push(RequestLog {
        at: Instant::now(),
        dois: dois.clone(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    });
    if state
        .fail_first
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    if dois.iter().any(|d| state.hang.contains(d)) {
        std::future::pending::<()>().await;
    }
    if dois.iter().any(|d| state.reject.contains(d)) {
        return Err(StatusCode::BAD_REQUEST);
    }
    Ok(Json(
        dois.iter()
            .filter_map(|d| {
                state.answers.get(d).map(|&(readers, p)| ProviderRecord {
                    doi: d.clone(),
                    readers,
                    match_probability: p,
                })
            })
            .collect(),
    ))
}
