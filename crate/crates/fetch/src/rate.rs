use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::Instant;

// absorbs scheduling jitter between our clock and the server's
const WINDOW_GUARD: Duration = Duration::from_millis(25);

/// Shared request pacer.
///
/// Starts are spaced at least `1/rate` apart, and no more than
/// `ceil(rate)` starts fall inside any one-second window.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    inner: Arc<Mutex<State>>,
    spacing: Duration,
    burst: usize,
}

#[derive(Debug)]
struct State {
    recent: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        Self {
            inner: Arc::new(Mutex::new(State { recent: VecDeque::new() })),
            spacing: Duration::from_secs_f64(1.0 / rate),
            burst: rate.ceil() as usize,
        }
    }

    /// Waits for the next free slot and claims it.
    pub async fn acquire(&self) {
        // holding the lock while sleeping keeps slots in arrival order
        let mut st = self.inner.lock().await;
        let now = Instant::now();
        let mut at = now;
        if let Some(&last) = st.recent.back() {
            at = at.max(last + self.spacing);
        }
        if st.recent.len() >= self.burst {
            let oldest = st.recent[st.recent.len() - self.burst];
            at = at.max(oldest + Duration::from_secs(1) + WINDOW_GUARD);
        }
        if at > now {
            tokio::time::sleep_until(at).await;
        }
        st.recent.push_back(Instant::now());
        while st.recent.len() > self.burst {
            st.recent.pop_front();
        }
    }
}
