use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::backend::{BackendError, ModelBackend};
use super::RetryPolicy;

/// Time source for rate limiting and backoff. Durations are measured from
/// an arbitrary origin fixed when the clock is created.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// Simulated clock: sleeping jumps time forward instead of blocking.
#[derive(Default)]
pub struct SimClock {
    t: Mutex<Duration>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.t.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut t = self.t.lock().unwrap();
        if deadline > *t {
            *t = deadline;
        }
    }
}

/// Hands out evenly spaced call slots, `60 / per_minute` seconds apart,
/// with no initial burst.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / rate),
            next: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Reserves the next slot and waits for it.
    pub fn acquire(&self, clock: &dyn Clock) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = clock.now();
            let slot = match *next {
                Some(n) if n > now => n,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        clock.sleep_until(slot);
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InvokeError {
    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    /// Bad or missing credentials. Never retried.
    #[error("configuration error: {0}")]
    Auth(String),
    #[error("backend rejected the request: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub text: String,
    pub attempts: u32,
    pub retries: u32,
    pub latency: Duration,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub struct Invoker {
    backend: Arc<dyn ModelBackend>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
}

impl Invoker {
    pub fn new(
        backend: Arc<dyn ModelBackend>,
        retry: RetryPolicy,
        rate_limit: Option<f64>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Invoker {
            backend,
            retry,
            limiter: rate_limit.map(RateLimiter::per_minute),
            clock,
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.retry.backoff_base * 2f64.powi(retry as i32 - 1))
    }

    pub fn invoke(&self, prompt: &str) -> Result<Invocation, InvokeError> {
        let max = self.retry.max_attempts.max(1);
        let start = self.clock.now();
        let mut last = String::new();
        for attempt in 1..=max {
            if attempt > 1 {
                self.clock.sleep(self.backoff(attempt - 1));
            }
            if let Some(l) = &self.limiter {
                l.acquire(self.clock.as_ref());
            }
            let t0 = self.clock.now();
            let result = self.backend.complete(prompt);
            let latency = self.clock.now().saturating_sub(t0);
            match result {
                Ok(c) => {
                    log::info!(
                        "backend={} attempt={} latency_ms={} prompt_tokens={} completion_tokens={}",
                        self.backend.name(),
                        attempt,
                        latency.as_millis(),
                        c.prompt_tokens.map_or("-".into(), |t| t.to_string()),
                        c.completion_tokens.map_or("-".into(), |t| t.to_string()),
                    );
                    return Ok(Invocation {
                        text: c.text,
                        attempts: attempt,
                        retries: attempt - 1,
                        latency: self.clock.now().saturating_sub(start),
                        prompt_tokens: c.prompt_tokens,
                        completion_tokens: c.completion_tokens,
                    });
                }
                Err(e) => {
                    log::warn!(
                        "backend={} attempt={} latency_ms={} error={}",
                        self.backend.name(),
                        attempt,
                        latency.as_millis(),
                        e
                    );
                    match e {
                        BackendError::Auth(m) => return Err(InvokeError::Auth(m)),
                        BackendError::Fatal(m) => return Err(InvokeError::Fatal(m)),
                        BackendError::Transient(m) => last = m,
                    }
                }
            }
        }
        Err(InvokeError::Transport {
            attempts: max,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::backend::{Completion, FnBackend};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn invoker(backend: FnBackend, retry: RetryPolicy, rate: Option<f64>) -> (Invoker, Arc<SimClock>) {
        let clock = Arc::new(SimClock::new());
        (
            Invoker::new(Arc::new(backend), retry, rate, clock.clone()),
            clock,
        )
    }

    fn flaky(failures: u32) -> (FnBackend, Arc<AtomicU32>) {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let b = FnBackend::new("flaky", move |_| {
            let n = c.fetch_add(1, Ordering::SeqCst);
            if n < failures {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok(Completion::text("done"))
            }
        });
        (b, calls)
    }

    #[test]
    fn stub_text_is_returned() {
        let (inv, _) = invoker(FnBackend::fixed("s", "fixed"), RetryPolicy::default(), None);
        let r = inv.invoke("p").unwrap();
        assert_eq!(r.text, "fixed");
        assert_eq!(r.retries, 0);
    }

    #[test]
    fn two_failures_then_success() {
        let (b, calls) = flaky(2);
        let retry = RetryPolicy {
            max_attempts: 3,
            backoff_base: 1.0,
        };
        let (inv, clock) = invoker(b, retry, None);
        let r = inv.invoke("p").unwrap();
        assert_eq!(r.text, "done");
        assert_eq!(r.retries, 2);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        // backoff 1s then 2s
        assert_eq!(clock.now(), Duration::from_secs(3));
    }

    #[test]
    fn exhausted_retries_are_a_transport_error() {
        let (b, _) = flaky(10);
        let (inv, _) = invoker(b, RetryPolicy::default(), None);
        assert!(matches!(
            inv.invoke("p"),
            Err(InvokeError::Transport { attempts: 3, .. })
        ));
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let b = FnBackend::new("auth", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Auth("401".into()))
        });
        let (inv, _) = invoker(b, RetryPolicy::default(), None);
        assert!(matches!(inv.invoke("p"), Err(InvokeError::Auth(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    /// Token bucket with capacity one, refilled at `rate` per minute, used
    /// as an independent check of the spaced-slot limiter.
    fn token_bucket_elapsed(calls: usize, rate: f64) -> f64 {
        let refill = rate / 60.0;
        let (mut tokens, mut t) = (1.0f64, 0.0f64);
        for _ in 0..calls {
            if tokens < 1.0 {
                let wait = (1.0 - tokens) / refill;
                t += wait;
                tokens += wait * refill;
            }
            tokens -= 1.0;
        }
        t
    }

    #[test]
    fn rate_limit_matches_token_bucket() {
        for (n, rate) in [(120usize, 60.0), (10, 30.0), (1, 60.0), (50, 600.0)] {
            let (inv, clock) = invoker(FnBackend::fixed("s", "x"), RetryPolicy::default(), Some(rate));
            for _ in 0..n {
                inv.invoke("p").unwrap();
            }
            let expected = token_bucket_elapsed(n, rate);
            assert!((clock.now().as_secs_f64() - expected).abs() < 1e-6, "{n} {rate}");
        }
        assert!((token_bucket_elapsed(120, 60.0) - 119.0).abs() < 1e-9);
    }

    #[test]
    fn rate_limit_holds_across_threads() {
        let clock = Arc::new(SimClock::new());
        let inv = Arc::new(Invoker::new(
            Arc::new(FnBackend::fixed("s", "x")),
            RetryPolicy::default(),
            Some(60.0),
            clock.clone(),
        ));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let inv = inv.clone();
                s.spawn(move || {
                    for _ in 0..30 {
                        inv.invoke("p").unwrap();
                    }
                });
            }
        });
        assert_eq!(clock.now(), Duration::from_secs(119));
    }
}
