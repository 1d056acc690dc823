use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

/// Token bucket: `rate` tokens per second, burst of `max(1, rate)`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Self {
        let rate = rate.max(1e-6);
        let capacity = rate.max(1.0);
        Self { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until one token is available, then takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().unwrap();
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

static BUCKETS: OnceLock<Mutex<HashMap<String, Arc<TokenBucket>>>> = OnceLock::new();

/// Process-wide bucket for `provider_id`; the first registration fixes the rate.
pub(super) fn shared(provider_id: &str, rate: f64) -> Arc<TokenBucket> {
    let map = BUCKETS.get_or_init(Default::default);
    map.lock()
        .unwrap()
        .entry(provider_id.to_string())
        .or_insert_with(|| Arc::new(TokenBucket::new(rate)))
        .clone()
}
