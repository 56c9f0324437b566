use std::collections::VecDeque;
use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::{sleep_until, Instant};

/// Sliding-window limiter: at most `limit` acquisitions inside any `window`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit as usize, Duration::from_secs(60))
    }

    pub fn new(limit: usize, window: Duration) -> Self {
        assert!(limit > 0, "rate limit must be positive");
        RateLimiter {
            limit,
            window,
            issued: Mutex::new(VecDeque::with_capacity(limit)),
        }
    }

    /// Waits until one more call fits in the window, then records it.
    pub async fn acquire(&self) {
        loop {
            let wait_until = {
                let mut issued = self.issued.lock().await;
                let now = Instant::now();
                while issued.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return;
                }
                *issued.front().unwrap() + self.window
            };
            sleep_until(wait_until).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(start_paused = true)]
    async fn never_exceeds_limit_in_any_window() {
        let limiter = RateLimiter::new(3, Duration::from_secs(60));
        let start = Instant::now();
        let mut stamps = vec![];
        for _ in 0..10 {
            limiter.acquire().await;
            stamps.push(Instant::now().duration_since(start));
        }
        for (i, t) in stamps.iter().enumerate() {
            let in_window = stamps[i..]
                .iter()
                .filter(|u| **u - *t < Duration::from_secs(60))
                .count();
            assert!(in_window <= 3, "window starting at {t:?} holds {in_window}");
        }
        assert_eq!(stamps[3], Duration::from_secs(60));
        assert_eq!(stamps[9], Duration::from_secs(180));
    }
}
