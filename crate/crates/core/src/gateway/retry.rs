use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use super::{ChatRequest, Completion, EmbedSpace, GatewayError, Provider, ProviderConfig};
use crate::text;

/// Retrying, concurrency-capped front for any [`Provider`].
///
/// A call that succeeds on attempt `k` issues exactly `k` requests to the
/// inner provider. Text embeddings leave here unit-normalized.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<dyn Provider>,
    retry_budget: u32,
    backoff: Duration,
    permits: Arc<Semaphore>,
}

impl Gateway {
    pub fn new(inner: Arc<dyn Provider>, retry_budget: u32, backoff: Duration, max_concurrent: usize) -> Self {
        Self {
            inner,
            retry_budget,
            backoff,
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
        }
    }

    pub fn from_config(inner: Arc<dyn Provider>, cfg: &ProviderConfig) -> Self {
        Self::new(
            inner,
            cfg.retry_budget,
            Duration::from_millis(cfg.backoff_ms),
            cfg.max_concurrent,
        )
    }

    /// No retries, no backoff. Handy for tests that count requests.
    pub fn direct(inner: Arc<dyn Provider>) -> Self {
        Self::new(inner, 0, Duration::ZERO, 64)
    }

    pub fn retry_budget(&self) -> u32 {
        self.retry_budget
    }

    async fn with_retries<T, F, Fut>(&self, mut call: F) -> Result<T, GatewayError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, GatewayError>>,
    {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| GatewayError::Config("gateway closed".into()))?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match call().await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt <= self.retry_budget => {
                    let delay = self.backoff * 2u32.saturating_pow(attempt - 1);
                    tracing::warn!(attempt, error = %e, "provider call failed, retrying");
                    if !delay.is_zero() {
                        tokio::time::sleep(delay).await;
                    }
                }
                Err(e) if attempt > 1 => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[async_trait]
impl Provider for Gateway {
    async fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        self.with_retries(|| self.inner.chat(request)).await
    }

    async fn embed_text(&self, space: EmbedSpace, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let mut vectors = self.with_retries(|| self.inner.embed_text(space, texts)).await?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        if let Some(first) = vectors.first() {
            let dim = first.len();
            if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
                return Err(GatewayError::InvalidResponse("inconsistent embedding dimensions".into()));
            }
        }
        vectors.iter_mut().for_each(|v| text::normalize(v));
        Ok(vectors)
    }

    async fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f32>, GatewayError> {
        if bytes.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let v = self.with_retries(|| self.inner.embed_image(bytes)).await?;
        if v.is_empty() {
            return Err(GatewayError::InvalidResponse("empty image embedding".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockMatch, MockProvider, MockReply, MockScript, Purpose};

    fn counting_mock(failures: usize) -> Arc<MockProvider> {
        let mut replies: Vec<MockReply> = (0..failures).map(|i| MockReply::Fail(format!("boom {i}"))).collect();
        replies.push(MockReply::text("ok"));
        Arc::new(MockProvider::new(
            MockScript::new(7, 8).route(MockMatch::Any, replies),
        ))
    }

    fn req() -> ChatRequest {
        ChatRequest::new(Purpose::Summary, vec![super::super::ChatMessage::user("hi")])
    }

    #[tokio::test]
    async fn success_on_attempt_k_makes_k_requests() {
        for k in 1..=3usize {
            let mock = counting_mock(k - 1);
            let gw = Gateway::new(mock.clone(), 2, Duration::ZERO, 4);
            let out = gw.chat(&req()).await.unwrap();
            assert_eq!(out.text.as_deref(), Some("ok"));
            assert_eq!(mock.chat_calls(), k, "attempt {k}");
        }
    }

    #[tokio::test]
    async fn budget_exhaustion_reports_attempts() {
        let mock = counting_mock(5);
        let gw = Gateway::new(mock.clone(), 2, Duration::ZERO, 4);
        match gw.chat(&req()).await {
            Err(GatewayError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.chat_calls(), 3);
    }

    #[tokio::test]
    async fn non_retryable_errors_fail_fast() {
        let mock = Arc::new(MockProvider::new(MockScript::new(1, 4)));
        let gw = Gateway::new(mock.clone(), 2, Duration::ZERO, 4);
        assert!(matches!(gw.chat(&req()).await, Err(GatewayError::ScriptExhausted(_))));
        assert_eq!(mock.chat_calls(), 1);
    }

    #[tokio::test]
    async fn embed_text_is_normalized_and_ordered() {
        let mock = Arc::new(MockProvider::new(MockScript::new(3, 16)));
        let gw = Gateway::direct(mock);
        let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let vs = gw.embed_text(EmbedSpace::Text, &texts).await.unwrap();
        assert_eq!(vs.len(), 3);
        for v in &vs {
            assert!((text::l2_norm(v) - 1.0).abs() < 1e-6);
        }
        let single = gw.embed_text(EmbedSpace::Text, &texts[1..2]).await.unwrap();
        assert_eq!(single[0], vs[1]);
        assert!(matches!(gw.embed_text(EmbedSpace::Text, &[]).await, Err(GatewayError::EmptyInput)));
    }
}
