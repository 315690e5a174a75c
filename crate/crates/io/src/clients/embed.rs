use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::{post_with_retries, ClientError, EndpointConfig, InFlightLimiter, Transport};
use crate::cache::EmbeddingCache;

type ChunkResult = Result<Vec<Vec<f64>>, ClientError>;

/// Embeds texts through the cache first and the endpoint for the rest.
pub struct EmbeddingClient {
    cfg: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Option<EmbeddingCache>,
    limiter: InFlightLimiter,
    calls: AtomicU64,
}

impl EmbeddingClient {
    pub fn new(
        cfg: EndpointConfig,
        transport: Arc<dyn Transport>,
        cache: Option<EmbeddingCache>,
    ) -> Result<Self, ClientError> {
        cfg.validate()?;
        Ok(Self {
            limiter: InFlightLimiter::new(cfg.max_in_flight),
            cfg,
            transport,
            cache,
            calls: AtomicU64::new(0),
        })
    }

    pub fn http(cfg: EndpointConfig, cache: Option<EmbeddingCache>) -> Result<Self, ClientError> {
        let transport = Arc::new(cfg.http_transport());
        Self::new(cfg, transport, cache)
    }

    /// Identifier mixed into cache keys.
    pub fn encoder_id(&self) -> &str {
        &self.cfg.model
    }

    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    /// One vector per input text, in input order.
    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::EmptyBatch);
        }
        let mut out: Vec<Option<Vec<f64>>> = texts
            .iter()
            .map(|t| self.cache.as_ref().and_then(|c| c.lookup(self.encoder_id(), t.as_ref())))
            .collect();

        let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut missing: Vec<&str> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            if out[i].is_none() {
                let t = t.as_ref();
                let slots = positions.entry(t).or_default();
                if slots.is_empty() {
                    missing.push(t);
                }
                slots.push(i);
            }
        }

        if !missing.is_empty() {
            let chunks: Vec<&[&str]> = missing.chunks(self.cfg.batch_size).collect();
            let fetched = self.fetch_chunks(&chunks)?;
            for (text, vector) in missing.iter().zip(fetched) {
                if let Some(cache) = &self.cache {
                    cache.store(self.encoder_id(), text, &vector)?;
                }
                for &i in &positions[text] {
                    out[i] = Some(vector.clone());
                }
            }
        }

        let out: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("every slot filled")).collect();
        check_dims(&out)?;
        Ok(out)
    }

    fn fetch_chunks(&self, chunks: &[&[&str]]) -> Result<Vec<Vec<f64>>, ClientError> {
        if chunks.len() == 1 {
            return self.fetch_chunk(chunks[0]);
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<ChunkResult>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let workers = self.cfg.max_in_flight.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.fetch_chunk(chunks[i]);
                    let failed = r.is_err();
                    results.lock().expect("results lock")[i] = Some(r);
                    if failed {
                        // Stop handing out work once something has failed.
                        next.store(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::new();
        for r in results.into_inner().expect("results lock").into_iter().flatten() {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Requests one chunk, re-requesting only indices the endpoint omitted.
    fn fetch_chunk(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClientError> {
        let mut got: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut pending: Vec<usize> = (0..texts.len()).collect();
        let mut rounds = 0u32;
        loop {
            let inputs: Vec<&str> = pending.iter().map(|&i| texts[i]).collect();
            let body = json!({ "model": self.cfg.model, "input": inputs });
            let resp = post_with_retries(
                &self.cfg,
                self.transport.as_ref(),
                &self.limiter,
                &self.calls,
                "embeddings",
                &body,
            )?;
            let items = parse_embeddings(&resp, pending.len())?;
            let received: Vec<Vec<f64>> = items.iter().map(|(_, v)| v.clone()).collect();
            check_dims(&received)?;
            for (pos, vector) in items {
                got[pending[pos]] = Some(vector);
            }
            pending.retain(|&i| got[i].is_none());
            if pending.is_empty() {
                break;
            }
            if rounds >= self.cfg.max_retries {
                return Err(ClientError::IncompleteEmbeddings {
                    missing: pending.len(),
                });
            }
            rounds += 1;
            log::warn!("embedding response omitted {} inputs; re-requesting", pending.len());
            std::thread::sleep(self.cfg.backoff(rounds));
        }
        let all: Vec<Vec<f64>> = got.into_iter().map(|v| v.expect("filled")).collect();
        check_dims(&all)?;
        Ok(all)
    }
}

fn check_dims(vectors: &[Vec<f64>]) -> Result<(), ClientError> {
    let Some(first) = vectors.first() else {
        return Ok(());
    };
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(ClientError::EncoderInconsistency {
            dims: vectors.iter().map(Vec::len).collect(),
        });
    }
    Ok(())
}

/// `(position in request, vector)` pairs from an embeddings response.
fn parse_embeddings(resp: &Value, requested: usize) -> Result<Vec<(usize, Vec<f64>)>, ClientError> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Protocol("missing `data` array".into()))?;
    let mut out = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = match item.get("index") {
            Some(v) => v
                .as_u64()
                .map(|i| i as usize)
                .ok_or_else(|| ClientError::Protocol("non-integer `index`".into()))?,
            None => pos,
        };
        if index >= requested {
            return Err(ClientError::Protocol(format!(
                "index {index} out of range for {requested} inputs"
            )));
        }
        let vector: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Protocol("missing `embedding`".into()))?
            .iter()
            .map(|x| x.as_f64().filter(|f| f.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| ClientError::Protocol("non-numeric embedding value".into()))?;
        if vector.is_empty() {
            return Err(ClientError::Protocol("empty embedding".into()));
        }
        out.push((index, vector));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::TransportError;
    use std::time::Duration;

    /// Embeds a text as `[len, first byte]`, optionally failing or
    /// dropping items on chosen calls.
    struct Fake {
        calls: Mutex<Vec<Vec<String>>>,
        fail_first: Mutex<u32>,
        fail_with: u16,
        drop_last_once: Mutex<bool>,
    }

    impl Fake {
        fn new() -> Self {
            Self {
                calls: Mutex::new(Vec::new()),
                fail_first: Mutex::new(0),
                fail_with: 503,
                drop_last_once: Mutex::new(false),
            }
        }
    }

    impl Transport for Fake {
        fn post_json(&self, endpoint: &str, body: &Value) -> Result<Value, TransportError> {
            assert_eq!(endpoint, "embeddings");
            let inputs: Vec<String> = body["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_string())
                .collect();
            self.calls.lock().unwrap().push(inputs.clone());
            {
                let mut f = self.fail_first.lock().unwrap();
                if *f > 0 {
                    *f -= 1;
                    return Err(TransportError::Status {
                        status: self.fail_with,
                        body: "nope".into(),
                    });
                }
            }
            let mut data: Vec<Value> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    json!({"index": i, "embedding": [t.len() as f64, f64::from(t.as_bytes()[0])]})
                })
                .collect();
            let mut d = self.drop_last_once.lock().unwrap();
            if *d && data.len() > 1 {
                *d = false;
                data.pop();
            }
            Ok(json!({ "data": data }))
        }
    }

    fn cfg() -> EndpointConfig {
        let mut c = EndpointConfig::new("http://unused", "enc");
        c.retry_backoff = Duration::from_millis(1);
        c
    }

    #[test]
    fn dedupes_and_preserves_order() {
        let fake = Arc::new(Fake::new());
        let client = EmbeddingClient::new(cfg(), fake.clone(), None).unwrap();
        let out = client.embed_batch(&["bb", "a", "bb", "ccc"]).unwrap();
        assert_eq!(out[0], vec![2.0, 98.0]);
        assert_eq!(out[1], vec![1.0, 97.0]);
        assert_eq!(out[2], out[0]);
        assert_eq!(out[3], vec![3.0, 99.0]);
        assert_eq!(fake.calls.lock().unwrap()[0], vec!["bb", "a", "ccc"]);
        assert_eq!(client.network_calls(), 1);
    }

    #[test]
    fn cache_hits_skip_the_network() {
        let dir = tempfile::tempdir().unwrap();
        let fake = Arc::new(Fake::new());
        let client =
            EmbeddingClient::new(cfg(), fake.clone(), Some(EmbeddingCache::new(dir.path()))).unwrap();
        client.embed_batch(&["x", "yy"]).unwrap();
        assert_eq!(client.network_calls(), 1);
        client.embed_batch(&["yy", "x"]).unwrap();
        assert_eq!(client.network_calls(), 1);
        client.embed_batch(&["x", "new"]).unwrap();
        assert_eq!(client.network_calls(), 2);
        assert_eq!(fake.calls.lock().unwrap()[1], vec!["new"]);
    }

    #[test]
    fn transient_errors_are_retried() {
        let fake = Arc::new(Fake::new());
        *fake.fail_first.lock().unwrap() = 2;
        let client = EmbeddingClient::new(cfg(), fake.clone(), None).unwrap();
        assert_eq!(client.embed_batch(&["a"]).unwrap().len(), 1);
        assert_eq!(client.network_calls(), 3);

        let fake = Arc::new(Fake::new());
        *fake.fail_first.lock().unwrap() = 10;
        let client = EmbeddingClient::new(cfg(), fake, None).unwrap();
        assert!(matches!(
            client.embed_batch(&["a"]),
            Err(ClientError::RetriesExhausted { attempts: 4, .. })
        ));
    }

    #[test]
    fn auth_errors_are_fatal() {
        let mut fake = Fake::new();
        fake.fail_with = 401;
        *fake.fail_first.lock().unwrap() = 1;
        let fake = Arc::new(fake);
        let client = EmbeddingClient::new(cfg(), fake, None).unwrap();
        assert!(matches!(client.embed_batch(&["a"]), Err(ClientError::Auth(_))));
        assert_eq!(client.network_calls(), 1);
    }

    #[test]
    fn only_missing_indices_are_re_requested() {
        let fake = Arc::new(Fake::new());
        *fake.drop_last_once.lock().unwrap() = true;
        let client = EmbeddingClient::new(cfg(), fake.clone(), None).unwrap();
        let out = client.embed_batch(&["a", "bb", "ccc"]).unwrap();
        assert_eq!(out[2], vec![3.0, 99.0]);
        let calls = fake.calls.lock().unwrap();
        assert_eq!(calls[1], vec!["ccc"]);
    }

    #[test]
    fn chunks_respect_in_flight_limit() {
        let fake = Arc::new(Fake::new());
        let mut c = cfg();
        c.batch_size = 2;
        c.max_in_flight = 2;
        let client = EmbeddingClient::new(c, fake.clone(), None).unwrap();
        let texts: Vec<String> = (0..11).map(|i| format!("t{i}")).collect();
        let out = client.embed_batch(&texts).unwrap();
        assert_eq!(out.len(), 11);
        assert_eq!(client.network_calls(), 6);
        assert!(client.peak_in_flight() <= 2);
        for (t, v) in texts.iter().zip(&out) {
            assert_eq!(v[0], t.len() as f64);
        }
    }

    struct Ragged;
    impl Transport for Ragged {
        fn post_json(&self, _: &str, _: &Value) -> Result<Value, TransportError> {
            Ok(json!({"data": [
                {"index": 0, "embedding": [1.0, 0.0]},
                {"index": 1, "embedding": [1.0, 0.0]},
                {"index": 2, "embedding": [1.0, 0.0, 0.0]},
            ]}))
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let client = EmbeddingClient::new(cfg(), Arc::new(Ragged), None).unwrap();
        match client.embed_batch(&["a", "b", "c"]) {
            Err(ClientError::EncoderInconsistency { dims }) => assert_eq!(dims, vec![2, 2, 3]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(client.embed_batch::<&str>(&[]), Err(ClientError::EmptyBatch)));
    }
}
