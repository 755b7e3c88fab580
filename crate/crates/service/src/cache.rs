use axum::body::Bytes;
use lru::LruCache;
use parking_lot::Mutex;

/// LRU of encoded responses bounded by total payload bytes.
pub struct RenderCache {
    inner: Mutex<Inner>,
}

struct Inner {
    entries: LruCache<String, Bytes>,
    bytes: usize,
    capacity: usize,
}

impl RenderCache {
    pub fn new(capacity_bytes: usize) -> Self {
        RenderCache {
            inner: Mutex::new(Inner {
                entries: LruCache::unbounded(),
                bytes: 0,
                capacity: capacity_bytes,
            }),
        }
    }

    pub fn get(&self, key: &str) -> Option<Bytes> {
        self.inner.lock().entries.get(key).cloned()
    }

    /// Inserts `value`, evicting least-recently-used entries to stay within capacity.
    /// Values larger than the whole cache are not stored.
    pub fn insert(&self, key: String, value: Bytes) {
        let mut inner = self.inner.lock();
        if value.len() > inner.capacity {
            return;
        }
        if let Some(old) = inner.entries.pop(&key) {
            inner.bytes -= old.len();
        }
        while inner.bytes + value.len() > inner.capacity {
            match inner.entries.pop_lru() {
                Some((_, v)) => inner.bytes -= v.len(),
                None => break,
            }
        }
        inner.bytes += value.len();
        inner.entries.put(key, value);
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> usize {
        self.inner.lock().bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_least_recent_by_bytes() {
        let c = RenderCache::new(10);
        c.insert("a".into(), Bytes::from(vec![0; 4]));
        c.insert("b".into(), Bytes::from(vec![0; 4]));
        assert!(c.get("a").is_some()); // a is now most recent
        c.insert("c".into(), Bytes::from(vec![0; 4]));
        assert!(c.get("b").is_none());
        assert!(c.get("a").is_some() && c.get("c").is_some());
        assert_eq!(c.bytes(), 8);
    }

    #[test]
    fn oversized_values_are_skipped_and_replacement_is_accounted() {
        let c = RenderCache::new(10);
        c.insert("big".into(), Bytes::from(vec![0; 11]));
        assert!(c.is_empty());
        c.insert("k".into(), Bytes::from(vec![0; 6]));
        c.insert("k".into(), Bytes::from(vec![0; 3]));
        assert_eq!(c.bytes(), 3);
        assert_eq!(c.len(), 1);
    }
}
