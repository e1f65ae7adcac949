use std::borrow::Cow;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::head::ModelWithHead;
use crate::layers::{lower, LayerKey, LayerRecord};

/// FNV-1a over the key's textual form: stable across platforms and builds.
fn key_stream(key: &LayerKey) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Weights of every layer, generated on demand from `(seed, layer key)`.
///
/// Each layer draws from its own ChaCha stream, so a layer's values do not
/// depend on which other layers were generated or in what order. Values are
/// uniform in `[-1, 1] * sqrt(3 / fan_in)`; biases are zero and batch norm runs
/// as the identity, so only weights are stored.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    seed: u64,
    cache: HashMap<LayerKey, Vec<f32>>,
}

impl WeightStore {
    pub fn lazy(seed: u64) -> Self {
        Self {
            seed,
            cache: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generate(&self, rec: &LayerRecord) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key_stream(&rec.key));
        // Unit-variance outputs for unit-variance inputs.
        let scale = (3.0 / rec.op.fan_in().max(1) as f32).sqrt();
        (0..rec.op.weight_count())
            .map(|_| rng.gen_range(-1.0f32..=1.0) * scale)
            .collect()
    }

    pub fn get(&self, rec: &LayerRecord) -> Cow<'_, [f32]> {
        match self.cache.get(&rec.key) {
            Some(w) => Cow::Borrowed(w),
            None => Cow::Owned(self.generate(rec)),
        }
    }

    pub fn insert(&mut self, key: LayerKey, weights: Vec<f32>) {
        self.cache.insert(key, weights);
    }

    /// Generates and keeps every layer's weights.
    pub fn materialize<'a>(&mut self, records: impl IntoIterator<Item = &'a LayerRecord>) {
        for r in records {
            if !self.cache.contains_key(&r.key) {
                let w = self.generate(r);
                self.cache.insert(r.key, w);
            }
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &LayerKey> {
        self.cache.keys()
    }

    pub fn layer(&self, key: &LayerKey) -> Option<&[f32]> {
        self.cache.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

/// Materialized store for every weighted layer of `m` (heads included),
/// lowered at `resolution`. Weight shapes do not depend on the resolution.
pub fn init_weights(m: &ModelWithHead, resolution: u32, seed: u64) -> Result<WeightStore> {
    let p = lower(m, resolution)?;
    let mut w = WeightStore::lazy(seed);
    w.materialize(p.all_records());
    Ok(w)
}
