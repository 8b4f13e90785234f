//! Synthetic session corpora with planted structure.
//!
//! The catalog is partitioned into categories. Each category carries a
//! hidden successor cycle over its items (the Markov signal), and every
//! session interleaves two category threads (the co-occurrence signal):
//! consecutive events often come from different threads, so adjacent-pair
//! counting sees a noisier picture than a model that can credit items
//! across the interleaving gap or lean on within-session consistency.
//!
//! Everything is driven by one seeded ChaCha stream: the same config
//! always yields the same corpus, byte for byte.

use crate::corpus::{Event, EventLog};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_sessions: usize,
    pub n_categories: usize,
    /// Chance the active thread advances along its planted cycle (vs a
    /// uniform draw within its category).
    pub follow_prob: f64,
    /// Chance the active thread flips after each event.
    pub switch_prob: f64,
    /// Chance an event is uniform over the whole catalog instead.
    pub noise_prob: f64,
    /// Session length is `min_len` plus a geometric tail with this mean.
    pub mean_extra_len: f64,
    pub min_len: usize,
    /// Sessions start uniformly inside this many days.
    pub days: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_items: 5000,
            n_sessions: 50_000,
            n_categories: 50,
            follow_prob: 0.35,
            switch_prob: 0.55,
            noise_prob: 0.24,
            mean_extra_len: 4.0,
            min_len: 3,
            days: 30,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_sessions == 0 || self.n_categories == 0 {
            return Err(Error::config(
                "item, session and category counts must be positive".to_string(),
            ));
        }
        if self.n_categories > self.n_items {
            return Err(Error::config(format!(
                "{} categories cannot partition {} items",
                self.n_categories, self.n_items
            )));
        }
        for (name, p) in [
            ("follow_prob", self.follow_prob),
            ("switch_prob", self.switch_prob),
            ("noise_prob", self.noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.min_len < 2 {
            return Err(Error::config("min_len must be at least 2".to_string()));
        }
        if !(self.mean_extra_len >= 0.0) || self.days == 0 {
            return Err(Error::config(
                "mean_extra_len must be >= 0 and days positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Category boundaries: contiguous blocks, remainder spread over the
/// first few.
fn category_bounds(n_items: usize, n_categories: usize) -> Vec<(usize, usize)> {
    let base = n_items / n_categories;
    let extra = n_items % n_categories;
    let mut bounds = Vec::with_capacity(n_categories);
    let mut start = 0;
    for c in 0..n_categories {
        let len = base + usize::from(c < extra);
        bounds.push((start, start + len));
        start += len;
    }
    bounds
}

pub fn generate(cfg: &SynthConfig) -> Result<EventLog> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bounds = category_bounds(cfg.n_items, cfg.n_categories);

    // Planted successor cycle per category: a random cyclic order over
    // the block's items.
    let mut successor: Vec<u32> = (0..cfg.n_items as u32).collect();
    for &(lo, hi) in &bounds {
        let mut order: Vec<u32> = (lo as u32..hi as u32).collect();
        order.shuffle(&mut rng);
        for w in 0..order.len() {
            successor[order[w] as usize] = order[(w + 1) % order.len()];
        }
    }

    // Popular categories are picked far more often: weight 1/(1+index).
    let weights: Vec<f64> = (0..cfg.n_categories).map(|c| 1.0 / (1 + c) as f64).collect();
    let total_weight: f64 = weights.iter().sum();
    let pick_category = |rng: &mut ChaCha8Rng, skip: Option<usize>| loop {
        let mut z = rng.random_range(0.0..total_weight);
        let mut chosen = cfg.n_categories - 1;
        for (c, w) in weights.iter().enumerate() {
            if z < *w {
                chosen = c;
                break;
            }
            z -= w;
        }
        if cfg.n_categories == 1 || Some(chosen) != skip {
            return chosen;
        }
    };

    let horizon = i64::from(cfg.days) * 86_400;
    let geom_p = 1.0 / (1.0 + cfg.mean_extra_len);
    let mut events = Vec::new();
    for s in 0..cfg.n_sessions {
        let session = format!("sess{s:06}");
        let start = rng.random_range(0..horizon);

        // Two category threads, each with its own walk position.
        let cat_a = pick_category(&mut rng, None);
        let cat_b = pick_category(&mut rng, Some(cat_a));
        let mut cursor = [
            rng.random_range(bounds[cat_a].0..bounds[cat_a].1) as u32,
            rng.random_range(bounds[cat_b].0..bounds[cat_b].1) as u32,
        ];
        let cats = [cat_a, cat_b];
        let mut active = usize::from(rng.random_bool(0.5));

        let mut extra = 0usize;
        while !rng.random_bool(geom_p) {
            extra += 1;
        }
        let len = cfg.min_len + extra;

        for e in 0..len {
            let item = if rng.random_bool(cfg.noise_prob) {
                rng.random_range(0..cfg.n_items as u32)
            } else {
                let cur = cursor[active] as usize;
                let next = if rng.random_bool(cfg.follow_prob) {
                    successor[cur]
                } else {
                    let (lo, hi) = bounds[cats[active]];
                    rng.random_range(lo..hi) as u32
                };
                cursor[active] = next;
                if rng.random_bool(cfg.switch_prob) {
                    active = 1 - active;
                }
                next
            };
            events.push(Event {
                session: session.clone(),
                item: format!("item{item:05}"),
                time: start + 30 * e as i64,
            });
        }
    }
    Ok(EventLog { events })
}
