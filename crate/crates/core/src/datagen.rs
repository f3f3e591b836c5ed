//! Synthetic world: a catalog with category structure, users with favourite
//! categories, a ground-truth click model and logged impressions.
//!
//! Item features are a category centroid plus Gaussian noise; users point at
//! the centroids of one or two favourite categories. The click model combines
//! position bias, user–item affinity and a same-seller redundancy penalty:
//!
//! ```text
//! aff(u, i) = a_ui·⟨x_u, x_i⟩ + a_ctr·logit(ctr_i) + a_0
//! p        = clamp(base · bias(pos) · 2σ(aff) · (1 − ρ·dup), 0, 1)
//! ```
//!
//! where `dup` counts items of the same seller among the `window` preceding
//! positions. `2σ(aff)` equals 1 at zero affinity. An item is relevant to a
//! user when `aff ≥ 0`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{ClickModelConfig, DataConfig, RunConfig};
use crate::data::{ContentType, Item, LogSample, UserProfile};
use crate::error::{invalid, Error, Result};

/// Stream ids so that catalog, users and each split draw independent numbers.
const STREAM_CATALOG: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_TEST: u64 = 4;

pub(crate) fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub base: f64,
    pub position_bias: Vec<f64>,
    pub affinity_weight: f64,
    pub ctr_weight: f64,
    pub offset: f64,
    pub rho: f64,
    pub window: usize,
    pub relevance_threshold: f64,
}

impl From<&ClickModelConfig> for ClickModel {
    fn from(c: &ClickModelConfig) -> Self {
        Self {
            base: c.base,
            position_bias: c.position_bias.clone(),
            affinity_weight: c.affinity_weight,
            ctr_weight: c.ctr_weight,
            offset: c.offset,
            rho: c.rho,
            window: c.window,
            relevance_threshold: c.relevance_threshold,
        }
    }
}

impl ClickModel {
    /// Position multiplier for a 1-based position.
    pub fn bias(&self, position: usize) -> f64 {
        let i = position.max(1) - 1;
        self.position_bias
            .get(i)
            .or(self.position_bias.last())
            .copied()
            .unwrap_or(0.0)
    }

    pub fn affinity(&self, user: &UserProfile, item: &Item) -> f64 {
        self.affinity_weight * dot(&user.features, &item.features) + self.ctr_weight * logit(item.ctr) + self.offset
    }

    /// Binary ground-truth relevance.
    pub fn relevant(&self, user: &UserProfile, item: &Item) -> bool {
        self.affinity(user, item) >= self.relevance_threshold
    }

    /// Click probability of `item` at 1-based `position` after `prefix`.
    pub fn click_probability(&self, user: &UserProfile, prefix: &[&Item], item: &Item, position: usize) -> f64 {
        let start = prefix.len().saturating_sub(self.window);
        let dup = prefix[start..].iter().filter(|p| p.seller == item.seller).count() as f64;
        let p = self.base * self.bias(position) * 2.0 * sigmoid(self.affinity(user, item)) * (1.0 - self.rho * dup);
        p.clamp(0.0, 1.0)
    }

    /// Expected click probabilities of a whole list.
    pub fn list_probabilities(&self, user: &UserProfile, list: &[&Item]) -> Vec<f64> {
        (0..list.len())
            .map(|k| self.click_probability(user, &list[..k], list[k], k + 1))
            .collect()
    }
}

/// Catalog, users and the latent structure they were drawn from.
#[derive(Clone, Debug)]
pub struct World {
    pub centroids: Vec<Vec<f64>>,
    pub items: Vec<Item>,
    pub users: Vec<UserProfile>,
    pub favorites: Vec<Vec<u32>>,
    by_category: Vec<Vec<usize>>,
}

fn unit_gaussian(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = dot(&v, &v).sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn validate_catalog_config(cfg: &DataConfig) -> Result<()> {
    if cfg.n_categories == 0 || cfg.n_sellers == 0 || cfg.prio_levels == 0 || cfg.feature_dim == 0 {
        return invalid("group cardinalities and feature_dim must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.cold_fraction) || !(0.0..=1.0).contains(&cfg.new_fraction) {
        return invalid("cold_fraction and new_fraction must lie in [0, 1]");
    }
    if cfg.quality_std < 0.0 || cfg.feature_noise < 0.0 {
        return invalid("noise scales must be non-negative");
    }
    Ok(())
}

/// Draws the item catalog.
pub fn generate_catalog(cfg: &DataConfig, seed: u64) -> Result<Vec<Item>> {
    Ok(catalog_with_centroids(cfg, seed)?.1)
}

fn catalog_with_centroids(cfg: &DataConfig, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Item>)> {
    validate_catalog_config(cfg)?;
    let mut rng = rng_for(seed, STREAM_CATALOG);
    let cents: Vec<Vec<f64>> = (0..cfg.n_categories).map(|_| unit_gaussian(cfg.feature_dim, &mut rng)).collect();
    let noise = Normal::new(0.0, cfg.feature_noise.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let quality = Normal::new(0.0, cfg.quality_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut items = Vec::with_capacity(cfg.n_items);
    for id in 0..cfg.n_items {
        let category = rng.random_range(0..cfg.n_categories);
        let seller = rng.random_range(0..cfg.n_sellers);
        let ctype = ContentType::ALL[rng.random_range(0..ContentType::ALL.len())];
        let prio = rng.random_range(0..cfg.prio_levels);
        let cold = rng.random::<f64>() < cfg.cold_fraction;
        let new = rng.random::<f64>() < cfg.new_fraction;
        let q = quality.sample(&mut rng);
        let shift = if cold { cfg.cold_shift } else { 0.0 };
        let ctr = round4(sigmoid(cfg.ctr_logit_mean + q - shift)).max(1e-4);
        let features = cents[category as usize]
            .iter()
            .map(|c| round4(c + noise.sample(&mut rng)))
            .collect();
        items.push(Item {
            id: id as u64,
            seller,
            category,
            ctype,
            prio,
            cold,
            new,
            ctr,
            features,
        });
    }
    Ok((cents, items))
}

impl World {
    pub fn generate(cfg: &DataConfig, seed: u64) -> Result<World> {
        let (centroids, items) = catalog_with_centroids(cfg, seed)?;
        let mut rng = rng_for(seed, STREAM_USERS);
        let noise = Normal::new(0.0, 0.1).expect("valid normal");
        let mut users = Vec::with_capacity(cfg.n_users);
        let mut favorites = Vec::with_capacity(cfg.n_users);
        let mut cats: Vec<u32> = (0..cfg.n_categories).collect();
        for id in 0..cfg.n_users {
            let k = if cfg.n_categories > 1 && rng.random::<bool>() { 2 } else { 1 };
            cats.shuffle(&mut rng);
            let mut fav: Vec<u32> = cats[..k].to_vec();
            fav.sort_unstable();
            let mut v = vec![0.0; cfg.feature_dim];
            for &c in &fav {
                for (a, b) in v.iter_mut().zip(&centroids[c as usize]) {
                    *a += b;
                }
            }
            let norm = dot(&v, &v).sqrt().max(1e-12);
            let features = v.iter().map(|x| round4(x / norm + noise.sample(&mut rng))).collect();
            users.push(UserProfile { id: id as u64, features });
            favorites.push(fav);
        }
        let mut by_category = vec![Vec::new(); cfg.n_categories as usize];
        for (i, it) in items.iter().enumerate() {
            by_category[it.category as usize].push(i);
        }
        Ok(World {
            centroids,
            items,
            users,
            favorites,
            by_category,
        })
    }

    /// Candidate set for user `u`: a `favorite_share` of the slots from the
    /// user's favourite categories, the rest uniform over the catalog; sorted
    /// by id.
    fn candidates(&self, u: usize, m: usize, favorite_share: f64, rng: &mut impl Rng) -> Vec<Item> {
        let pool: Vec<usize> = self.favorites[u]
            .iter()
            .flat_map(|&c| self.by_category[c as usize].iter().copied())
            .collect();
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        let n_fav = ((favorite_share * m as f64).round() as usize).min(pool.len());
        while chosen.len() < n_fav {
            let i = pool[rng.random_range(0..pool.len())];
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        while chosen.len() < m {
            let i = rng.random_range(0..self.items.len());
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
        chosen.into_iter().map(|i| self.items[i].clone()).collect()
    }
}

/// CTR-greedy logging policy with Gumbel noise: indices of the top `n` by
/// `logit(ctr) + T·G`.
pub fn logging_policy(candidates: &[Item], n: usize, temperature: f64, rng: &mut impl Rng) -> Vec<usize> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| logit(c.ctr) + temperature * gumbel.sample(rng))
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Logged samples `0..n_d` of one split. Sample `k` depends only on
/// `(seed, stream, k)`.
pub fn generate_logs(
    world: &World,
    model: &ClickModel,
    cfg: &DataConfig,
    n_d: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<LogSample>> {
    let (m, n) = (cfg.m, cfg.n);
    if n == 0 || n > m || m > world.items.len() {
        return invalid(format!("need 1 <= N <= M <= catalog size, got N={n} M={m} catalog={}", world.items.len()));
    }
    if world.users.is_empty() {
        return invalid("no users");
    }
    let mut out = Vec::with_capacity(n_d);
    for k in 0..n_d {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(k as u64);
        out.push(log_sample(world, model, cfg, &mut rng));
    }
    Ok(out)
}

fn log_sample(world: &World, model: &ClickModel, cfg: &DataConfig, rng: &mut impl Rng) -> LogSample {
    let u = rng.random_range(0..world.users.len());
    let user = world.users[u].clone();
    let candidates = world.candidates(u, cfg.m, cfg.favorite_share, rng);
    let shown = logging_policy(&candidates, cfg.n, cfg.logging_temperature, rng);
    let list: Vec<&Item> = shown.iter().map(|&i| &candidates[i]).collect();
    let mut engagement = Vec::with_capacity(cfg.n);
    for k in 0..list.len() {
        let p = model.click_probability(&user, &list[..k], list[k], k + 1);
        let click = rng.random::<f64>() < p;
        engagement.push([1, u8::from(click)]);
    }
    let exposure = shown.iter().map(|&i| candidates[i].id).collect();
    LogSample {
        user,
        candidates,
        exposure,
        engagement,
    }
}

/// Train and test splits of one configuration.
pub struct Dataset {
    pub world: World,
    pub train: Vec<LogSample>,
    pub test: Vec<LogSample>,
}

pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let world = World::generate(&cfg.data, cfg.seed)?;
    let model = ClickModel::from(&cfg.data.click);
    let train = generate_logs(&world, &model, &cfg.data, cfg.data.n_train, cfg.seed, STREAM_TRAIN)?;
    let test = generate_logs(&world, &model, &cfg.data, cfg.data.n_test, cfg.seed, STREAM_TEST)?;
    Ok(Dataset { world, train, test })
}

/// Request skeletons (user, candidates, no constraints, greedy mode) for the
/// first `count` test samples.
pub fn demo_sessions(test: &[LogSample], count: usize) -> serde_json::Value {
    serde_json::Value::Array(
        test.iter()
            .take(count)
            .map(|s| {
                serde_json::json!({
                    "user": s.user,
                    "candidates": s.candidates,
                    "constraints": [],
                    "mode": "greedy",
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_model(base: f64, bias: Vec<f64>) -> ClickModel {
        ClickModel {
            base,
            position_bias: bias,
            affinity_weight: 0.0,
            ctr_weight: 0.0,
            offset: 0.0,
            rho: 0.0,
            window: 3,
            relevance_threshold: 0.0,
        }
    }

    fn item(id: u64, seller: u32) -> Item {
        Item {
            id,
            seller,
            category: 0,
            ctype: ContentType::Text,
            prio: 0,
            cold: false,
            new: false,
            ctr: 0.5,
            features: vec![0.0],
        }
    }

    #[test]
    fn click_examples() {
        let user = UserProfile { id: 0, features: vec![0.0] };
        let m = flat_model(0.3, vec![1.0, 0.9, 0.8, 0.7, 0.5]);
        assert!((m.click_probability(&user, &[], &item(1, 0), 1) - 0.3).abs() < 1e-15);
        assert!((m.click_probability(&user, &[], &item(1, 0), 5) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn redundancy_uses_the_window() {
        let user = UserProfile { id: 0, features: vec![0.0] };
        let mut m = flat_model(0.4, vec![1.0]);
        m.rho = 0.25;
        let a = item(1, 7);
        let b = item(2, 8);
        let prefix = [&a, &b, &b, &b];
        // seller 7 sits outside the 3-slot window
        assert!((m.click_probability(&user, &prefix, &item(3, 7), 5) - 0.4).abs() < 1e-15);
        assert!((m.click_probability(&user, &prefix, &item(3, 8), 5) - 0.4 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn probabilities_are_clamped() {
        let user = UserProfile { id: 0, features: vec![0.0] };
        let m = ClickModel {
            offset: 50.0,
            ..flat_model(0.9, vec![1.0])
        };
        assert_eq!(m.click_probability(&user, &[], &item(1, 0), 1), 1.0);
    }

    #[test]
    fn logging_policy_returns_distinct_indices() {
        let items: Vec<Item> = (0..8).map(|i| item(i, 0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = logging_policy(&items, 5, 1.0, &mut rng);
        assert_eq!(l.len(), 5);
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 5);
    }
}
