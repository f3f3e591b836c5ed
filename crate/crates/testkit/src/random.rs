//! Seeded generators of small random items, batches, utility specs and judged
//! lists.

use rand::seq::SliceRandom;
use rand::Rng;
use steerank_core::data::{ContentType, GroupField, Item, UserProfile};
use steerank_core::instance::Instance;
use steerank_core::utilities::{UtilityKind, UtilitySpec};

pub const FIELDS: [GroupField; 6] = [
    GroupField::Seller,
    GroupField::Category,
    GroupField::Ctype,
    GroupField::Prio,
    GroupField::Cold,
    GroupField::New,
];

pub const KINDS: [UtilityKind; 7] = [
    UtilityKind::Strict,
    UtilityKind::Gated,
    UtilityKind::Positional,
    UtilityKind::Diversity,
    UtilityKind::Ordering,
    UtilityKind::Engagement,
    UtilityKind::IntentDiversity,
];

/// Item with small-cardinality attributes and `dim` features; about one in
/// ten feature vectors is all zeros.
pub fn item(rng: &mut impl Rng, id: u64, dim: usize) -> Item {
    let zero = rng.random_bool(0.1);
    Item {
        id,
        seller: rng.random_range(0..3),
        category: rng.random_range(0..4),
        ctype: ContentType::ALL[rng.random_range(0..3)],
        prio: rng.random_range(0..3),
        cold: rng.random_bool(0.3),
        new: rng.random_bool(0.3),
        ctr: rng.random_range(0.01..0.5),
        features: (0..dim)
            .map(|_| if zero { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect(),
    }
}

/// `m` items with distinct, shuffled ids.
pub fn items(rng: &mut impl Rng, m: usize, dim: usize) -> Vec<Item> {
    let mut ids: Vec<u64> = (0..m as u64).map(|i| 10 * i + 3).collect();
    ids.shuffle(rng);
    ids.into_iter().map(|id| item(rng, id, dim)).collect()
}

pub fn instance(rng: &mut impl Rng, m: usize, dim: usize) -> Instance {
    let user = UserProfile {
        id: rng.random_range(0..1000),
        features: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    Instance::new(user, items(rng, m, dim)).expect("valid random instance")
}

/// A random page batch: `pools[p]` is the candidate pool of page `p` and
/// `lists[p]` the shown indices into it.
#[derive(Clone, Debug)]
pub struct Batch {
    pub pools: Vec<Vec<Item>>,
    pub lists: Vec<Vec<usize>>,
    pub predictions: Vec<Vec<f64>>,
}

impl Batch {
    pub fn pages(&self) -> Vec<Vec<&Item>> {
        self.pools
            .iter()
            .zip(&self.lists)
            .map(|(pool, l)| l.iter().map(|&i| &pool[i]).collect())
            .collect()
    }
}

/// Up to `max_pages` pages of equal length `1..=max_len`, each drawn from a
/// pool of `len..=len + 3` items.
pub fn batch(rng: &mut impl Rng, max_pages: usize, min_len: usize, max_len: usize) -> Batch {
    let pages = rng.random_range(1..=max_pages);
    let len = rng.random_range(min_len..=max_len);
    let mut pools = Vec::with_capacity(pages);
    let mut lists = Vec::with_capacity(pages);
    let mut predictions = Vec::with_capacity(pages);
    for _ in 0..pages {
        let m = rng.random_range(len..=len + 3);
        let pool = items(rng, m, 3);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        idx.truncate(len);
        lists.push(idx);
        pools.push(pool);
        predictions.push(
            (0..len)
                .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect(),
        );
    }
    Batch {
        pools,
        lists,
        predictions,
    }
}

/// Random spec of `kind` with thresholds drawn from values that hit the
/// boundaries often.
pub fn spec(rng: &mut impl Rng, kind: UtilityKind) -> UtilitySpec {
    let mut s = UtilitySpec::new("u", kind, 1.0);
    s.group_field = Some(FIELDS[rng.random_range(0..FIELDS.len())]);
    s.group_value = Some(rng.random_range(0..3));
    let te = [0.0, 0.2, 0.25, 1.0 / 3.0, 0.5, 1.0];
    s.t_e = Some(if rng.random_bool(0.5) {
        te[rng.random_range(0..te.len())]
    } else {
        rng.random_range(0.0..=1.0)
    });
    s.t_p = Some(if rng.random_bool(0.5) {
        rng.random_range(1..=5) as f64
    } else {
        rng.random_range(1.0..5.0)
    });
    s.window = if rng.random_bool(0.4) {
        None
    } else {
        Some(rng.random_range(1..=4))
    };
    if rng.random_bool(0.5) {
        let mut map = std::collections::BTreeMap::new();
        for label in 0..3 {
            if rng.random_bool(0.7) {
                map.insert(label.to_string(), rng.random_range(-2..3));
            }
        }
        s.priority_map = Some(map);
    }
    s
}

/// Binary grades, features (some zero), intents and a pool that contains the
/// list plus a few extra items.
#[derive(Clone, Debug)]
pub struct Judged {
    pub grades: Vec<u8>,
    pub features: Vec<Vec<f64>>,
    pub intents: Vec<i64>,
    pub pool_grades: Vec<u8>,
    pub pool_intents: Vec<i64>,
}

pub fn judged(rng: &mut impl Rng, max_len: usize) -> Judged {
    let len = rng.random_range(2..=max_len);
    let extra = rng.random_range(0..=3);
    let grade = |rng: &mut dyn rand::RngCore| u8::from(rng.random_bool(0.4));
    let grades: Vec<u8> = (0..len).map(|_| grade(rng)).collect();
    let intents: Vec<i64> = (0..len).map(|_| rng.random_range(0..3)).collect();
    let features = (0..len)
        .map(|_| {
            if rng.random_bool(0.1) {
                vec![0.0; 3]
            } else {
                (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()
            }
        })
        .collect();
    let mut pool_grades = grades.clone();
    let mut pool_intents = intents.clone();
    for _ in 0..extra {
        pool_grades.push(grade(rng));
        pool_intents.push(rng.random_range(0..4));
    }
    Judged {
        grades,
        features,
        intents,
        pool_grades,
        pool_intents,
    }
}
