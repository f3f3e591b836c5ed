//! Straight-from-the-formula reference implementations. Nothing here calls
//! into `steerank_core::utilities` or `steerank_core::metrics`; the loops are
//! deliberately naive so they can serve as a second opinion.

use std::collections::BTreeSet;

fn group_count(page: &[bool]) -> f64 {
    let mut c = 0.0;
    for &m in page {
        if m {
            c += 1.0;
        }
    }
    c
}

fn batch_ratio(pages: &[Vec<bool>]) -> f64 {
    let mut members = 0usize;
    let mut slots = 0usize;
    for p in pages {
        for &m in p {
            slots += 1;
            if m {
                members += 1;
            }
        }
    }
    members as f64 / slots as f64
}

fn mean_position(page: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = (1..=page.len()).filter(|&pos| page[pos - 1]).collect();
    if positions.is_empty() {
        return None;
    }
    Some(positions.iter().sum::<usize>() as f64 / positions.len() as f64)
}

fn batch_position(pages: &[Vec<bool>]) -> Option<f64> {
    let mut positions = Vec::new();
    for p in pages {
        for pos in 1..=p.len() {
            if p[pos - 1] {
                positions.push(pos);
            }
        }
    }
    if positions.is_empty() {
        return None;
    }
    Some(positions.iter().sum::<usize>() as f64 / positions.len() as f64)
}

pub fn strict(pages: &[Vec<bool>], t_e: f64) -> f64 {
    let mut violating = 0.0;
    for p in pages {
        if group_count(p) / p.len() as f64 <= t_e {
            violating += 1.0;
        }
    }
    0.0 - violating / pages.len() as f64
}

pub fn gated(pages: &[Vec<bool>], t_e: f64) -> f64 {
    if batch_ratio(pages) <= t_e {
        strict(pages, t_e)
    } else {
        0.0
    }
}

pub fn positional(pages: &[Vec<bool>], t_e: f64, t_p: f64) -> f64 {
    let ratio_term = gated(pages, t_e);
    let open = match batch_position(pages) {
        Some(p) => p >= t_p,
        None => false,
    };
    let mut late = 0.0;
    if open {
        for p in pages {
            if let Some(m) = mean_position(p) {
                if m >= t_p {
                    late += 1.0;
                }
            }
        }
    }
    ratio_term - late / pages.len() as f64
}

/// Share of slots whose group does not appear among the preceding `window`
/// slots of the same page.
pub fn diversity(pages: &[Vec<i64>], window: Option<usize>) -> f64 {
    let mut fresh = 0usize;
    let mut slots = 0usize;
    for p in pages {
        for i in 0..p.len() {
            slots += 1;
            let lo = match window {
                Some(w) if w < i => i - w,
                _ => 0,
            };
            let mut seen = false;
            for j in lo..i {
                if p[j] == p[i] {
                    seen = true;
                }
            }
            if !seen {
                fresh += 1;
            }
        }
    }
    fresh as f64 / slots as f64
}

pub fn ordering(pages: &[Vec<i64>]) -> f64 {
    let mut total = 0.0;
    for p in pages {
        let n = p.len();
        let mut good = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i < j && p[i] >= p[j] {
                    good += 1;
                }
            }
        }
        total += good as f64 / (n * (n - 1) / 2) as f64;
    }
    total / pages.len() as f64
}

pub fn engagement(predictions: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for p in predictions {
        let mut s = 0.0;
        for v in p {
            s += v;
        }
        total += s / p.len() as f64;
    }
    total / predictions.len() as f64
}

/// `0.5·p / mean_p` per position, capped at 1.
pub fn relative_satisfaction(predictions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = predictions[0].len();
    let means: Vec<f64> = (0..len)
        .map(|i| {
            let mut s = 0.0;
            for p in predictions {
                s += p[i];
            }
            s / predictions.len() as f64
        })
        .collect();
    predictions
        .iter()
        .map(|p| {
            (0..len)
                .map(|i| {
                    if means[i] > 0.0 {
                        f64::min(0.5 * p[i] / means[i], 1.0)
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect()
}

pub fn map_at_k(grades: &[u8], pool: &[u8], k: usize) -> f64 {
    let relevant = pool.iter().filter(|&&g| g == 1).count();
    if relevant.min(k) == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 1..=k.min(grades.len()) {
        let hits = grades[..i].iter().filter(|&&g| g == 1).count();
        let precision = hits as f64 / i as f64;
        if grades[i - 1] == 1 {
            s += precision;
        }
    }
    s / relevant.min(k) as f64
}

fn dcg(grades: &[u8]) -> f64 {
    let mut s = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        let pos = (i + 1) as f64;
        s += f64::from(g) / (pos + 1.0).log2();
    }
    s
}

pub fn ndcg_at_k(grades: &[u8], pool: &[u8], k: usize) -> f64 {
    let mut ideal = pool.to_vec();
    ideal.sort();
    ideal.reverse();
    let best = dcg(&ideal[..k.min(ideal.len())]);
    if best == 0.0 {
        return 0.0;
    }
    dcg(&grades[..k.min(grades.len())]) / best
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn ilad_at_k(features: &[Vec<f64>], k: usize) -> f64 {
    let top = &features[..k.min(features.len())];
    let mut s = 0.0;
    let mut pairs = 0usize;
    for a in 0..top.len() {
        for b in a + 1..top.len() {
            let (na, nb) = (norm(&top[a]), norm(&top[b]));
            let sim = if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                top[a].iter().zip(&top[b]).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            };
            s += 1.0 - sim;
            pairs += 1;
        }
    }
    s / pairs as f64
}

/// ERR-IA with satisfaction probabilities `r` (one per position).
pub fn err_ia(r: &[f64], intents: &[i64], pool_intents: &[i64], k: usize) -> f64 {
    let topics: BTreeSet<i64> = pool_intents.iter().copied().collect();
    if topics.is_empty() {
        return 0.0;
    }
    let p_t = 1.0 / topics.len() as f64;
    let k = k.min(r.len());
    let mut total = 0.0;
    for t in topics {
        let mut inner = 0.0;
        for i in 0..k {
            if intents[i] != t {
                continue;
            }
            let mut stop = 1.0;
            for j in 0..i {
                if intents[j] == t {
                    stop *= 1.0 - r[j];
                }
            }
            inner += 1.0 / (i + 1) as f64 * r[i] * stop;
        }
        total += p_t * inner;
    }
    total
}

pub fn grade_satisfaction(grades: &[u8]) -> Vec<f64> {
    grades.iter().map(|&g| if g == 1 { 0.5 } else { 0.0 }).collect()
}

/// All ordered `n`-arrangements of `0..m` in lexicographic order, built by
/// counting in base `m` and discarding sequences with repeats.
pub fn arrangements(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let total = m.pow(n as u32);
    for code in 0..total {
        let mut digits = vec![0; n];
        let mut c = code;
        for d in digits.iter_mut().rev() {
            *d = c % m;
            c /= m;
        }
        let distinct: BTreeSet<usize> = digits.iter().copied().collect();
        if distinct.len() == n {
            out.push(digits);
        }
    }
    out
}

/// Best arrangement by exhaustive search; the first maximum wins.
pub fn best_list(m: usize, n: usize, reward: impl Fn(&[usize]) -> f64) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for l in arrangements(m, n) {
        let r = reward(&l);
        if r > best.1 {
            best = (l, r);
        }
    }
    best
}
