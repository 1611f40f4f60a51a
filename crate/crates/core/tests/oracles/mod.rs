//! Slow, straight-line reference implementations used as test oracles.
//! They share no code with the library.
#![allow(dead_code, clippy::needless_range_loop, clippy::manual_range_contains)]

use std::collections::BTreeMap;

/// Full (|a|+1) x (|b|+1) edit-distance table.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        t[i][0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            t[i][j] = (t[i - 1][j] + 1).min(t[i][j - 1] + 1).min(t[i - 1][j - 1] + cost);
        }
    }
    t[a.len()][b.len()]
}

fn sim(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let m = if la > lb { la } else { lb };
    if m == 0 {
        1.0
    } else {
        1.0 - edit_distance(a, b) as f64 / m as f64
    }
}

pub fn anls(pred: &str, gt: &str, tau: f64) -> f64 {
    let s = sim(&pred.trim().to_lowercase(), &gt.trim().to_lowercase());
    if s < tau {
        0.0
    } else {
        s
    }
}

fn squash(s: &str) -> String {
    let lower = s.to_lowercase();
    let mut out = String::new();
    for w in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// "correct", "partial" or "wrong", by scanning every window explicitly.
pub fn partial_class(pred: &str, gt: &str) -> &'static str {
    let p = squash(pred);
    let g = squash(gt);
    if p.contains(&g) {
        return "correct";
    }
    let pc: Vec<char> = p.chars().collect();
    let n = g.chars().count();
    let mut best = 0.0f64;
    if pc.len() <= n {
        best = sim(&p, &g);
    } else {
        let mut start = 0;
        while start + n <= pc.len() {
            let w: String = pc[start..start + n].iter().collect();
            let s = sim(&w, &g);
            if s > best {
                best = s;
            }
            start += 1;
        }
    }
    if best >= 0.5 && best < 1.0 {
        "partial"
    } else {
        "wrong"
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] {
                1 + t[i + 1][j + 1]
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    t[0][0]
}

pub fn rouge_l(pred: &str, refs: &[String]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let p = toks(pred);
    let mut best = 0.0f64;
    for r in refs {
        let r = toks(r);
        let l = lcs(&p, &r) as f64;
        if l == 0.0 {
            continue;
        }
        let prec = l / p.len() as f64;
        let rec = l / r.len() as f64;
        let f = ((1.0 + beta2) * prec * rec) / (rec + beta2 * prec);
        best = best.max(f);
    }
    best
}

pub fn meteor(pred: &str, reference: &str) -> f64 {
    let p = toks(pred);
    let r = toks(reference);
    let mut taken = vec![false; r.len()];
    let mut map: Vec<Option<usize>> = vec![None; p.len()];
    for i in 0..p.len() {
        for j in 0..r.len() {
            if !taken[j] && p[i] == r[j] {
                taken[j] = true;
                map[i] = Some(j);
                break;
            }
        }
    }
    let pairs: Vec<(usize, usize)> = map.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let mut chunks = 1;
    for k in 1..pairs.len() {
        let (pi, pj) = pairs[k - 1];
        let (ci, cj) = pairs[k];
        if !(ci == pi + 1 && cj == pj + 1) {
            chunks += 1;
        }
    }
    let m = pairs.len() as f64;
    let precision = m / p.len() as f64;
    let recall = m / r.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let frag = chunks as f64 / m;
    fmean * (1.0 - 0.5 * frag * frag * frag)
}

fn grams(t: &[String], n: usize) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    if t.len() >= n {
        for i in 0..=(t.len() - n) {
            *m.entry(t[i..i + n].join("\u{1}")).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// CIDEr-D per item, following the usual reference implementation but
/// measuring length in tokens.
pub fn cider_d(batch: &[(String, Vec<String>)], corpus: &[Vec<String>]) -> Vec<f64> {
    let ndocs = corpus.len() as f64;
    let mut df: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); 5];
    for doc in corpus {
        for n in 1..=4 {
            let mut seen = std::collections::BTreeSet::new();
            for r in doc {
                for g in grams(&toks(r), n).keys() {
                    seen.insert(g.clone());
                }
            }
            for g in seen {
                *df[n].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let vecs = |t: &[String]| -> Vec<(BTreeMap<String, f64>, f64)> {
        (1..=4)
            .map(|n| {
                let mut v = BTreeMap::new();
                let mut norm = 0.0;
                for (g, tf) in grams(t, n) {
                    let d = df[n].get(&g).copied().unwrap_or(0.0);
                    let w = tf * (ndocs.ln() - d.max(1.0).ln());
                    norm += w * w;
                    v.insert(g, w);
                }
                (v, norm.sqrt())
            })
            .collect()
    };
    let mut out = Vec::new();
    for (pred, refs) in batch {
        let pt = toks(pred);
        let pv = vecs(&pt);
        let mut total = 0.0;
        for r in refs {
            let rt = toks(r);
            let rv = vecs(&rt);
            let delta = pt.len() as f64 - rt.len() as f64;
            let mut s = 0.0;
            for n in 0..4 {
                let mut dot = 0.0;
                for (g, w) in &pv[n].0 {
                    if let Some(x) = rv[n].0.get(g) {
                        dot += w.min(*x) * x;
                    }
                }
                if pv[n].1 != 0.0 && rv[n].1 != 0.0 {
                    dot /= pv[n].1 * rv[n].1;
                }
                s += dot * (-(delta * delta) / 72.0).exp();
            }
            total += s / 4.0;
        }
        out.push(if refs.is_empty() {
            0.0
        } else {
            total / refs.len() as f64 * 10.0
        });
    }
    out
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *ra.entry(x).or_insert(0) += 1;
        *rb.entry(y).or_insert(0) += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&n| c2(n)).sum();
    let sa: f64 = ra.values().map(|&n| c2(n)).sum();
    let sb: f64 = rb.values().map(|&n| c2(n)).sum();
    let total = c2(a.len() as u64);
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}
