//! Shared test code. The oracles in this file never call into the crate's
//! routing or metric code; `fixtures` builds models and configs.
#![allow(dead_code)]

pub mod fixtures;

/// Straight-line dynamic routing over one batch: `iterations` rounds of
/// dot-product scores, row softmax and normalized weighted sums, then an EWMA
/// blend against the inherited centers. Returns the last round's coefficients
/// and the blended centers.
pub fn routing_oracle(
    prev: &[Vec<f64>],
    emb: &[Vec<f64>],
    iterations: usize,
    beta: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let norm = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let (k, d) = (prev.len(), prev[0].len());
    let mut c = prev.to_vec();
    let mut r = vec![vec![0.0; k]; emb.len()];
    for _ in 0..iterations {
        for (i, e) in emb.iter().enumerate() {
            let s: Vec<f64> = c.iter().map(|cj| cj.iter().zip(e).map(|(a, b)| a * b).sum()).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            r[i] = s.iter().map(|x| (x - m).exp() / z).collect();
        }
        c = (0..k)
            .map(|j| norm((0..d).map(|t| emb.iter().enumerate().map(|(i, e)| r[i][j] * e[t]).sum()).collect()))
            .collect();
    }
    let blended = (0..k)
        .map(|j| norm((0..d).map(|t| beta * prev[j][t] + (1.0 - beta) * c[j][t]).collect()))
        .collect();
    (r, blended)
}

/// O(n²) pairwise AUC with half credit for ties. `None` if a class is empty.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

/// Purity through an explicit contingency table.
pub fn brute_force_purity(assigned: &[usize], planted: &[usize]) -> f64 {
    let ka = assigned.iter().max().unwrap() + 1;
    let kp = planted.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kp]; ka];
    for (&a, &p) in assigned.iter().zip(planted) {
        table[a][p] += 1;
    }
    let hit: usize = table.iter().map(|row| *row.iter().max().unwrap()).sum();
    hit as f64 / assigned.len() as f64
}

/// Lloyd's k-means with `restarts` random initializations (distinct points
/// picked by a small LCG); returns the assignment with the lowest inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = |n: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % n
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < k {
            let p = &points[next(points.len())];
            if !centers.iter().any(|c| dist(c, p) == 0.0) {
                centers.push(p.clone());
            }
        }
        let mut assign = vec![0; points.len()];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let j = (0..k)
                    .min_by(|&a, &b| dist(&centers[a], p).total_cmp(&dist(&centers[b], p)))
                    .unwrap();
                changed |= assign[i] != j;
                assign[i] = j;
            }
            for (j, c) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for t in 0..c.len() {
                        c[t] = members.iter().map(|m| m[t]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| dist(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}
