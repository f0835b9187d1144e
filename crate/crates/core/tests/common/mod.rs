#![allow(dead_code)]

use hfa_core::ScheduleMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Rank of an integer matrix by fraction-free (Bareiss) elimination.
pub fn exact_rank(rows: &[Vec<i64>]) -> usize {
    let mut a: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let m = a.len();
    if m == 0 {
        return 0;
    }
    let n = a[0].len();
    let mut rank = 0;
    let mut prev: i128 = 1;
    for col in 0..n {
        let Some(p) = (rank..m).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        for r in rank + 1..m {
            for c in col + 1..n {
                a[r][c] = (a[rank][col] * a[r][c] - a[r][col] * a[rank][c]) / prev;
            }
            a[r][col] = 0;
        }
        prev = a[rank][col];
        rank += 1;
        if rank == m {
            break;
        }
    }
    rank
}

pub fn z_rows(n_teams: usize, pairs: &[(usize, usize)]) -> Vec<Vec<i64>> {
    pairs
        .iter()
        .map(|&(h, a)| {
            let mut r = vec![0; n_teams];
            r[h] = 1;
            r[a] = -1;
            r
        })
        .collect()
}

pub fn schedule(n_teams: usize, pairs: &[(usize, usize)], d: &[f64]) -> ScheduleMatrix {
    let teams = (0..n_teams).map(|i| format!("T{i:02}")).collect();
    ScheduleMatrix::from_pairs(teams, pairs.to_vec(), DVector::from_column_slice(d)).unwrap()
}

/// Connected component label of every team in the schedule graph.
pub fn components(n_teams: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut label: Vec<usize> = (0..n_teams).collect();
    fn find(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        l[i] = r;
        r
    }
    for &(h, a) in pairs {
        let (rh, ra) = (find(&mut label, h), find(&mut label, a));
        label[rh.max(ra)] = rh.min(ra);
    }
    (0..n_teams).map(|i| find(&mut label, i)).collect()
}

/// Ordinary least squares with one reference team per connected component
/// fixed at zero, solved through the normal equations.
pub struct ReferenceOls {
    pub lambda: f64,
    /// Team effects with each component's reference set to 0.
    pub beta: Vec<f64>,
    pub component: Vec<usize>,
    pub se_lambda: f64,
    pub sigma2: f64,
}

pub fn reference_ols(n_teams: usize, pairs: &[(usize, usize)], d: &[f64]) -> Option<ReferenceOls> {
    let component = components(n_teams, pairs);
    // Teams that appear in at least one game and are not their component's root.
    let played: Vec<bool> = (0..n_teams).map(|t| pairs.iter().any(|&(h, a)| h == t || a == t)).collect();
    let free: Vec<usize> = (0..n_teams).filter(|&t| played[t] && component[t] != t).collect();
    let p = 1 + free.len();
    let n = pairs.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, &(h, a)) in pairs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (k, &t) in free.iter().enumerate() {
            if t == h {
                x[(i, k + 1)] = 1.0;
            } else if t == a {
                x[(i, k + 1)] = -1.0;
            }
        }
    }
    let y = DVector::from_column_slice(d);
    let xtx = x.transpose() * &x;
    let inv = xtx.clone().lu().try_inverse()?;
    // Guard against numerically singular systems (non-estimable λ).
    if (xtx * &inv - DMatrix::identity(p, p)).amax() > 1e-8 {
        return None;
    }
    let b = &inv * x.transpose() * &y;
    let mut beta = vec![0.0; n_teams];
    for (k, &t) in free.iter().enumerate() {
        beta[t] = b[k + 1];
    }
    let resid = &y - &x * &b;
    let dof = n as f64 - p as f64;
    let sigma2 = if dof > 0.0 { resid.norm_squared() / dof } else { f64::NAN };
    Some(ReferenceOls {
        lambda: b[0],
        beta,
        component,
        se_lambda: (sigma2 * inv[(0, 0)]).sqrt(),
        sigma2,
    })
}

/// Random schedule: `(n_teams, pairs)` with no self-games.
pub fn arb_schedule(max_teams: usize, max_games: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_teams).prop_flat_map(move |n| {
        let pair = (0..n, 1..n).prop_map(move |(h, off)| (h, (h + off) % n));
        (Just(n), prop::collection::vec(pair, 1..=max_games))
    })
}

/// Balanced schedule: every pairing appears once each way, optionally
/// repeated, so every team has equal home and away counts.
pub fn arb_balanced() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (3usize..=8, prop::collection::vec(any::<bool>(), 28), 1usize..=2).prop_map(|(n, keep, reps)| {
        let mut pairs = Vec::new();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                // Always keep the cycle edges so the schedule is connected.
                if j == i + 1 || (i == 0 && j == n - 1) || keep[k % keep.len()] {
                    for _ in 0..reps {
                        pairs.push((i, j));
                        pairs.push((j, i));
                    }
                }
                k += 1;
            }
        }
        (n, pairs)
    })
}

pub fn arb_margins(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, len)
}
