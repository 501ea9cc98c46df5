use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};
use crate::sequence::SequenceSample;

/// Seeded stratified split of row indices. The training side receives
/// `round(frac · n)` rows, allotted to classes by largest remainder with at
/// least one row of each class on each side when the class has two or more
/// members. Falls back to a plain shuffle, with a warning, when a class is too
/// small. Both halves are returned sorted.
pub fn split_indices(labels: &[u8], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::Invalid(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    let n = labels.len();
    if n < 2 {
        return Err(DataError::Invalid(format!("cannot split {n} samples")));
    }
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let classes: [Vec<usize>; 2] = [0u8, 1].map(|c| (0..n).filter(|&i| labels[i] == c).collect());
    let (mut train, mut test) = if classes.iter().all(|c| c.len() >= 2) && n_train >= 2 && n - n_train >= 2 {
        let exact: Vec<f64> = classes.iter().map(|m| train_frac * m.len() as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        // the shortfall is at most one row per class
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let short = n_train - quota.iter().sum::<usize>();
        for &c in order.iter().take(short) {
            quota[c] += 1;
        }
        for c in 0..2 {
            let (lo, hi) = (1, classes[c].len() - 1);
            if quota[c] < lo {
                quota[1 - c] -= lo - quota[c];
                quota[c] = lo;
            } else if quota[c] > hi {
                quota[1 - c] += quota[c] - hi;
                quota[c] = hi;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (c, members) in classes.iter().enumerate() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            train.extend_from_slice(&m[..quota[c]]);
            test.extend_from_slice(&m[quota[c]..]);
        }
        (train, test)
    } else {
        log::warn!("too few samples per class to stratify; using an unstratified split");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let test = all.split_off(n_train);
        (all, test)
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(
    samples: &[SequenceSample],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    let labels: Vec<u8> = samples.iter().map(|s| s.y).collect();
    let (train, test) = split_indices(&labels, train_frac, seed)?;
    Ok((
        train.iter().map(|&i| samples[i].clone()).collect(),
        test.iter().map(|&i| samples[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_samples() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (tr, te) = split_indices(&labels, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(te.iter().any(|&i| labels[i] == 0) && te.iter().any(|&i| labels[i] == 1));
        assert_eq!(split_indices(&labels, 0.8, 1).unwrap(), (tr, te));
    }

    #[test]
    fn tiny_class_falls_back() {
        let labels = [0, 0, 0, 0, 1];
        let (tr, te) = split_indices(&labels, 0.6, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 2));
    }

    #[test]
    fn bad_fraction() {
        assert!(split_indices(&[0, 1], 1.0, 0).is_err());
        assert!(split_indices(&[0, 1], 0.0, 0).is_err());
    }
}
