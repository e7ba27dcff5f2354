use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Ratios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Ratios { train, dev, test };
        r.validate()?;
        Ok(r)
    }

    /// Proportions from integer counts, e.g. `861:96:372`.
    pub fn from_counts(train: usize, dev: usize, test: usize) -> Self {
        let n = (train + dev + test) as f64;
        Ratios {
            train: train as f64 / n,
            dev: dev as f64 / n,
            test: test as f64 / n,
        }
    }

    pub fn extraction_default() -> Self {
        Self::from_counts(861, 96, 372)
    }

    pub fn retrieval_default() -> Self {
        Self::from_counts(2204, 368, 1101)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|x| x.is_nan() || *x < 0.0) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Ratios(format!(
                "{} + {} + {} must sum to 1",
                self.train, self.dev, self.test
            )));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items.
    pub fn targets(&self, n: usize) -> [usize; 3] {
        let parts = [self.train, self.dev, self.test];
        let exact: Vec<f64> = parts.iter().map(|r| r * n as f64).collect();
        let mut out: [usize; 3] = [0; 3];
        for i in 0..3 {
            out[i] = exact[i].floor() as usize;
        }
        let mut left = n - out.iter().sum::<usize>();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            out[i] += 1;
            left -= 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T: Clone> SplitDataset<T> {
    /// First `n` test items, in split order.
    pub fn test_prefix(&self, n: usize) -> Vec<T> {
        self.test.iter().take(n).cloned().collect()
    }
}

/// Items that may need to stay together across the train/test boundary.
pub trait Grouped {
    /// Grouping key (the target patient), or `None` to split freely.
    fn group(&self) -> Option<&str>;
}

/// Picks a subset of groups whose sizes sum as close to `target` as
/// possible, exact when reachable. Groups are considered in the given order.
fn subset_closest(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    // reach[s] = group index that first reached sum s
    let mut reach: Vec<Option<usize>> = vec![None; total + 1];
    let mut reachable = vec![false; total + 1];
    reachable[0] = true;
    for (g, &size) in sizes.iter().enumerate() {
        for s in (size..=total).rev() {
            if !reachable[s] && reachable[s - size] {
                reachable[s] = true;
                reach[s] = Some(g);
            }
        }
    }
    let best = (0..=total)
        .filter(|&s| reachable[s])
        .min_by_key(|&s| (s.abs_diff(target), s))
        .unwrap_or(0);
    let mut chosen = Vec::new();
    let mut s = best;
    while s > 0 {
        let g = reach[s].expect("reachable sums have a parent");
        chosen.push(g);
        s -= sizes[g];
    }
    chosen
}

/// Seeded three-way split. Grouped items put whole groups into test, so
/// train and test never share a group; dev is carved from the rest at item
/// level. Every split keeps the input's relative order.
pub fn split_dataset<T: Grouped + Clone>(
    items: &[T],
    ratios: Ratios,
    seed: u64,
) -> Result<SplitDataset<T>, DatasetError> {
    ratios.validate()?;
    let [_, dev_n, test_n] = ratios.targets(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grouped = items.iter().any(|i| i.group().is_some());

    let mut in_test = vec![false; items.len()];
    if grouped {
        let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let key = item.group().unwrap_or("");
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        groups.shuffle(&mut rng);
        let sizes: Vec<usize> = groups.iter().map(|(_, m)| m.len()).collect();
        for g in subset_closest(&sizes, test_n) {
            for &i in &groups[g].1 {
                in_test[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..items.len()).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..test_n] {
            in_test[i] = true;
        }
    }

    let mut rest: Vec<usize> = (0..items.len()).filter(|&i| !in_test[i]).collect();
    rest.shuffle(&mut rng);
    let mut in_dev = vec![false; items.len()];
    for &i in rest.iter().take(dev_n) {
        in_dev[i] = true;
    }

    let pick = |f: &dyn Fn(usize) -> bool| -> Vec<T> {
        items
            .iter()
            .enumerate()
            .filter(|(i, _)| f(*i))
            .map(|(_, x)| x.clone())
            .collect()
    };
    let split = SplitDataset {
        train: pick(&|i| !in_test[i] && !in_dev[i]),
        dev: pick(&|i| in_dev[i]),
        test: pick(&|i| in_test[i]),
        seed,
    };
    for (name, part) in [
        ("train", &split.train),
        ("dev", &split.dev),
        ("test", &split.test),
    ] {
        if part.is_empty() {
            return Err(DatasetError::EmptySplit(name));
        }
    }
    Ok(split)
}
