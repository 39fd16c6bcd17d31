//! Pair groups for the four-way group discriminator.
//!
//! | group | first member  | second member | labels    |
//! |-------|---------------|---------------|-----------|
//! | G1    | intermediate  | intermediate  | equal     |
//! | G2    | intermediate  | target        | equal     |
//! | G3    | intermediate  | intermediate  | different |
//! | G4    | intermediate  | target        | different |
//!
//! G3 draws from the intermediate domain only. Each group is sampled
//! uniformly with replacement over all of its valid ordered combinations
//! (G1 excludes pairing a sample with itself).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FewShotSet;
use crate::error::{FhaError, Result};
use crate::nn::{Matrix, Mlp};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Intermediate,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    G1,
    G2,
    G3,
    G4,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::G1, Group::G2, Group::G3, Group::G4];

    /// Group number, 1..=4.
    pub fn label(self) -> usize {
        self as usize + 1
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }

    fn second_domain(self) -> Domain {
        match self {
            Group::G1 | Group::G3 => Domain::Intermediate,
            Group::G2 | Group::G4 => Domain::Target,
        }
    }

    fn same_label(self) -> bool {
        matches!(self, Group::G1 | Group::G2)
    }
}

/// Labeled samples from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    domain: Domain,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledPool {
    pub fn new(domain: Domain, features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(FhaError::shape(format!(
                "{} rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(FhaError::InvalidArgument(format!("empty {domain:?} pool")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FhaError::InvalidArgument(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            domain,
            features,
            labels,
            num_classes,
        })
    }

    pub fn from_few_shot(fs: &FewShotSet) -> Self {
        let s = fs.samples();
        Self {
            domain: Domain::Target,
            features: s.to_matrix(),
            labels: s.labels_usize(),
            num_classes: s.num_classes(),
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairMember {
    pub domain: Domain,
    pub index: usize,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub group: Group,
    pub first: PairMember,
    pub second: PairMember,
}

impl Pair {
    /// Whether the pair's domains and labels match its group's definition.
    pub fn satisfies_group(&self) -> bool {
        self.first.domain == Domain::Intermediate
            && self.second.domain == self.group.second_domain()
            && (self.first.label == self.second.label) == self.group.same_label()
            && !(self.group == Group::G1 && self.first.index == self.second.index)
    }
}

/// Pairs in group order (all G1, then G2, G3, G4) with their features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pairs: Vec<Pair>,
    first: Matrix,
    second: Matrix,
    per_group: usize,
}

impl PairBatch {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn first(&self) -> &Matrix {
        &self.first
    }

    pub fn second(&self) -> &Matrix {
        &self.second
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn per_group(&self) -> usize {
        self.per_group
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for p in &self.pairs {
            c[p.group as usize] += 1;
        }
        c
    }

    /// Group numbers (1..=4) of every pair.
    pub fn group_labels(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.group.label()).collect()
    }

    /// Features of one group's pairs as `(first, second)`.
    pub fn group(&self, g: Group) -> (Matrix, Matrix) {
        let rows: Vec<usize> = (0..self.pairs.len())
            .filter(|&i| self.pairs[i].group == g)
            .collect();
        (self.first.select_rows(&rows), self.second.select_rows(&rows))
    }
}

/// Exact integer draw of an index with probability proportional to `weights`.
fn pick_weighted<R: Rng>(rng: &mut R, weights: &[u64]) -> usize {
    let total: u64 = weights.iter().sum();
    let mut u = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    unreachable!("draw below total weight")
}

/// Uniform draw from the members of every class except `skip`.
fn pick_outside<R: Rng>(rng: &mut R, by_class: &[Vec<usize>], skip: usize) -> usize {
    let total: usize = by_class
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != skip)
        .map(|(_, m)| m.len())
        .sum();
    let mut r = rng.random_range(0..total);
    for (c, members) in by_class.iter().enumerate() {
        if c == skip {
            continue;
        }
        if r < members.len() {
            return members[r];
        }
        r -= members.len();
    }
    unreachable!("draw below outside-class total")
}

/// Samples `per_group` pairs for each of G1..G4 from the intermediate pool and
/// the few-shot target set.
pub fn build_groups(
    intermediate: &LabeledPool,
    target: &FewShotSet,
    per_group: usize,
    seed: u64,
) -> Result<PairBatch> {
    let target_pool = LabeledPool::from_few_shot(target);
    build_groups_from_pools(intermediate, &target_pool, per_group, seed)
}

pub fn build_groups_from_pools(
    intermediate: &LabeledPool,
    target: &LabeledPool,
    per_group: usize,
    seed: u64,
) -> Result<PairBatch> {
    if intermediate.num_classes < 2 {
        return Err(FhaError::Protocol(format!(
            "pair groups need at least 2 classes, got {}",
            intermediate.num_classes
        )));
    }
    if intermediate.is_empty() {
        return Err(FhaError::InvalidArgument("empty intermediate pool".into()));
    }
    if intermediate.domain != Domain::Intermediate || target.domain != Domain::Target {
        return Err(FhaError::InvalidArgument("pool domains are swapped".into()));
    }
    if per_group == 0 {
        return Err(FhaError::InvalidArgument("per_group must be >= 1".into()));
    }
    if target.num_classes != intermediate.num_classes {
        return Err(FhaError::InvalidArgument(format!(
            "intermediate has {} classes, target {}",
            intermediate.num_classes, target.num_classes
        )));
    }
    if intermediate.features.cols() != target.features.cols() {
        return Err(FhaError::shape("intermediate and target dimensions differ"));
    }
    let inter = intermediate.by_class();
    let tgt = target.by_class();
    let n_inter = intermediate.len() as u64;
    let n_tgt = target.len() as u64;
    let represented = inter.iter().filter(|m| !m.is_empty()).count();
    if represented < 2 {
        return Err(FhaError::Protocol(
            "intermediate pool covers fewer than 2 classes".into(),
        ));
    }

    let len = |m: &Vec<usize>| m.len() as u64;
    let w_g1: Vec<u64> = inter.iter().map(|m| len(m) * len(m).saturating_sub(1)).collect();
    let w_g2: Vec<u64> = inter.iter().zip(&tgt).map(|(a, b)| len(a) * len(b)).collect();
    let w_g3: Vec<u64> = inter.iter().map(|m| len(m) * (n_inter - len(m))).collect();
    let w_g4: Vec<u64> = inter
        .iter()
        .zip(&tgt)
        .map(|(a, b)| len(a) * (n_tgt - len(b)))
        .collect();
    for (g, w) in [(Group::G1, &w_g1), (Group::G2, &w_g2), (Group::G3, &w_g3), (Group::G4, &w_g4)] {
        if w.iter().sum::<u64>() == 0 {
            return Err(FhaError::Protocol(format!("no valid {g:?} pairs")));
        }
    }

    let mut rng = rng::stream(seed, "pairs", 0);
    let member = |pool: &LabeledPool, index: usize| PairMember {
        domain: pool.domain,
        index,
        label: pool.labels[index],
    };
    let mut pairs = Vec::with_capacity(4 * per_group);
    for g in Group::ALL {
        for _ in 0..per_group {
            let (i, second) = match g {
                Group::G1 => {
                    let c = pick_weighted(&mut rng, &w_g1);
                    let m = &inter[c];
                    let a = rng.random_range(0..m.len());
                    let mut b = rng.random_range(0..m.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    (m[a], member(intermediate, m[b]))
                }
                Group::G2 => {
                    let c = pick_weighted(&mut rng, &w_g2);
                    let a = inter[c][rng.random_range(0..inter[c].len())];
                    let b = tgt[c][rng.random_range(0..tgt[c].len())];
                    (a, member(target, b))
                }
                Group::G3 => {
                    let c = pick_weighted(&mut rng, &w_g3);
                    let a = inter[c][rng.random_range(0..inter[c].len())];
                    (a, member(intermediate, pick_outside(&mut rng, &inter, c)))
                }
                Group::G4 => {
                    let c = pick_weighted(&mut rng, &w_g4);
                    let a = inter[c][rng.random_range(0..inter[c].len())];
                    (a, member(target, pick_outside(&mut rng, &tgt, c)))
                }
            };
            pairs.push(Pair {
                group: g,
                first: member(intermediate, i),
                second,
            });
        }
    }

    let first_idx: Vec<usize> = pairs.iter().map(|p| p.first.index).collect();
    let first = intermediate.features.select_rows(&first_idx);
    let mut second = Matrix::zeros(pairs.len(), target.features.cols());
    for (r, p) in pairs.iter().enumerate() {
        let src = match p.second.domain {
            Domain::Intermediate => intermediate.features.row(p.second.index),
            Domain::Target => target.features.row(p.second.index),
        };
        second.row_mut(r).copy_from_slice(src);
    }
    Ok(PairBatch {
        pairs,
        first,
        second,
        per_group,
    })
}

/// `[g_t(x1), g_t(x2)]` for each aligned row of `x1` and `x2`.
pub fn phi(encoder: &Mlp, x1: &Matrix, x2: &Matrix) -> Result<Matrix> {
    if x1.rows() != x2.rows() {
        return Err(FhaError::shape(format!(
            "{} first members, {} second members",
            x1.rows(),
            x2.rows()
        )));
    }
    encoder.forward(x1)?.hstack(&encoder.forward(x2)?)
}
