//! Downstream evaluation: clustering, classification, link prediction and
//! the inductive hidden-node protocol.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::Embeddings;
use crate::graph::{HetGraph, NodeId, TreeSchema};
use crate::model::encode_nodes;
use crate::seed::Seed;
use crate::train::{train, TrainConfig};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 300;
/// L2 strengths tried by the classifier; the validation split picks one.
pub const L2_GRID: [f64; 3] = [1e-4, 1e-2, 1.0];
const LOGISTIC_ITERS: usize = 500;
const LOGISTIC_STEP: f64 = 0.5;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations; the restart with the
/// lowest inertia wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: Seed) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::Contract(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut best: Option<KMeansResult> = None;
    for run in 0..restarts.max(1) {
        let mut rng = seed.derive("kmeans", run as u64).rng();
        let mut centers = vec![points.choose(&mut rng).expect("non-empty").clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut idx = points.len() - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if target < d {
                        idx = i;
                        break;
                    }
                    target -= d;
                }
                idx
            } else {
                rng.random_range(0..points.len())
            };
            centers.push(points[pick].clone());
            for (i, p) in points.iter().enumerate() {
                d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
            }
        }
        let mut labels = vec![usize::MAX; points.len()];
        let mut history = Vec::new();
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            let mut inertia = 0.0;
            for (i, p) in points.iter().enumerate() {
                let (c, d) = nearest(&centers, p);
                inertia += d;
                if labels[i] != c {
                    labels[i] = c;
                    changed = true;
                }
            }
            history.push(inertia);
            if !changed {
                break;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &c) in points.iter().zip(&labels) {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let inertia = *history.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                labels,
                centers,
                inertia,
                history,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

type Counts<K> = BTreeMap<K, f64>;

/// Ordered maps keep the floating-point sums below reproducible across runs.
fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Counts<(usize, usize)>, Counts<usize>, Counts<usize>)> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Contract("empty labeling".into()));
    }
    let mut joint = BTreeMap::new();
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p, t)).or_insert(0.0) += 1.0;
        *a.entry(p).or_insert(0.0) += 1.0;
        *b.entry(t).or_insert(0.0) += 1.0;
    }
    Ok((joint, a, b))
}

/// Normalized mutual information, arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (joint, a, b) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let entropy = |m: &Counts<usize>| -> f64 { m.values().map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hb) = (entropy(&a), entropy(&b));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(p, t), &c) in &joint {
        mi += (c / n) * ((c * n) / (a[&p] * b[&t])).ln();
    }
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

/// Adjusted Rand index under the permutation model.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (joint, a, b) = contingency(pred, truth)?;
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sa: f64 = a.values().map(|&c| comb2(c)).sum();
    let sb: f64 = b.values().map(|&c| comb2(c)).sum();
    let total = comb2(pred.len() as f64);
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Dense ids for string labels, in sorted label order.
pub fn encode_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let names: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let ids = labels
        .iter()
        .map(|l| names.binary_search(l).expect("label is in the roster"))
        .collect();
    (ids, names)
}

/// Micro and macro F1 over the union of labels in `truth` and `pred`.
pub fn f1_scores(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let classes: BTreeSet<usize> = pred.iter().chain(truth).copied().collect();
    let mut tp_all = 0.0;
    let mut fp_all = 0.0;
    let mut fn_all = 0.0;
    let mut macro_sum = 0.0;
    for &c in &classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fneg;
        macro_sum += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let denom = 2.0 * tp_all + fp_all + fn_all;
    let micro = if denom > 0.0 { 2.0 * tp_all / denom } else { 0.0 };
    let macro_f1 = if classes.is_empty() { 0.0 } else { macro_sum / classes.len() as f64 };
    (micro, macro_f1)
}

/// Multinomial logistic regression on standardized features, fit by
/// full-batch gradient descent from zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
}

impl LogisticModel {
    pub fn fit(x: &[Vec<f64>], y: &[usize], l2: f64) -> Result<Self> {
        let classes: Vec<usize> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            return Err(Error::Contract("training data needs at least two classes".into()));
        }
        if x.len() != y.len() {
            return Err(Error::Contract("features and labels differ in length".into()));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for row in x {
            for j in 0..dim {
                scale[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut model = LogisticModel {
            mean,
            scale,
            weights: vec![vec![0.0; dim + 1]; classes.len()],
            classes,
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r)).collect();
        let targets: Vec<usize> = y
            .iter()
            .map(|c| model.classes.binary_search(c).expect("class seen"))
            .collect();
        let k = model.classes.len();
        for _ in 0..LOGISTIC_ITERS {
            let mut grad = vec![vec![0.0; dim + 1]; k];
            for (row, &t) in xs.iter().zip(&targets) {
                let p = model.probs_std(row);
                for c in 0..k {
                    let err = p[c] - if c == t { 1.0 } else { 0.0 };
                    for j in 0..dim {
                        grad[c][j] += err * row[j] / n;
                    }
                    grad[c][dim] += err / n;
                }
            }
            for c in 0..k {
                for j in 0..=dim {
                    let reg = if j < dim { l2 * model.weights[c][j] } else { 0.0 };
                    model.weights[c][j] -= LOGISTIC_STEP * (grad[c][j] + reg);
                }
            }
        }
        Ok(model)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn probs_std(&self, row: &[f64]) -> Vec<f64> {
        let dim = row.len();
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w[..dim].iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + w[dim])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Class probabilities, aligned with `classes`.
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        self.probs_std(&self.standardize(row))
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let p = self.predict_proba(row);
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyResult {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub l2: f64,
    /// Test classes never seen in training.
    pub missing_classes: Vec<usize>,
}

/// Fits one classifier per L2 grid value, keeps the best on validation
/// micro-F1 (training data when validation is empty), scores the test set.
pub fn logistic_classify(
    train: (&[Vec<f64>], &[usize]),
    val: (&[Vec<f64>], &[usize]),
    test: (&[Vec<f64>], &[usize]),
) -> Result<ClassifyResult> {
    let select = if val.0.is_empty() { train } else { val };
    let mut best: Option<(f64, f64, LogisticModel)> = None;
    for l2 in L2_GRID {
        let model = LogisticModel::fit(train.0, train.1, l2)?;
        let pred: Vec<usize> = select.0.iter().map(|r| model.predict(r)).collect();
        let (micro, _) = f1_scores(&pred, select.1);
        if best.as_ref().is_none_or(|b| micro > b.0) {
            best = Some((micro, l2, model));
        }
    }
    let (_, l2, model) = best.expect("grid is non-empty");
    let pred: Vec<usize> = test.0.iter().map(|r| model.predict(r)).collect();
    let (micro_f1, macro_f1) = f1_scores(&pred, test.1);
    let seen: BTreeSet<usize> = train.1.iter().copied().collect();
    let missing_classes = test
        .1
        .iter()
        .copied()
        .filter(|c| !seen.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(ClassifyResult {
        micro_f1,
        macro_f1,
        l2,
        missing_classes,
    })
}

/// Area under the ROC curve via the rank statistic, ties at midrank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("AUC needs both positive and negative examples".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Shuffled index split into train, validation and test by fractions.
pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: Seed) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.derive("split", 0).rng());
    let n_train = (train_frac * n as f64).round() as usize;
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub split: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Embedding rows and labels for every labeled node.
pub fn align(emb: &Embeddings, labels: &[(String, String)]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut rows = Vec::with_capacity(labels.len());
    let mut names = Vec::with_capacity(labels.len());
    for (node, label) in labels {
        let v = emb
            .get(node)
            .ok_or_else(|| Error::Reference(format!("no embedding for labeled node {node:?}")))?;
        rows.push(v.to_vec());
        names.push(label.clone());
    }
    Ok((rows, names))
}

/// K-Means with as many clusters as distinct labels; NMI and ARI against
/// the labels.
pub fn cluster_eval(rows: &[Vec<f64>], labels: &[String], seed: Seed) -> Result<EvalReport> {
    let (truth, names) = encode_labels(labels);
    let km = kmeans(rows, names.len(), KMEANS_RESTARTS, seed)?;
    Ok(EvalReport {
        task: "cluster".into(),
        metrics: BTreeMap::from([
            ("nmi".to_string(), nmi(&km.labels, &truth)?),
            ("ari".to_string(), ari(&km.labels, &truth)?),
        ]),
        split: format!("all {} labeled nodes, k={}", rows.len(), names.len()),
        seed: seed.0,
        flags: Vec::new(),
    })
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn missing_flags(missing: &[usize], names: &[String]) -> Vec<String> {
    missing
        .iter()
        .map(|&c| format!("class {} absent from training data; its F1 is 0", names[c]))
        .collect()
}

/// 50/10/40 unstratified split, logistic regression, micro/macro F1.
pub fn classify_eval(rows: &[Vec<f64>], labels: &[String], seed: Seed) -> Result<EvalReport> {
    let (y, names) = encode_labels(labels);
    let (tr, va, te) = split_indices(rows.len(), 0.5, 0.1, seed);
    let (xtr, ytr) = (pick(rows, &tr), pick(&y, &tr));
    let (xva, yva) = (pick(rows, &va), pick(&y, &va));
    let (xte, yte) = (pick(rows, &te), pick(&y, &te));
    let res = logistic_classify((&xtr, &ytr), (&xva, &yva), (&xte, &yte))?;
    Ok(EvalReport {
        task: "classify".into(),
        metrics: BTreeMap::from([
            ("micro_f1".to_string(), res.micro_f1),
            ("macro_f1".to_string(), res.macro_f1),
            ("l2".to_string(), res.l2),
        ]),
        split: format!("train {} / val {} / test {}", tr.len(), va.len(), te.len()),
        seed: seed.0,
        flags: missing_flags(&res.missing_classes, &names),
    })
}

/// Held-out link sets; every link is a pair of node names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkSplit {
    pub train: Vec<(String, String)>,
    pub val: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

impl LinkSplit {
    pub fn from_edges(edges: &[(String, String)], train_frac: f64, val_frac: f64, seed: Seed) -> Self {
        let (tr, va, te) = split_indices(edges.len(), train_frac, val_frac, seed);
        LinkSplit {
            train: pick(edges, &tr),
            val: pick(edges, &va),
            test: pick(edges, &te),
        }
    }
}

fn hadamard(emb: &Embeddings, a: &str, b: &str) -> Result<Vec<f64>> {
    let missing = |n: &str| Error::Reference(format!("no embedding for link endpoint {n:?}"));
    let u = emb.get(a).ok_or_else(|| missing(a))?;
    let v = emb.get(b).ok_or_else(|| missing(b))?;
    Ok(u.iter().zip(v).map(|(x, y)| x * y).collect())
}

/// Draws `count` node pairs from `sources x targets` that are not in
/// `known` (either orientation) and not drawn before.
pub fn sample_non_edges(
    sources: &[String],
    targets: &[String],
    known: &HashSet<(String, String)>,
    count: usize,
    seed: Seed,
) -> Result<Vec<(String, String)>> {
    let capacity = sources.len() * targets.len();
    if count > capacity.saturating_sub(known.len()) {
        return Err(Error::Contract(format!("cannot draw {count} non-edges from {capacity} candidate pairs")));
    }
    let mut rng = seed.derive("non-edges", 0).rng();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count + 1000 {
            return Err(Error::Contract("non-edge sampling did not converge".into()));
        }
        let a = sources.choose(&mut rng).expect("non-empty").clone();
        let b = targets.choose(&mut rng).expect("non-empty").clone();
        if a == b {
            continue;
        }
        let key = (a.clone(), b.clone());
        let rev = (b.clone(), a.clone());
        if known.contains(&key) || known.contains(&rev) || seen.contains(&key) || seen.contains(&rev) {
            continue;
        }
        seen.insert(key.clone());
        out.push(key);
    }
    Ok(out)
}

/// Binary logistic regression on `u_i o u_j` link features with
/// `negative_ratio` sampled non-edges per positive in every split; AUC and
/// F1 at 0.5 on the test split.
pub fn link_predict_eval(
    emb: &Embeddings,
    split: &LinkSplit,
    sources: &[String],
    targets: &[String],
    known: &HashSet<(String, String)>,
    negative_ratio: usize,
    seed: Seed,
) -> Result<EvalReport> {
    let mut all_negs = sample_non_edges(
        sources,
        targets,
        known,
        negative_ratio * (split.train.len() + split.val.len() + split.test.len()),
        seed,
    )?;
    let test_negs = all_negs.split_off(negative_ratio * (split.train.len() + split.val.len()));
    let val_negs = all_negs.split_off(negative_ratio * split.train.len());
    let train_negs = all_negs;
    let build = |pos: &[(String, String)], neg: &[(String, String)]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b) in pos {
            x.push(hadamard(emb, a, b)?);
            y.push(1);
        }
        for (a, b) in neg {
            x.push(hadamard(emb, a, b)?);
            y.push(0);
        }
        Ok((x, y))
    };
    let (xtr, ytr) = build(&split.train, &train_negs)?;
    let (xva, yva) = build(&split.val, &val_negs)?;
    let (xte, yte) = build(&split.test, &test_negs)?;
    let select = if xva.is_empty() { (&xtr, &ytr) } else { (&xva, &yva) };
    let mut best: Option<(f64, f64, LogisticModel)> = None;
    for l2 in L2_GRID {
        let model = LogisticModel::fit(&xtr, &ytr, l2)?;
        let scores: Vec<f64> = select.0.iter().map(|r| model.predict_proba(r)[1]).collect();
        let labels: Vec<bool> = select.1.iter().map(|&c| c == 1).collect();
        let a = auc(&scores, &labels)?;
        if best.as_ref().is_none_or(|b| a > b.0) {
            best = Some((a, l2, model));
        }
    }
    let (_, l2, model) = best.expect("grid is non-empty");
    let scores: Vec<f64> = xte.iter().map(|r| model.predict_proba(r)[1]).collect();
    let labels: Vec<bool> = yte.iter().map(|&c| c == 1).collect();
    let test_auc = auc(&scores, &labels)?;
    let pred: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
    let tp = pred.iter().zip(&labels).filter(|(p, l)| **p && **l).count() as f64;
    let fp = pred.iter().zip(&labels).filter(|(p, l)| **p && !**l).count() as f64;
    let fneg = pred.iter().zip(&labels).filter(|(p, l)| !**p && **l).count() as f64;
    let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fneg) } else { 0.0 };
    Ok(EvalReport {
        task: "link".into(),
        metrics: BTreeMap::from([("auc".to_string(), test_auc), ("f1".to_string(), f1), ("l2".to_string(), l2)]),
        split: format!(
            "train {} / val {} / test {} positives, {}x negatives",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            negative_ratio
        ),
        seed: seed.0,
        flags: Vec::new(),
    })
}

/// Hides `hidden_fraction` of the labeled nodes, trains on the remaining
/// graph, encodes hidden nodes on the full graph, then clusters them and
/// classifies them with a classifier fit on visible nodes. With no hidden
/// nodes the transductive 50/10/40 split is evaluated instead.
pub fn inductive_protocol(
    graph: &HetGraph,
    schemas: &[TreeSchema],
    labels: &[(String, String)],
    hidden_fraction: f64,
    config: &TrainConfig,
) -> Result<EvalReport> {
    if !(0.0..1.0).contains(&hidden_fraction) {
        return Err(Error::Contract(format!("hidden fraction {hidden_fraction} outside [0, 1)")));
    }
    let seed = Seed(config.seed);
    let mut labeled: Vec<(NodeId, String)> = Vec::with_capacity(labels.len());
    for (name, label) in labels {
        let n = graph
            .node_by_name(name)
            .ok_or_else(|| Error::Reference(format!("labeled node {name:?} is not in the graph")))?;
        labeled.push((n, label.clone()));
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut seed.derive("hidden", 0).rng());
    let n_hidden = (hidden_fraction * labeled.len() as f64).round() as usize;
    let hidden_idx: BTreeSet<usize> = order[..n_hidden].iter().copied().collect();
    let hidden_nodes: BTreeSet<NodeId> = hidden_idx.iter().map(|&i| labeled[i].0).collect();

    let (train_graph, _) = graph.without_nodes(&hidden_nodes);
    let outcome = train(&train_graph, schemas, config)?;
    let nodes: Vec<NodeId> = labeled.iter().map(|(n, _)| *n).collect();
    let encoded = encode_nodes(graph, &nodes, schemas, outcome.params(), config.eval_fanout, seed.derive("encode", 0))?;
    let rows: Vec<Vec<f64>> = nodes.iter().map(|&n| encoded.get(n).expect("encoded").to_vec()).collect();
    let names: Vec<String> = labeled.iter().map(|(_, l)| l.clone()).collect();
    let (y, classes) = encode_labels(&names);

    let (fit_idx, val_idx, eval_idx, split) = if n_hidden == 0 {
        let (tr, va, te) = split_indices(rows.len(), 0.5, 0.1, seed);
        let split = format!("transductive: train {} / val {} / test {}", tr.len(), va.len(), te.len());
        (tr, va, te, split)
    } else {
        let mut visible: Vec<usize> = order[n_hidden..].to_vec();
        visible.sort_unstable();
        let n_val = visible.len() / 6;
        let val = visible.split_off(visible.len() - n_val);
        let eval: Vec<usize> = hidden_idx.iter().copied().collect();
        let split = format!("visible train {} / visible val {} / hidden {}", visible.len(), val.len(), eval.len());
        (visible, val, eval, split)
    };
    let res = logistic_classify(
        (&pick(&rows, &fit_idx), &pick(&y, &fit_idx)),
        (&pick(&rows, &val_idx), &pick(&y, &val_idx)),
        (&pick(&rows, &eval_idx), &pick(&y, &eval_idx)),
    )?;
    let eval_rows = pick(&rows, &eval_idx);
    let eval_y = pick(&y, &eval_idx);
    let k = eval_y.iter().collect::<BTreeSet<_>>().len().max(1).min(eval_rows.len().max(1));
    let km = kmeans(&eval_rows, k, KMEANS_RESTARTS, seed)?;
    let mut flags = missing_flags(&res.missing_classes, &classes);
    let present: BTreeSet<usize> = fit_idx.iter().map(|&i| y[i]).collect();
    for (c, name) in classes.iter().enumerate() {
        if !present.contains(&c) && !res.missing_classes.contains(&c) {
            flags.push(format!("class {name} has no visible training nodes"));
        }
    }
    Ok(EvalReport {
        task: if n_hidden == 0 { "classify" } else { "inductive-classify" }.into(),
        metrics: BTreeMap::from([
            ("nmi".to_string(), nmi(&km.labels, &eval_y)?),
            ("ari".to_string(), ari(&km.labels, &eval_y)?),
            ("micro_f1".to_string(), res.micro_f1),
            ("macro_f1".to_string(), res.macro_f1),
        ]),
        split,
        seed: config.seed,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn kmeans_exact_and_degenerate() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let r = kmeans(&pts, 2, 3, Seed(0)).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_ne!(r.labels[0], r.labels[1]);
        let same = vec![vec![1.0]; 5];
        assert_eq!(kmeans(&same, 2, 3, Seed(0)).unwrap().inertia, 0.0);
        assert!(matches!(kmeans(&pts, 3, 1, Seed(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = Seed(11).rng();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let cx = if c == 0 { 0.0 } else { 10.0 };
            pts.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
            truth.push(c);
        }
        let r = kmeans(&pts, 2, KMEANS_RESTARTS, Seed(1)).unwrap();
        // nearest planted center oracle
        let oracle: Vec<usize> = pts.iter().map(|p| usize::from(p[0] > 5.0)).collect();
        assert_eq!(oracle, truth);
        assert_eq!(nmi(&r.labels, &truth).unwrap(), 1.0);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nmi_ari_examples() {
        let t = [0, 0, 1, 1];
        assert_eq!(nmi(&t, &t).unwrap(), 1.0);
        assert_eq!(ari(&t, &t).unwrap(), 1.0);
        assert_eq!(nmi(&[5, 5, 2, 2], &t).unwrap(), 1.0);
        assert_eq!(ari(&[5, 5, 2, 2], &t).unwrap(), 1.0);
        assert!(nmi(&[0, 1, 0, 1], &t).unwrap().abs() < 1e-15);
        assert!((ari(&[0, 1, 0, 1], &t).unwrap() + 0.5).abs() < 1e-15);
        assert!(nmi(&[], &[]).is_err());
    }

    #[test]
    fn f1_definitions() {
        assert_eq!(f1_scores(&[1, 0], &[0, 1]), (0.0, 0.0));
        let (micro, macro_f1) = f1_scores(&[0, 0, 1], &[0, 1, 1]);
        assert!((micro - 2.0 / 3.0).abs() < 1e-15);
        assert!((macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn separable_data_is_classified_perfectly() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let res = logistic_classify((&x, &y), (&[], &[]), (&x, &y)).unwrap();
        assert_eq!((res.micro_f1, res.macro_f1), (1.0, 1.0));
        assert!(matches!(
            logistic_classify((&x[..5], &y[..5]), (&[], &[]), (&x, &y)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unseen_test_class_is_flagged() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let res = logistic_classify((&x[..2], &[0, 1]), (&[], &[]), (&x, &[0, 1, 2])).unwrap();
        assert_eq!(res.missing_classes, vec![2]);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(auc(&[0.1], &[true]).is_err());
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_indices(100, 0.5, 0.1, Seed(0));
        assert_eq!((a.len(), b.len(), c.len()), (50, 10, 40));
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
