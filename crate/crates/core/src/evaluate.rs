//! Fidelity and utility metrics comparing a synthetic table with real data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mechanism::Encoding;
use crate::table::{Column, ColumnKind, Table};

/// Mean-over-columns scores, absent when no column qualifies.
///
/// JSON keys: `ks_complement`, `tv_complement`, `contingency_similarity`,
/// `correlation_similarity`, `logit_f1`, `per_column` (column name to its
/// KS or TV complement) and `per_pair` (`"a/b"` to the pair score).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks_complement: Option<f64>,
    pub tv_complement: Option<f64>,
    pub contingency_similarity: Option<f64>,
    pub correlation_similarity: Option<f64>,
    pub logit_f1: Option<f64>,
    pub per_column: BTreeMap<String, f64>,
    pub per_pair: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// All present scores, keyed by name.
    pub fn scores(&self) -> Vec<(&'static str, f64)> {
        [
            ("ks_complement", self.ks_complement),
            ("tv_complement", self.tv_complement),
            ("contingency_similarity", self.contingency_similarity),
            ("correlation_similarity", self.correlation_similarity),
            ("logit_f1", self.logit_f1),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

fn nonempty(len: usize, what: &str) -> Result<()> {
    if len == 0 {
        Err(Error::DimensionMismatch(format!("{what} sample is empty")))
    } else {
        Ok(())
    }
}

/// `1 - sup |F_real - F_syn|` over the two empirical CDFs.
pub fn ks_complement(real: &[f64], syn: &[f64]) -> Result<f64> {
    nonempty(real.len(), "real")?;
    nonempty(syn.len(), "synthetic")?;
    let mut a = real.to_vec();
    let mut b = syn.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(1.0 - d)
}

fn frequencies<K: Ord + Copy>(values: impl Iterator<Item = K>, n: usize) -> BTreeMap<K, f64> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0.0) += 1.0;
    }
    counts.values_mut().for_each(|c| *c /= n as f64);
    counts
}

fn tv_distance<K: Ord + Copy>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut total = 0.0;
    for (k, pv) in p {
        total += (pv - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, qv) in q {
        if !p.contains_key(k) {
            total += qv;
        }
    }
    0.5 * total
}

/// `1 - TV` between the empirical category distributions.
pub fn tv_complement(real: &[usize], syn: &[usize]) -> Result<f64> {
    nonempty(real.len(), "real")?;
    nonempty(syn.len(), "synthetic")?;
    let p = frequencies(real.iter().copied(), real.len());
    let q = frequencies(syn.iter().copied(), syn.len());
    Ok((1.0 - tv_distance(&p, &q)).clamp(0.0, 1.0))
}

/// `1 - TV` between the joint distributions of two categorical columns.
pub fn pair_contingency_complement(real: (&[usize], &[usize]), syn: (&[usize], &[usize])) -> Result<f64> {
    if real.0.len() != real.1.len() || syn.0.len() != syn.1.len() {
        return Err(Error::DimensionMismatch("paired columns differ in length".into()));
    }
    nonempty(real.0.len(), "real")?;
    nonempty(syn.0.len(), "synthetic")?;
    let p = frequencies(real.0.iter().copied().zip(real.1.iter().copied()), real.0.len());
    let q = frequencies(syn.0.iter().copied().zip(syn.1.iter().copied()), syn.0.len());
    Ok((1.0 - tv_distance(&p, &q)).clamp(0.0, 1.0))
}

/// Pearson correlation, `None` when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_schemas(real: &Table, syn: &Table) -> Result<()> {
    if real.schema() != syn.schema() {
        return Err(Error::DimensionMismatch("real and synthetic tables use different schemas".into()));
    }
    Ok(())
}

fn categorical_columns(t: &Table) -> Vec<(&str, &[usize])> {
    t.schema()
        .columns
        .iter()
        .zip(t.columns())
        .filter_map(|(spec, col)| match col {
            Column::Categorical(v) => Some((spec.name.as_str(), v.as_slice())),
            Column::Numerical(_) => None,
        })
        .collect()
}

fn numerical_columns(t: &Table) -> Vec<(&str, &[f64])> {
    t.schema()
        .columns
        .iter()
        .zip(t.columns())
        .filter_map(|(spec, col)| match col {
            Column::Numerical(v) => Some((spec.name.as_str(), v.as_slice())),
            Column::Categorical(_) => None,
        })
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn pairs_of<T: Copy>(items: &[(&str, T)]) -> Vec<(String, T, T)> {
    let mut out = Vec::new();
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            out.push((format!("{}/{}", items[a].0, items[b].0), items[a].1, items[b].1));
        }
    }
    out
}

/// Mean pairwise contingency similarity over categorical column pairs.
pub fn contingency_similarity(real: &Table, syn: &Table) -> Result<Option<f64>> {
    Ok(mean(&contingency_pairs(real, syn)?.into_iter().map(|(_, s)| s).collect::<Vec<_>>()))
}

fn contingency_pairs(real: &Table, syn: &Table) -> Result<Vec<(String, f64)>> {
    check_schemas(real, syn)?;
    let r = categorical_columns(real);
    let s = categorical_columns(syn);
    pairs_of(&r)
        .into_iter()
        .zip(pairs_of(&s))
        .map(|((name, ra, rb), (_, sa, sb))| Ok((name, pair_contingency_complement((ra, rb), (sa, sb))?)))
        .collect()
}

/// Mean of `1 - |rho_real - rho_syn| / 2` over numerical column pairs.
/// Pairs with a constant column on either side are skipped.
pub fn correlation_similarity(real: &Table, syn: &Table) -> Result<Option<f64>> {
    Ok(mean(&correlation_pairs(real, syn)?.into_iter().map(|(_, s)| s).collect::<Vec<_>>()))
}

fn correlation_pairs(real: &Table, syn: &Table) -> Result<Vec<(String, f64)>> {
    check_schemas(real, syn)?;
    let r = numerical_columns(real);
    let s = numerical_columns(syn);
    let mut out = Vec::new();
    for ((name, ra, rb), (_, sa, sb)) in pairs_of(&r).into_iter().zip(pairs_of(&s)) {
        match (pearson(ra, rb), pearson(sa, sb)) {
            (Some(pr), Some(ps)) => out.push((name, 1.0 - (pr - ps).abs() / 2.0)),
            _ => log::warn!("skipping correlation of `{name}`: a column is constant"),
        }
    }
    Ok(out)
}

const LOGIT_STEPS: usize = 500;
const LOGIT_LR: f64 = 0.1;
const LOGIT_L2: f64 = 1e-4;

fn logit_design(table: &Table, encoding: &Encoding, target: usize, mu: &[f64], sd: &[f64]) -> Result<Matrix> {
    let feats = encoding.features(table)?;
    let (start, len) = encoding.block(target);
    let keep: Vec<usize> = (0..feats.cols()).filter(|c| *c < start || *c >= start + len).collect();
    Ok(Matrix::from_fn(feats.rows(), keep.len(), |i, j| {
        (feats.get(i, keep[j]) - mu[j]) / sd[j]
    }))
}

fn labels(table: &Table, target: &str) -> Result<Vec<f64>> {
    match table.column(target) {
        Some(Column::Categorical(v)) => Ok(v.iter().map(|&c| if c == 1 { 1.0 } else { 0.0 }).collect()),
        _ => Err(Error::InvalidConfig(format!("target `{target}` is not a categorical column"))),
    }
}

/// F1 of the positive class (category index 1 of a binary target) for a
/// logistic regression fitted on `syn_train` and scored on `real_test`.
pub fn logit_f1(syn_train: &Table, real_test: &Table, target: &str) -> Result<f64> {
    check_schemas(real_test, syn_train)?;
    let schema = real_test.schema();
    let t = schema
        .position(target)
        .ok_or_else(|| Error::InvalidConfig(format!("target `{target}` not in schema")))?;
    match &schema.columns[t].kind {
        ColumnKind::Categorical { categories } if categories.len() == 2 => {}
        _ => {
            return Err(Error::InvalidConfig(format!(
                "target `{target}` must be a categorical column with two categories"
            )))
        }
    }
    nonempty(syn_train.n_rows(), "training")?;
    nonempty(real_test.n_rows(), "test")?;
    let encoding = Encoding::new(schema.clone());

    // standardize by test statistics
    let raw_test = encoding.features(real_test)?;
    let (start, len) = encoding.block(t);
    let keep: Vec<usize> = (0..raw_test.cols()).filter(|c| *c < start || *c >= start + len).collect();
    let n_test = raw_test.rows() as f64;
    let mut mu = Vec::with_capacity(keep.len());
    let mut sd = Vec::with_capacity(keep.len());
    for &c in &keep {
        let col = raw_test.col(c);
        let m = col.iter().sum::<f64>() / n_test;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n_test;
        mu.push(m);
        sd.push(if v > 0.0 { v.sqrt() } else { 1.0 });
    }

    let x = logit_design(syn_train, &encoding, t, &mu, &sd)?;
    let y = labels(syn_train, target)?;
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        log::warn!("logistic regression training data has a single class");
    }
    let (n, p) = (x.rows(), x.cols());
    let mut w = vec![0.0; p];
    let mut bias = 0.0;
    for _ in 0..LOGIT_STEPS {
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let z = crate::matrix::dot(row, &w) + bias;
            let err = 1.0 / (1.0 + (-z).exp()) - y[i];
            for (g, v) in gw.iter_mut().zip(row) {
                *g += err * v;
            }
            gb += err;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= LOGIT_LR * (g / n as f64 + LOGIT_L2 * *wj);
        }
        bias -= LOGIT_LR * gb / n as f64;
    }

    let xt = logit_design(real_test, &encoding, t, &mu, &sd)?;
    let yt = labels(real_test, target)?;
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (i, &truth) in yt.iter().enumerate() {
        let pred = crate::matrix::dot(xt.row(i), &w) + bias >= 0.0;
        match (pred, truth == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    let denom = 2.0 * tp + fp + fneg;
    Ok(if denom > 0.0 { 2.0 * tp / denom } else { 0.0 })
}

/// Every applicable metric. `target` adds the downstream F1, fitting on
/// `syn` and scoring on `real`.
pub fn evaluate(real: &Table, syn: &Table, target: Option<&str>) -> Result<MetricsReport> {
    check_schemas(real, syn)?;
    let mut report = MetricsReport::default();

    let mut ks = Vec::new();
    for ((name, r), (_, s)) in numerical_columns(real).into_iter().zip(numerical_columns(syn)) {
        let v = ks_complement(r, s)?;
        report.per_column.insert(name.to_string(), v);
        ks.push(v);
    }
    let mut tv = Vec::new();
    for ((name, r), (_, s)) in categorical_columns(real).into_iter().zip(categorical_columns(syn)) {
        let v = tv_complement(r, s)?;
        report.per_column.insert(name.to_string(), v);
        tv.push(v);
    }
    report.ks_complement = mean(&ks);
    report.tv_complement = mean(&tv);

    let cont = contingency_pairs(real, syn)?;
    report.contingency_similarity = mean(&cont.iter().map(|(_, s)| *s).collect::<Vec<_>>());
    let corr = correlation_pairs(real, syn)?;
    report.correlation_similarity = mean(&corr.iter().map(|(_, s)| *s).collect::<Vec<_>>());
    report.per_pair.extend(cont);
    report.per_pair.extend(corr);

    if let Some(target) = target {
        report.logit_f1 = Some(logit_f1(syn, real, target)?);
    }
    Ok(report)
}
