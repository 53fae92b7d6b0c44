//! Announcement classification from smoothed high-regime probabilities.
//!
//! For every announcement day the change `delta_p = p_t - p_{t-1}` of the
//! smoothed probability drives three classifiers: threshold rules on the
//! levels (SP-level), on the change (SP-diff), and an exact 1-d k-means on
//! the changes. The time-varying intercept is `phi_t = phi0 + phi1 * p_t`,
//! so `phi_t - phi_{t-1} = phi1 * delta_p`.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regime decisions within this distance of 0.5 are flagged.
pub const THRESHOLD_FLAG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Plank,
    LowPlank,
    HighPlank,
    Squat,
    Jump,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Plank, Group::LowPlank, Group::HighPlank, Group::Squat, Group::Jump];

    /// Merges the two SP-level Plank cases.
    pub fn merged(self) -> Group {
        match self {
            Group::LowPlank | Group::HighPlank => Group::Plank,
            g => g,
        }
    }

    /// Change of the smoothed probability under a perfectly sharp assignment.
    pub fn ideal_delta(self) -> f64 {
        match self.merged() {
            Group::Squat => -1.0,
            Group::Jump => 1.0,
            _ => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Plank => "Plank",
            Group::LowPlank => "LowPlank",
            Group::HighPlank => "HighPlank",
            Group::Squat => "Squat",
            Group::Jump => "Jump",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    SpLevel,
    SpDiff,
    KMeans,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SpLevel, Method::SpDiff, Method::KMeans];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SpLevel => "sp_level",
            Method::SpDiff => "sp_diff",
            Method::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnouncementEffect {
    pub date: NaiveDate,
    /// Position of the announcement day in the series.
    pub index: usize,
    pub p_t: f64,
    pub p_prev: f64,
    pub delta_p: f64,
    pub phi_t: f64,
    pub phi_prev: f64,
    pub group: Option<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub method: Method,
    pub effects: Vec<AnnouncementEffect>,
    pub group_counts: BTreeMap<Group, usize>,
    /// Mean `delta_p` of each group's members.
    pub group_centers: BTreeMap<Group, f64>,
    pub u: f64,
    pub flags: Vec<String>,
}

impl Classification {
    fn build(method: Method, effects: Vec<AnnouncementEffect>, mut flags: Vec<String>) -> Self {
        let (group_counts, group_centers) = tally(&effects, |g| g);
        let u = uncertainty_of(&effects).unwrap_or(f64::NAN);
        if effects.is_empty() {
            flags.push("no announcements to classify".into());
        }
        Self {
            method,
            effects,
            group_counts,
            group_centers,
            u,
            flags,
        }
    }

    pub fn labels(&self) -> Vec<Group> {
        self.effects.iter().map(|e| e.group.expect("classified")).collect()
    }

    /// Labels with the two Plank cases merged.
    pub fn merged_labels(&self) -> Vec<Group> {
        self.labels().into_iter().map(Group::merged).collect()
    }

    /// Counts and centers after merging the Plank cases; centers are
    /// recomputed over the merged membership.
    pub fn merged_summary(&self) -> (BTreeMap<Group, usize>, BTreeMap<Group, f64>) {
        tally(&self.effects, Group::merged)
    }

    pub fn count(&self, g: Group) -> usize {
        self.merged_summary().0.get(&g).copied().unwrap_or(0)
    }
}

fn tally(effects: &[AnnouncementEffect], key: impl Fn(Group) -> Group) -> (BTreeMap<Group, usize>, BTreeMap<Group, f64>) {
    let mut counts = BTreeMap::new();
    let mut sums = BTreeMap::new();
    for e in effects {
        if let Some(g) = e.group {
            let g = key(g);
            *counts.entry(g).or_insert(0usize) += 1;
            *sums.entry(g).or_insert(0.0) += e.delta_p;
        }
    }
    let centers = sums
        .into_iter()
        .map(|(g, s)| (g, s / counts[&g] as f64))
        .collect();
    (counts, centers)
}

/// `phi_t = phi0 + phi1 * p_t`.
pub fn phi_series(phi0: f64, phi1: f64, smoothed_p1: &[f64]) -> Vec<f64> {
    smoothed_p1.iter().map(|p| phi0 + phi1 * p).collect()
}

/// One unclassified record per announcement day. Announcements on the first
/// day have no predecessor; they are skipped and their dates returned.
pub fn announcement_deltas(
    dates: &[NaiveDate],
    smoothed_p1: &[f64],
    lambda: &[u8],
    phi0: f64,
    phi1: f64,
) -> Result<(Vec<AnnouncementEffect>, Vec<NaiveDate>)> {
    if dates.len() != smoothed_p1.len() || lambda.len() != smoothed_p1.len() {
        return Err(Error::Input(format!(
            "dates ({}), probabilities ({}) and mask ({}) differ in length",
            dates.len(),
            smoothed_p1.len(),
            lambda.len()
        )));
    }
    if let Some(p) = smoothed_p1.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("smoothed probability {p} outside [0,1]")));
    }
    let phi = phi_series(phi0, phi1, smoothed_p1);
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (t, &l) in lambda.iter().enumerate() {
        if l != 1 {
            continue;
        }
        if t == 0 {
            skipped.push(dates[0]);
            continue;
        }
        out.push(AnnouncementEffect {
            date: dates[t],
            index: t,
            p_t: smoothed_p1[t],
            p_prev: smoothed_p1[t - 1],
            delta_p: smoothed_p1[t] - smoothed_p1[t - 1],
            phi_t: phi[t],
            phi_prev: phi[t - 1],
            group: None,
        });
    }
    Ok((out, skipped))
}

fn is_high(p: f64) -> bool {
    p > 0.5
}

/// Four groups from the levels: low/high Plank, Squat, Jump. Exactly 0.5
/// counts as the low regime.
pub fn classify_sp_level(effects: &[AnnouncementEffect]) -> Classification {
    let mut flags = Vec::new();
    let classified = effects
        .iter()
        .map(|e| {
            for (name, p) in [("p_prev", e.p_prev), ("p_t", e.p_t)] {
                if (p - 0.5).abs() <= THRESHOLD_FLAG_EPS {
                    flags.push(format!("{}: {name} = {p} is at the 0.5 threshold", e.date));
                }
            }
            let group = match (is_high(e.p_prev), is_high(e.p_t)) {
                (false, false) => Group::LowPlank,
                (true, true) => Group::HighPlank,
                (true, false) => Group::Squat,
                (false, true) => Group::Jump,
            };
            AnnouncementEffect {
                group: Some(group),
                ..e.clone()
            }
        })
        .collect();
    Classification::build(Method::SpLevel, classified, flags)
}

/// Three groups from the change: Plank for `|delta_p| <= 0.5`.
pub fn classify_sp_diff(effects: &[AnnouncementEffect]) -> Classification {
    let classified = effects
        .iter()
        .map(|e| {
            let group = if e.delta_p > 0.5 {
                Group::Jump
            } else if e.delta_p < -0.5 {
                Group::Squat
            } else {
                Group::Plank
            };
            AnnouncementEffect {
                group: Some(group),
                ..e.clone()
            }
        })
        .collect();
    Classification::build(Method::SpDiff, classified, Vec::new())
}

/// Globally optimal 1-d k-means partition.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    /// Cluster of each input value; clusters are numbered by increasing center.
    pub assignment: Vec<usize>,
    pub centers: Vec<f64>,
    /// Within-cluster sum of squares.
    pub sse: f64,
}

/// Exact k-means on the line by dynamic programming over the sorted values
/// (optimal clusters are contiguous in sort order).
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<KMeans1d> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("k-means input must be finite".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let distinct = 1 + sorted.windows(2).filter(|w| w[1] != w[0]).count();
    if values.is_empty() || distinct < k {
        return Err(Error::Degenerate(format!(
            "k-means needs at least {k} distinct values, got {}",
            if values.is_empty() { 0 } else { distinct }
        )));
    }
    let n = sorted.len();
    // Center the data so prefix sums stay well conditioned.
    let shift = sorted.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        let c = v - shift;
        s1[i + 1] = s1[i] + c;
        s2[i + 1] = s2[i] + c * c;
    }
    // Sum of squares of sorted[a..b] around its mean.
    let cost = |a: usize, b: usize| -> f64 {
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };
    let inf = f64::INFINITY;
    // best[m][i]: optimal cost of the first i points in m+1 clusters.
    let mut best = vec![vec![inf; n + 1]; k];
    let mut split = vec![vec![0usize; n + 1]; k];
    for i in 1..=n {
        best[0][i] = cost(0, i);
    }
    for m in 1..k {
        for i in (m + 1)..=n {
            for j in m..i {
                let c = best[m - 1][j] + cost(j, i);
                if c < best[m][i] {
                    best[m][i] = c;
                    split[m][i] = j;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut end = n;
    for m in (1..k).rev() {
        end = split[m][end];
        bounds.push(end);
    }
    bounds.push(0);
    bounds.reverse();
    let mut assignment = vec![0usize; n];
    let mut centers = Vec::with_capacity(k);
    for c in 0..k {
        let (a, b) = (bounds[c], bounds[c + 1]);
        centers.push(sorted[a..b].iter().sum::<f64>() / (b - a) as f64);
        for &orig in &order[a..b] {
            assignment[orig] = c;
        }
    }
    let sse = values
        .iter()
        .zip(&assignment)
        .map(|(v, &c)| (v - centers[c]).powi(2))
        .sum();
    Ok(KMeans1d {
        assignment,
        centers,
        sse,
    })
}

/// Three-cluster k-means on `delta_p`; clusters ordered by center map to
/// Squat, Plank, Jump.
pub fn classify_kmeans(effects: &[AnnouncementEffect]) -> Result<Classification> {
    let deltas: Vec<f64> = effects.iter().map(|e| e.delta_p).collect();
    let km = kmeans_1d(&deltas, 3)?;
    let labels = [Group::Squat, Group::Plank, Group::Jump];
    let mut flags = Vec::new();
    if km.centers[0] >= 0.0 || km.centers[2] <= 0.0 {
        flags.push(format!(
            "k-means centers {:?} do not straddle zero; labels follow center order",
            km.centers
        ));
    }
    let classified = effects
        .iter()
        .zip(&km.assignment)
        .map(|(e, &c)| AnnouncementEffect {
            group: Some(labels[c]),
            ..e.clone()
        })
        .collect();
    Ok(Classification::build(Method::KMeans, classified, flags))
}

pub fn classify(method: Method, effects: &[AnnouncementEffect]) -> Result<Classification> {
    match method {
        Method::SpLevel => Ok(classify_sp_level(effects)),
        Method::SpDiff => Ok(classify_sp_diff(effects)),
        Method::KMeans => classify_kmeans(effects),
    }
}

fn uncertainty_of(effects: &[AnnouncementEffect]) -> Result<f64> {
    if effects.is_empty() {
        return Err(Error::EmptyTask("uncertainty index of zero announcements".into()));
    }
    let mut total = 0.0;
    for e in effects {
        let g = e
            .group
            .ok_or_else(|| Error::Input(format!("announcement {} is not classified", e.date)))?;
        total += (e.delta_p - g.ideal_delta()).abs();
    }
    Ok(2.0 * total / effects.len() as f64)
}

/// `U = (2/N) * sum |delta_p - ideal(group)|`, with ideal changes 0, -1 and
/// +1 for Plank, Squat and Jump.
pub fn uncertainty_index(classification: &Classification) -> Result<f64> {
    uncertainty_of(&classification.effects)
}

/// [`uncertainty_index`] from bare changes and labels.
pub fn uncertainty_from_labels(delta_p: &[f64], groups: &[Group]) -> Result<f64> {
    if delta_p.len() != groups.len() {
        return Err(Error::Input(format!(
            "{} changes for {} labels",
            delta_p.len(),
            groups.len()
        )));
    }
    if delta_p.is_empty() {
        return Err(Error::EmptyTask("uncertainty index of zero announcements".into()));
    }
    let total: f64 = delta_p.iter().zip(groups).map(|(d, g)| (d - g.ideal_delta()).abs()).sum();
    Ok(2.0 * total / delta_p.len() as f64)
}

/// Hubert-Arabie adjusted Rand index between two labelings.
pub fn adjusted_rand<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("label lengths differ ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Input("adjusted Rand index needs at least two items".into()));
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions trivial (all-in-one or all singletons) and equal.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn effect(p_prev: f64, p_t: f64) -> AnnouncementEffect {
        AnnouncementEffect {
            date: NaiveDate::from_ymd_opt(2012, 8, 2).unwrap(),
            index: 1,
            p_t,
            p_prev,
            delta_p: p_t - p_prev,
            phi_t: 0.0,
            phi_prev: 0.0,
            group: None,
        }
    }

    fn groups(c: &Classification) -> Vec<Group> {
        c.labels()
    }

    #[test]
    fn phi_endpoints() {
        assert_eq!(phi_series(1.5, 2.0, &[0.0, 1.0]), vec![1.5, 3.5]);
        assert!((phi_series(0.0, 6.273, &[0.5])[0] - 3.1365).abs() < 1e-12);
        assert!(phi_series(0.2, 3.0, &[0.4; 5]).windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn deltas_from_mask() {
        let dates: Vec<NaiveDate> = (1..=2).map(|d| NaiveDate::from_ymd_opt(2012, 8, d).unwrap()).collect();
        let (e, skipped) = announcement_deltas(&dates, &[0.1, 0.9], &[0, 1], 0.0, 2.0).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].delta_p - 0.8).abs() < 1e-15);
        assert!(skipped.is_empty());
        let (e, _) = announcement_deltas(&dates, &[0.1, 0.9], &[0, 0], 0.0, 2.0).unwrap();
        assert!(e.is_empty());
        let (e, skipped) = announcement_deltas(&dates, &[0.1, 0.9], &[1, 0], 0.0, 2.0).unwrap();
        assert!(e.is_empty());
        assert_eq!(skipped, vec![dates[0]]);
    }

    #[test]
    fn level_rules() {
        let c = classify_sp_level(&[effect(0.2, 0.9), effect(0.9, 0.2), effect(0.4, 0.6), effect(0.3, 0.1), effect(0.7, 0.8)]);
        assert_eq!(
            groups(&c),
            vec![Group::Jump, Group::Squat, Group::Jump, Group::LowPlank, Group::HighPlank]
        );
        assert_eq!(c.count(Group::Plank), 2);
    }

    #[test]
    fn level_tie_is_low_and_flagged() {
        let c = classify_sp_level(&[effect(0.5, 0.9)]);
        assert_eq!(groups(&c), vec![Group::Jump]);
        assert_eq!(c.flags.len(), 1);
    }

    #[test]
    fn diff_rules() {
        let c = classify_sp_diff(&[effect(0.1, 0.8), effect(0.8, 0.1), effect(0.3, 0.5), effect(0.25, 0.75)]);
        assert_eq!(groups(&c), vec![Group::Jump, Group::Squat, Group::Plank, Group::Plank]);
    }

    #[test]
    fn kmeans_small_example() {
        let v = [-0.6, -0.02, 0.0, 0.01, 0.70, 0.72];
        let km = kmeans_1d(&v, 3).unwrap();
        assert_eq!(km.assignment, vec![0, 1, 1, 1, 2, 2]);
        let c = classify_kmeans(&v.iter().map(|&d| effect(0.5 - d / 2.0, 0.5 + d / 2.0)).collect::<Vec<_>>()).unwrap();
        assert_eq!(
            groups(&c),
            vec![Group::Squat, Group::Plank, Group::Plank, Group::Plank, Group::Jump, Group::Jump]
        );
    }

    #[test]
    fn kmeans_single_cluster_and_degenerate() {
        let v = [1.0, 1.0 + 1e-10, 1.0 - 1e-10];
        let km = kmeans_1d(&v, 1).unwrap();
        assert!((km.centers[0] - 1.0).abs() < 1e-15);
        assert!(matches!(kmeans_1d(&[0.0, 0.0, 1.0], 3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn uncertainty_values() {
        let c = classify_sp_diff(&[effect(0.0, 0.0), effect(0.0, 1.0)]);
        assert_eq!(uncertainty_index(&c).unwrap(), 0.0);
        let c = classify_sp_diff(&[effect(0.85, 0.15)]);
        assert!((uncertainty_index(&c).unwrap() - 0.6).abs() < 1e-12);
        let c = classify_sp_diff(&[effect(0.25, 0.75), effect(0.75, 0.25)]);
        assert!((uncertainty_index(&c).unwrap() - 1.0).abs() < 1e-12);
        let empty = classify_sp_diff(&[]);
        assert!(uncertainty_index(&empty).is_err());
    }

    #[test]
    fn rand_index_cases() {
        assert_eq!(adjusted_rand(&[1, 1, 1, 2], &[1, 1, 2, 2]).unwrap(), 0.0);
        assert_eq!(adjusted_rand(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap(), 1.0);
        assert!(adjusted_rand(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn centers_are_member_means() {
        let c = classify_sp_level(&[effect(0.1, 0.2), effect(0.8, 0.9), effect(0.2, 0.9)]);
        let (counts, centers) = c.merged_summary();
        assert_eq!(counts[&Group::Plank], 2);
        assert!((centers[&Group::Plank] - 0.1).abs() < 1e-12);
        assert!((centers[&Group::Jump] - 0.7).abs() < 1e-12);
    }
}
