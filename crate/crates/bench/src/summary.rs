//! Box-plot statistics per controller group.

use std::fmt::Write;

pub use knotmpc::closedloop::{summarize, Summary};

use crate::record::TrialRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupKey {
    pub links: usize,
    pub horizon: usize,
    pub controller: String,
    pub knots: Option<usize>,
    pub generations: Option<usize>,
    pub multiplier: Option<f64>,
}

impl GroupKey {
    fn of(r: &TrialRecord) -> Self {
        Self {
            links: r.links,
            horizon: r.horizon,
            controller: r.controller.clone(),
            knots: r.knots,
            generations: r.generations,
            multiplier: r.multiplier,
        }
    }

    pub fn label(&self) -> String {
        let mut s = format!(
            "links={} T={} {}",
            self.links, self.horizon, self.controller
        );
        if let Some(p) = self.knots {
            write!(s, " p={p}").unwrap();
        }
        if let Some(g) = self.generations {
            write!(s, " gens={g}").unwrap();
        }
        if let Some(m) = self.multiplier {
            write!(s, " mult={m}").unwrap();
        }
        s
    }
}

/// Numeric column of a record by CSV name.
pub fn metric(r: &TrialRecord, name: &str) -> Option<f64> {
    match name {
        "actual_cost" => r.actual_cost,
        "cost_ratio" => r.cost_ratio,
        "normalized_cost" => r.normalized_cost,
        "rise_time" => r.rise_time,
        "overshoot_pct" => r.overshoot_pct,
        "itae" => r.itae,
        "final_error" => r.final_error,
        "objective" => r.objective,
        "iterations" => r.iterations.map(|i| i as f64),
        "opt_time_median" => Some(r.opt_time_median),
        "total_time_median" => Some(r.total_time_median),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub summary: Summary,
}

/// Groups in order of first appearance; records without the metric are
/// skipped.
pub fn summarize_records(records: &[TrialRecord], name: &str) -> Vec<GroupSummary> {
    let mut groups: Vec<(GroupKey, Vec<f64>)> = Vec::new();
    for r in records {
        let Some(v) = metric(r, name) else { continue };
        let key = GroupKey::of(r);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    groups
        .into_iter()
        .map(|(key, vals)| GroupSummary {
            key,
            summary: summarize(&vals).expect("group is nonempty"),
        })
        .collect()
}

pub fn format_table(name: &str, groups: &[GroupSummary]) -> String {
    let mut out = format!("{name}\n");
    for g in groups {
        let s = &g.summary;
        writeln!(
            out,
            "  {:<40} n={:<4} median={:<12.6} q1={:<12.6} q3={:<12.6} whiskers=[{:.6}, {:.6}]",
            g.key.label(),
            s.count,
            s.median,
            s.q1,
            s.q3,
            s.whisker_lo,
            s.whisker_hi
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(controller: &str, cost: f64) -> TrialRecord {
        TrialRecord {
            controller: controller.into(),
            actual_cost: Some(cost),
            ..TrialRecord::default()
        }
    }

    #[test]
    fn groups_follow_first_appearance() {
        let rs = vec![rec("b", 1.0), rec("a", 5.0), rec("b", 3.0), rec("b", 2.0)];
        let g = summarize_records(&rs, "actual_cost");
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].key.controller, "b");
        assert_eq!(g[0].summary.median, 2.0);
        assert_eq!(g[1].summary.median, 5.0);
        assert!(summarize_records(&rs, "cost_ratio").is_empty());
    }

    #[test]
    fn quartiles_match_sort_oracle() {
        let vals = [7.0, -1.0, 3.5, 12.0, 0.0, 4.0, 9.0, 2.0, 6.0];
        let rs: Vec<_> = vals.iter().map(|&v| rec("x", v)).collect();
        let s = summarize_records(&rs, "actual_cost")[0].summary;
        let mut sorted = vals.to_vec();
        sorted.sort_by(f64::total_cmp);
        // nine samples: quartiles land exactly on sorted[2], sorted[4], sorted[6]
        assert_eq!((s.q1, s.median, s.q3), (sorted[2], sorted[4], sorted[6]));
    }

    #[test]
    fn symmetric_data_centers() {
        let rs: Vec<_> = [-2.0, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|&v| rec("x", v))
            .collect();
        assert_eq!(summarize_records(&rs, "actual_cost")[0].summary.median, 0.0);
        assert!(
            format_table("actual_cost", &summarize_records(&rs, "actual_cost"))
                .contains("median=0")
        );
    }
}
