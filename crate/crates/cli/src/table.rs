//! Comma-separated output tables. Every value is a number or a label without
//! commas, so no quoting is needed; policies are written as `p1;p2;...`.

use std::fmt::Write as _;

pub const RESULT_COLUMNS: &[&str] = &[
    "label",
    "u_alpha",
    "policy",
    "avg_aoi_exact",
    "avg_aoi_approx",
    "avp",
    "throughput",
    "sim_mean",
    "sim_stderr",
    "sim_avp",
    "sim_avp_stderr",
    "sim_throughput",
    "seed",
    "cost",
    "check",
];

pub const STEADY_STATE_COLUMNS: &[&str] = &["label", "u_alpha", "policy", "level", "nu", "wbar"];

pub fn policy_cell(p: &[f64]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One row of the results table; unset cells are left empty.
#[derive(Debug, Clone, Default)]
pub struct ResultRow {
    pub label: String,
    pub u_alpha: f64,
    pub policy: Vec<f64>,
    pub avg_aoi_exact: Option<f64>,
    pub avg_aoi_approx: Option<f64>,
    pub avp: Option<f64>,
    pub throughput: Option<f64>,
    pub sim_mean: Option<f64>,
    pub sim_stderr: Option<f64>,
    pub sim_avp: Option<f64>,
    pub sim_avp_stderr: Option<f64>,
    pub sim_throughput: Option<f64>,
    pub seed: Option<u64>,
    pub cost: Option<f64>,
    pub check: Option<bool>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.u_alpha.to_string(),
            policy_cell(&self.policy),
            opt(self.avg_aoi_exact),
            opt(self.avg_aoi_approx),
            opt(self.avp),
            opt(self.throughput),
            opt(self.sim_mean),
            opt(self.sim_stderr),
            opt(self.sim_avp),
            opt(self.sim_avp_stderr),
            opt(self.sim_throughput),
            opt(self.seed),
            opt(self.cost),
            self.check
                .map(|ok| if ok { "pass" } else { "fail" }.to_string())
                .unwrap_or_default(),
        ]
    }
}

pub fn render(columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for r in rows {
        debug_assert_eq!(r.len(), columns.len());
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}
