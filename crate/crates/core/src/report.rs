//! Test reports as flat key-value documents.

use crate::error_gof::ProcessPath;

/// Outcome of a goodness-of-fit test, serializable as a flat key-value text
/// document. `path` is the evaluated trajectory for export and plotting.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub statistic: String,
    pub value: f64,
    pub p_value: f64,
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub n: usize,
    pub seed: Option<u64>,
    pub sign_convention: Option<String>,
    pub copula_r: Option<f64>,
    pub path: Option<ProcessPath>,
}

impl TestReport {
    /// Flat key-value rendering: one `key = value` per line, deterministic.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("statistic = {}\n", self.statistic));
        s.push_str(&format!("value = {}\n", self.value));
        s.push_str(&format!("p_value = {}\n", self.p_value));
        for (i, th) in self.theta_hat.iter().enumerate() {
            s.push_str(&format!("theta_hat_{} = {}\n", i + 1, th));
        }
        if let Some(sig) = self.sigma_hat {
            s.push_str(&format!("sigma_hat = {sig}\n"));
        }
        s.push_str(&format!("n = {}\n", self.n));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        if let Some(sc) = &self.sign_convention {
            s.push_str(&format!("sign_convention = {sc}\n"));
        }
        if let Some(r) = self.copula_r {
            s.push_str(&format!("copula_r = {r}\n"));
        }
        s
    }

    /// Two-column (t, value) export of the stored path; atoms produce a row
    /// for the left limit and one for the post-jump value.
    pub fn path_csv(&self) -> Option<String> {
        let path = self.path.as_ref()?;
        let mut s = String::from("t,value\n");
        for p in &path.points {
            if (p.left - p.right).abs() > 0.0 {
                s.push_str(&format!("{},{}\n", p.t, p.left));
                s.push_str(&format!("{},{}\n", p.t, p.right));
            } else {
                s.push_str(&format!("{},{}\n", p.t, p.right));
            }
        }
        Some(s)
    }
}
