use serde::Serialize;
use serde_json::Value;

/// How a measured value is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "<")]
    Below,
}

impl Relation {
    pub fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Above => value > threshold,
            Relation::Below => value < threshold,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Below => "<",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: usize,
    pub name: String,
    /// Non-finite values (an exact order fit, say) serialize as `null`.
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
    pub wall_seconds: f64,
    pub detail: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckResult {
    /// One line for terminals and test logs.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let value = if self.value.is_finite() {
            format!("{:.4e}", self.value)
        } else if self.value == f64::INFINITY {
            "exact".to_string()
        } else {
            "n/a".to_string()
        };
        match &self.error {
            Some(e) => format!("[{verdict}] {:>2} {:<26} error: {e}", self.id, self.name),
            None => format!(
                "[{verdict}] {:>2} {:<26} {value} {} {:.4e}  ({:.1} s)",
                self.id,
                self.name,
                self.relation.symbol(),
                self.threshold,
                self.wall_seconds
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub version: String,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<String>,
    pub config: String,
}

impl RunReport {
    pub fn new(
        scenario: &str,
        config: String,
        checks: Vec<CheckResult>,
        artifacts: Vec<String>,
    ) -> Self {
        Self {
            scenario: scenario.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            artifacts,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(pass: bool, value: f64) -> CheckResult {
        CheckResult {
            id: 1,
            name: "x".into(),
            value,
            threshold: 1.0,
            relation: Relation::AtMost,
            pass,
            wall_seconds: 0.0,
            detail: Value::Null,
            error: None,
        }
    }

    #[test]
    fn pass_is_conjunction() {
        assert!(RunReport::new("s", String::new(), vec![result(true, 0.5)], vec![]).pass);
        assert!(
            !RunReport::new(
                "s",
                String::new(),
                vec![result(true, 0.5), result(false, 2.0)],
                vec![]
            )
            .pass
        );
        assert!(RunReport::new("s", String::new(), vec![], vec![]).pass);
    }

    #[test]
    fn infinite_values_serialize_as_null() {
        let json = RunReport::new(
            "s",
            String::new(),
            vec![result(true, f64::INFINITY)],
            vec![],
        )
        .to_json();
        assert!(json.contains("\"value\": null"));
        assert!(json.contains("\"relation\": \"<=\""));
        assert!(result(true, f64::INFINITY).summary_line().contains("exact"));
    }
}
