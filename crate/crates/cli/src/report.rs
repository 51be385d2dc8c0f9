use serde::Serialize;

/// One estimate-vs-oracle comparison with its pass threshold.
#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub oracle: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Pass iff |estimate - oracle| <= tolerance.
    pub fn near(name: &str, estimate: f64, std_error: f64, oracle: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            estimate,
            std_error,
            oracle,
            tolerance,
            pass: (estimate - oracle).abs() <= tolerance,
        }
    }

    /// Pass iff estimate >= lower.
    pub fn at_least(name: &str, estimate: f64, lower: f64) -> Self {
        Self {
            name: name.into(),
            estimate,
            std_error: 0.0,
            oracle: lower,
            tolerance: 0.0,
            pass: estimate >= lower,
        }
    }

    /// Pass iff estimate <= upper.
    pub fn at_most(name: &str, estimate: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            estimate,
            std_error: 0.0,
            oracle: upper,
            tolerance: 0.0,
            pass: estimate <= upper,
        }
    }
}

#[derive(Serialize)]
pub struct Report {
    pub command: String,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: &str, config: impl Serialize, checks: Vec<Check>, artifacts: Vec<String>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            command: command.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            checks,
            artifacts,
            pass,
        }
    }

    pub fn pass(&self) -> bool {
        self.pass
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {}: estimate={:.9} oracle={:.9} std_error={:.3e} tolerance={:.3e}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.estimate,
                c.oracle,
                c.std_error,
                c.tolerance,
            ));
        }
        for a in &self.artifacts {
            s.push_str(&format!("wrote {a}\n"));
        }
        s.push_str(&format!("{}: {}\n", self.command, if self.pass { "PASS" } else { "FAIL" }));
        s
    }
}
