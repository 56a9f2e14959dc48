//! Linear-program model, solving (embedded HiGHS simplex with post-solve
//! verification), deterministic LP-text export, and an external-solver
//! subprocess bridge.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::process::Command;

const UNBOUNDED_OR_INFEASIBLE: &str = "model is unbounded or infeasible";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Clone, Debug)]
struct VarDef {
    name: String,
    free: bool,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    /// Origin tag naming the construction rule that emitted the row.
    pub origin: String,
    pub terms: Vec<(VarId, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// Sparse LP with deterministic (insertion) variable and constraint order.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    vars: Vec<VarDef>,
    by_name: HashMap<String, usize>,
    constraints: Vec<Constraint>,
    sense: Sense,
    objective: Vec<(VarId, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Optimal,
    Unbounded,
    Infeasible,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: Status,
    /// Objective value; meaningful only when optimal.
    pub objective: f64,
    /// Variable assignment in declaration order; present iff optimal.
    pub assignment: Option<Vec<f64>>,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    fn failed(msg: impl Into<String>) -> Self {
        SolveOutcome { status: Status::Failed(msg.into()), objective: f64::NAN, assignment: None }
    }
}

/// How LPs get solved downstream (CLI `--solver`).
#[derive(Clone, Debug, Default, PartialEq)]
pub enum SolverChoice {
    #[default]
    Internal,
    /// Subprocess command template; `{file}` is replaced by the LP file path.
    External(String),
}

impl Default for LinearProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl LinearProgram {
    pub fn new() -> Self {
        LinearProgram {
            vars: Vec::new(),
            by_name: HashMap::new(),
            constraints: Vec::new(),
            sense: Sense::Max,
            objective: Vec::new(),
        }
    }

    /// Declare a variable with lower bound 0 (or free). Names must be unique.
    pub fn add_var(&mut self, name: impl Into<String>, free: bool) -> VarId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate LP variable name {name}"
        );
        let id = VarId(self.vars.len());
        self.by_name.insert(name.clone(), id.0);
        self.vars.push(VarDef { name, free });
        id
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).map(|&i| VarId(i))
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> (&[(VarId, f64)], Sense) {
        (&self.objective, self.sense)
    }

    /// Add a constraint; duplicate variable terms are coalesced.
    pub fn add_constraint(
        &mut self,
        origin: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        rel: Rel,
        rhs: f64,
    ) {
        for &(v, c) in &terms {
            assert!(v.0 < self.vars.len(), "constraint references undeclared variable");
            assert!(c.is_finite(), "non-finite coefficient");
        }
        assert!(rhs.is_finite(), "non-finite rhs");
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some((_, acc)) => *acc += c,
                None => merged.push((v, c)),
            }
        }
        self.constraints.push(Constraint { origin: origin.into(), terms: merged, rel, rhs });
    }

    pub fn set_objective(&mut self, sense: Sense, terms: Vec<(VarId, f64)>) {
        self.sense = sense;
        self.objective = terms;
    }

    pub fn objective_value(&self, assignment: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * assignment[v.0]).sum()
    }

    /// Largest row residual, each scaled by the row's coefficient magnitude
    /// (constraint rows mix bits ~1e3 and bit-rates ~1e7, so raw residuals
    /// are meaningful only relative to the row scale).
    pub fn max_violation(&self, assignment: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, k)| k * assignment[v.0]).sum();
            let scale = c
                .terms
                .iter()
                .map(|&(v, k)| (k * assignment[v.0]).abs())
                .fold(c.rhs.abs().max(1.0), f64::max);
            let raw = match c.rel {
                Rel::Le => lhs - c.rhs,
                Rel::Ge => c.rhs - lhs,
                Rel::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(raw / scale);
        }
        worst
    }

    /// Solve with the chosen backend.
    pub fn solve_with(&self, solver: &SolverChoice) -> SolveOutcome {
        match solver {
            SolverChoice::Internal => self.solve(),
            SolverChoice::External(cmd) => self.solve_external(cmd),
        }
    }

    /// Solve with the embedded simplex backend. The returned solution is
    /// verified against the original constraints before being accepted.
    pub fn solve(&self) -> SolveOutcome {
        if self.vars.is_empty() {
            return SolveOutcome {
                status: Status::Optimal,
                objective: 0.0,
                assignment: Some(Vec::new()),
            };
        }
        match self.solve_highs(false) {
            // The presolver can report "unbounded or infeasible" without
            // deciding which; re-solving with a zero objective settles it
            // (a zero objective cannot be unbounded).
            SolveOutcome { status: Status::Failed(msg), .. }
                if msg == UNBOUNDED_OR_INFEASIBLE =>
            {
                match self.solve_highs(true).status {
                    Status::Optimal => SolveOutcome {
                        status: Status::Unbounded,
                        objective: f64::INFINITY,
                        assignment: None,
                    },
                    Status::Infeasible => SolveOutcome {
                        status: Status::Infeasible,
                        objective: f64::NAN,
                        assignment: None,
                    },
                    other => SolveOutcome::failed(format!(
                        "unbounded-or-infeasible disambiguation returned {other:?}"
                    )),
                }
            }
            out => out,
        }
    }

    fn solve_highs(&self, zero_objective: bool) -> SolveOutcome {
        use highs::{HighsModelStatus, RowProblem};

        let mut obj = vec![0.0f64; self.vars.len()];
        if !zero_objective {
            for &(v, k) in &self.objective {
                obj[v.0] += k;
            }
        }
        let mut pb = RowProblem::default();
        let cols: Vec<highs::Col> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.free {
                    pb.add_column(obj[i], f64::NEG_INFINITY..f64::INFINITY)
                } else {
                    pb.add_column(obj[i], 0.0..f64::INFINITY)
                }
            })
            .collect();
        for c in &self.constraints {
            let terms: Vec<(highs::Col, f64)> =
                c.terms.iter().map(|&(v, k)| (cols[v.0], k)).collect();
            match c.rel {
                Rel::Le => pb.add_row(..=c.rhs, &terms),
                Rel::Ge => pb.add_row(c.rhs.., &terms),
                Rel::Eq => pb.add_row(c.rhs..=c.rhs, &terms),
            }
        }
        let sense = match self.sense {
            Sense::Max => highs::Sense::Maximise,
            Sense::Min => highs::Sense::Minimise,
        };
        let mut model = pb.optimise(sense);
        model.make_quiet();
        model.set_option("threads", 1);
        let solved = model.solve();
        match solved.status() {
            HighsModelStatus::Optimal => {
                let assignment = solved.get_solution().columns().to_vec();
                if assignment.iter().any(|x| !x.is_finite()) {
                    return SolveOutcome::failed("solver returned a non-finite solution");
                }
                let violation = self.max_violation(&assignment);
                if violation > 1e-6 {
                    return SolveOutcome::failed(format!(
                        "solution failed post-solve verification (violation {violation:.3e})"
                    ));
                }
                SolveOutcome {
                    status: Status::Optimal,
                    objective: self.objective_value(&assignment),
                    assignment: Some(assignment),
                }
            }
            HighsModelStatus::Infeasible => SolveOutcome {
                status: Status::Infeasible,
                objective: f64::NAN,
                assignment: None,
            },
            HighsModelStatus::Unbounded => SolveOutcome {
                status: Status::Unbounded,
                objective: f64::INFINITY,
                assignment: None,
            },
            HighsModelStatus::UnboundedOrInfeasible => {
                SolveOutcome::failed(UNBOUNDED_OR_INFEASIBLE)
            }
            other => SolveOutcome::failed(format!("solver terminated with status {other:?}")),
        }
    }

    /// Deterministic LP-format text (lp_solve syntax): objective, one named
    /// constraint per line with its origin tag as a comment, free-variable
    /// declarations.
    pub fn export_lp_text(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Max => "max",
            Sense::Min => "min",
        };
        write!(out, "{sense}:").unwrap();
        for &(v, k) in &self.objective {
            write!(out, " {}{} {}", sign(k), fmt_num(k.abs()), self.vars[v.0].name).unwrap();
        }
        out.push_str(";\n");
        let mut last_origin = "";
        for (i, c) in self.constraints.iter().enumerate() {
            if c.origin != last_origin {
                writeln!(out, "\n/* {} */", c.origin).unwrap();
                last_origin = &c.origin;
            }
            write!(out, "c{}:", i + 1).unwrap();
            for &(v, k) in &c.terms {
                write!(out, " {}{} {}", sign(k), fmt_num(k.abs()), self.vars[v.0].name).unwrap();
            }
            let rel = match c.rel {
                Rel::Le => "<=",
                Rel::Eq => "=",
                Rel::Ge => ">=",
            };
            writeln!(out, " {rel} {};", fmt_num(c.rhs)).unwrap();
        }
        let free: Vec<&str> =
            self.vars.iter().filter(|v| v.free).map(|v| v.name.as_str()).collect();
        if !free.is_empty() {
            writeln!(out, "\nfree {};", free.join(", ")).unwrap();
        }
        out
    }

    /// Write the LP to a temp file, run the external solver command and parse
    /// its stdout. `{file}` in the template is replaced by the LP file path
    /// (appended if absent). Accepted output: an objective line
    /// (`objective[:] VALUE` or lp_solve's `Value of objective function:
    /// VALUE`), `UNBOUNDED`/`INFEASIBLE` markers, and `name value` pairs.
    pub fn solve_external(&self, command_template: &str) -> SolveOutcome {
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return SolveOutcome::failed(format!("tempdir: {e}")),
        };
        let path = dir.path().join("problem.lp");
        let text = self.export_lp_text();
        if let Err(e) = std::fs::File::create(&path).and_then(|mut f| f.write_all(text.as_bytes()))
        {
            return SolveOutcome::failed(format!("write LP file: {e}"));
        }
        let path_str = path.to_string_lossy();
        let cmd = if command_template.contains("{file}") {
            command_template.replace("{file}", &path_str)
        } else {
            format!("{command_template} {path_str}")
        };
        let output = match Command::new("sh").arg("-c").arg(&cmd).output() {
            Ok(o) => o,
            Err(e) => return SolveOutcome::failed(format!("spawn `{cmd}`: {e}")),
        };
        let stdout = String::from_utf8_lossy(&output.stdout);
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return SolveOutcome::failed(format!(
                "external solver exited with {}: {}",
                output.status,
                stderr.trim()
            ));
        }
        self.parse_external_output(&stdout)
    }

    fn parse_external_output(&self, stdout: &str) -> SolveOutcome {
        let mut objective = None;
        let mut assignment = vec![0.0f64; self.vars.len()];
        let mut seen = vec![false; self.vars.len()];
        for line in stdout.lines() {
            let line = line.trim();
            let lower = line.to_ascii_lowercase();
            if lower.contains("unbounded") {
                return SolveOutcome {
                    status: Status::Unbounded,
                    objective: f64::INFINITY,
                    assignment: None,
                };
            }
            if lower.contains("infeasible") {
                return SolveOutcome {
                    status: Status::Infeasible,
                    objective: f64::NAN,
                    assignment: None,
                };
            }
            if let Some(rest) = lower
                .strip_prefix("value of objective function:")
                .or_else(|| lower.strip_prefix("objective:"))
                .or_else(|| lower.strip_prefix("objective"))
            {
                if let Ok(v) = rest.trim().parse::<f64>() {
                    objective = Some(v);
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            if let (Some(name), Some(val), None) = (parts.next(), parts.next(), parts.next()) {
                if let (Some(id), Ok(v)) = (self.by_name.get(name), val.parse::<f64>()) {
                    assignment[*id] = v;
                    seen[*id] = true;
                }
            }
        }
        let objective = match objective {
            Some(v) => v,
            None => return SolveOutcome::failed("external solver output had no objective line"),
        };
        if seen.iter().any(|&s| s) {
            let violation = self.max_violation(&assignment);
            if violation > 1e-5 {
                return SolveOutcome::failed(format!(
                    "external solution failed verification (violation {violation:.3e})"
                ));
            }
            SolveOutcome { status: Status::Optimal, objective, assignment: Some(assignment) }
        } else {
            SolveOutcome { status: Status::Optimal, objective, assignment: None }
        }
    }
}

fn sign(k: f64) -> char {
    if k < 0.0 {
        '-'
    } else {
        '+'
    }
}

/// Shortest round-trip decimal formatting (deterministic exports).
fn fmt_num(v: f64) -> String {
    format!("{v}")
}
