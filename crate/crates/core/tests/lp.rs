use netcalc_core::lp::{LinearProgram, Rel, Sense, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn small_known_optimum() {
    // max x + y s.t. x <= 1, y <= 2, x + y >= 0.5 -> 3 at (1, 2).
    let mut lp = LinearProgram::new();
    let x = lp.add_var("x", false);
    let y = lp.add_var("y", false);
    lp.add_constraint("a", vec![(x, 1.0)], Rel::Le, 1.0);
    lp.add_constraint("b", vec![(y, 1.0)], Rel::Le, 2.0);
    lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Rel::Ge, 0.5);
    lp.set_objective(Sense::Max, vec![(x, 1.0), (y, 1.0)]);
    let out = lp.solve();
    assert_eq!(out.status, Status::Optimal);
    assert!((out.objective - 3.0).abs() < 1e-9);
    let asg = out.assignment.unwrap();
    assert!((asg[x.0] - 1.0).abs() < 1e-9 && (asg[y.0] - 2.0).abs() < 1e-9);
}

#[test]
fn equality_and_free_variables() {
    // max x + 2y s.t. x + y = 4, x - y <= 1, y <= 3 -> (1, 3) -> 7.
    let mut lp = LinearProgram::new();
    let x = lp.add_var("x", true);
    let y = lp.add_var("y", false);
    lp.add_constraint("e", vec![(x, 1.0), (y, 1.0)], Rel::Eq, 4.0);
    lp.add_constraint("d", vec![(x, 1.0), (y, -1.0)], Rel::Le, 1.0);
    lp.add_constraint("c", vec![(y, 1.0)], Rel::Le, 3.0);
    lp.set_objective(Sense::Max, vec![(x, 1.0), (y, 2.0)]);
    let out = lp.solve();
    assert_eq!(out.status, Status::Optimal);
    assert!((out.objective - 7.0).abs() < 1e-9);
}

#[test]
fn badly_scaled_coefficients() {
    // max d s.t. 1e7 d <= 5e3 with d free -> 5e-4.
    let mut lp = LinearProgram::new();
    let d = lp.add_var("d", true);
    lp.add_constraint("s", vec![(d, 1e7)], Rel::Le, 5e3);
    lp.set_objective(Sense::Max, vec![(d, 1.0)]);
    let out = lp.solve();
    assert_eq!(out.status, Status::Optimal);
    assert!((out.objective - 5e-4).abs() < 1e-12);
}

#[test]
fn detects_unbounded() {
    let mut lp = LinearProgram::new();
    let x = lp.add_var("x", false);
    lp.add_constraint("lo", vec![(x, 1.0)], Rel::Ge, 1.0);
    lp.set_objective(Sense::Max, vec![(x, 1.0)]);
    let out = lp.solve();
    assert_eq!(out.status, Status::Unbounded);
    assert_eq!(out.objective, f64::INFINITY);
}

#[test]
fn detects_infeasible() {
    let mut lp = LinearProgram::new();
    let x = lp.add_var("x", false);
    lp.add_constraint("u", vec![(x, 1.0)], Rel::Le, 1.0);
    lp.add_constraint("l", vec![(x, 1.0)], Rel::Ge, 2.0);
    lp.set_objective(Sense::Max, vec![(x, 1.0)]);
    assert_eq!(lp.solve().status, Status::Infeasible);
}

#[test]
fn empty_program_is_trivially_optimal() {
    let lp = LinearProgram::new();
    let out = lp.solve();
    assert_eq!(out.status, Status::Optimal);
    assert_eq!(out.objective, 0.0);
}

#[test]
fn export_text_is_deterministic() {
    let mut lp = LinearProgram::new();
    let t0 = lp.add_var("t0", true);
    let t1 = lp.add_var("t1", true);
    let a = lp.add_var("a", false);
    lp.add_constraint("time", vec![(t1, 1.0), (t0, -1.0)], Rel::Le, 0.0);
    lp.add_constraint("time", vec![(t1, 1.0)], Rel::Ge, -0.5);
    lp.add_constraint("arrival", vec![(a, 1.0), (t1, -2.5)], Rel::Le, 1000.0);
    lp.add_constraint("service", vec![(a, 1.0)], Rel::Eq, 42.0);
    lp.set_objective(Sense::Max, vec![(t0, 1.0), (t1, -1.0)]);
    let expected = "max: +1 t0 -1 t1;\n\n\
        /* time */\n\
        c1: +1 t1 -1 t0 <= 0;\n\
        c2: +1 t1 >= -0.5;\n\n\
        /* arrival */\n\
        c3: +1 a -2.5 t1 <= 1000;\n\n\
        /* service */\n\
        c4: +1 a = 42;\n\n\
        free t0, t1;\n";
    assert_eq!(lp.export_lp_text(), expected);
    assert_eq!(lp.export_lp_text(), lp.export_lp_text());
}

fn two_var_lp() -> LinearProgram {
    // max x + y s.t. x <= 1, y <= 2 -> 3.
    let mut lp = LinearProgram::new();
    let x = lp.add_var("x", false);
    let y = lp.add_var("y", false);
    lp.add_constraint("a", vec![(x, 1.0)], Rel::Le, 1.0);
    lp.add_constraint("b", vec![(y, 1.0)], Rel::Le, 2.0);
    lp.set_objective(Sense::Max, vec![(x, 1.0), (y, 1.0)]);
    lp
}

#[test]
fn external_solver_objective_and_assignment() {
    let lp = two_var_lp();
    // The template sees the written LP file via {file}; verify it is passed
    // through and non-empty, then answer with a full solution.
    let out = lp.solve_external("test -s {file} && printf 'objective: 3\\nx 1\\ny 2\\n'");
    assert_eq!(out.status, Status::Optimal);
    assert_eq!(out.objective, 3.0);
    assert_eq!(out.assignment, Some(vec![1.0, 2.0]));
}

#[test]
fn external_solver_lp_solve_style_output() {
    let lp = two_var_lp();
    let out = lp.solve_external("printf 'Value of objective function: 3.0\\n' # {file}");
    assert_eq!(out.status, Status::Optimal);
    assert_eq!(out.objective, 3.0);
    assert!(out.assignment.is_none());
}

#[test]
fn external_solver_status_markers() {
    let lp = two_var_lp();
    assert_eq!(lp.solve_external("echo 'This problem is unbounded' # {file}").status, Status::Unbounded);
    assert_eq!(lp.solve_external("echo 'This problem is infeasible' # {file}").status, Status::Infeasible);
}

#[test]
fn external_solver_rejects_bad_output() {
    let lp = two_var_lp();
    // No objective line at all.
    assert!(matches!(lp.solve_external("echo hello # {file}").status, Status::Failed(_)));
    // Claimed solution violating the constraints.
    let out = lp.solve_external("printf 'objective: 9\\nx 5\\ny 4\\n' # {file}");
    assert!(matches!(out.status, Status::Failed(ref m) if m.contains("verification")));
    // Non-zero exit status.
    assert!(matches!(lp.solve_external("false # {file}").status, Status::Failed(_)));
}

// Brute-force oracle: enumerate candidate vertices (intersections of n active
// hyperplanes drawn from the constraints and the x >= 0 bounds), keep the
// feasible ones and return the best objective.
struct Oracle {
    rows: Vec<(Vec<f64>, Rel, f64)>,
    free: Vec<bool>,
    obj: Vec<f64>,
}

impl Oracle {
    fn feasible(&self, x: &[f64]) -> bool {
        let tol = 1e-7;
        for (i, &f) in self.free.iter().enumerate() {
            if !f && x[i] < -tol {
                return false;
            }
        }
        self.rows.iter().all(|(a, rel, rhs)| {
            let lhs: f64 = a.iter().zip(x).map(|(k, v)| k * v).sum();
            let scale = rhs.abs().max(1.0);
            match rel {
                Rel::Le => lhs <= rhs + tol * scale,
                Rel::Ge => lhs >= rhs - tol * scale,
                Rel::Eq => (lhs - rhs).abs() <= tol * scale,
            }
        })
    }

    fn best(&self) -> Option<f64> {
        let n = self.obj.len();
        let mut planes: Vec<(Vec<f64>, f64)> =
            self.rows.iter().map(|(a, _, rhs)| (a.clone(), *rhs)).collect();
        for (i, &f) in self.free.iter().enumerate() {
            if !f {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                planes.push((e, 0.0));
            }
        }
        let mut best: Option<f64> = None;
        let mut pick = vec![0usize; n];
        self.visit(&planes, &mut pick, 0, 0, &mut best);
        best
    }

    fn visit(
        &self,
        planes: &[(Vec<f64>, f64)],
        pick: &mut [usize],
        depth: usize,
        start: usize,
        best: &mut Option<f64>,
    ) {
        let n = self.obj.len();
        if depth == n {
            if let Some(x) = solve_square(planes, pick) {
                if self.feasible(&x) {
                    let v: f64 = self.obj.iter().zip(&x).map(|(k, xi)| k * xi).sum();
                    *best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            return;
        }
        for i in start..planes.len() {
            pick[depth] = i;
            self.visit(planes, pick, depth + 1, i + 1, best);
        }
    }
}

/// Solve the square system given by the picked planes (Gaussian elimination
/// with partial pivoting); `None` when singular.
fn solve_square(planes: &[(Vec<f64>, f64)], pick: &[usize]) -> Option<Vec<f64>> {
    let n = pick.len();
    let mut m: Vec<Vec<f64>> = pick
        .iter()
        .map(|&i| {
            let (a, rhs) = &planes[i];
            let mut row = a.clone();
            row.push(*rhs);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-9 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let k = m[r][col] / m[col][col];
                for c in col..=n {
                    let v = m[col][c];
                    m[r][c] -= k * v;
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..500 {
        let n = rng.gen_range(1..=3);
        let free: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let x0: Vec<f64> = free
            .iter()
            .map(|&f| if f { rng.gen_range(-5.0..5.0) } else { rng.gen_range(0.0..5.0) })
            .collect();
        let mut rows: Vec<(Vec<f64>, Rel, f64)> = Vec::new();
        for _ in 0..rng.gen_range(1..=5) {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if a.iter().all(|k| k.abs() < 1e-3) {
                continue;
            }
            let at_x0: f64 = a.iter().zip(&x0).map(|(k, v)| k * v).sum();
            let (rel, rhs) = match rng.gen_range(0..10) {
                0..5 => (Rel::Le, at_x0 + rng.gen_range(0.0..3.0)),
                5..8 => (Rel::Ge, at_x0 - rng.gen_range(0.0..3.0)),
                _ => (Rel::Eq, at_x0),
            };
            rows.push((a, rel, rhs));
        }
        // Box rows keep the program bounded in every direction.
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            rows.push((e.clone(), Rel::Le, x0[i] + 10.0));
            if free[i] {
                rows.push((e, Rel::Ge, x0[i] - 10.0));
            }
        }
        let obj: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut lp = LinearProgram::new();
        let vars: Vec<_> = (0..n).map(|i| lp.add_var(format!("v{i}"), free[i])).collect();
        for (a, rel, rhs) in &rows {
            let terms: Vec<_> =
                vars.iter().zip(a).filter(|(_, k)| **k != 0.0).map(|(&v, &k)| (v, k)).collect();
            lp.add_constraint("rand", terms, *rel, *rhs);
        }
        lp.set_objective(Sense::Max, vars.iter().zip(&obj).map(|(&v, &k)| (v, k)).collect());
        let out = lp.solve();
        assert_eq!(out.status, Status::Optimal, "case {case} not optimal");

        let oracle = Oracle { rows, free, obj };
        let want = oracle.best().expect("oracle found no feasible vertex");
        assert!(
            (out.objective - want).abs() <= 1e-7 * want.abs().max(1.0),
            "case {case}: solver {} vs oracle {want}",
            out.objective
        );
    }
}
