mod common;

use common::*;
use gss_core::io::*;
use gss_core::robust::{assemble_qp, synthesize, Certification, DisturbanceSet};
use gss_core::CoreError;
use gss_qp::{SolverSettings, SolverStatus};
use nalgebra::DMatrix;

const PROBLEM: &str = r#"
format = "gss-problem"
version = 1
horizon = 3
x0 = [1.0, -0.5]

[system]
a = [[1.0, 0.1], [0.0, 1.0]]
b = [[0.0], [0.1]]
c = [[1.0, 0.0], [0.0, 1.0]]

[constraints]
u = [[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
v = [[0.0], [0.0], [1.0], [-1.0]]
b = [3.0, 3.0, 5.0, 5.0]
r = [[1.0, 0.0], [-1.0, 0.0]]
z = [3.0, 3.0]

[information]
block = [[1, 1]]

[disturbance]
kind = "box"
half_width = [0.05, 0.05]

[cost]
state_weight = [1.0, 0.1]
terminal_state_weight = [5.0, 1.0]
input_weight = [0.01]
"#;

fn with(old: &str, new: &str) -> String {
    assert!(PROBLEM.contains(old), "{old}");
    PROBLEM.replacen(old, new, 1)
}

#[test]
fn problem_parses_and_solves() {
    let p = parse_problem(PROBLEM).unwrap();
    assert_eq!(p.horizon(), 3);
    assert_eq!((p.sys.m(), p.sys.p()), (1, 2));
    assert_eq!(p.sys.d, DMatrix::identity(2, 2));
    assert_eq!(p.cost.state_weights[3][0], 5.0);
    assert_eq!(p.cost.state_weights[2][0], 1.0);
    assert_eq!(p.y_rule, YRule::Ymax);
    assert_eq!(p.certification, Certification::Required);
    let ss = p.stacked().unwrap();
    let spec = p.spec(&ss).unwrap();
    let r = synthesize(
        &ss,
        &spec,
        &p.cost,
        &p.dist,
        p.certification,
        &SolverSettings::default(),
    )
    .unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);

    let file = ControllerFile::from_result(&ss, &r);
    let back = ControllerFile::parse(&file.to_toml()).unwrap();
    assert_eq!(back.l_matrix().unwrap(), r.l);
    assert_eq!(back.q_matrix().unwrap(), r.q);
    assert_eq!(back.g_vector(), r.g);
    assert_eq!(back.objective, r.objective);
    assert_eq!(back.status, "optimal");
}

#[test]
fn polytope_and_synthesis_sections() {
    let text = with(
        "kind = \"box\"\nhalf_width = [0.05, 0.05]",
        "kind = \"polytope\"\nm = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]\nh = [0.1, 0.1, 0.1, 0.1]",
    ) + "\n[synthesis]\nt_block = [[0, 1]]\ny_rule = \"t-delta\"\ncertification = \"override\"\n";
    let p = parse_problem(&text).unwrap();
    assert!(matches!(p.dist, DisturbanceSet::Polytope { .. }));
    assert_eq!(p.y_rule, YRule::TDelta);
    assert_eq!(p.certification, Certification::Override);
    let ss = p.stacked().unwrap();
    let t = p.t_pattern(&ss).unwrap();
    assert!(t.ones_positions().all(|(_, j)| j % 2 == 1));
}

#[test]
fn diagnostics_name_the_line_or_field() {
    let line = |text: &str| match parse_problem(text) {
        Err(CoreError::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    };
    assert_eq!(line(&with("horizon = 3", "horizon = three")), 4);
    assert_eq!(line(&with("[cost]", "[cost]\nbogus = 1")), 27);

    let msg = |text: &str| parse_problem(text).unwrap_err().to_string();
    assert!(msg(&with(
        "a = [[1.0, 0.1], [0.0, 1.0]]",
        "a = [[1.0, 0.1], [0.0]]"
    ))
    .contains("system.a"));
    assert!(msg(&with("x0 = [1.0, -0.5]", "x0 = [1.0]")).contains("x0"));
    assert!(msg(&with("version = 1", "version = 2")).contains("version"));
    assert!(
        msg(&with("input_weight = [0.01]", "input_weight = [0.01, 1.0]"))
            .contains("cost.input_weights")
    );
    let unknown_rule = PROBLEM.to_string() + "\n[synthesis]\ny_rule = \"biggest\"\n";
    assert!(msg(&unknown_rule).contains("synthesis.y_rule"));
}

#[test]
fn real_matrix_round_trip() {
    let mut rng = rng(90);
    for (r, c) in [(1, 1), (3, 2), (0, 4), (5, 5)] {
        let m = random_matrix(&mut rng, r, c) * 1e3;
        let back = parse_real_matrix(&format_real_matrix(&m)).unwrap();
        assert_eq!(back.shape(), (r, c));
        assert!((back - &m).amax() <= 1e-8 * (1.0 + m.amax()));
    }
    let m = parse_real_matrix("# comment\n2 2\n1 2 # trailing\n\n3 4\n").unwrap();
    assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    match parse_real_matrix("2 2\n1 2\n3 x\n") {
        Err(CoreError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(parse_real_matrix("2 2\n1 2\n").is_err());
}

#[test]
fn controller_file_checks_shapes() {
    let p = parse_problem(PROBLEM).unwrap();
    let ss = p.stacked().unwrap();
    let spec = p.spec(&ss).unwrap();
    let r = synthesize(
        &ss,
        &spec,
        &p.cost,
        &p.dist,
        p.certification,
        &SolverSettings::default(),
    )
    .unwrap();
    let mut file = ControllerFile::from_result(&ss, &r);
    file.g.pop();
    assert!(ControllerFile::parse(&file.to_toml()).is_err());
    let text = ControllerFile::from_result(&ss, &r)
        .to_toml()
        .replace("gss-controller", "other");
    assert!(ControllerFile::parse(&text)
        .unwrap_err()
        .to_string()
        .contains("format"));
}

#[test]
fn qp_export_lists_every_block() {
    let p = parse_problem(PROBLEM).unwrap();
    let ss = p.stacked().unwrap();
    let spec = p.spec(&ss).unwrap();
    let problem = assemble_qp(&ss, &spec, &p.cost, &p.dist, Certification::Required).unwrap();
    let text = export_qp(&problem);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# gss-qp-export v1");
    let qp = &problem.qp;
    assert_eq!(
        lines[2],
        format!(
            "vars {} eq {} ineq {}",
            qp.num_vars(),
            qp.num_eq(),
            qp.num_ineq()
        )
    );
    let count = |name: &str| {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(&format!("{name} ")))
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap()
    };
    assert_eq!(count("P"), qp.hessian.nnz());
    assert_eq!(count("Ain"), qp.ineq_matrix.nnz());
    assert_eq!(count("bin"), qp.num_ineq());
    let expected = 5
        + 3
        + qp.hessian.nnz()
        + qp.eq_matrix.nnz()
        + qp.ineq_matrix.nnz()
        + 3
        + qp.num_vars()
        + qp.num_eq()
        + qp.num_ineq();
    assert_eq!(lines.len(), expected);
}
