use std::sync::OnceLock;

use gaitforge::bayesopt::{cbo_run, cycle_schedule, AcqOptions, BoConfig, History, Record};
use gaitforge::cpg::gait_from_name;
use gaitforge::primitives::{
    build_primitive_model, execute_plan, plan_path, predict_displacement, solve_primitive, Path, PlanError,
    PlanOptions, PlanStep, PrimitiveError, PrimitiveModel, MIN_RECORDS,
};
use gaitforge::sim::{segment_collides, Context, Maze, Pose, Segment, SimConfig, Simulator};
use gaitforge::tasks::{control_space, curve_context_space, curve_targets, Task, CURVE_DURATION};

const OBS_NOISE: f64 = 0.2;

fn task() -> Task {
    Task::new(
        Simulator::new(SimConfig::default().with_noise(true)),
        gait_from_name("tripod").unwrap(),
        CURVE_DURATION,
    )
}

/// A short curve-task run plus two zero-amplitude trials.
fn history() -> &'static History {
    static H: OnceLock<History> = OnceLock::new();
    H.get_or_init(|| {
        let t = task();
        let cfg = BoConfig {
            acquisition: AcqOptions {
                n_candidates: 500,
                ..AcqOptions::default()
            },
            ..BoConfig::with_budget(80, 5, 11)
        };
        let schedule = cycle_schedule(&curve_targets(), 75);
        let mut h = cbo_run(
            |th, c, s| t.curve(th, c, s),
            &control_space(),
            &curve_context_space(),
            &schedule,
            &cfg,
        )
        .unwrap();
        for (k, omega) in [10.0, 30.0].into_iter().enumerate() {
            let theta = vec![omega, 1.0, 0.0, 0.0];
            let ev = t.curve(&theta, &[6.0, 0.0], 900 + k as u64).unwrap();
            h.push(Record {
                iter: 0,
                seed: 900 + k as u64,
                context: vec![6.0, 0.0],
                theta,
                objectives: ev.objectives,
                meta: ev.meta,
            });
        }
        h
    })
}

fn model() -> &'static PrimitiveModel {
    static M: OnceLock<PrimitiveModel> = OnceLock::new();
    M.get_or_init(|| {
        build_primitive_model(
            history(),
            &control_space(),
            gait_from_name("tripod").unwrap(),
            CURVE_DURATION,
            3,
            0,
        )
        .unwrap()
    })
}

fn open_maze(goal: [f64; 2], tol: f64) -> Maze {
    Maze::new(vec![], Pose::default(), goal, tol, vec![]).unwrap()
}

#[test]
fn null_trial_predicts_no_motion() {
    let p = predict_displacement(model(), &[10.0, 1.0, 0.0, 0.0]).unwrap();
    for v in [p.dx, p.dy] {
        assert!(v.abs() < 3.0 * OBS_NOISE, "{p:?}");
    }
    assert!(p.dpsi.abs() < 1e-2, "{p:?}");
}

#[test]
fn training_inputs_are_reproduced() {
    let m = model();
    let recs = history().records();
    let mut worst: f64 = 0.0;
    for r in recs.iter().step_by(7) {
        let p = m.predict(&r.theta).unwrap();
        let (ox, oy) = (r.meta["dx"], r.meta["dy"]);
        let tol = 3.0 * (p.var_dx.max(p.var_dy).sqrt() + OBS_NOISE);
        assert!(
            (p.dx - ox).abs() < tol && (p.dy - oy).abs() < tol,
            "{p:?} vs ({ox}, {oy})"
        );
        worst = worst.max((p.dx - ox).hypot(p.dy - oy));
    }
    assert!(worst < 3.0, "{worst}");
}

#[test]
fn far_queries_revert_to_the_prior() {
    let m = model();
    let p = m.predict(&[500.0, 40.0, 30.0, -30.0]).unwrap();
    assert!(p.extrapolated);
    let prior_x = m.components()[0].hyperparams().signal_variance * m.components()[0].dataset().y_std.powi(2);
    assert!((p.var_dx - prior_x).abs() < 1e-3 * prior_x, "{} vs {prior_x}", p.var_dx);
    assert!(matches!(
        m.predict(&[1.0, 2.0]),
        Err(PrimitiveError::DimensionMismatch { .. })
    ));
}

#[test]
fn too_few_records_or_missing_meta_are_rejected() {
    let src = history();
    let rebuilt = |n: usize, edit: &dyn Fn(usize, &mut Record)| {
        let mut h = History::new(
            src.theta_names.clone(),
            src.context_names.clone(),
            src.objective_names.clone(),
        );
        for (i, r) in src.records().iter().take(n).enumerate() {
            let mut r = r.clone();
            edit(i, &mut r);
            h.push(r);
        }
        h
    };
    let short = rebuilt(MIN_RECORDS - 1, &|_, _| {});
    let g = gait_from_name("tripod").unwrap();
    assert!(matches!(
        build_primitive_model(&short, &control_space(), g.clone(), 5.0, 1, 0),
        Err(PrimitiveError::TooFewRecords(19))
    ));
    let bare = rebuilt(src.len(), &|i, r| {
        if i == 3 {
            r.meta.remove("dpsi");
        }
    });
    assert!(matches!(
        build_primitive_model(&bare, &control_space(), g, 5.0, 1, 0),
        Err(PrimitiveError::MissingMeta { key: "dpsi", .. })
    ));
}

#[test]
fn solving_is_seeded_and_improves_with_samples() {
    let m = model();
    let target = [4.0, 3.0];
    assert_eq!(solve_primitive(m, target, 2000, 4), solve_primitive(m, target, 2000, 4));
    let miss = |n: usize, seed: u64| {
        m.predict(&solve_primitive(m, target, n, seed))
            .unwrap()
            .expected_miss(target)
    };
    let mut few: Vec<f64> = (0..20).map(|s| miss(100, s)).collect();
    let mut many: Vec<f64> = (0..20).map(|s| miss(10_000, 100 + s)).collect();
    few.sort_by(f64::total_cmp);
    many.sort_by(f64::total_cmp);
    assert!(many[10] <= few[10], "{} vs {}", many[10], few[10]);
}

#[test]
fn solving_for_a_known_displacement_is_no_worse_than_its_source() {
    let m = model();
    let r = &history().records()[40];
    let p = m.predict(&r.theta).unwrap();
    let target = [p.dx, p.dy];
    let own = p.expected_miss(target);
    let found = m
        .predict(&solve_primitive(m, target, 10_000, 2))
        .unwrap()
        .expected_miss(target);
    assert!(found <= own + 1e-9, "{found} vs {own}");
}

#[test]
fn execution_chains_rigid_transforms() {
    let m = model();
    let thetas = [
        history().records()[10].theta.clone(),
        history().records()[20].theta.clone(),
    ];
    let start = Pose::new(3.0, -2.0, 0.4);
    let mut pose = start;
    let steps: Vec<PlanStep> = thetas
        .iter()
        .map(|t| {
            let p = m.predict(t).unwrap();
            pose = pose.compose(p.dx, p.dy, p.dpsi);
            PlanStep {
                theta: t.clone(),
                predicted: p,
                pose,
            }
        })
        .collect();
    let path = Path {
        start,
        goal: [0.0, 0.0],
        steps,
        expected_error: pose.distance_to([0.0, 0.0]),
    };
    let sim = Simulator::new(SimConfig::default().with_noise(true));
    let ex = execute_plan(&path, m, &sim, Context::flat(), 5).unwrap();
    let mut expect = start;
    for s in &ex.steps {
        expect = expect.compose(s.realized[0], s.realized[1], s.realized[2]);
        assert_eq!(s.pose, expect);
    }
    assert_eq!(ex.terminal_error, expect.distance_to([0.0, 0.0]));

    let null = Path::empty(start, [3.0, -2.0]);
    let ex = execute_plan(&null, m, &sim, Context::flat(), 5).unwrap();
    assert_eq!(ex.final_pose(), start);
    assert_eq!(ex.terminal_error, 0.0);
}

#[test]
fn null_step_leaves_the_pose_in_place() {
    let m = model();
    let theta = vec![10.0, 1.0, 0.0, 0.0];
    let start = Pose::new(1.0, 1.0, 0.2);
    let path = Path {
        start,
        goal: [1.0, 1.0],
        steps: vec![PlanStep {
            theta: theta.clone(),
            predicted: m.predict(&theta).unwrap(),
            pose: start,
        }],
        expected_error: 0.0,
    };
    let sim = Simulator::new(SimConfig::default().with_noise(true));
    let end = execute_plan(&path, m, &sim, Context::flat(), 1).unwrap().final_pose();
    assert!((end.x - start.x).abs() < 3.0 * OBS_NOISE && (end.y - start.y).abs() < 3.0 * OBS_NOISE);
    assert_eq!(end.psi, start.psi);
}

#[test]
fn straight_ahead_is_one_step() {
    let maze = open_maze([6.0, 0.0], 1.0);
    let path = plan_path(model(), &maze, &PlanOptions::default(), 0).unwrap();
    assert_eq!(path.steps.len(), 1);
    assert!(path.expected_error < maze.goal_tolerance);
    let noiseless = Simulator::new(SimConfig::noiseless());
    let ex = execute_plan(&path, model(), &noiseless, Context::flat(), 0).unwrap();
    let s = &path.steps[0].predicted;
    let expected_miss = s.expected_miss([6.0, 0.0]);
    assert!(
        ex.terminal_error <= 3.0 * expected_miss,
        "{} vs {expected_miss}",
        ex.terminal_error
    );
}

#[test]
fn wall_across_the_corridor_blocks() {
    let walls = vec![Segment::new([4.0, -200.0], [4.0, 200.0])];
    let maze = Maze::new(walls, Pose::default(), [15.0, 0.0], 1.0, vec![]).unwrap();
    let opts = PlanOptions {
        n_samples: 2000,
        ..PlanOptions::default()
    };
    match plan_path(model(), &maze, &opts, 0) {
        Err(PlanError::Blocked { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected a blocked plan, got {other:?}"),
    }
}

#[test]
fn dogleg_plans_never_cross_walls() {
    let walls = vec![Segment::new([8.0, -20.0], [8.0, 3.0])];
    let maze = Maze::new(walls, Pose::default(), [16.0, 0.0], 3.0, vec![[8.0, 10.0]]).unwrap();
    let opts = PlanOptions {
        n_samples: 3000,
        ..PlanOptions::default()
    };
    for seed in 0..4 {
        let path = match plan_path(model(), &maze, &opts, seed) {
            Ok(p) => p,
            Err(e) => e.partial().clone(),
        };
        for (a, b) in path.segments() {
            assert!(!segment_collides(a, b, &maze), "seed {seed}: {a:?} -> {b:?}");
        }
        let mut pose = path.start;
        for s in &path.steps {
            pose = pose.compose(s.predicted.dx, s.predicted.dy, s.predicted.dpsi);
            assert_eq!(s.pose, pose);
        }
    }
    let path = plan_path(model(), &maze, &opts, 0).unwrap();
    assert!(path.steps.len() >= 2);
    assert!(path.expected_error < maze.goal_tolerance);
}

#[test]
fn leave_one_out_error_is_within_twice_the_neighbour_spread() {
    let m = model();
    let [gx, gy, _] = m.components();
    let (rx, ry) = (gx.loo_residuals(), gy.loo_residuals());
    let loo = rx.iter().zip(&ry).map(|(a, b)| a.hypot(*b)).sum::<f64>() / rx.len() as f64;

    // nearest neighbour in normalized θ, output spread measured on the merged dataset
    let (dx, dy) = (gx.dataset().raw_outputs(), gy.dataset().raw_outputs());
    let xs = &gx.dataset().inputs;
    let mut spread = 0.0;
    for i in 0..xs.len() {
        let nn = (0..xs.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let d = |j: usize| xs[i].iter().zip(&xs[j]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        spread += (dx[i] - dx[nn]).hypot(dy[i] - dy[nn]);
    }
    spread /= xs.len() as f64;
    assert!(loo <= 2.0 * spread, "loo {loo} vs spread {spread}");
}
