use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaitforge"))
}

fn smoke(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/smoke")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn walk_smoke_writes_one_history_per_gait_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("walk");
    let o = run(&[
        "walk",
        "--config",
        smoke("walk").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for gait in ["tripod", "wave"] {
        for seed in [0, 1] {
            let (h, rows) = csv(&out.join(format!("walk_{gait}_seed{seed}.csv")));
            assert_eq!(rows.len(), 10);
            let best = column(&h, &rows, "best_so_far");
            let raw = column(&h, &rows, "neg_speed");
            assert!(best.windows(2).all(|w| w[1] <= w[0]));
            for (k, b) in best.iter().enumerate() {
                assert_eq!(*b, raw[..=k].iter().cloned().fold(f64::INFINITY, f64::min));
            }
        }
    }
    assert!(out.join("manifest.json").exists());
    assert!(out.join("summary.csv").exists());
}

#[test]
fn manifest_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for exp in ["walk", "moo"] {
        let first = run(&[
            exp,
            "--config",
            smoke(exp).to_str().unwrap(),
            "--out",
            a.to_str().unwrap(),
        ]);
        assert!(first.status.success());
        let manifest = a.join("manifest.json");
        let again = run(&[
            exp,
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ]);
        assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            if n != "manifest.json" {
                assert_eq!(
                    fs::read(a.join(&n)).unwrap(),
                    fs::read(b.join(&n)).unwrap(),
                    "{exp}: {n:?}"
                );
            }
        }
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "gaits = [\"tripod\"]\nrepetitions = 1\nbudget = 6\nn_init = 4\n",
    );
    let out = |seed: &str, dir: &str| {
        let d = tmp.path().join(dir);
        let o = run(&[
            "walk",
            "--config",
            cfg.to_str().unwrap(),
            "--seed-base",
            seed,
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        d.join(format!("walk_tripod_seed{seed}.csv"))
    };
    assert_ne!(fs::read(out("3", "x")).unwrap(), fs::read(out("4", "y")).unwrap());
}

#[test]
fn invalid_configs_exit_with_two_and_list_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "budget = 2\nn_init = 5\ngaits = [\"gallop\"]\n");
    let o = run(&[
        "walk",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gallop") && err.contains("n_init"), "{err}");

    let typo = write_config(tmp.path(), "budgett = 10\n");
    assert_eq!(
        run(&["walk", "--config", typo.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["fly", "--config", typo.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["walk"]).status.code(), Some(2));
}

#[test]
fn simulator_fault_exits_with_three_and_keeps_the_partial_history() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seeds = [0]\nbudget = 8\nn_init = 4\n[acquisition]\nn_candidates = 100\n[sim]\na_r = 1e6\n",
    );
    let out = tmp.path().join("o");
    let o = run(&[
        "walk",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("walk_tripod_seed0"));
    let (h, _) = csv(&out.join("walk_tripod_seed0.csv"));
    assert_eq!(h.last().map(String::as_str), Some("best_so_far"));
}

#[test]
fn moo_front_is_nondominated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("moo");
    let o = run(&[
        "moo",
        "--config",
        smoke("moo").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let (h, rows) = csv(&out.join("moo_tripod_seed0.csv"));
    let speed = column(&h, &rows, "neg_speed");
    let energy = column(&h, &rows, "energy");
    let front = column(&h, &rows, "on_front");
    let beats = |i: usize, j: usize| {
        speed[i] <= speed[j] && energy[i] <= energy[j] && (speed[i] < speed[j] || energy[i] < energy[j])
    };
    for j in 0..rows.len() {
        let dominated = (0..rows.len()).any(|i| beats(i, j));
        if front[j] == 1.0 {
            assert!(!dominated, "row {j}");
        }
    }
    assert!(front.contains(&1.0));
    let (hh, hv) = csv(&out.join("moo_tripod_seed0_hypervolume.csv"));
    let hv = column(&hh, &hv, "hypervolume");
    assert!(hv.windows(2).all(|w| w[1] >= w[0]));
}
