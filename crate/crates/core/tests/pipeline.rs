//! End-to-end runs through the command layer on small synthetic configs.

use std::path::Path;

use degm::cli::{cmd_diagnose, cmd_eval, cmd_export_v, cmd_train, load_config, parse_config, run_ablation, run_config, Mode};

fn small(text: &str, out: &Path) -> degm::cli::ExperimentConfig {
    let mut cfg = parse_config(text).unwrap();
    cfg.train.epochs = 3;
    for t in &mut cfg.tasks {
        t.max_train = Some(120);
        t.max_test = Some(40);
    }
    cfg.out = out.to_path_buf();
    cfg
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 6);
}

#[test]
fn degm_train_eval_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(include_str!("../configs/degm_synthetic.json"), tmp.path());
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.dir, tmp.path().join(cfg.hash()));
    for f in ["config.json", "metrics.csv", "v_matrix.csv", "eval.csv", "summary.json", "checkpoint/manifest.json"] {
        assert!(out.dir.join(f).exists(), "{f}");
    }
    assert_eq!(out.summary.final_risk.len(), 3);
    assert_eq!(run_config(&out.dir).unwrap(), parse_config(&cfg.to_json()).unwrap());

    let metrics = lines(&out.dir.join("metrics.csv"));
    assert!(metrics[1].starts_with(&cfg.hash()));
    // Six evaluation rows per epoch: 1 + 2 + 3 seen tasks over three epochs each.
    assert_eq!(metrics.len() - 1, 3 * (1 + 2 + 3));

    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    let rows = cmd_eval(&out.dir, &cfg, 5, 0, &a).unwrap();
    cmd_eval(&out.dir, &cfg, 5, 0, &b).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(rows.iter().all(|r| r.record.nll.is_finite() && r.record.ssim <= 1.0));

    let v = tmp.path().join("v.csv");
    cmd_export_v(&out.dir, &v).unwrap();
    assert_eq!(std::fs::read(&v).unwrap(), std::fs::read(out.dir.join("v_matrix.csv")).unwrap());
}

#[test]
fn replay_and_bounds_modes_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let gr = cmd_train(&small(include_str!("../configs/gr_synthetic.json"), tmp.path())).unwrap();
    assert!(gr.dir.join("replay_chain.csv").exists());
    assert_eq!(gr.summary.mode, Mode::Gr);

    let mut cfg = small(include_str!("../configs/bounds_synthetic.json"), tmp.path());
    cfg.bounds.samples = 60;
    let b = cmd_train(&cfg).unwrap();
    let report = lines(&b.dir.join("bounds_report.csv"));
    assert!(report[0].starts_with("epoch,task_t,source_risk,target_risk_avg,target_risk_task_1"));
    assert!(report[0].ends_with("config_hash"));
    assert_eq!(report.len() - 1, 3 * 3);
    let before = std::fs::read(b.dir.join("bounds_report.csv")).unwrap();
    let again = cmd_diagnose(&b.dir).unwrap();
    assert_eq!(again.rows.len(), 9);
    assert_eq!(std::fs::read(b.dir.join("bounds_report.csv")).unwrap(), before);
}

#[test]
fn ablation_and_order_study() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(include_str!("../configs/ablation_synthetic.json"), tmp.path());
    let (dir, table) = run_ablation(&cfg).unwrap();
    assert_eq!(table.columns.len(), 6);
    assert_eq!(table.columns[0].variant, "degm");
    let csv = lines(&dir.join("ablation.csv"));
    assert_eq!(csv.len(), 1 + 3 + 1);
    assert!(csv.last().unwrap().starts_with("mean"));

    let o = cmd_train(&small(include_str!("../configs/order_study_synthetic.json"), tmp.path())).unwrap();
    assert_eq!(lines(&o.dir.join("order_study.csv")).len(), 1 + 3);
}

#[test]
fn invalid_configs_name_the_key() {
    let text = include_str!("../configs/degm_synthetic.json").replace("\"batch\": 32", "\"batch\": 0");
    let e = parse_config(&text).unwrap_err().to_string();
    assert!(e.contains("train.batch"), "{e}");
    let text = include_str!("../configs/degm_synthetic.json").replace("\"n_test\"", "\"n_tests\"");
    let e = parse_config(&text).unwrap_err().to_string();
    assert!(e.contains("tasks[0]"), "{e}");
}
