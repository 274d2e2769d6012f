use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_efa-taxon"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_lm1(dir: &Path) {
    ok(&["synth", "--seed", "7", "--teeth", "LM1", "--out", s(dir)]);
}

#[test]
fn synth_then_evaluate_lda_on_one_tooth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    synth_lm1(&data);
    assert!(data.join("LM1.csv").exists());
    assert!(!data.join("LM2.csv").exists());
    ok(&["evaluate", "--data", s(&data), "--methods", "lda", "--teeth", "LM1", "--fast", "8", "--out", s(&out)]);
    for name in ["tribe_log_loss", "tribe_accuracy", "species_log_loss", "species_accuracy"] {
        let text = std::fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2, "{name}: {text}");
        assert_eq!(lines[0], "tooth,LDA");
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0], "LM1");
        let v: f64 = cells[1].parse().unwrap();
        assert!(v >= 0.0);
        if name.ends_with("accuracy") {
            assert!(v <= 1.0);
        }
    }
    assert!(out.join("report.json").exists());

    let again = tmp.path().join("again");
    ok(&["--jobs", "1", "evaluate", "--data", s(&data), "--methods", "lda", "--teeth", "LM1", "--fast", "8", "--out", s(&again)]);
    assert_eq!(
        std::fs::read(out.join("report.json")).unwrap(),
        std::fs::read(again.join("report.json")).unwrap()
    );

    let tables = tmp.path().join("tables");
    let printed = ok(&["report", "--report", s(&out.join("report.json")), "--out", s(&tables)]);
    assert!(String::from_utf8_lossy(&printed.stdout).contains("LM1,"));
    assert_eq!(
        std::fs::read(out.join("species_accuracy.csv")).unwrap(),
        std::fs::read(tables.join("species_accuracy.csv")).unwrap()
    );
}

#[test]
fn featurize_writes_amplitudes_and_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("features.csv");
    ok(&["featurize", "--input", s(&fixture("three_specimens.csv")), "--out", s(&out)]);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    let p = sidecar["p"].as_u64().unwrap() as usize;
    assert!(p >= 1);
    assert_eq!(sidecar["harmonics"], 15);

    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "specimen_id");
    assert_eq!(header.len(), 3 + 60 + p);
    let records: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(&records[2][0], "s3");
    assert_eq!(&records[2][2], "Antidorcas marsupialis");
    for r in &records {
        assert!(r.iter().skip(3).all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn memorizing_forest_predicts_training_labels() {
    let tmp = tempfile::tempdir().unwrap();
    synth_lm1(tmp.path());
    let data = tmp.path().join("LM1.csv");
    let model = tmp.path().join("model.json");
    ok(&[
        "train", "--input", s(&data), "--method", "rf", "--mtry", "8", "--trees", "5", "--no-bootstrap",
        "--pca-components", "8", "--out", s(&model),
    ]);
    let pred = tmp.path().join("pred.csv");
    ok(&["predict", "--model", s(&model), "--input", s(&data), "--out", s(&pred)]);

    let mut labels = std::collections::HashMap::new();
    let mut rdr = csv::Reader::from_path(&data).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        labels.insert(r[0].to_string(), (r[2].to_string(), r[3].to_string()));
    }
    let mut rdr = csv::Reader::from_path(&pred).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 3 + 20);
    let mut n = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        let (tribe, species) = &labels[&r[0]];
        assert_eq!(&r[1], tribe);
        assert_eq!(&r[2], species);
        let total: f64 = r.iter().skip(3).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        n += 1;
    }
    assert_eq!(n, 321);
}

#[test]
fn commands_are_byte_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_lm1(a.path());
    ok(&["--jobs", "2", "synth", "--seed", "7", "--teeth", "LM1", "--out", s(b.path())]);
    for f in ["LM1.csv", "taxonomy.json", "spec.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let input = fixture("three_specimens.csv");
    for dir in [a.path(), b.path()] {
        ok(&["featurize", "--input", s(&input), "--out", s(&dir.join("f.csv"))]);
    }
    assert_eq!(std::fs::read(a.path().join("f.csv")).unwrap(), std::fs::read(b.path().join("f.csv")).unwrap());
    assert_eq!(std::fs::read(a.path().join("f.json")).unwrap(), std::fs::read(b.path().join("f.json")).unwrap());
}

#[test]
fn shells_and_rings_layouts_are_exclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--rings", "0.1", "--shells", "0.1", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    ok(&["synth", "--shells", "0.05", "--teeth", "UM3", "--out", s(tmp.path())]);
    let spec = std::fs::read_to_string(tmp.path().join("spec.json")).unwrap();
    assert!(spec.contains("shells"));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let t = s(tmp.path());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["evaluate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let input = fixture("three_specimens.csv");
    let out = run(&["featurize", "--input", s(&input), "--out", &format!("{t}/f.csv"), "--harmonics", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = run(&["evaluate", "--data", t, "--out", t, "--methods", "lda,qda"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two_and_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = run(&["featurize", "--input", s(&missing), "--out", s(&tmp.path().join("f.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "specimen_id,tooth_type,tribe,species,point_index,x,y\na,LM1,T,S,0,1.0,oops\n").unwrap();
    let out = run(&["featurize", "--input", s(&bad), "--out", s(&tmp.path().join("f.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.csv"), "{msg}");
}
