use std::path::Path;
use std::process::{Command, Output};

fn smrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smrkit"))
        .args(args)
        .env_remove("SMRKIT_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = smrkit(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MANIFEST: &str = r#"
task = "classification"
ladder = [30, 40]
machines = ["m0", "m1"]
images = ["a", "b"]
"#;

// m0/a: consistent at 30, drops to rank 2 at 40
// m1/a: rank 2 at 30, rank 4 at 40
// m0/b: consistent throughout
// m1/b: gone from the top five at 40
const RECORDS: &[&str] = &[
    r#"{"machine":"m0","image":"a","qp":0,"topk":[5,1,2,3,4]}"#,
    r#"{"machine":"m0","image":"a","qp":30,"topk":[5,1,2,3,4]}"#,
    r#"{"machine":"m0","image":"a","qp":40,"topk":[1,5,2,3,4]}"#,
    r#"{"machine":"m1","image":"a","qp":0,"topk":[7,1,2,3,4]}"#,
    r#"{"machine":"m1","image":"a","qp":30,"topk":[2,7,1,3,4]}"#,
    r#"{"machine":"m1","image":"a","qp":40,"topk":[9,8,6,7,0]}"#,
    r#"{"machine":"m0","image":"b","qp":0,"topk":[3,1,2,4,5]}"#,
    r#"{"machine":"m0","image":"b","qp":30,"topk":[3,1,2,4,5]}"#,
    r#"{"machine":"m0","image":"b","qp":40,"topk":[3,2,1,4,5]}"#,
    r#"{"machine":"m1","image":"b","qp":0,"topk":[4,1,2,3,5]}"#,
    r#"{"machine":"m1","image":"b","qp":30,"topk":[4,1,2,3,5]}"#,
    r#"{"machine":"m1","image":"b","qp":40,"topk":[0,1,2,3,5]}"#,
];

fn fixture(dir: &Path, skip: Option<usize>) {
    std::fs::write(dir.join("manifest.toml"), MANIFEST).unwrap();
    let lines: Vec<&str> = RECORDS
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, l)| *l)
        .collect();
    std::fs::write(dir.join("records.jsonl"), lines.join("\n") + "\n").unwrap();
}

#[test]
fn annotate_matches_hand_computed_tables() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), None);
    let out = dir.path().join("out");
    ok(&[
        "annotate",
        "--manifest",
        p(&dir.path().join("manifest.toml")),
        "--records",
        p(&dir.path().join("records.jsonl")),
        "--smr-type",
        "top1",
        "top3",
        "--out",
        p(&out),
    ]);
    let top1 = std::fs::read_to_string(out.join("smr-top1.csv")).unwrap();
    assert_eq!(
        top1,
        "image,smr_type,qp,smr,machine_count\n\
         a,top1,0,1,2\n\
         a,top1,30,0.5,2\n\
         a,top1,40,0,2\n\
         b,top1,0,1,2\n\
         b,top1,30,1,2\n\
         b,top1,40,0.5,2\n"
    );
    let top3 = std::fs::read_to_string(out.join("smr-top3.csv")).unwrap();
    assert_eq!(
        top3,
        "image,smr_type,qp,smr,machine_count\n\
         a,top3,0,1,2\n\
         a,top3,30,1,2\n\
         a,top3,40,0.5,2\n\
         b,top3,0,1,2\n\
         b,top3,30,1,2\n\
         b,top3,40,0.5,2\n"
    );
    let dist = std::fs::read_to_string(out.join("distribution-top1.csv")).unwrap();
    assert_eq!(dist, "qp,mean_smr\n0,1\n30,0.75\n40,0.25\n");
}

#[test]
fn strict_mode_names_the_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), Some(11));
    let out = smrkit(&[
        "annotate",
        "--manifest",
        p(&dir.path().join("manifest.toml")),
        "--records",
        p(&dir.path().join("records.jsonl")),
        "--out",
        p(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("m1") && err.contains('b') && err.contains("40"), "{err}");

    let lenient = smrkit(&[
        "annotate",
        "--lenient",
        "--manifest",
        p(&dir.path().join("manifest.toml")),
        "--records",
        p(&dir.path().join("records.jsonl")),
        "--out",
        p(&dir.path().join("out")),
    ]);
    assert!(lenient.status.success(), "{}", String::from_utf8_lossy(&lenient.stderr));
    let top1 = std::fs::read_to_string(dir.path().join("out/smr-top1.csv")).unwrap();
    assert!(top1.contains("b,top1,40,1,1\n"), "{top1}");
}

#[test]
fn pipeline_reports_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--machines", "3", "--images", "4", "--out", p(&data)]);
    let out = smrkit(&[
        "pipeline",
        "--manifest",
        p(&data.join("manifest.json")),
        "--records",
        p(&data.join("records.jsonl")),
        "--features",
        p(&data.join("features.jsonl")),
        "--bitrates",
        p(&data.join("missing.csv")),
        "--out",
        p(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `ingest`") && err.contains("missing.csv"), "{err}");
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let data = dir.path().join(format!("data-{name}"));
        ok(&["synth", "--machines", "4", "--images", "12", "--seed", "5", "--out", p(&data)]);
        let model = dir.path().join(format!("model-{name}"));
        ok(&[
            "train",
            "--manifest",
            p(&data.join("manifest.json")),
            "--records",
            p(&data.join("records.jsonl")),
            "--features",
            p(&data.join("features.jsonl")),
            "--epochs",
            "5",
            "--seed",
            "9",
            "--out",
            p(&model),
        ]);
        (read_all(&data), read_all(&model))
    };
    assert_eq!(run("first"), run("second"));
}

#[test]
fn unknown_smr_type_is_rejected() {
    let out = smrkit(&["annotate", "--manifest", "m", "--records", "r", "--smr-type", "top0", "--out", "o"]);
    assert!(!out.status.success());
}
