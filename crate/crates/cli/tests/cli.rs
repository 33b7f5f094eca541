use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn patchfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, out: &str, seed: &str) {
    let o = patchfuse(
        dir,
        &[
            "synth",
            "--out",
            out,
            "--patients",
            "8",
            "--images-per-patient",
            "10",
            "--size",
            "64x64",
            "--seed",
            seed,
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_validated() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a", "7");
    synth(t.path(), "b", "7");
    let a = tree(&t.path().join("a"));
    assert_eq!(a.iter().filter(|(n, _)| n.ends_with(".ppm")).count(), 80);
    assert!(a.iter().any(|(n, _)| n == "manifest.csv"));
    assert_eq!(a, tree(&t.path().join("b")));

    assert_eq!(
        code(&patchfuse(
            t.path(),
            &["synth", "--out", "c", "--size", "64"]
        )),
        2
    );
    assert_eq!(
        code(&patchfuse(
            t.path(),
            &["synth", "--out", "c", "--colour", "red"]
        )),
        2
    );

    fs::write(t.path().join("file"), "").unwrap();
    assert_eq!(
        code(&patchfuse(t.path(), &["synth", "--out", "file/sub"])),
        2
    );
}

#[test]
fn staged_workflow() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "corpus", "7");
    let m = "corpus/manifest.csv";

    let o = patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--fractions",
            "0.7,0.15,0.15",
            "--seed",
            "7",
            "--out",
            "split.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let split = fs::read_to_string(d.join("split.csv")).unwrap();
    assert_eq!(split.lines().count(), 81);
    patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--seed",
            "7",
            "--out",
            "split2.csv",
        ],
    );
    assert_eq!(fs::read_to_string(d.join("split2.csv")).unwrap(), split);
    let bad = patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--fractions",
            "0.5,0.5,0.5",
            "--out",
            "s3.csv",
        ],
    );
    assert_eq!(code(&bad), 2);

    let extract = [
        "extract",
        "--manifest",
        m,
        "--split",
        "split.csv",
        "--level",
        "2",
        "--cache",
        "f.cache",
        "--seed",
        "7",
    ];
    assert_eq!(code(&patchfuse(d, &extract)), 0);
    let cache = fs::read(d.join("f.cache")).unwrap();
    let entries = cache
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty() && l[0] != b'#')
        .count();
    assert_eq!(entries, 320);
    let again = patchfuse(d, &extract);
    assert!(stderr(&again).contains("computed 0 vectors"));
    assert_eq!(fs::read(d.join("f.cache")).unwrap(), cache);

    let missing = patchfuse(
        d,
        &[
            "extract",
            "--manifest",
            m,
            "--level",
            "3",
            "--backend",
            "cache",
            "--cache",
            "f.cache",
        ],
    );
    assert_eq!(code(&missing), 3);
    assert!(
        stderr(&missing).contains("P000-40-000#L3R0C0"),
        "{}",
        stderr(&missing)
    );

    let train = [
        "train",
        "--cache",
        "f.cache",
        "--manifest",
        m,
        "--split",
        "split.csv",
        "--level",
        "2",
        "--epochs",
        "20",
        "--seed",
        "7",
        "--out",
    ];
    let o = patchfuse(d, &[&train[..], &["m.model"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    patchfuse(d, &[&train[..], &["m2.model"]].concat());
    assert_eq!(
        fs::read(d.join("m.model")).unwrap(),
        fs::read(d.join("m2.model")).unwrap()
    );

    let eval = |rules: &str, out: &str| {
        patchfuse(
            d,
            &[
                "eval",
                "--model",
                "m.model",
                "--cache",
                "f.cache",
                "--manifest",
                m,
                "--split",
                "split.csv",
                "--level",
                "2",
                "--rules",
                rules,
                "--out",
                out,
            ],
        )
    };
    assert_eq!(code(&eval("sum,product,max", "ev")), 0);
    let report = fs::read_to_string(d.join("ev/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "magnification,segmentation,fusion,image_accuracy,patient_accuracy,n_images,n_correct,n_patients"
    );
    assert_eq!(lines.count(), 3);
    for rule in ["sum", "product", "max"] {
        assert!(d.join(format!("ev/predictions/40-L2-{rule}.csv")).exists());
    }
    assert_eq!(code(&eval("max", "ev_max")), 0);
    let max_only = fs::read_to_string(d.join("ev_max/report.csv")).unwrap();
    assert_eq!(max_only.lines().count(), 2);
    assert!(max_only
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("40,quarter-split,max,"));

    let image = format!(
        "corpus/{}",
        fs::read_to_string(d.join(m))
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
    );
    let o = patchfuse(
        d,
        &[
            "predict", "--model", "m.model", "--image", &image, "--level", "2", "--rule",
            "product", "--seed", "7",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    let re_ok =
        line.starts_with("class=benign scores=") || line.starts_with("class=malignant scores=");
    assert!(
        re_ok && line.trim_end().ends_with("rule=product patches=4"),
        "{line}"
    );

    let o = patchfuse(
        d,
        &[
            "predict", "--model", "m.model", "--image", "nope.ppm", "--level", "2",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn level_one_predict_ignores_rule() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "corpus", "3");
    let m = "corpus/manifest.csv";
    patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--seed",
            "3",
            "--out",
            "split.csv",
        ],
    );
    patchfuse(
        d,
        &[
            "extract",
            "--manifest",
            m,
            "--level",
            "1",
            "--cache",
            "f.cache",
            "--seed",
            "3",
        ],
    );
    let o = patchfuse(
        d,
        &[
            "train",
            "--cache",
            "f.cache",
            "--manifest",
            m,
            "--split",
            "split.csv",
            "--level",
            "1",
            "--epochs",
            "5",
            "--out",
            "m.model",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let image = "corpus/benign/P000/P000-40-000.ppm";
    let o = patchfuse(
        d,
        &[
            "predict", "--model", "m.model", "--image", image, "--level", "1", "--rule", "max",
            "--seed", "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("ignored"));
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.trim_end().ends_with("rule=none patches=1"), "{line}");
}

#[test]
fn empty_test_split_is_missing_data() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "corpus", "1");
    let m = "corpus/manifest.csv";
    patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--seed",
            "1",
            "--out",
            "split.csv",
        ],
    );
    patchfuse(
        d,
        &[
            "extract",
            "--manifest",
            m,
            "--level",
            "1",
            "--cache",
            "f.cache",
            "--seed",
            "1",
        ],
    );
    patchfuse(
        d,
        &[
            "train",
            "--cache",
            "f.cache",
            "--manifest",
            m,
            "--split",
            "split.csv",
            "--level",
            "1",
            "--epochs",
            "2",
            "--out",
            "m.model",
        ],
    );
    let no_test: String = fs::read_to_string(d.join("split.csv"))
        .unwrap()
        .replace(",test", ",train");
    fs::write(d.join("no_test.csv"), no_test).unwrap();
    let o = patchfuse(
        d,
        &[
            "eval",
            "--model",
            "m.model",
            "--cache",
            "f.cache",
            "--manifest",
            m,
            "--split",
            "no_test.csv",
            "--level",
            "1",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn divergence_exits_numerical() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, "corpus", "5");
    let m = "corpus/manifest.csv";
    patchfuse(
        d,
        &[
            "split",
            "--manifest",
            m,
            "--seed",
            "5",
            "--out",
            "split.csv",
        ],
    );
    let manifest = fs::read_to_string(d.join(m)).unwrap();
    let mut cache = String::from("# patchfuse-features v1 dim=4\n");
    let mut ids: Vec<&str> = manifest
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    ids.sort();
    for (i, id) in ids.iter().enumerate() {
        let v = if i % 2 == 0 {
            "1.00000000e+30"
        } else {
            "-1.00000000e+30"
        };
        cache.push_str(&format!("{id}#L1R0C0\t{v} {v} {v} {v}\n"));
    }
    fs::write(d.join("huge.cache"), cache).unwrap();
    let o = patchfuse(
        d,
        &[
            "train",
            "--cache",
            "huge.cache",
            "--manifest",
            m,
            "--split",
            "split.csv",
            "--level",
            "1",
            "--lr",
            "1e10",
            "--epochs",
            "5",
            "--out",
            "m.model",
        ],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!d.join("m.model").exists());
}

#[test]
fn run_all_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        patchfuse(
            t.path(),
            &[
                "run-all", "--levels", "1,2", "--rules", "sum,max", "--epochs", "15", "--seed",
                "11", "--out", out,
            ],
        )
    };
    let o = run("a");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("quarter-split"));
    assert_eq!(code(&run("b")), 0);
    let a = fs::read(t.path().join("a/report.csv")).unwrap();
    assert_eq!(a, fs::read(t.path().join("b/report.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);

    let bad = patchfuse(t.path(), &["run-all", "--levels", "4", "--out", "c"]);
    assert_eq!(code(&bad), 2);
}
