use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn longvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longvit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Binary PPM whose pixels come from `pixel(x, y, channel)`.
fn write_ppm(path: &Path, side: usize, pixel: impl Fn(usize, usize, usize) -> u8) {
    let mut bytes = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                bytes.push(pixel(x, y, c));
            }
        }
    }
    fs::write(path, bytes).unwrap();
}

fn noise_ppm(dir: &TempDir, name: &str, side: usize) -> PathBuf {
    let path = dir.path().join(name);
    write_ppm(&path, side, |x, y, c| {
        ((x * 31 + y * 17 + c * 7) % 251) as u8
    });
    path
}

#[test]
fn encode_reports_tokens_and_writes_identical_files() {
    let dir = TempDir::new().unwrap();
    let img = noise_ppm(&dir, "tile.ppm", 64);
    let (a, b, c) = (
        dir.path().join("a.lvt"),
        dir.path().join("b.lvt"),
        dir.path().join("c.lvt"),
    );
    let run = |out: &Path, seed: &str| {
        longvit(&[
            "encode",
            path_str(&img),
            "--preset",
            "tiny",
            "--seed",
            seed,
            "--out",
            path_str(out),
        ])
    };
    let first = run(&a, "3");
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("tokens: 4\n"), "{text}");
    assert!(text.contains("grid: 2x2"), "{text}");
    assert!(run(&b, "3").status.success());
    assert!(run(&c, "4").status.success());
    let (ba, bb, bc) = (
        fs::read(&a).unwrap(),
        fs::read(&b).unwrap(),
        fs::read(&c).unwrap(),
    );
    assert_eq!(ba, bb);
    assert_ne!(ba, bc);
}

#[test]
fn encode_default_output_path() {
    let dir = TempDir::new().unwrap();
    let img = noise_ppm(&dir, "slide.ppm", 64);
    let o = longvit(&["encode", path_str(&img), "--preset", "tiny"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("slide.ppm.pooled.lvt").exists());
}

#[test]
fn dry_run_reports_table_schedule() {
    let dir = TempDir::new().unwrap();
    let img = noise_ppm(&dir, "tile.ppm", 1024);
    let o = longvit(&["encode", path_str(&img), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("tokens: 1024\n"), "{text}");
    assert!(
        text.contains("schedule: 64:1,128:2,256:4,512:8,1024:16\n"),
        "{text}"
    );

    let o = longvit(&[
        "encode",
        path_str(&img),
        "--dry-run",
        "--resolution",
        "2048",
    ]);
    let text = stdout(&o);
    assert!(
        text.contains("tokens: 4096\n") && text.contains("(resized)"),
        "{text}"
    );
}

#[test]
fn dry_run_at_gigapixel_geometry_reads_only_the_header() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("slide.lvti");
    let side: u64 = 32_768;
    let mut f = File::create(&path).unwrap();
    f.write_all(b"LVTI").unwrap();
    f.write_all(&side.to_le_bytes()).unwrap();
    f.write_all(&side.to_le_bytes()).unwrap();
    for v in [3u32, 512, 1] {
        f.write_all(&v.to_le_bytes()).unwrap();
    }
    f.set_len(32 + 64 * 64 * 512 * 512 * 3).unwrap();
    let o = longvit(&["encode", path_str(&path), "--dry-run", "--workers", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("tokens: 1048576\n"), "{text}");
    assert!(text.contains("workers: 4,"), "{text}");
}

#[test]
fn exit_codes() {
    assert_eq!(longvit(&[]).status.code(), Some(1));
    assert_eq!(longvit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(longvit(&["--help"]).status.code(), Some(0));
    let missing = longvit(&["encode", "/nonexistent/slide.ppm"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(
        stderr(&missing).starts_with("error: "),
        "{}",
        stderr(&missing)
    );
    assert_eq!(longvit(&["verify", "nonsense"]).status.code(), Some(1));
    let ok = longvit(&["verify", "metrics"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("3/3 checks passed"));
}

#[test]
fn bad_input_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let img = noise_ppm(&dir, "tile.ppm", 64);
    let o = longvit(&[
        "encode",
        path_str(&img),
        "--preset",
        "tiny",
        "--resolution",
        "70",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = longvit(&[
        "encode",
        path_str(&img),
        "--preset",
        "tiny",
        "--schedule",
        "64:3",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let garbage = dir.path().join("junk.ppm");
    fs::write(&garbage, b"not an image").unwrap();
    assert_eq!(
        longvit(&["encode", path_str(&garbage)]).status.code(),
        Some(1)
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let img = noise_ppm(&dir, "tile.ppm", 64);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\npreset = tiny\npatch_size = 16\n").unwrap();
    let o = longvit(&[
        "--config",
        path_str(&cfg),
        "encode",
        path_str(&img),
        "--dry-run",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("grid: 4x4 patches of 16px"),
        "{}",
        stdout(&o)
    );
    let o = longvit(&[
        "--config",
        path_str(&cfg),
        "encode",
        path_str(&img),
        "--dry-run",
        "--patch-size",
        "32",
    ]);
    assert!(
        stdout(&o).contains("grid: 2x2 patches of 32px"),
        "{}",
        stdout(&o)
    );

    fs::write(&cfg, "preset = tiny\nbroken line\n").unwrap();
    let o = longvit(&["--config", path_str(&cfg), "encode", path_str(&img)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.cfg:2"), "{}", stderr(&o));
}

#[test]
fn bench_single_worker_sends_nothing() {
    let args = [
        "bench",
        "--tokens",
        "64,128",
        "--hidden",
        "16",
        "--heads",
        "2",
        "--repeats",
        "1",
        "--kv",
    ];
    let one = longvit(&[&args[..], &["--workers", "1"]].concat());
    assert!(one.status.success(), "{}", stderr(&one));
    let text = stdout(&one);
    assert!(text.contains("point.1.tokens=128\n"), "{text}");
    assert!(text.contains("point.1.comm.total_elements=0\n"), "{text}");
    let two = stdout(&longvit(&[&args[..], &["--workers", "2"]].concat()));
    assert!(!two.contains("point.1.comm.total_elements=0\n"), "{two}");
}

#[test]
fn separable_manifest_reaches_full_auc() {
    let dir = TempDir::new().unwrap();
    let mut manifest = String::from("id,path,label\n");
    for i in 0..20 {
        let label = i % 2;
        let base = if label == 0 { 40 } else { 190 };
        let name = format!("img-{i}.ppm");
        write_ppm(&dir.path().join(&name), 64, |x, y, c| {
            (base + (x * 7 + y * 13 + c * 5 + i * 3) % 25) as u8
        });
        manifest.push_str(&format!("case-{i},{name},{label}\n"));
    }
    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest).unwrap();
    let report = dir.path().join("report.txt");
    let o = longvit(&[
        "finetune",
        path_str(&m),
        "--preset",
        "tiny",
        "--resolution",
        "64",
        "--epochs",
        "10",
        "--batch-size",
        "1",
        "--lr",
        "1e-3",
        "--out",
        path_str(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&report).unwrap();
    assert!(
        text.contains("fold  9:") && !text.contains("fold 10:"),
        "{text}"
    );
    let summary = text.lines().last().unwrap();
    let mean: f64 = summary
        .split(": ")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        summary.starts_with("AUC over 10 folds") && mean >= 0.99,
        "{text}"
    );
}

#[test]
fn survival_defaults_to_five_folds() {
    let dir = TempDir::new().unwrap();
    let mut manifest = String::new();
    for i in 0..20 {
        let name = format!("img-{i}.ppm");
        write_ppm(&dir.path().join(&name), 64, |x, y, c| {
            ((x + y * 3 + c + i * 11) % 200) as u8
        });
        manifest.push_str(&format!(
            "case-{i},{name},{}.5,{}\n",
            3 + i * 2,
            usize::from(i % 3 != 0)
        ));
    }
    let m = dir.path().join("survival.csv");
    fs::write(&m, manifest).unwrap();
    let o = longvit(&[
        "finetune",
        path_str(&m),
        "--task",
        "survival",
        "--preset",
        "tiny",
        "--resolution",
        "64",
        "--epochs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("c-Index over 5 folds"), "{text}");
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("bad.csv");
    fs::write(&m, "id,path,label\na,x.ppm,0\nb,y.ppm,notaclass\n").unwrap();
    let o = longvit(&["finetune", path_str(&m), "--preset", "tiny"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":3"), "{}", stderr(&o));
}

#[test]
fn synth_then_finetune_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("markers");
    let o = longvit(&[
        "synth",
        path_str(&data),
        "--count",
        "12",
        "--resolution",
        "128",
        "--marker",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = data.join("manifest.csv");
    let run = || {
        longvit(&[
            "finetune",
            path_str(&manifest),
            "--preset",
            "tiny",
            "--resolution",
            "128",
            "--folds",
            "2",
            "--epochs",
            "1",
            "--batch-size",
            "2",
            "--accum",
            "2",
            "--seed",
            "9",
        ])
    };
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("AUC over 2 folds"), "{}", stdout(&a));
}
