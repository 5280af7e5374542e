//! Brute-force oracles and the golden-file runner shared by the
//! integration tests. Nothing here calls the library code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixtures() -> PathBuf {
    crate_dir().join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    crate_dir().join("tests/golden")
}

/// Mean cosine over every cross pair, normalizing each vector on its own.
pub fn pairwise_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let ua: Vec<_> = a.iter().map(unit).collect();
    let ub: Vec<_> = b.iter().map(unit).collect();
    let mut total = 0.0;
    for x in &ua {
        for y in &ub {
            total += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Silhouette straight from the definition, O(n^2) per point.
pub fn naive_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let d = |i: usize, j: usize| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return 0.0;
    }
    let n = points.len();
    let mut sum = 0.0;
    for i in 0..n {
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if mates.is_empty() {
            continue;
        }
        let a = mates.iter().map(|&j| d(i, j)).sum::<f64>() / mates.len() as f64;
        let mut b = f64::INFINITY;
        for &c in clusters.iter().filter(|&&c| c != labels[i]) {
            let others: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            b = b.min(others.iter().map(|&j| d(i, j)).sum::<f64>() / others.len() as f64);
        }
        let m = a.max(b);
        if m > 0.0 {
            sum += (b - a) / m;
        }
    }
    sum / n as f64
}

/// Kendall tau-b by counting every pair.
pub fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).expect("finite");
            let dy = y[i].partial_cmp(&y[j]).expect("finite");
            match (dx.is_eq(), dy.is_eq()) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                (false, false) if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    (denom > 0.0).then(|| (conc - disc) as f64 / denom)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_influence")
}

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).expect("utf-8 stdout"),
        String::from_utf8(out.stderr).expect("utf-8 stderr"),
    )
}

/// Runs the five data commands on the committed fixtures inside `work`
/// and returns every artifact keyed by its path relative to `work`.
/// Standard output of each command is kept as `<command>/stdout.txt`.
pub fn golden_run(work: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let fx = fixtures();
    let p = |path: PathBuf| path.to_str().expect("utf-8 path").to_string();
    let manifest = p(fx.join("world/manifest.json"));
    let observed = p(fx.join("world/observed.csv"));
    let pool = p(fx.join("pool.jsonl"));
    let out = |name: &str| p(work.join(name));
    let matrix = p(work.join("score/matrix.csv"));
    let target = p(work.join("summarize/d01.summary.json"));
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "summarize",
            vec![
                "summarize".into(),
                "--manifest".into(),
                manifest.clone(),
                "--out".into(),
                out("summarize"),
            ],
        ),
        (
            "score",
            vec![
                "score".into(),
                "--summaries".into(),
                out("summarize"),
                "--out".into(),
                out("score"),
            ],
        ),
        (
            "score-drop-ppl",
            vec![
                "score".into(),
                "--summaries".into(),
                out("summarize"),
                "--drop".into(),
                "ppl".into(),
                "--out".into(),
                out("score-drop-ppl"),
            ],
        ),
        (
            "eval-tau",
            vec![
                "eval-tau".into(),
                "--predicted".into(),
                matrix.clone(),
                "--observed".into(),
                observed,
                "--out".into(),
                out("eval-tau"),
            ],
        ),
        (
            "reweight",
            [
                "reweight",
                "--matrix",
                &matrix,
                "--target",
                "d01",
                "--budget",
                "30",
                "--manifest",
                &manifest,
                "--materialize",
                "--out",
                &out("reweight"),
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "select",
            [
                "select",
                "--pool",
                &pool,
                "--target-summary",
                &target,
                "--top-k",
                "10",
                "--max-answer-tokens",
                "8",
                "--out",
                &out("select"),
            ]
            .map(String::from)
            .to_vec(),
        ),
    ];
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, stdout, stderr) = run_cli(&args);
        if code != 0 {
            return Err(format!("{name} exited with {code}: {stderr}"));
        }
        let dir = work.join(name);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        fs::write(dir.join("stdout.txt"), stdout).map_err(|e| e.to_string())?;
    }
    collect(work)
}

/// Every file under `root`, keyed by relative path with `/` separators.
pub fn collect(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap();
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

/// Two fresh runs must agree byte for byte with each other and with the
/// committed files under `tests/golden`. With `UPDATE_GOLDEN` set, the
/// committed files are rewritten from the first run instead.
pub fn check_golden() -> Result<usize, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = golden_run(a.path())?;
    let second = golden_run(b.path())?;
    if first != second {
        let differing: Vec<_> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        return Err(format!("consecutive runs differ in {differing:?}"));
    }
    let golden = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = fs::remove_dir_all(&golden);
        for (rel, bytes) in &first {
            let path = golden.join(rel);
            fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
            fs::write(&path, bytes).map_err(|e| e.to_string())?;
        }
    }
    let committed = collect(&golden)?;
    let mut problems = Vec::new();
    for (rel, bytes) in &first {
        match committed.get(rel) {
            None => problems.push(format!("{rel}: not committed")),
            Some(c) if c != bytes => problems.push(format!("{rel}: differs")),
            _ => {}
        }
    }
    for rel in committed.keys().filter(|k| !first.contains_key(*k)) {
        problems.push(format!("{rel}: committed but not produced"));
    }
    if problems.is_empty() {
        Ok(first.len())
    } else {
        Err(problems.join("; "))
    }
}
