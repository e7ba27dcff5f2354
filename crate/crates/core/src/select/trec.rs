use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

/// Ranked lists in file order: `(query_id, [(patient_id, score)])`.
pub type RunFile = Vec<(String, Vec<(String, f64)>)>;

pub fn format_run(run: &RunFile) -> String {
    let mut out = String::new();
    for (q, ranking) in run {
        for (rank, (pid, score)) in ranking.iter().enumerate() {
            out.push_str(&format!("{q} {pid} {} {score}\n", rank + 1));
        }
    }
    out
}

pub fn write_run(path: &Path, run: &RunFile) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(format_run(run).as_bytes())
}

/// Checks `query_id patient_id rank score` lines: ranks start at 1 and
/// increase by one within a query, queries are contiguous, ids are unique
/// per query and scores are finite.
pub fn validate_run(text: &str) -> Result<usize, String> {
    let mut seen_queries = HashSet::new();
    let mut current: Option<String> = None;
    let mut ids = HashSet::new();
    let mut expected = 1;
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let at = |msg: &str| format!("line {}: {msg}", i + 1);
        if f.len() != 4 {
            return Err(at("expected 4 fields"));
        }
        let rank: usize = f[2].parse().map_err(|_| at("rank is not an integer"))?;
        let score: f64 = f[3].parse().map_err(|_| at("score is not a number"))?;
        if !score.is_finite() {
            return Err(at("score is not finite"));
        }
        if current.as_deref() != Some(f[0]) {
            if !seen_queries.insert(f[0].to_string()) {
                return Err(at("query lines are not contiguous"));
            }
            current = Some(f[0].to_string());
            ids.clear();
            expected = 1;
        }
        if rank != expected {
            return Err(at(&format!("rank {rank}, expected {expected}")));
        }
        if !ids.insert(f[1].to_string()) {
            return Err(at(&format!("duplicate id {}", f[1])));
        }
        expected += 1;
        lines += 1;
    }
    Ok(lines)
}
