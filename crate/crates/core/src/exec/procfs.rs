//! Resident-memory readings from `/proc`.

use std::collections::HashSet;
use std::fs;

const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

pub fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let ps = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if ps > 0 {
        ps as u64
    } else {
        4096
    }
}

/// Resident set size of one process in bytes.
pub fn rss_bytes(pid: u32, page: u64) -> Option<u64> {
    let statm = fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
    let resident: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(resident * page)
}

/// Direct children of `pid` across all of its threads.
pub fn children(pid: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let Ok(tasks) = fs::read_dir(format!("/proc/{pid}/task")) else {
        return out;
    };
    for task in tasks.flatten() {
        if let Ok(text) = fs::read_to_string(task.path().join("children")) {
            out.extend(text.split_whitespace().filter_map(|s| s.parse::<u32>().ok()));
        }
    }
    out
}

/// Sum of resident memory over `root` and all of its descendants, in MB.
///
/// Returns `None` when nothing resident was found (the process is gone or a zombie).
pub fn tree_rss_mb(root: u32, page: u64) -> Option<f64> {
    let mut total = 0u64;
    let mut seen = HashSet::new();
    let mut stack = vec![root];
    while let Some(pid) = stack.pop() {
        if !seen.insert(pid) {
            continue;
        }
        if let Some(b) = rss_bytes(pid, page) {
            total += b;
        }
        stack.extend(children(pid));
    }
    (total > 0).then(|| total as f64 / BYTES_PER_MB)
}

pub fn kb_to_mb(kb: i64) -> f64 {
    kb.max(0) as f64 / 1024.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_own_rss() {
        let me = std::process::id();
        let mb = tree_rss_mb(me, page_size()).unwrap();
        assert!(mb > 0.5, "{mb}");
    }

    #[test]
    fn missing_process_has_no_rss() {
        assert_eq!(tree_rss_mb(u32::MAX - 7, page_size()), None);
    }
}
