//! File helpers shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use lcsim_core::scenario::{load, save, Scenario, SCENARIO_EXTENSION};
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let bytes = fs::read(path).map_err(|e| CliError::invalid(path, e))?;
    load(&bytes).map_err(|e| CliError::invalid(path, e))
}

/// Canonical bytes of `scenario`; invariant violations are input errors.
pub fn scenario_bytes(scenario: &Scenario, origin: &Path) -> Result<Vec<u8>> {
    save(scenario).map_err(|e| CliError::invalid(origin, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::runtime(path, e))?;
    bytes.push(b'\n');
    write(path, &bytes)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::runtime(path, e))
}

/// Expands directories into their files with the given suffix, sorted;
/// plain files are kept as given.
pub fn expand(paths: &[PathBuf], suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::invalid(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.to_string_lossy().ends_with(suffix))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::invalid(p, "no such file or directory"));
        }
    }
    Ok(out)
}

pub fn scenario_suffix() -> String {
    format!(".{SCENARIO_EXTENSION}")
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every item ran")).collect()
}
