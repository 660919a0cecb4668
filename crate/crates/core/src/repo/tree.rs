use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, AnalyzeError};

/// Marks a directory whose listing was cut short.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverflowMarker {
    /// Repository-relative directory; empty for the root.
    pub dir: String,
    pub omitted: usize,
}

/// Bounded listing of a repository. Directories carry a trailing `/`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMap {
    pub entries: Vec<String>,
    #[serde(default)]
    pub overflow: Vec<OverflowMarker>,
    #[serde(default)]
    pub skipped_links: Vec<String>,
}

impl TreeMap {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        for m in &self.overflow {
            let dir = if m.dir.is_empty() { "." } else { m.dir.as_str() };
            out.push_str(&format!("{dir}/... ({} more)\n", m.omitted));
        }
        out
    }
}

struct Walk {
    max_depth: usize,
    per_dir_cap: usize,
    all: Vec<String>,
    overflow: Vec<OverflowMarker>,
    skipped_links: Vec<String>,
}

impl Walk {
    fn visit(&mut self, dir: &Path, rel: &str, depth: usize, ancestors: &mut Vec<PathBuf>) -> Result<(), AnalyzeError> {
        let mut names: Vec<(String, PathBuf)> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(Result::ok)
            .map(|e| (e.file_name().to_string_lossy().to_string(), e.path()))
            .filter(|(n, _)| n != ".git")
            .collect();
        names.sort();
        if names.len() > self.per_dir_cap {
            self.overflow.push(OverflowMarker {
                dir: rel.to_string(),
                omitted: names.len() - self.per_dir_cap,
            });
            names.truncate(self.per_dir_cap);
        }
        for (name, path) in names {
            let child = if rel.is_empty() { name.clone() } else { format!("{rel}/{name}") };
            let link = fs::symlink_metadata(&path).map(|m| m.file_type().is_symlink()).unwrap_or(false);
            let is_dir = path.is_dir();
            if !is_dir {
                self.all.push(child);
                continue;
            }
            self.all.push(format!("{child}/"));
            if depth + 1 >= self.max_depth {
                continue;
            }
            let canonical = match path.canonicalize() {
                Ok(c) => c,
                Err(_) => {
                    self.skipped_links.push(child);
                    continue;
                }
            };
            if link && ancestors.iter().any(|a| canonical.starts_with(a) || a == &canonical) {
                self.skipped_links.push(child);
                continue;
            }
            ancestors.push(canonical);
            self.visit(&path, &child, depth + 1, ancestors)?;
            ancestors.pop();
        }
        Ok(())
    }
}

/// Lists a repository down to `max_depth` levels (1 = top level only),
/// keeping at most `per_dir_cap` names per directory and `max_entries` names
/// overall. Symlinked directories pointing back into an ancestor are not
/// followed.
pub fn map_tree(root: &Path, max_depth: usize, max_entries: usize, per_dir_cap: usize) -> Result<TreeMap, AnalyzeError> {
    let canonical = root.canonicalize().map_err(io_err(root))?;
    let mut walk = Walk {
        max_depth: max_depth.max(1),
        per_dir_cap: per_dir_cap.max(1),
        all: Vec::new(),
        overflow: Vec::new(),
        skipped_links: Vec::new(),
    };
    if max_depth == 0 {
        return Ok(TreeMap::default());
    }
    let mut ancestors = vec![canonical];
    walk.visit(root, "", 0, &mut ancestors)?;
    let mut entries = walk.all;
    entries.sort();
    if entries.len() > max_entries {
        let dropped = &entries[max_entries..];
        let mut by_dir: BTreeSet<(String, usize)> = BTreeSet::new();
        let mut counts = std::collections::BTreeMap::<String, usize>::new();
        for e in dropped {
            let trimmed = e.trim_end_matches('/');
            let parent = trimmed.rsplit_once('/').map(|(p, _)| p.to_string()).unwrap_or_default();
            *counts.entry(parent).or_default() += 1;
        }
        by_dir.extend(counts);
        for (dir, omitted) in by_dir {
            match walk.overflow.iter_mut().find(|m| m.dir == dir) {
                Some(m) => m.omitted += omitted,
                None => walk.overflow.push(OverflowMarker { dir, omitted }),
            }
        }
        entries.truncate(max_entries);
    }
    walk.overflow.sort_by(|a, b| a.dir.cmp(&b.dir));
    walk.skipped_links.sort();
    Ok(TreeMap {
        entries,
        overflow: walk.overflow,
        skipped_links: walk.skipped_links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_directory() {
        let d = tempfile::tempdir().unwrap();
        for n in ["b.txt", "a.txt", "c.txt"] {
            fs::write(d.path().join(n), "").unwrap();
        }
        let t = map_tree(d.path(), 2, 100, 64).unwrap();
        assert_eq!(t.entries, ["a.txt", "b.txt", "c.txt"]);
        assert!(t.overflow.is_empty());
    }

    #[test]
    fn entry_cap_adds_markers() {
        let d = tempfile::tempdir().unwrap();
        for i in 0..5 {
            let sub = d.path().join(format!("d{i}"));
            fs::create_dir(&sub).unwrap();
            for j in 0..9 {
                fs::write(sub.join(format!("f{j}")), "").unwrap();
            }
        }
        let t = map_tree(d.path(), 4, 10, 64).unwrap();
        assert_eq!(t.entries.len(), 10);
        let omitted: usize = t.overflow.iter().map(|m| m.omitted).sum();
        assert_eq!(omitted, 50 - 10);
        assert!(t.render().contains("more)"));
    }

    #[test]
    fn depth_limit() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir_all(d.path().join("a/b/c")).unwrap();
        fs::write(d.path().join("a/b/c/deep.txt"), "").unwrap();
        let t = map_tree(d.path(), 2, 100, 64).unwrap();
        assert_eq!(t.entries, ["a/", "a/b/"]);
    }

    #[cfg(unix)]
    #[test]
    fn symlink_cycle_terminates() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir(d.path().join("src")).unwrap();
        fs::write(d.path().join("src/main.c"), "").unwrap();
        std::os::unix::fs::symlink(d.path(), d.path().join("src/loop")).unwrap();
        let t = map_tree(d.path(), 10, 1000, 64).unwrap();
        assert!(t.entries.contains(&"src/loop/".to_string()));
        assert_eq!(t.skipped_links, ["src/loop"]);
        assert!(t.entries.iter().all(|e| !e.contains("..")));
    }
}
