//! Unified-diff patches between a pristine tree and a modified workspace.
//!
//! Extraction produces one hunk block per changed file (including file adds
//! and deletes via `/dev/null` headers); application replays a patch onto a
//! tree and is strict about context. Trees are treated as UTF-8 text.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use similar::TextDiff;
use thiserror::Error;

use crate::digest::{tree_digest, walk_files};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("file {0} is not valid UTF-8 text")]
    NonUtf8(PathBuf),
    #[error("malformed patch: {0}")]
    Malformed(String),
    #[error("context mismatch in {path} at original line {line}: expected {expected:?}, found {found:?}")]
    ContextMismatch {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("patch base digest {expected} does not match target tree digest {found}")]
    BaseMismatch { expected: String, found: String },
}

/// Unified diff for a single file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHunk {
    pub path: String,
    pub diff: String,
}

/// A whole-tree patch: per-file unified diffs against a pristine tree
/// identified by its content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub hunks: Vec<FileHunk>,
    pub base_digest: String,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    /// The concatenated standard unified diff text.
    pub fn to_unified(&self) -> String {
        self.hunks.iter().map(|h| h.diff.as_str()).collect()
    }
}

const DEV_NULL: &str = "/dev/null";

fn read_text(path: &Path) -> Result<String, PatchError> {
    let bytes = fs::read(path)?;
    String::from_utf8(bytes).map_err(|_| PatchError::NonUtf8(path.to_path_buf()))
}

fn unified_for(old: &str, new: &str, old_name: &str, new_name: &str) -> String {
    let text = TextDiff::from_lines(old, new)
        .unified_diff()
        .context_radius(3)
        .header(old_name, new_name)
        .to_string();
    if text.is_empty() {
        // Adding or deleting an empty file changes no lines; keep the headers
        // so application still sees the file event.
        return format!("--- {old_name}\n+++ {new_name}\n");
    }
    text
}

/// Diff every file that differs between `pristine` and `modified`, in sorted
/// path order. Added files diff from `/dev/null`; deleted files diff to it.
pub fn diff_trees(pristine: &Path, modified: &Path) -> Result<Vec<FileHunk>, PatchError> {
    let pristine_files: BTreeSet<PathBuf> = walk_files(pristine)?.into_iter().collect();
    let modified_files: BTreeSet<PathBuf> = walk_files(modified)?.into_iter().collect();

    let mut hunks = Vec::new();
    for rel in pristine_files.union(&modified_files) {
        let rel_str = rel.to_string_lossy().to_string();
        let in_pristine = pristine_files.contains(rel);
        let in_modified = modified_files.contains(rel);
        let diff = if in_pristine && in_modified {
            let old_bytes = fs::read(pristine.join(rel))?;
            let new_bytes = fs::read(modified.join(rel))?;
            if old_bytes == new_bytes {
                continue;
            }
            let old = String::from_utf8(old_bytes)
                .map_err(|_| PatchError::NonUtf8(pristine.join(rel)))?;
            let new = String::from_utf8(new_bytes)
                .map_err(|_| PatchError::NonUtf8(modified.join(rel)))?;
            unified_for(&old, &new, &format!("a/{rel_str}"), &format!("b/{rel_str}"))
        } else if in_modified {
            let new = read_text(&modified.join(rel))?;
            unified_for("", &new, DEV_NULL, &format!("b/{rel_str}"))
        } else {
            let old = read_text(&pristine.join(rel))?;
            unified_for(&old, "", &format!("a/{rel_str}"), DEV_NULL)
        };
        hunks.push(FileHunk {
            path: rel_str,
            diff,
        });
    }
    Ok(hunks)
}

/// Extract the patch for a workspace tree against its pristine base.
pub fn extract_patch(
    pristine: &Path,
    modified: &Path,
    base_digest: &str,
) -> Result<Patch, PatchError> {
    Ok(Patch {
        hunks: diff_trees(pristine, modified)?,
        base_digest: base_digest.to_string(),
    })
}

#[derive(Debug, PartialEq)]
enum FileChange {
    Add,
    Delete,
    Modify,
}

struct ParsedHunk {
    old_start: usize,
    lines: Vec<HunkLine>,
}

enum HunkLine {
    Context(String),
    Remove(String),
    Add(String),
    /// `\ No newline at end of file`: the preceding line has no terminator.
    NoNewline,
}

fn parse_header_path(line: &str, prefix: &str) -> Result<Option<String>, PatchError> {
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| PatchError::Malformed(format!("expected {prefix} header, got {line:?}")))?
        .trim();
    if rest == DEV_NULL {
        return Ok(None);
    }
    let path = rest
        .strip_prefix("a/")
        .or_else(|| rest.strip_prefix("b/"))
        .unwrap_or(rest);
    Ok(Some(path.to_string()))
}

fn parse_hunk_header(line: &str) -> Result<usize, PatchError> {
    // @@ -old_start[,old_len] +new_start[,new_len] @@
    let inner = line
        .strip_prefix("@@ -")
        .and_then(|rest| rest.split(" @@").next())
        .ok_or_else(|| PatchError::Malformed(format!("bad hunk header {line:?}")))?;
    let old_part = inner
        .split(' ')
        .next()
        .ok_or_else(|| PatchError::Malformed(format!("bad hunk header {line:?}")))?;
    let old_start: usize = old_part
        .split(',')
        .next()
        .unwrap_or("0")
        .parse()
        .map_err(|_| PatchError::Malformed(format!("bad hunk start in {line:?}")))?;
    Ok(old_start)
}

fn parse_unified(diff: &str) -> Result<(FileChange, Vec<ParsedHunk>), PatchError> {
    let mut lines = diff.lines().peekable();
    let old_path = parse_header_path(
        lines
            .next()
            .ok_or_else(|| PatchError::Malformed("empty diff".into()))?,
        "---",
    )?;
    let new_path = parse_header_path(
        lines
            .next()
            .ok_or_else(|| PatchError::Malformed("diff missing +++ header".into()))?,
        "+++",
    )?;
    let change = match (old_path.is_some(), new_path.is_some()) {
        (false, true) => FileChange::Add,
        (true, false) => FileChange::Delete,
        (true, true) => FileChange::Modify,
        (false, false) => return Err(PatchError::Malformed("both sides are /dev/null".into())),
    };

    let mut hunks = Vec::new();
    for line in lines {
        if line.starts_with("@@") {
            hunks.push(ParsedHunk {
                old_start: parse_hunk_header(line)?,
                lines: Vec::new(),
            });
            continue;
        }
        let hunk = hunks
            .last_mut()
            .ok_or_else(|| PatchError::Malformed("diff body before hunk header".into()))?;
        if let Some(rest) = line.strip_prefix('+') {
            hunk.lines.push(HunkLine::Add(rest.to_string()));
        } else if let Some(rest) = line.strip_prefix('-') {
            hunk.lines.push(HunkLine::Remove(rest.to_string()));
        } else if let Some(rest) = line.strip_prefix(' ') {
            hunk.lines.push(HunkLine::Context(rest.to_string()));
        } else if line.starts_with('\\') {
            hunk.lines.push(HunkLine::NoNewline);
        } else if line.is_empty() {
            // tolerated: an empty context line with the leading space trimmed
            hunk.lines.push(HunkLine::Context(String::new()));
        } else {
            return Err(PatchError::Malformed(format!(
                "unrecognized diff line {line:?}"
            )));
        }
    }
    Ok((change, hunks))
}

fn split_keep_terminator(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn strip_terminator(line: &str) -> &str {
    line.strip_suffix('\n').unwrap_or(line)
}

/// What the previous hunk line contributed, for `\ No newline` resolution.
#[derive(PartialEq)]
enum PrevLine {
    None,
    /// Context or addition: a line (with synthetic terminator) is in `out`.
    Emitted,
    /// Removal: consumed from the old side, nothing emitted.
    Removed,
}

fn apply_hunks_to_content(
    path: &str,
    old: &str,
    hunks: &[ParsedHunk],
) -> Result<String, PatchError> {
    let old_lines = split_keep_terminator(old);
    let mut out = String::new();
    let mut cursor = 0usize; // index into old_lines

    for hunk in hunks {
        // old_start is 1-based; 0 means "insert before the first line".
        let hunk_begin = hunk.old_start.saturating_sub(1);
        if hunk_begin < cursor {
            return Err(PatchError::Malformed(format!(
                "overlapping hunks in {path}"
            )));
        }
        while cursor < hunk_begin {
            out.push_str(old_lines.get(cursor).ok_or_else(|| {
                PatchError::Malformed(format!("hunk start beyond end of {path}"))
            })?);
            cursor += 1;
        }
        let mut prev = PrevLine::None;
        for line in &hunk.lines {
            match line {
                HunkLine::Context(expected) | HunkLine::Remove(expected) => {
                    let found = old_lines.get(cursor).copied().ok_or_else(|| {
                        PatchError::ContextMismatch {
                            path: path.to_string(),
                            line: cursor + 1,
                            expected: expected.clone(),
                            found: "<end of file>".to_string(),
                        }
                    })?;
                    if strip_terminator(found) != expected {
                        return Err(PatchError::ContextMismatch {
                            path: path.to_string(),
                            line: cursor + 1,
                            expected: expected.clone(),
                            found: strip_terminator(found).to_string(),
                        });
                    }
                    if matches!(line, HunkLine::Context(_)) {
                        out.push_str(expected);
                        out.push('\n');
                        prev = PrevLine::Emitted;
                    } else {
                        prev = PrevLine::Removed;
                    }
                    cursor += 1;
                }
                HunkLine::Add(content) => {
                    out.push_str(content);
                    out.push('\n');
                    prev = PrevLine::Emitted;
                }
                HunkLine::NoNewline => {
                    // The marker refers to the immediately preceding line. For
                    // an emitted line the synthetic terminator is dropped; for
                    // a removal it only describes the old side.
                    if prev == PrevLine::Emitted && out.ends_with('\n') {
                        out.pop();
                    }
                    prev = PrevLine::None;
                }
            }
        }
    }
    while cursor < old_lines.len() {
        out.push_str(old_lines[cursor]);
        cursor += 1;
    }
    Ok(out)
}

/// Replay a patch onto `tree`. When the patch carries a base digest, the tree
/// must currently match it.
pub fn apply_patch(patch: &Patch, tree: &Path) -> Result<(), PatchError> {
    if !patch.base_digest.is_empty() {
        let found = tree_digest(tree)?;
        if found != patch.base_digest {
            return Err(PatchError::BaseMismatch {
                expected: patch.base_digest.clone(),
                found,
            });
        }
    }
    for hunk in &patch.hunks {
        let target = tree.join(&hunk.path);
        let (change, parsed) = parse_unified(&hunk.diff)?;
        match change {
            FileChange::Delete => {
                fs::remove_file(&target)?;
            }
            FileChange::Add => {
                let content = apply_hunks_to_content(&hunk.path, "", &parsed)?;
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(&target, content)?;
            }
            FileChange::Modify => {
                let old = read_text(&target)?;
                let content = apply_hunks_to_content(&hunk.path, &old, &parsed)?;
                fs::write(&target, content)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::copy_tree;

    fn write(root: &Path, rel: &str, content: &str) {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        fs::write(path, content).unwrap();
    }

    fn round_trip(pristine: &Path, modified: &Path) {
        let patch = extract_patch(pristine, modified, &tree_digest(pristine).unwrap()).unwrap();
        let fresh = tempfile::tempdir().unwrap();
        copy_tree(pristine, fresh.path()).unwrap();
        apply_patch(&patch, fresh.path()).unwrap();
        assert_eq!(
            tree_digest(fresh.path()).unwrap(),
            tree_digest(modified).unwrap(),
            "patch round-trip did not reproduce the modified tree"
        );
    }

    #[test]
    fn untouched_tree_yields_empty_patch() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "a.txt", "one\ntwo\n");
        let copy = tempfile::tempdir().unwrap();
        copy_tree(pristine.path(), copy.path()).unwrap();
        let patch = extract_patch(pristine.path(), copy.path(), "").unwrap();
        assert!(patch.is_empty());
    }

    #[test]
    fn single_rewrite_has_one_hunk_for_that_path() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "a.txt", "one\ntwo\n");
        write(pristine.path(), "b.txt", "same\n");
        let modified = tempfile::tempdir().unwrap();
        copy_tree(pristine.path(), modified.path()).unwrap();
        write(modified.path(), "a.txt", "one\nTWO!\n");

        let patch = extract_patch(pristine.path(), modified.path(), "").unwrap();
        assert_eq!(patch.hunks.len(), 1);
        assert_eq!(patch.hunks[0].path, "a.txt");
        round_trip(pristine.path(), modified.path());
    }

    #[test]
    fn adds_deletes_and_edits_round_trip() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "keep.txt", "kept\n");
        write(pristine.path(), "gone.txt", "to be removed\nsecond\n");
        write(pristine.path(), "sub/edit.txt", "alpha\nbeta\ngamma\n");

        let modified = tempfile::tempdir().unwrap();
        copy_tree(pristine.path(), modified.path()).unwrap();
        fs::remove_file(modified.path().join("gone.txt")).unwrap();
        write(
            modified.path(),
            "sub/edit.txt",
            "alpha\nBETA\ngamma\ndelta\n",
        );
        write(modified.path(), "fresh/new.txt", "brand new\n");

        round_trip(pristine.path(), modified.path());
    }

    #[test]
    fn missing_trailing_newline_round_trips() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "x.txt", "line without end");
        let modified = tempfile::tempdir().unwrap();
        write(modified.path(), "x.txt", "line without end\nmore");
        round_trip(pristine.path(), modified.path());

        // Newline removed instead of added.
        let pristine2 = tempfile::tempdir().unwrap();
        write(pristine2.path(), "y.txt", "a\nb\n");
        let modified2 = tempfile::tempdir().unwrap();
        write(modified2.path(), "y.txt", "a\nb");
        round_trip(pristine2.path(), modified2.path());
    }

    #[test]
    fn base_digest_guard_rejects_wrong_tree() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "a.txt", "one\n");
        let modified = tempfile::tempdir().unwrap();
        write(modified.path(), "a.txt", "two\n");
        let patch = extract_patch(
            pristine.path(),
            modified.path(),
            &tree_digest(pristine.path()).unwrap(),
        )
        .unwrap();

        let wrong = tempfile::tempdir().unwrap();
        write(wrong.path(), "a.txt", "entirely different\n");
        let err = apply_patch(&patch, wrong.path()).unwrap_err();
        assert!(matches!(err, PatchError::BaseMismatch { .. }));
    }

    #[test]
    fn unified_text_concatenates_hunks() {
        let pristine = tempfile::tempdir().unwrap();
        write(pristine.path(), "a.txt", "one\n");
        write(pristine.path(), "b.txt", "two\n");
        let modified = tempfile::tempdir().unwrap();
        write(modified.path(), "a.txt", "ONE\n");
        write(modified.path(), "b.txt", "TWO\n");
        let patch = extract_patch(pristine.path(), modified.path(), "").unwrap();
        let text = patch.to_unified();
        assert!(text.contains("--- a/a.txt"));
        assert!(text.contains("+++ b/b.txt"));
    }
}
