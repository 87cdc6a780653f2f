//! Stable content hashing and copying for directory trees.
//!
//! A tree digest is a SHA-256 over the sorted (relative path, byte length,
//! bytes) sequence of every regular file under a root. Empty directories and
//! file permissions do not contribute, so the digest is stable across copies
//! that only preserve content.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// All regular files under `root` as sorted relative paths.
pub fn walk_files(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path is under root")
                    .to_path_buf();
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Content hash over the sorted (relative path, bytes) pairs of a tree.
pub fn tree_digest(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    for rel in walk_files(root)? {
        let bytes = fs::read(root.join(&rel))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(to_hex(&hasher.finalize()))
}

/// SHA-256 of a byte string, hex encoded.
pub fn bytes_digest(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

/// First eight bytes of a SHA-256 over the given parts, as a u64 seed.
pub fn seed_from_parts(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output >= 8 bytes"))
}

pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Copy every regular file from `src` into `dst`, preserving permissions.
pub fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for rel in walk_files(src)? {
        let to = dst.join(&rel);
        if let Some(parent) = to.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(src.join(&rel), &to)?;
    }
    Ok(())
}

/// Make `dst` an exact content copy of `src`, removing anything else in it.
pub fn replace_tree(src: &Path, dst: &Path) -> io::Result<()> {
    if dst.exists() {
        for entry in fs::read_dir(dst)? {
            let path = entry?.path();
            if path.is_dir() {
                fs::remove_dir_all(&path)?;
            } else {
                fs::remove_file(&path)?;
            }
        }
    }
    copy_tree(src, dst)
}
