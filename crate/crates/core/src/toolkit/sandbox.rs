use std::path::{Component, Path, PathBuf};

use super::{ToolErrorKind, ToolResult};

fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for component in path.components() {
        match component {
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    Some(out)
}

/// Resolves `requested` against `root` and guarantees the result stays inside
/// it. Lexical escapes (`../`) and symlinks leaving the root are `Blocked`;
/// a path that does not exist is `NotFound`.
pub fn resolve_within(root: &Path, requested: &str) -> Result<PathBuf, ToolResult> {
    let root = root.canonicalize().map_err(|e| {
        ToolResult::err(
            ToolErrorKind::ExecutionError,
            format!("sandbox root {} is unavailable: {e}", root.display()),
        )
    })?;
    let blocked = || {
        ToolResult::err(
            ToolErrorKind::Blocked,
            format!("path `{requested}` is outside the sandbox"),
        )
    };

    let requested_path = Path::new(requested);
    let joined = if requested_path.is_absolute() {
        requested_path.to_path_buf()
    } else {
        root.join(requested_path)
    };
    let lexical = normalize(&joined).ok_or_else(blocked)?;
    if !lexical.starts_with(&root) {
        return Err(blocked());
    }
    if !lexical.exists() {
        return Err(ToolResult::err(
            ToolErrorKind::NotFound,
            format!("no such file: {requested}"),
        ));
    }
    let canonical = lexical.canonicalize().map_err(|e| {
        ToolResult::err(ToolErrorKind::ExecutionError, format!("{requested}: {e}"))
    })?;
    if !canonical.starts_with(&root) {
        return Err(blocked());
    }
    Ok(canonical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn escapes_are_blocked() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ws");
        fs::create_dir_all(root.join("sub")).unwrap();
        fs::write(dir.path().join("secret.txt"), "secret").unwrap();
        fs::write(root.join("sub/ok.txt"), "ok").unwrap();

        assert!(resolve_within(&root, "sub/ok.txt").is_ok());
        assert!(resolve_within(&root, "sub/../sub/./ok.txt").is_ok());

        for attempt in [
            "../secret.txt",
            "sub/../../secret.txt",
            "../../../../etc/passwd",
            dir.path().join("secret.txt").to_str().unwrap(),
        ] {
            let err = resolve_within(&root, attempt).unwrap_err();
            assert_eq!(err.error_kind, Some(ToolErrorKind::Blocked), "{attempt}");
        }

        let missing = resolve_within(&root, "absent.txt").unwrap_err();
        assert_eq!(missing.error_kind, Some(ToolErrorKind::NotFound));
    }

    #[cfg(unix)]
    #[test]
    fn symlink_out_of_root_is_blocked() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ws");
        fs::create_dir_all(&root).unwrap();
        fs::write(dir.path().join("secret.txt"), "secret").unwrap();
        std::os::unix::fs::symlink(dir.path().join("secret.txt"), root.join("link.txt")).unwrap();
        let err = resolve_within(&root, "link.txt").unwrap_err();
        assert_eq!(err.error_kind, Some(ToolErrorKind::Blocked));
    }
}
