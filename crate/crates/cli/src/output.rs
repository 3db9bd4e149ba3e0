//! File access for the CLI. Every write goes to a temporary file in the
//! destination directory and is renamed into place.

use std::io::Write;
use std::path::Path;

use detkit::coco_io::{parse_dataset, parse_detections};
use detkit::{Dataset, DetectionSet};
use tempfile::NamedTempFile;

use crate::failure::{Failure, Outcome};

pub fn read(path: &Path) -> Outcome<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

pub fn read_dataset(path: &Path) -> Outcome<Dataset> {
    parse_dataset(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn read_detections(path: &Path, dataset: &Dataset) -> Outcome<DetectionSet> {
    let set = parse_detections(&read(path)?, dataset).map_err(|e| annotate(path, e))?;
    Ok(set.with_tag(path.display().to_string()))
}

/// Prefixes data errors with the file they came from.
fn annotate(path: &Path, e: detkit::Error) -> Failure {
    if e.is_io() {
        Failure::Core(e)
    } else {
        Failure::invalid(format!("{}: {e}", path.display()))
    }
}

pub fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Outcome<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    create_dir(dir)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Failure::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| Failure::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Failure::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let entries: Vec<_> = std::fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn missing_file_is_io_failure() {
        let err = read_dataset(Path::new("/nonexistent/gt.json")).unwrap_err();
        assert_eq!(err.exit_code(), crate::failure::EXIT_IO);
        assert!(err.to_string().contains("/nonexistent/gt.json"));
    }
}
