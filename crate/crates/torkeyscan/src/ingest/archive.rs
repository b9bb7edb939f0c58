//! Transparent reading of archive trees: plain files, gzip, tar, tar.gz.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use walkdir::WalkDir;

use super::IngestError;

/// A text document pulled out of the archive, with a name for diagnostics.
pub struct Document {
    pub name: String,
    pub text: String,
}

/// All regular files under `root`, sorted for reproducible scans.
///
/// A single file path is accepted too. An unreadable root is the one fatal
/// condition here.
pub fn collect_files(root: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let meta = std::fs::metadata(root).map_err(|source| IngestError::UnreadableRoot {
        path: root.display().to_string(),
        source,
    })?;
    if meta.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_map(|entry| match entry {
            Ok(e) if e.file_type().is_file() => Some(e.into_path()),
            Ok(_) => None,
            Err(err) => {
                log::warn!("skipping unreadable path under {}: {err}", root.display());
                None
            }
        })
        .collect();
    files.sort();
    Ok(files)
}

fn has_suffix(path: &Path, suffix: &str) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.ends_with(suffix))
        .unwrap_or(false)
}

/// Read one archive file into text documents, decompressing as needed.
pub fn read_documents(path: &Path) -> std::io::Result<Vec<Document>> {
    let file = File::open(path)?;
    let name = path.display().to_string();
    if has_suffix(path, ".tar.gz") || has_suffix(path, ".tgz") {
        read_tar(&name, GzDecoder::new(file))
    } else if has_suffix(path, ".tar") {
        read_tar(&name, file)
    } else if has_suffix(path, ".gz") {
        let mut text = String::new();
        GzDecoder::new(file).read_to_string(&mut text)?;
        Ok(vec![Document { name, text }])
    } else {
        let mut text = String::new();
        std::io::BufReader::new(file).read_to_string(&mut text)?;
        Ok(vec![Document { name, text }])
    }
}

fn read_tar<R: Read>(name: &str, reader: R) -> std::io::Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut tar = tar::Archive::new(reader);
    for entry in tar.entries()? {
        let mut entry = entry?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let entry_name = format!("{name}:{}", entry.path()?.display());
        let mut text = String::new();
        match entry.read_to_string(&mut text) {
            Ok(_) => docs.push(Document {
                name: entry_name,
                text,
            }),
            Err(err) => log::warn!("skipping non-text tar entry {entry_name}: {err}"),
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn reads_plain_gz_and_tar() {
        let dir = tempfile::tempdir().unwrap();
        let body = "router A 1.2.3.4 9001 0 0\n";

        std::fs::write(dir.path().join("plain.txt"), body).unwrap();

        let gz_path = dir.path().join("packed.gz");
        let mut gz = flate2::write::GzEncoder::new(
            File::create(&gz_path).unwrap(),
            flate2::Compression::fast(),
        );
        gz.write_all(body.as_bytes()).unwrap();
        gz.finish().unwrap();

        let tar_path = dir.path().join("bundle.tar");
        {
            let mut builder = tar::Builder::new(File::create(&tar_path).unwrap());
            let mut header = tar::Header::new_gnu();
            header.set_size(body.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            builder
                .append_data(&mut header, "inner/desc.txt", body.as_bytes())
                .unwrap();
            builder.finish().unwrap();
        }

        let files = collect_files(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let mut texts = Vec::new();
        for f in &files {
            for doc in read_documents(f).unwrap() {
                texts.push(doc.text);
            }
        }
        assert_eq!(texts.len(), 3);
        assert!(texts.iter().all(|t| t == body));
    }

    #[test]
    fn missing_root_aborts() {
        assert!(matches!(
            collect_files(Path::new("/no/such/archive/root")),
            Err(IngestError::UnreadableRoot { .. })
        ));
    }

    #[test]
    fn empty_directory_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(collect_files(dir.path()).unwrap().is_empty());
    }
}
