//! File formats: PNG frames, Middlebury `.flo` flows, checkpoint archives and
//! the run configuration file. Writers go through a temporary file and an
//! atomic rename.

mod checkpoint;
mod config;
mod flo;
mod image;

pub use self::checkpoint::{read_archive, write_archive, ArchiveEntry, CheckpointArchive, Manifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use self::config::RunConfig;
pub use self::flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_TAG};
pub use self::image::{read_image, write_image};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::contract(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
