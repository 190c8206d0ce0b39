//! Timestamped run directories.
//!
//! Every run gets a fresh `<out>/<timestamp>-<command>` directory holding
//! `config.json` (the resolved configuration) and `log.txt`. The file
//! `<out>/latest` names the most recently created run.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::container::{io_err, write_json_file, ContainerError};

pub const LATEST_FILE: &str = "latest";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.txt";

pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates a new run directory; never reuses an existing one.
    pub fn create<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<Self, ContainerError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{stamp}-{command}");
        let mut n = 1;
        let path = loop {
            let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let candidate = out.join(&name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&candidate)(e)),
            }
        };
        let run = Self { path };
        write_json_file(&run.path.join(CONFIG_ECHO_FILE), config)?;
        let latest = out.join(LATEST_FILE);
        let name = run.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        fs::write(&latest, format!("{name}\n")).map_err(io_err(&latest))?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a timestamped line to `log.txt` and echoes it to stderr.
    pub fn log(&self, message: &str) {
        let line = format!("{} {message}\n", chrono::Local::now().format("%Y-%m-%dT%H:%M:%S%.3f"));
        eprint!("{line}");
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(self.path.join(LOG_FILE)) {
            let _ = f.write_all(line.as_bytes());
        }
    }
}

/// Directory named by `<out>/latest`.
pub fn latest(out: &Path) -> Result<PathBuf, ContainerError> {
    let path = out.join(LATEST_FILE);
    let name = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(out.join(name.trim()))
}
