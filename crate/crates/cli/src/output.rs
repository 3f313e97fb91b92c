use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

/// Where the primary output goes. Summaries move to stderr when the data owns stdout.
pub enum Sink {
    /// `explicit` is set when `--out -` was given.
    Stdout { explicit: bool },
    File(PathBuf),
}

impl Sink {
    pub fn new(out: Option<&str>) -> Result<Self> {
        match out {
            None => Ok(Sink::Stdout { explicit: false }),
            Some("-") => Ok(Sink::Stdout { explicit: true }),
            Some(p) => {
                let path = PathBuf::from(p);
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    if !dir.is_dir() {
                        bail!("output directory {} does not exist", dir.display());
                    }
                }
                Ok(Sink::File(path))
            }
        }
    }

    /// `true` unless no `--out` was given.
    pub fn requested(&self) -> bool {
        !matches!(self, Sink::Stdout { explicit: false })
    }

    pub fn write(&self, bytes: &[u8]) -> Result<()> {
        match self {
            Sink::Stdout { .. } => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
            }
            Sink::File(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        }
        Ok(())
    }

    pub fn info(&self, line: &str) {
        match self {
            Sink::Stdout { .. } => eprintln!("{line}"),
            Sink::File(_) => println!("{line}"),
        }
    }
}
