use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::exit::{fail, CliResult, Context, Exit};

/// Expected leading bytes of an artifact.
#[derive(Clone, Copy, Debug)]
pub enum Magic {
    Bytes(&'static [u8]),
    /// First line of a CSV file.
    CsvHeader(&'static str),
    /// A CSV whose first line starts with `#`, followed by this header.
    CsvCommentedHeader(&'static str),
}

/// Record of one command invocation and everything it wrote.
#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub flags: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, flags: String) -> Self {
        Self { command: command.to_string(), args, flags, ..Self::default() }
    }

    /// Writes `path` through `body`, then checks its magic.
    pub fn write(
        &mut self,
        path: &Path,
        magic: Magic,
        body: impl FnOnce(&mut BufWriter<File>) -> modpose::Result<()>,
    ) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).code(Exit::Output, format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).code(Exit::Output, format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w).code(Exit::Output, format!("writing {}", path.display()))?;
        w.flush().code(Exit::Output, format!("writing {}", path.display()))?;
        drop(w);
        validate(path, magic)?;
        if self.outputs.iter().any(|p| p == path) {
            return fail(Exit::Output, format!("{} written twice", path.display()));
        }
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = String::new();
        text.push_str(&format!("command={}\n", self.command));
        text.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        for a in &self.args {
            text.push_str(&format!("arg={a}\n"));
        }
        text.push_str(&format!("flags={}\n", self.flags));
        for s in &self.seeds {
            text.push_str(&format!("seed={s}\n"));
        }
        for o in &self.outputs {
            text.push_str(&format!("output={}\n", o.display()));
        }
        text.push_str(&format!("wall_seconds={:.3}\n", self.wall_seconds));
        fs::write(path, text).code(Exit::Output, format!("writing {}", path.display()))
    }
}

/// Command-line arguments recorded in a manifest.
pub fn replay_args(path: &Path) -> CliResult<Vec<String>> {
    let file = File::open(path).code(Exit::MissingInput, format!("opening {}", path.display()))?;
    let mut args = Vec::new();
    let mut command = None;
    for line in BufReader::new(file).lines() {
        let line = line.code(Exit::BadFormat, format!("reading {}", path.display()))?;
        if let Some(a) = line.strip_prefix("arg=") {
            args.push(a.to_string());
        } else if let Some(c) = line.strip_prefix("command=") {
            command = Some(c.to_string());
        }
    }
    match command {
        Some(c) if args.contains(&c) => Ok(args),
        _ => fail(Exit::BadFormat, format!("{} is not a run manifest", path.display())),
    }
}

fn validate(path: &Path, magic: Magic) -> CliResult<()> {
    let mut head = Vec::new();
    File::open(path)
        .and_then(|f| f.take(4096).read_to_end(&mut head))
        .code(Exit::Output, format!("re-reading {}", path.display()))?;
    let ok = match magic {
        Magic::Bytes(m) => head.starts_with(m),
        Magic::CsvHeader(h) => head.starts_with(format!("{h}\n").as_bytes()),
        Magic::CsvCommentedHeader(h) => {
            let text = String::from_utf8_lossy(&head);
            let mut lines = text.lines();
            lines.next().is_some_and(|l| l.starts_with('#')) && lines.next() == Some(h)
        }
    };
    if ok {
        Ok(())
    } else {
        fail(Exit::Output, format!("{} failed format validation", path.display()))
    }
}
