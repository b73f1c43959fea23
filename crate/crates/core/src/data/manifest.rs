//! Plain-text dataset manifest.
//!
//! ```text
//! #channels=3 height=32 width=32 classes=8 task=multiclass bands=b00,b01,b02
//! samples/s00000.vigt<TAB>3
//! samples/s00001.vigt<TAB>0;5
//! ```
//!
//! `bands=` is optional. Blank lines and later `#` lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, VigError};
use crate::model::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub task: Task,
    pub bands: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> VigError {
    VigError::Data(format!("manifest line {line}: {msg}"))
}

fn parse_header(line: &str) -> Result<ManifestHeader> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "expected a '#key=value ...' header"))?;
    let (mut channels, mut height, mut width, mut classes, mut task, mut bands) =
        (None, None, None, None, None, None);
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(1, format!("header field '{field}' is not key=value")))?;
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| bad(1, format!("{key} must be a non-negative integer, got '{value}'")))
        };
        match key {
            "channels" => channels = Some(num()?),
            "height" => height = Some(num()?),
            "width" => width = Some(num()?),
            "classes" => classes = Some(num()?),
            "task" => task = Some(value.parse::<Task>().map_err(|e| bad(1, e))?),
            "bands" => bands = Some(value.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => return Err(bad(1, format!("unknown header key '{key}'"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| bad(1, format!("header lacks '{k}='")));
    let header = ManifestHeader {
        channels: need(channels, "channels")?,
        height: need(height, "height")?,
        width: need(width, "width")?,
        classes: need(classes, "classes")?,
        task: task.ok_or_else(|| bad(1, "header lacks 'task='"))?,
        bands,
    };
    if header.channels == 0 || header.height == 0 || header.width == 0 || header.classes == 0 {
        return Err(bad(1, "channels, height, width and classes must be positive"));
    }
    if let Some(b) = &header.bands {
        if b.len() != header.channels {
            return Err(bad(
                1,
                format!("{} band names for {} channels", b.len(), header.channels),
            ));
        }
    }
    Ok(header)
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((_, l)) => break parse_header(l.trim())?,
                None => return Err(VigError::Data("manifest is empty".into())),
            }
        };
        let mut records = Vec::new();
        for (i, raw) in lines {
            let ln = i + 1;
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, spec) = line
                .split_once('\t')
                .ok_or_else(|| bad(ln, "expected '<path><TAB><labels>'"))?;
            let mut labels = spec
                .trim()
                .split(';')
                .map(|s| {
                    let c = s
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| bad(ln, format!("label '{s}' is not an integer")))?;
                    if c >= header.classes {
                        return Err(bad(ln, format!("label {c} out of range for {} classes", header.classes)));
                    }
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            labels.sort_unstable();
            labels.dedup();
            if header.task == Task::Multiclass && labels.len() != 1 {
                return Err(bad(ln, "multiclass samples need exactly one label"));
            }
            records.push(ManifestRecord {
                path: path.to_string(),
                labels,
            });
        }
        Ok(Manifest { header, records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| VigError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let h = &self.header;
        let mut s = format!(
            "#channels={} height={} width={} classes={} task={}",
            h.channels, h.height, h.width, h.classes, h.task
        );
        if let Some(b) = &h.bands {
            let _ = write!(s, " bands={}", b.join(","));
        }
        s.push('\n');
        for r in &self.records {
            let labels: Vec<String> = r.labels.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}\t{}", r.path, labels.join(";"));
        }
        s
    }
}
