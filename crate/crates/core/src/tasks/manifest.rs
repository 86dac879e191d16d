//! Dataset manifests: one record per line, comma separated.
//!
//! ```text
//! # subtyping: id,path,label[,fold]
//! slide-001,images/a.ppm,2
//! # survival: id,path,time,event[,fold]
//! case-17,images/b.lvti,31.5,1,3
//! ```
//!
//! Blank lines and lines starting with `#` are skipped, as is a header line
//! whose first field is `id`. Relative paths resolve against the manifest's
//! directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Subtype,
    Survival,
}

impl TaskKind {
    /// Cross-validation folds used when none are requested.
    pub fn default_folds(self) -> usize {
        match self {
            TaskKind::Subtype => 10,
            TaskKind::Survival => 5,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Subtype => "AUC",
            TaskKind::Survival => "c-Index",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtype" | "subtyping" => Ok(TaskKind::Subtype),
            "survival" => Ok(TaskKind::Survival),
            other => Err(Error::config(format!(
                "unknown task {other:?} (subtype, survival)"
            ))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Subtype => "subtype",
            TaskKind::Survival => "survival",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    /// Follow-up time in months and whether the event was observed.
    Survival {
        time: f64,
        event: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub fold: Option<usize>,
}

impl StudyRecord {
    pub fn class(&self) -> Option<usize> {
        match self.label {
            Label::Class(c) => Some(c),
            Label::Survival { .. } => None,
        }
    }

    /// Key used for stratified splitting: the class, or the event flag.
    pub fn stratum(&self) -> usize {
        match self.label {
            Label::Class(c) => c,
            Label::Survival { event, .. } => usize::from(event),
        }
    }
}

pub fn parse_manifest(path: &Path, task: TaskKind) -> Result<Vec<StudyRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base, path, task)
}

/// Parses manifest text; `origin` names the source in error messages.
pub fn parse_manifest_str(
    text: &str,
    base: &Path,
    origin: &Path,
    task: TaskKind,
) -> Result<Vec<StudyRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "id" && records.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let label_cols = match task {
            TaskKind::Subtype => 1,
            TaskKind::Survival => 2,
        };
        if fields.len() != 2 + label_cols && fields.len() != 3 + label_cols {
            return Err(err(format!(
                "expected {} or {} fields for a {task} manifest, found {}",
                2 + label_cols,
                3 + label_cols,
                fields.len()
            )));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty id or path".into()));
        }
        let label = match task {
            TaskKind::Subtype => Label::Class(fields[2].parse().map_err(|_| {
                err(format!(
                    "class label {:?} is not a non-negative integer",
                    fields[2]
                ))
            })?),
            TaskKind::Survival => {
                let time: f64 = fields[2]
                    .parse()
                    .map_err(|_| err(format!("survival time {:?} is not a number", fields[2])))?;
                if !(time > 0.0 && time.is_finite()) {
                    return Err(err(format!("survival time must be positive, got {time}")));
                }
                let event = match fields[3] {
                    "1" => true,
                    "0" => false,
                    other => return Err(err(format!("event flag must be 0 or 1, got {other:?}"))),
                };
                Label::Survival { time, event }
            }
        };
        let fold = match fields.get(2 + label_cols) {
            Some(f) => Some(
                f.parse()
                    .map_err(|_| err(format!("fold {f:?} is not a non-negative integer")))?,
            ),
            None => None,
        };
        let p = Path::new(fields[1]);
        records.push(StudyRecord {
            id: fields[0].to_string(),
            path: if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            },
            label,
            fold,
        });
    }
    if records.is_empty() {
        return Err(Error::format(origin, "manifest has no records"));
    }
    Ok(records)
}

/// Renders records back into manifest text with paths as given.
pub fn write_manifest(records: &[StudyRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let label = match r.label {
            Label::Class(c) => c.to_string(),
            Label::Survival { time, event } => format!("{time},{}", u8::from(event)),
        };
        out.push_str(&format!("{},{},{label}", r.id, r.path.display()));
        if let Some(f) = r.fold {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, task: TaskKind) -> Result<Vec<StudyRecord>> {
        parse_manifest_str(text, Path::new("/data"), Path::new("m.csv"), task)
    }

    #[test]
    fn subtype_rows() {
        let r = parse(
            "# comment\nid,path,label\n\na,x.ppm,2\nb,/abs/y.ppm,0,3\n",
            TaskKind::Subtype,
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].path, PathBuf::from("/data/x.ppm"));
        assert_eq!(r[0].label, Label::Class(2));
        assert_eq!(r[1].path, PathBuf::from("/abs/y.ppm"));
        assert_eq!(r[1].fold, Some(3));
    }

    #[test]
    fn survival_rows() {
        let r = parse("a,x.ppm,12.5,1\nb,y.ppm,3,0,1\n", TaskKind::Survival).unwrap();
        assert_eq!(
            r[0].label,
            Label::Survival {
                time: 12.5,
                event: true
            }
        );
        assert_eq!(r[1].stratum(), 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("a,x.ppm,1\nb,y.ppm,cat\n", TaskKind::Subtype).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse("a,x.ppm,-1,1\n", TaskKind::Survival).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse("a,x.ppm,4,2\n", TaskKind::Survival).unwrap_err();
        assert!(e.to_string().contains("event flag"));
        assert!(parse("# nothing\n", TaskKind::Subtype).is_err());
    }

    #[test]
    fn round_trip() {
        let r = parse("a,/p/x.ppm,7.25,0,2\n", TaskKind::Survival).unwrap();
        assert_eq!(parse(&write_manifest(&r), TaskKind::Survival).unwrap(), r);
    }
}
