use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use handmesh::dataio::{consistency_check, load_annotations, Agreement, ConsistencyReport, ParseMode};
use serde::Serialize;

use crate::{Format, Status};

#[derive(clap::Args)]
pub struct Args {
    /// Annotation file to check.
    pub annotations: PathBuf,
    /// A second annotation pass of the same hands; adds an agreement report.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
}

fn check(path: &PathBuf, violations: &mut Vec<Violation>) -> Result<Vec<handmesh::dataio::KeypointAnnotation>> {
    let loaded = load_annotations(path, ParseMode::Lenient).with_context(|| format!("cannot load {}", path.display()))?;
    violations.extend(loaded.skipped.into_iter().map(|(line, message)| Violation {
        file: path.display().to_string(),
        line,
        message,
    }));
    Ok(loaded.records)
}

pub fn run(args: Args) -> Result<Status> {
    let mut violations = Vec::new();
    let a = check(&args.annotations, &mut violations)?;
    let consistency = match &args.against {
        Some(p) => {
            let b = check(p, &mut violations)?;
            Some(consistency_check(&a, &b))
        }
        None => None,
    };
    let report = ValidationReport {
        records: a.len(),
        violations,
        consistency,
    };
    print!("{}", render(&report, args.format));
    if report.violations.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::Violation(format!("{} schema violations", report.violations.len())))
    }
}

fn pct(a: &Agreement) -> String {
    a.percentage()
        .map_or("-".into(), |p| format!("{p:.2}% ({}/{})", a.agree, a.total))
}

pub fn render(r: &ValidationReport, format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Json => {
            s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
        }
        Format::Table => {
            s.push_str("kind\tfile\tline\tvalue\n");
            writeln!(s, "records\t-\t-\t{}", r.records).unwrap();
            for v in &r.violations {
                writeln!(s, "violation\t{}\t{}\t{}", v.file, v.line, v.message).unwrap();
            }
            if let Some(c) = &r.consistency {
                writeln!(s, "pairs\t-\t-\t{}", c.pairs).unwrap();
                for (name, a) in [("existence", &c.existence), ("occlusion", &c.occlusion), ("offset", &c.offset)] {
                    let v = a.percentage().map_or("nan".into(), |p| p.to_string());
                    writeln!(s, "{name}\t-\t-\t{v}").unwrap();
                }
            }
        }
        Format::Text => {
            writeln!(s, "{} records, {} violations", r.records, r.violations.len()).unwrap();
            for v in &r.violations {
                writeln!(s, "  {}:{}: {}", v.file, v.line, v.message).unwrap();
            }
            if let Some(c) = &r.consistency {
                writeln!(s, "paired hands     {}", c.pairs).unwrap();
                writeln!(s, "unpaired         {} / {}", c.unpaired_a.len(), c.unpaired_b.len()).unwrap();
                writeln!(s, "existence        {}", pct(&c.existence)).unwrap();
                writeln!(s, "occlusion        {}", pct(&c.occlusion)).unwrap();
                writeln!(s, "offset           {}", pct(&c.offset)).unwrap();
                if c.offset_skipped_hands > 0 {
                    writeln!(s, "offset skipped   {} hands without a palm length", c.offset_skipped_hands).unwrap();
                }
            }
        }
    }
    s
}
