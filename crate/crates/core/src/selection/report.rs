//! Plain-text selection report.
//!
//! ```text
//! #strategy=greedy-scd
//! #selection={"budget":{"count":2},...}
//! #final_scd_nats=0.0473
//! #picks=2
//! 1    u1    0
//! 2    u3    0.0473
//! ```
//!
//! Pick lines are `rank<TAB>id<TAB>scd`. Extra `#` lines supplied by the
//! caller sit between `#selection=` and `#final_scd_nats=`. Floats use the
//! shortest representation that reads back exactly, so reports are
//! byte-stable.

use std::path::Path;

use super::{SelectionConfig, SelectionResult, Strategy};
use crate::error::{Error, Result};

pub fn format_report(result: &SelectionResult, extra_header: &[String]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("#strategy={}\n", result.strategy));
    out.push_str(&format!("#selection={}\n", serde_json::to_string(&result.config)?));
    for line in extra_header {
        if !line.starts_with('#') || line.contains('\n') {
            return Err(Error::InvalidArgument(format!("bad report header line {line:?}")));
        }
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!("#final_scd_nats={}\n", result.final_scd.nats));
    out.push_str(&format!("#picks={}\n", result.selected_ids.len()));
    for (i, (id, v)) in result.selected_ids.iter().zip(&result.scd_trace).enumerate() {
        out.push_str(&format!("{}\t{id}\t{v}\n", i + 1));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub strategy: Strategy,
    pub selection: SelectionConfig,
    pub final_scd_nats: f64,
    pub selected_ids: Vec<String>,
    pub scd_trace: Vec<f64>,
    /// Header lines other than the standard ones, verbatim.
    pub extra_header: Vec<String>,
}

pub fn parse_report(text: &str, path: &Path) -> Result<ParsedReport> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut strategy = None;
    let mut selection = None;
    let mut final_scd = None;
    let mut picks = None;
    let mut extra_header = Vec::new();
    let mut ids = Vec::new();
    let mut trace = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.strip_prefix("strategy=") {
                strategy = Some(v.parse::<Strategy>().map_err(|e| err(ln, e.to_string()))?);
            } else if let Some(v) = rest.strip_prefix("selection=") {
                selection = Some(serde_json::from_str(v).map_err(|e| err(ln, e.to_string()))?);
            } else if let Some(v) = rest.strip_prefix("final_scd_nats=") {
                final_scd = Some(v.parse::<f64>().map_err(|e| err(ln, e.to_string()))?);
            } else if let Some(v) = rest.strip_prefix("picks=") {
                picks = Some(v.parse::<usize>().map_err(|e| err(ln, e.to_string()))?);
            } else {
                extra_header.push(line.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(ln, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let rank: usize = fields[0].parse().map_err(|_| err(ln, format!("bad rank {:?}", fields[0])))?;
        if rank != ids.len() + 1 {
            return Err(err(ln, format!("rank {rank} out of sequence")));
        }
        ids.push(fields[1].to_string());
        trace.push(fields[2].parse::<f64>().map_err(|_| err(ln, format!("bad value {:?}", fields[2])))?);
    }
    let missing = |what: &str| err(0, format!("missing #{what}= header"));
    let picks = picks.ok_or_else(|| missing("picks"))?;
    if picks != ids.len() {
        return Err(err(0, format!("header announces {picks} picks, found {}", ids.len())));
    }
    Ok(ParsedReport {
        strategy: strategy.ok_or_else(|| missing("strategy"))?,
        selection: selection.ok_or_else(|| missing("selection"))?,
        final_scd_nats: final_scd.ok_or_else(|| missing("final_scd_nats"))?,
        selected_ids: ids,
        scd_trace: trace,
        extra_header,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::ScdValue;

    fn result() -> SelectionResult {
        SelectionResult {
            selected_ids: vec!["u1".into(), "späť".into()],
            scd_trace: vec![0.1 + 0.2, 1e-17],
            final_scd: ScdValue {
                nats: 1e-17,
                support_terms: 3,
                implicit_mass: 0.0,
            },
            strategy: Strategy::GreedyScd,
            config: SelectionConfig::with_count(2),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let extra = vec!["#config={\"x\":1}".to_string()];
        let text = format_report(&result(), &extra).unwrap();
        assert!(text.starts_with("#strategy=greedy-scd\n#selection={"));
        assert!(text.contains("\n1\tu1\t0.30000000000000004\n"));
        let p = parse_report(&text, Path::new("r")).unwrap();
        assert_eq!(p.selected_ids, result().selected_ids);
        assert_eq!(p.scd_trace, result().scd_trace);
        assert_eq!(p.final_scd_nats, 1e-17);
        assert_eq!(p.selection, result().config);
        assert_eq!(p.extra_header, extra);
    }

    #[test]
    fn rejects_malformed() {
        let text = format_report(&result(), &[]).unwrap();
        let broken = text.replace("#picks=2", "#picks=3");
        assert!(parse_report(&broken, Path::new("r")).is_err());
        let broken = text.replace("2\tspäť", "3\tspäť");
        assert!(matches!(parse_report(&broken, Path::new("r")), Err(Error::Parse { line: 6, .. })));
        assert!(format_report(&result(), &["no hash".into()]).is_err());
    }
}
