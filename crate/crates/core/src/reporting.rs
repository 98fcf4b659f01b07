//! Result tables, run-to-run diffs and run manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::error::{Error, Result};
use crate::evaluation::{format_tenths, EvaluationReport, PatternResult};
use crate::model::CacheStats;
use crate::patterns::{CorefKind, Gh22Descriptor, PatternSpec, Polarity, ScntPattern};

/// Layout of a result table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableShape {
    /// Replication grid: rate per polarity, P-N drop per pair.
    Table2,
    /// Drops for the four negated patterns.
    Table5,
    /// Drops per coreference mode, with the triplet count row.
    Table7,
}

impl FromStr for TableShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(TableShape::Table2),
            "table5" => Ok(TableShape::Table5),
            "table7" => Ok(TableShape::Table7),
            _ => Err(Error::InvalidInput(format!("unknown table shape {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(Error::InvalidInput(format!("unknown table format {s:?}"))),
        }
    }
}

pub const DROP_ROWS: [ScntPattern; 4] = [
    ScntPattern::CpTn,
    ScntPattern::CnTp,
    ScntPattern::CnTn,
    ScntPattern::CpTv,
];

fn non_empty(report: &EvaluationReport) -> Result<()> {
    if report.results.is_empty() {
        return Err(Error::Report(format!(
            "report for {} has no results",
            report.backend_id
        )));
    }
    Ok(())
}

fn row(report: &EvaluationReport, pattern: PatternSpec) -> Result<&PatternResult> {
    report
        .result(pattern)
        .ok_or_else(|| Error::MissingRow(pattern.to_string()))
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

pub fn emit_table(report: &EvaluationReport, shape: TableShape, format: TableFormat) -> Result<String> {
    non_empty(report)?;
    match shape {
        TableShape::Table2 => table2(report, format),
        TableShape::Table5 => table5(report, format),
        TableShape::Table7 => emit_coref_table(std::slice::from_ref(report), format),
    }
}

fn table5(report: &EvaluationReport, format: TableFormat) -> Result<String> {
    let rows = DROP_ROWS
        .iter()
        .map(|p| Ok((*p, row(report, PatternSpec::Scnt(*p))?.drop_display())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("pattern,drop\n");
            for (p, d) in rows {
                writeln!(out, "{p},{d}").unwrap();
            }
        }
        TableFormat::Markdown => {
            writeln!(
                out,
                "Drop of %-ACT-repetition (coreference: {})\n",
                report.provenance.config.coref
            )
            .unwrap();
            out.push_str(&md_row(&["Pattern".into(), report.backend_id.clone()]));
            out.push_str("|---|---:|\n");
            for (p, d) in rows {
                out.push_str(&md_row(&[p.to_string(), d]));
            }
        }
    }
    Ok(out)
}

fn mark(flag: bool) -> &'static str {
    if flag {
        "✓"
    } else {
        "-"
    }
}

fn table2(report: &EvaluationReport, format: TableFormat) -> Result<String> {
    let mut lines = Vec::new();
    for d in Gh22Descriptor::grid(false) {
        let r = row(report, PatternSpec::Gh22(d))?;
        let p = row(report, PatternSpec::Gh22(d.with_polarity(Polarity::P)))?;
        let n = row(report, PatternSpec::Gh22(d.with_polarity(Polarity::N)))?;
        let pn = p.counts().rate_tenths() as i64 - n.counts().rate_tenths() as i64;
        let pol = match d.polarity {
            Polarity::P => "P",
            Polarity::N => "N",
        };
        lines.push((d, pol, r.rate_display(), format_tenths(pn)));
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("n,polarity,aux,adv,rate,pn_drop\n");
            for (d, pol, rate, pn) in lines {
                writeln!(
                    out,
                    "{},{pol},{},{},{rate},{pn}",
                    d.pair_number(),
                    u8::from(d.aux),
                    u8::from(d.adv)
                )
                .unwrap();
            }
        }
        TableFormat::Markdown => {
            out.push_str(&md_row(&[
                "#".into(),
                "Pol.".into(),
                "does".into(),
                "really".into(),
                report.backend_id.clone(),
                "P-N".into(),
            ]));
            out.push_str("|---:|---|---|---|---:|---:|\n");
            for (d, pol, rate, pn) in lines {
                out.push_str(&md_row(&[
                    d.pair_number().to_string(),
                    pol.into(),
                    mark(d.aux).into(),
                    mark(d.adv).into(),
                    rate,
                    pn,
                ]));
            }
            if report.skipped_pairs > 0 {
                writeln!(out, "\n{} pairs skipped (no usable ACT)", report.skipped_pairs).unwrap();
            }
        }
    }
    Ok(out)
}

fn coref_heading(kind: CorefKind) -> &'static str {
    match kind {
        CorefKind::Pronoun => "Pronoun",
        CorefKind::RepeatName => "Coref",
        CorefKind::NonCorefSameGender => "Same-gend.",
        CorefKind::NonCorefOtherGender => "Other-gend.",
    }
}

/// One column per report, in the order given. All reports must come from
/// the same backend.
pub fn emit_coref_table(reports: &[EvaluationReport], format: TableFormat) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Report("no reports given".into()))?;
    for r in reports {
        non_empty(r)?;
        if r.backend_id != first.backend_id {
            return Err(Error::Provenance(format!(
                "cannot tabulate {} next to {}",
                r.backend_id, first.backend_id
            )));
        }
    }
    let mut counts = Vec::new();
    for r in reports {
        let stats = r.provenance.stats.as_ref().ok_or_else(|| {
            Error::Report(format!(
                "report for coreference mode {} carries no selection stats",
                r.provenance.config.coref
            ))
        })?;
        counts.push(stats.selected_triplets.to_string());
    }
    let mut body: Vec<(String, Vec<String>)> = vec![("#".into(), counts)];
    for p in DROP_ROWS {
        let cells = reports
            .iter()
            .map(|r| Ok(row(r, PatternSpec::Scnt(p))?.drop_display()))
            .collect::<Result<Vec<_>>>()?;
        body.push((p.to_string(), cells));
    }

    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let mut header = vec!["pattern".to_string()];
            header.extend(reports.iter().map(|r| r.provenance.config.coref.to_string()));
            writeln!(out, "{}", header.join(",")).unwrap();
            for (label, cells) in body {
                writeln!(out, "{label},{}", cells.join(",")).unwrap();
            }
        }
        TableFormat::Markdown => {
            writeln!(out, "Drops by coreference mode for {}\n", first.backend_id).unwrap();
            let mut header = vec!["Pattern".to_string()];
            header.extend(reports.iter().map(|r| coref_heading(r.provenance.config.coref).to_string()));
            out.push_str(&md_row(&header));
            out.push_str(&format!("|---|{}\n", "---:|".repeat(reports.len())));
            for (label, mut cells) in body {
                cells.insert(0, label);
                out.push_str(&md_row(&cells));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub pattern: PatternSpec,
    pub coref: CorefKind,
    pub rate_a: f64,
    pub rate_b: f64,
    /// `rate_b - rate_a`
    pub delta: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    pub backend_a: String,
    pub backend_b: String,
    /// Same backend, seed, configuration and inputs; any change in rate is
    /// then unexpected.
    pub same_setup: bool,
    pub rows: Vec<DiffRow>,
}

impl RunDiff {
    pub fn flagged(&self) -> impl Iterator<Item = &DiffRow> {
        self.rows.iter().filter(|r| r.flagged)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("Diff {} -> {}", self.backend_a, self.backend_b);
        if self.same_setup {
            out.push_str(" (same setup)");
        }
        out.push_str("\n\n| Pattern | Coref | A | B | Delta | |\n|---|---|---:|---:|---:|---|\n");
        for r in &self.rows {
            let a = (r.rate_a * 10.0).round() as i64;
            let b = (r.rate_b * 10.0).round() as i64;
            out.push_str(&md_row(&[
                r.pattern.to_string(),
                r.coref.to_string(),
                format_tenths(a),
                format_tenths(b),
                format_tenths(b - a),
                if r.flagged { "!".into() } else { String::new() },
            ]));
        }
        out
    }
}

pub fn diff_runs(a: &EvaluationReport, b: &EvaluationReport) -> Result<RunDiff> {
    let keys = |r: &EvaluationReport| -> BTreeSet<(PatternSpec, CorefKind)> {
        r.results.iter().map(|x| (x.pattern, x.coref)).collect()
    };
    let (ka, kb) = (keys(a), keys(b));
    if ka != kb {
        let only = |x: &BTreeSet<_>, y: &BTreeSet<_>| {
            x.difference(y)
                .map(|(p, c): &(PatternSpec, CorefKind)| format!("{p}/{c}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::Report(format!(
            "pattern sets differ: only in A [{}], only in B [{}]",
            only(&ka, &kb),
            only(&kb, &ka)
        )));
    }
    let same_setup = a.backend_id == b.backend_id
        && a.provenance.seed == b.provenance.seed
        && a.provenance.config == b.provenance.config
        && a.provenance.inputs_digest == b.provenance.inputs_digest;
    let rows = a
        .results
        .iter()
        .map(|ra| {
            let rb = b
                .results
                .iter()
                .find(|x| x.pattern == ra.pattern && x.coref == ra.coref)
                .expect("key sets are equal");
            // exact comparison of the two fractions
            let differs = ra.n_repetitions as u128 * rb.n_examples as u128
                != rb.n_repetitions as u128 * ra.n_examples as u128;
            DiffRow {
                pattern: ra.pattern,
                coref: ra.coref,
                rate_a: ra.repetition_rate,
                rate_b: rb.repetition_rate,
                delta: rb.repetition_rate - ra.repetition_rate,
                flagged: same_setup && differs,
            }
        })
        .collect();
    Ok(RunDiff {
        backend_a: a.backend_id.clone(),
        backend_b: b.backend_id.clone(),
        same_setup,
        rows,
    })
}

/// Everything needed to tell two runs apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub backend_id: String,
    pub lexicon_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
    pub cache: CacheStats,
    pub harness_version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        backend_id: &str,
        lexicon_hashes: BTreeMap<String, String>,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        let mut h = FieldHasher::new();
        h.field(command).field(backend_id).field(seed.to_string());
        for (k, v) in &lexicon_hashes {
            h.field(k).field(v);
        }
        h.field(config.to_string()).field(crate::HARNESS_VERSION);
        let mut run_id = h.finish_hex();
        run_id.truncate(16);
        let now = crate::clock::now_rfc3339();
        RunManifest {
            run_id,
            command: command.to_string(),
            backend_id: backend_id.to_string(),
            lexicon_hashes,
            seed,
            config,
            started_at: now.clone(),
            finished_at: now,
            cache: CacheStats::default(),
            harness_version: crate::HARNESS_VERSION.to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, cache: CacheStats, outputs: Vec<String>) {
        self.finished_at = crate::clock::now_rfc3339();
        self.cache = cache;
        self.outputs = outputs;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        )?)
    }
}

/// SHA-256 of a file's bytes, for manifests.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::digest::sha256_hex(&bytes))
}
