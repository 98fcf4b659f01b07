//! %-ACT-repetition and drops over selected triplets.
//!
//! Counts are kept as integers; rates are derived from them and rounded to
//! one decimal only when displayed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Gender, NameEntry, Profession, VerbLexicon};
use crate::model::{Client, MatchPolicy};
use crate::patterns::{
    render_gh22, render_scnt, CorefKind, Gh22Descriptor, PatternSpec, Polarity, RenderedExample,
    ScntPattern, Triplet,
};
use crate::selection::{
    inputs_digest, pick_gh22_acts, select_triplets, SelectionConfig, SelectionSet, SelectionStats,
    TestFamily,
};

/// Repetition tally for one slice of examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_examples: u64,
    pub n_repetitions: u64,
}

impl Counts {
    pub fn new(n_examples: u64, n_repetitions: u64) -> Self {
        Counts {
            n_examples,
            n_repetitions,
        }
    }

    fn record(&mut self, repeated: bool) {
        self.n_examples += 1;
        self.n_repetitions += u64::from(repeated);
    }

    pub fn rate(&self) -> f64 {
        if self.n_examples == 0 {
            return 0.0;
        }
        100.0 * self.n_repetitions as f64 / self.n_examples as f64
    }

    /// Repetition rate in tenths of a percent, rounded half up.
    pub fn rate_tenths(&self) -> u64 {
        if self.n_examples == 0 {
            return 0;
        }
        let n = self.n_examples as u128;
        ((2000 * self.n_repetitions as u128 + n) / (2 * n)) as u64
    }

    pub fn drop_tenths(&self) -> u64 {
        1000 - self.rate_tenths()
    }
}

/// Formats tenths as a one-decimal number.
pub fn format_tenths(tenths: i64) -> String {
    let sign = if tenths < 0 { "-" } else { "" };
    let t = tenths.unsigned_abs();
    format!("{sign}{}.{}", t / 10, t % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResult {
    pub pattern: PatternSpec,
    pub coref: CorefKind,
    pub n_examples: u64,
    pub n_repetitions: u64,
    pub repetition_rate: f64,
    pub drop: f64,
    pub by_gender: BTreeMap<Gender, Counts>,
    pub by_profession: BTreeMap<String, Counts>,
}

impl PatternResult {
    pub fn new(pattern: PatternSpec, coref: CorefKind, counts: Counts) -> Result<Self> {
        if counts.n_examples == 0 {
            return Err(Error::InvalidInput(format!("no examples for pattern {pattern}")));
        }
        if counts.n_repetitions > counts.n_examples {
            return Err(Error::Integrity(format!(
                "{} repetitions out of {} examples",
                counts.n_repetitions, counts.n_examples
            )));
        }
        let rate = counts.rate();
        Ok(PatternResult {
            pattern,
            coref,
            n_examples: counts.n_examples,
            n_repetitions: counts.n_repetitions,
            repetition_rate: rate,
            drop: 100.0 - rate,
            by_gender: BTreeMap::new(),
            by_profession: BTreeMap::new(),
        })
    }

    pub fn counts(&self) -> Counts {
        Counts::new(self.n_examples, self.n_repetitions)
    }

    pub fn rate_display(&self) -> String {
        format_tenths(self.counts().rate_tenths() as i64)
    }

    pub fn drop_display(&self) -> String {
        format_tenths(self.counts().drop_tenths() as i64)
    }
}

/// Where the evaluated triplets came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: SelectionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SelectionStats>,
    pub inputs_digest: String,
}

impl Provenance {
    fn of(selection: &SelectionSet) -> Self {
        Provenance {
            seed: selection.config.seed,
            config: selection.config.clone(),
            stats: Some(selection.stats.clone()),
            inputs_digest: selection.inputs_digest.clone(),
        }
    }
}

/// P rate minus N rate for one replication pattern pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gh22PairDrop {
    pub pair: u8,
    pub aux: bool,
    pub adv: bool,
    pub connective: bool,
    pub p_rate: f64,
    pub n_rate: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub backend_id: String,
    pub provenance: Provenance,
    pub match_policy: MatchPolicy,
    pub results: Vec<PatternResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gh22_drops: Vec<Gh22PairDrop>,
    #[serde(default)]
    pub skipped_pairs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub timestamp: String,
    pub harness_version: String,
}

impl EvaluationReport {
    fn new(client: &Client, provenance: Provenance, results: Vec<PatternResult>) -> Self {
        EvaluationReport {
            backend_id: client.backend_id().to_string(),
            provenance,
            match_policy: client.match_policy(),
            results,
            gh22_drops: Vec::new(),
            skipped_pairs: 0,
            run_id: None,
            timestamp: crate::clock::now_rfc3339(),
            harness_version: crate::HARNESS_VERSION.to_string(),
        }
    }

    pub fn result(&self, pattern: PatternSpec) -> Option<&PatternResult> {
        self.results.iter().find(|r| r.pattern == pattern)
    }

    pub fn scnt(&self, pattern: ScntPattern) -> Option<&PatternResult> {
        self.result(PatternSpec::Scnt(pattern))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let report: EvaluationReport = serde_json::from_str(text)?;
        for r in &report.results {
            let expected = PatternResult::new(r.pattern, r.coref, r.counts())?;
            if expected.repetition_rate != r.repetition_rate || expected.drop != r.drop {
                return Err(Error::Integrity(format!(
                    "rates for {} do not match their counts",
                    r.pattern
                )));
            }
        }
        Ok(report)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        EvaluationReport::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// One row per pattern result, preceded by `#` lines carrying the
    /// backend and the provenance block.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# backend_id: {}\n", self.backend_id);
        out.push_str(&format!(
            "# provenance: {}\n",
            serde_json::to_string(&self.provenance).expect("provenance serializes")
        ));
        out.push_str("pattern,coref,n_examples,n_repetitions,repetition_rate,drop\n");
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.pattern,
                r.coref,
                r.n_examples,
                r.n_repetitions,
                r.rate_display(),
                r.drop_display()
            ));
        }
        out
    }
}

/// Queries top-1 for every example and tallies ACT repetitions overall, per
/// gender and per profession.
fn tally(client: &Client, pattern: PatternSpec, coref: CorefKind, examples: &[RenderedExample]) -> Result<PatternResult> {
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let top = client.top1(&texts)?;
    let mut all = Counts::default();
    let mut by_gender: BTreeMap<Gender, Counts> = BTreeMap::new();
    let mut by_profession: BTreeMap<String, Counts> = BTreeMap::new();
    for (ex, predicted) in examples.iter().zip(&top) {
        let act = ex.act.as_deref().unwrap_or_default();
        let hit = client.matches(predicted, act);
        all.record(hit);
        by_gender.entry(ex.name.gender).or_default().record(hit);
        by_profession
            .entry(ex.profession.label.clone())
            .or_default()
            .record(hit);
    }
    let mut result = PatternResult::new(pattern, coref, all)?;
    result.by_gender = by_gender;
    result.by_profession = by_profession;
    Ok(result)
}

fn check_backend(client: &Client, selection: &SelectionSet) -> Result<()> {
    if selection.backend_id != client.backend_id() {
        return Err(Error::Provenance(format!(
            "selection was built for {} but the backend is {}",
            selection.backend_id,
            client.backend_id()
        )));
    }
    Ok(())
}

pub fn repetition_rate(client: &Client, selection: &SelectionSet, pattern: ScntPattern) -> Result<PatternResult> {
    check_backend(client, selection)?;
    if selection.triplets.is_empty() {
        return Err(Error::InvalidInput("selection has no triplets".into()));
    }
    let examples = selection
        .triplets
        .iter()
        .map(|t| render_scnt(&t.triplet, pattern, &t.coref, selection.config.target_family))
        .collect::<Result<Vec<_>>>()?;
    tally(client, PatternSpec::Scnt(pattern), selection.config.coref, &examples)
}

/// All five patterns, CpTp first as the re-verification row.
pub fn run_scnt(client: &Client, selection: &SelectionSet) -> Result<EvaluationReport> {
    let results = ScntPattern::ALL
        .into_iter()
        .map(|p| repetition_rate(client, selection, p))
        .collect::<Result<Vec<_>>>()?;
    if results[0].n_repetitions != results[0].n_examples {
        log::warn!(
            "CpTp re-verification failed for {}: {} of {} repeat",
            client.backend_id(),
            results[0].n_repetitions,
            results[0].n_examples
        );
    }
    Ok(EvaluationReport::new(client, Provenance::of(selection), results))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorefRun {
    pub selection: SelectionSet,
    pub report: EvaluationReport,
}

pub const COREF_SUITE: [CorefKind; 3] = [
    CorefKind::RepeatName,
    CorefKind::NonCorefSameGender,
    CorefKind::NonCorefOtherGender,
];

/// Re-selects and evaluates under each coreference control mode.
pub fn run_coref_suite(
    client: &Client,
    names: &[NameEntry],
    professions: &[Profession],
    lexicon: &VerbLexicon,
    base_config: &SelectionConfig,
) -> Result<Vec<CorefRun>> {
    COREF_SUITE
        .into_iter()
        .map(|coref| {
            let config = SelectionConfig {
                coref,
                ..base_config.clone()
            };
            let selection = select_triplets(client, names, professions, lexicon, &config)?;
            let report = run_scnt(client, &selection)?;
            Ok(CorefRun { selection, report })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Gh22Options {
    /// Also evaluate the "However,"/"So," variants.
    pub connectives: bool,
}

pub fn run_gh22_replication(
    client: &Client,
    names: &[NameEntry],
    professions: &[Profession],
    options: Gh22Options,
) -> Result<EvaluationReport> {
    let pairs: Vec<(&NameEntry, &Profession)> = names
        .iter()
        .flat_map(|n| professions.iter().map(move |p| (n, p)))
        .collect();
    let acts = pick_gh22_acts(client, &pairs)?;
    let skipped = acts.iter().filter(|a| a.is_none()).count() as u64;
    let triplets: Vec<Triplet> = pairs
        .iter()
        .zip(acts)
        .filter_map(|((n, p), act)| act.map(|a| Triplet::new((*n).clone(), (*p).clone(), a)))
        .collect();
    if triplets.is_empty() {
        return Err(Error::InvalidInput("no pair produced a usable ACT token".into()));
    }

    let grid = Gh22Descriptor::grid(options.connectives);
    let mut results = Vec::with_capacity(grid.len());
    for d in &grid {
        let examples: Vec<RenderedExample> = triplets.iter().map(|t| render_gh22(t, *d)).collect();
        results.push(tally(client, PatternSpec::Gh22(*d), CorefKind::Pronoun, &examples)?);
    }

    let rate_of = |d: Gh22Descriptor| {
        results
            .iter()
            .find(|r| r.pattern == PatternSpec::Gh22(d))
            .map(|r| r.repetition_rate)
    };
    let gh22_drops = grid
        .iter()
        .filter(|d| d.polarity == Polarity::P)
        .filter_map(|d| {
            let p_rate = rate_of(*d)?;
            let n_rate = rate_of(d.with_polarity(Polarity::N))?;
            Some(Gh22PairDrop {
                pair: d.pair_number(),
                aux: d.aux,
                adv: d.adv,
                connective: d.connective,
                p_rate,
                n_rate,
                drop: p_rate - n_rate,
            })
        })
        .collect();

    let provenance = Provenance {
        seed: 0,
        config: SelectionConfig {
            max_verbs_per_pair: 1,
            test_family: TestFamily::Gh22,
            ..SelectionConfig::default()
        },
        stats: None,
        inputs_digest: inputs_digest(names, professions, &[]),
    };
    let mut report = EvaluationReport::new(client, provenance, results);
    report.gh22_drops = gh22_drops;
    report.skipped_pairs = skipped;
    Ok(report)
}
