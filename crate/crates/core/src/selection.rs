//! Per-model selection of `[NAME, PROF, verb]` triplets.
//!
//! For every name/profession pair, each lexicon verb is tried in the CpTp
//! pattern; a verb is eligible when the model's top-1 at the mask is that
//! same verb. At most `max_verbs_per_pair` eligible verbs are kept per pair,
//! drawn with an RNG seeded from `(seed, name, profession)` so the outcome
//! does not depend on processing order or worker count.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::error::{Error, Result};
use crate::lexicon::{NameEntry, Profession, VerbLexicon};
use crate::model::{normalize_token, Client};
use crate::patterns::{
    render_gh22_selector, render_scnt, CorefKind, CorefMode, ScntPattern, TargetFamily, Triplet,
};

pub const DEFAULT_MAX_VERBS_PER_PAIR: usize = 20;

/// Pairs rendered and queried together; bounds memory on full-size grids.
const PAIR_CHUNK: usize = 32;

const SELECTION_FORMAT: &str = "selfneg-selection/1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    #[default]
    Scnt,
    Gh22,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub max_verbs_per_pair: usize,
    pub seed: u64,
    pub coref: CorefKind,
    pub target_family: TargetFamily,
    pub test_family: TestFamily,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_verbs_per_pair: DEFAULT_MAX_VERBS_PER_PAIR,
            seed: 0,
            coref: CorefKind::Pronoun,
            target_family: TargetFamily::Happy,
            test_family: TestFamily::Scnt,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_verbs_per_pair == 0 {
            return Err(Error::InvalidInput("max_verbs_per_pair must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counts in the order of the selection-stage statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub available_verbs: u64,
    pub available_pairs: u64,
    pub tested_triplets: u64,
    pub repeating_triplets: u64,
    /// `100 * repeating / tested`
    pub ratio: f64,
    pub selected_triplets: u64,
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl SelectionStats {
    pub fn new(available_verbs: u64, available_pairs: u64, repeating: u64, selected: u64) -> Self {
        let tested = available_verbs * available_pairs;
        SelectionStats {
            available_verbs,
            available_pairs,
            tested_triplets: tested,
            repeating_triplets: repeating,
            ratio: percent(repeating, tested),
            selected_triplets: selected,
        }
    }

    /// Checks every arithmetic identity between the counts.
    pub fn check(&self, max_verbs_per_pair: usize) -> Result<()> {
        let fail = |what: &str| Err(Error::Integrity(format!("selection stats: {what} ({self:?})")));
        if Some(self.tested_triplets) != self.available_verbs.checked_mul(self.available_pairs) {
            return fail("tested != verbs x pairs");
        }
        if self.repeating_triplets > self.tested_triplets {
            return fail("repeating > tested");
        }
        if self.ratio != percent(self.repeating_triplets, self.tested_triplets) {
            return fail("ratio != 100 x repeating / tested");
        }
        if self.selected_triplets > self.repeating_triplets {
            return fail("selected > repeating");
        }
        if self.selected_triplets > self.available_pairs.saturating_mul(max_verbs_per_pair as u64) {
            return fail("selected > pairs x cap");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedTriplet {
    #[serde(flatten)]
    pub triplet: Triplet,
    pub coref: CorefMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSet {
    pub backend_id: String,
    pub config: SelectionConfig,
    /// Digest of the name, profession and verb lists used.
    pub inputs_digest: String,
    pub stats: SelectionStats,
    pub triplets: Vec<SelectedTriplet>,
}

#[derive(Serialize, Deserialize)]
struct SelectionHeader {
    format: String,
    backend_id: String,
    seed: u64,
    config: SelectionConfig,
    inputs_digest: String,
    stats: SelectionStats,
}

impl SelectionSet {
    /// Header line followed by one triplet record per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = SelectionHeader {
            format: SELECTION_FORMAT.into(),
            backend_id: self.backend_id.clone(),
            seed: self.config.seed,
            config: self.config.clone(),
            inputs_digest: self.inputs_digest.clone(),
            stats: self.stats.clone(),
        };
        let io = |e| Error::io("<selection>", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for t in &self.triplets {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::EmptyLexicon {
            path: source.to_string(),
        })?;
        let header: SelectionHeader = serde_json::from_str(header)?;
        if header.format != SELECTION_FORMAT {
            return Err(Error::InvalidInput(format!(
                "{source}: unsupported selection format {:?}",
                header.format
            )));
        }
        if header.seed != header.config.seed {
            return Err(Error::Integrity(format!("{source}: header seed differs from config seed")));
        }
        let triplets = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                    path: source.to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<SelectedTriplet>>>()?;
        let set = SelectionSet {
            backend_id: header.backend_id,
            config: header.config,
            inputs_digest: header.inputs_digest,
            stats: header.stats,
            triplets,
        };
        set.check()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SelectionSet::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Structural invariants: stats identities, triplet count and the
    /// per-pair cap.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        self.stats.check(self.config.max_verbs_per_pair)?;
        if self.triplets.len() as u64 != self.stats.selected_triplets {
            return Err(Error::Integrity(format!(
                "{} triplets but stats report {} selected",
                self.triplets.len(),
                self.stats.selected_triplets
            )));
        }
        let mut per_pair: HashMap<(&str, &str), usize> = HashMap::new();
        for t in &self.triplets {
            t.coref.validate(&t.triplet.name)?;
            if t.coref.kind != self.config.coref {
                return Err(Error::Integrity(format!(
                    "triplet coref {} differs from configured {}",
                    t.coref.kind, self.config.coref
                )));
            }
            let n = per_pair
                .entry((&t.triplet.name.name, &t.triplet.profession.label))
                .or_default();
            *n += 1;
            if *n > self.config.max_verbs_per_pair {
                return Err(Error::Integrity(format!(
                    "pair ({}, {}) exceeds {} verbs",
                    t.triplet.name.name, t.triplet.profession.label, self.config.max_verbs_per_pair
                )));
            }
        }
        Ok(())
    }

    /// Re-queries every triplet's CpTp rendering; all must repeat the verb.
    pub fn verify(&self, client: &Client) -> Result<()> {
        let texts = self
            .triplets
            .iter()
            .map(|t| {
                render_scnt(&t.triplet, ScntPattern::CpTp, &t.coref, self.config.target_family)
                    .map(|ex| ex.text)
            })
            .collect::<Result<Vec<_>>>()?;
        let top = client.top1(&texts)?;
        for (t, predicted) in self.triplets.iter().zip(top) {
            if !client.matches(&predicted, &t.triplet.verb) {
                return Err(Error::Integrity(format!(
                    "triplet ({}, {}, {}) no longer repeats: top-1 {predicted:?}",
                    t.triplet.name.name, t.triplet.profession.label, t.triplet.verb
                )));
            }
        }
        Ok(())
    }
}

pub fn inputs_digest(names: &[NameEntry], professions: &[Profession], verbs: &[String]) -> String {
    let mut h = FieldHasher::new();
    h.field("names");
    for n in names {
        h.field(&n.name).field(n.gender.as_str());
    }
    h.field("professions");
    for p in professions {
        h.field(&p.label).field(p.article.as_str());
    }
    h.field("verbs");
    for v in verbs {
        h.field(v);
    }
    h.finish_hex()
}

/// Sampling substream for one pair.
pub fn pair_rng(seed: u64, name: &NameEntry, profession: &Profession) -> ChaCha8Rng {
    let mut h = FieldHasher::new();
    h.field(seed.to_le_bytes())
        .field(&name.name)
        .field(name.gender.as_str())
        .field(&profession.label);
    ChaCha8Rng::from_seed(h.finish())
}

/// Draws the target-sentence name for the non-coreference modes.
fn draw_coref(
    kind: CorefKind,
    name: &NameEntry,
    names: &[NameEntry],
    rng: &mut ChaCha8Rng,
) -> Result<CorefMode> {
    let candidates: Vec<&NameEntry> = match kind {
        CorefKind::Pronoun => return Ok(CorefMode::PRONOUN),
        CorefKind::RepeatName => return Ok(CorefMode::REPEAT_NAME),
        CorefKind::NonCorefSameGender => names
            .iter()
            .filter(|n| n.gender == name.gender && n.name != name.name)
            .collect(),
        CorefKind::NonCorefOtherGender => names.iter().filter(|n| n.gender != name.gender).collect(),
    };
    let alt = candidates.choose(rng).ok_or_else(|| {
        Error::Coref(format!("no alternate name available for {} in mode {kind}", name.name))
    })?;
    Ok(CorefMode::non_coref(kind, (*alt).clone()))
}

struct PairPlan {
    name: usize,
    profession: usize,
    coref: CorefMode,
    rng: ChaCha8Rng,
}

pub fn select_triplets(
    client: &Client,
    names: &[NameEntry],
    professions: &[Profession],
    lexicon: &VerbLexicon,
    config: &SelectionConfig,
) -> Result<SelectionSet> {
    config.validate()?;
    if config.test_family != TestFamily::Scnt {
        return Err(Error::InvalidInput(
            "replication ACT tokens come from pick_gh22_act, not triplet selection".into(),
        ));
    }
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon {
            path: format!("verb lexicon ({})", lexicon.tokenizer_id),
        });
    }
    if names.is_empty() || professions.is_empty() {
        return Err(Error::InvalidInput("names and professions must be non-empty".into()));
    }
    if lexicon.tokenizer_id != client.backend_id() {
        log::warn!(
            "lexicon built for tokenizer {} used with backend {}",
            lexicon.tokenizer_id,
            client.backend_id()
        );
    }

    let pairs: Vec<(usize, usize)> = (0..names.len())
        .flat_map(|n| (0..professions.len()).map(move |p| (n, p)))
        .collect();
    let mut repeating = 0u64;
    let mut triplets = Vec::new();
    for chunk in pairs.chunks(PAIR_CHUNK) {
        let mut plans = Vec::with_capacity(chunk.len());
        let mut texts = Vec::with_capacity(chunk.len() * lexicon.len());
        for &(n, p) in chunk {
            let mut rng = pair_rng(config.seed, &names[n], &professions[p]);
            let coref = draw_coref(config.coref, &names[n], names, &mut rng)?;
            for verb in &lexicon.verbs {
                let t = Triplet::new(names[n].clone(), professions[p].clone(), verb.clone());
                texts.push(render_scnt(&t, ScntPattern::CpTp, &coref, config.target_family)?.text);
            }
            plans.push(PairPlan {
                name: n,
                profession: p,
                coref,
                rng,
            });
        }
        let top = client.top1(&texts)?;
        for (plan, predictions) in plans.into_iter().zip(top.chunks(lexicon.len())) {
            let eligible: Vec<&String> = lexicon
                .verbs
                .iter()
                .zip(predictions)
                .filter(|(verb, predicted)| client.matches(predicted, verb))
                .map(|(verb, _)| verb)
                .collect();
            repeating += eligible.len() as u64;
            let PairPlan {
                name,
                profession,
                coref,
                mut rng,
            } = plan;
            let keep = eligible.len().min(config.max_verbs_per_pair);
            let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), keep).into_vec();
            picked.sort_unstable();
            for i in picked {
                triplets.push(SelectedTriplet {
                    triplet: Triplet::new(
                        names[name].clone(),
                        professions[profession].clone(),
                        eligible[i].clone(),
                    ),
                    coref: coref.clone(),
                });
            }
        }
    }

    let stats = SelectionStats::new(
        lexicon.len() as u64,
        pairs.len() as u64,
        repeating,
        triplets.len() as u64,
    );
    let set = SelectionSet {
        backend_id: client.backend_id().to_string(),
        config: config.clone(),
        inputs_digest: inputs_digest(names, professions, &lexicon.verbs),
        stats,
        triplets,
    };
    set.check()?;
    Ok(set)
}

fn is_plain_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(char::is_alphabetic)
}

/// Top-1 prediction of the selector sentence for every pair, `None` where
/// it is not a single alphabetic word (such pairs are skipped).
pub fn pick_gh22_acts(
    client: &Client,
    pairs: &[(&NameEntry, &Profession)],
) -> Result<Vec<Option<String>>> {
    let texts: Vec<String> = pairs
        .iter()
        .map(|(n, p)| render_gh22_selector(n, p).text)
        .collect();
    let top = client.top1(&texts)?;
    Ok(pairs
        .iter()
        .zip(top)
        .map(|((n, p), word)| {
            let word = normalize_token(&word);
            if is_plain_word(word) {
                Some(word.to_string())
            } else {
                log::warn!(
                    "skipping pair ({}, {}): selector top-1 {word:?} is not a plain word",
                    n.name,
                    p.label
                );
                None
            }
        })
        .collect())
}

pub fn pick_gh22_act(client: &Client, name: &NameEntry, profession: &Profession) -> Result<Option<String>> {
    Ok(pick_gh22_acts(client, &[(name, profession)])?.remove(0))
}
