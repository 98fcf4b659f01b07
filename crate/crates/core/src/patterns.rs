//! Rendering of every input string the harness sends to a model.
//!
//! All renderers are pure: the same triplet and descriptor always produce
//! the same bytes. The masked position is written as the neutral
//! [`MASK_PLACEHOLDER`]; backends swap in their own mask token.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{NameEntry, Profession};

pub const MASK_PLACEHOLDER: &str = "⟨MASK⟩";

/// One `[NAME, PROF, ACT]` instantiation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub name: NameEntry,
    pub profession: Profession,
    pub verb: String,
}

impl Triplet {
    pub fn new(name: NameEntry, profession: Profession, verb: impl Into<String>) -> Self {
        Triplet {
            name,
            profession,
            verb: verb.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScntPattern {
    CpTp,
    CpTn,
    CnTp,
    CnTn,
    CpTv,
}

impl ScntPattern {
    pub const ALL: [ScntPattern; 5] = [
        ScntPattern::CpTp,
        ScntPattern::CpTn,
        ScntPattern::CnTp,
        ScntPattern::CnTn,
        ScntPattern::CpTv,
    ];

    pub fn negated_context(self) -> bool {
        matches!(self, ScntPattern::CnTp | ScntPattern::CnTn)
    }

    fn target(self) -> Target {
        match self {
            ScntPattern::CpTp | ScntPattern::CnTp => Target::Positive,
            ScntPattern::CpTn | ScntPattern::CnTn => Target::Negative,
            ScntPattern::CpTv => Target::Very,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScntPattern::CpTp => "CpTp",
            ScntPattern::CpTn => "CpTn",
            ScntPattern::CnTp => "CnTp",
            ScntPattern::CnTn => "CnTn",
            ScntPattern::CpTv => "CpTv",
        }
    }
}

impl fmt::Display for ScntPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScntPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScntPattern::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown pattern {s:?}")))
    }
}

enum Target {
    Positive,
    Negative,
    Very,
}

/// Which surface form the target sentence takes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    /// "is happy to", "isn't happy to", "is very happy to"
    #[default]
    Happy,
    /// "really likes to", "really doesn't like to", "very likes to"
    ReallyLikes,
}

impl FromStr for TargetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "happy" => Ok(TargetFamily::Happy),
            "really_likes" | "really-likes" => Ok(TargetFamily::ReallyLikes),
            other => Err(Error::InvalidInput(format!("unknown target family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorefKind {
    #[default]
    Pronoun,
    #[serde(rename = "repeat")]
    RepeatName,
    #[serde(rename = "same-gender")]
    NonCorefSameGender,
    #[serde(rename = "other-gender")]
    NonCorefOtherGender,
}

impl CorefKind {
    pub const ALL: [CorefKind; 4] = [
        CorefKind::Pronoun,
        CorefKind::RepeatName,
        CorefKind::NonCorefSameGender,
        CorefKind::NonCorefOtherGender,
    ];

    pub fn needs_alt_name(self) -> bool {
        matches!(
            self,
            CorefKind::NonCorefSameGender | CorefKind::NonCorefOtherGender
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorefKind::Pronoun => "pronoun",
            CorefKind::RepeatName => "repeat",
            CorefKind::NonCorefSameGender => "same-gender",
            CorefKind::NonCorefOtherGender => "other-gender",
        }
    }
}

impl fmt::Display for CorefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorefKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorefKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown coreference mode {s:?}")))
    }
}

/// How the target sentence refers to the context subject.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorefMode {
    pub kind: CorefKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_name: Option<NameEntry>,
}

impl CorefMode {
    pub const PRONOUN: CorefMode = CorefMode {
        kind: CorefKind::Pronoun,
        alt_name: None,
    };

    pub const REPEAT_NAME: CorefMode = CorefMode {
        kind: CorefKind::RepeatName,
        alt_name: None,
    };

    pub fn non_coref(kind: CorefKind, alt_name: NameEntry) -> Self {
        CorefMode {
            kind,
            alt_name: Some(alt_name),
        }
    }

    /// Checks the alt-name constraints against the context subject.
    pub fn validate(&self, name: &NameEntry) -> Result<()> {
        match (self.kind, &self.alt_name) {
            (CorefKind::Pronoun | CorefKind::RepeatName, None) => Ok(()),
            (CorefKind::Pronoun | CorefKind::RepeatName, Some(_)) => Err(Error::Coref(format!(
                "mode {} takes no alternate name",
                self.kind
            ))),
            (kind, None) => Err(Error::Coref(format!("mode {kind} requires an alternate name"))),
            (CorefKind::NonCorefSameGender, Some(alt)) => {
                if alt.gender != name.gender {
                    Err(Error::Coref(format!(
                        "{} is {} but {} is {}",
                        alt.name, alt.gender, name.name, name.gender
                    )))
                } else if alt.name == name.name {
                    Err(Error::Coref(format!("alternate name equals {}", name.name)))
                } else {
                    Ok(())
                }
            }
            (CorefKind::NonCorefOtherGender, Some(alt)) => {
                if alt.gender == name.gender {
                    Err(Error::Coref(format!(
                        "{} and {} share gender {}",
                        alt.name, name.name, name.gender
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn subject<'a>(&'a self, name: &'a NameEntry) -> &'a str {
        match self.kind {
            CorefKind::Pronoun => name.gender.capitalized_pronoun(),
            CorefKind::RepeatName => &name.name,
            CorefKind::NonCorefSameGender | CorefKind::NonCorefOtherGender => self
                .alt_name
                .as_ref()
                .map(|a| a.name.as_str())
                .unwrap_or(&name.name),
        }
    }
}

impl Default for CorefMode {
    fn default() -> Self {
        CorefMode::PRONOUN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    P,
    N,
}

/// One cell of the reduced replication grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gh22Descriptor {
    pub polarity: Polarity,
    /// "does" in the target
    pub aux: bool,
    /// "really" in the target
    pub adv: bool,
    /// leading "However," (N) or "So," (P)
    pub connective: bool,
}

impl Gh22Descriptor {
    pub fn new(polarity: Polarity, aux: bool, adv: bool, connective: bool) -> Self {
        Gh22Descriptor {
            polarity,
            aux,
            adv,
            connective,
        }
    }

    /// Pattern number 1..=4 grouping the P/N pair with the same aux/adv.
    pub fn pair_number(&self) -> u8 {
        match (self.aux, self.adv) {
            (false, false) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (true, true) => 4,
        }
    }

    /// The 8 polarity x aux x adv combinations in P/N pair order; with
    /// `connectives` the 8 connective variants follow.
    pub fn grid(connectives: bool) -> Vec<Gh22Descriptor> {
        let conns: &[bool] = if connectives { &[false, true] } else { &[false] };
        let mut out = Vec::new();
        for &conn in conns {
            for (aux, adv) in [(false, false), (true, false), (false, true), (true, true)] {
                for pol in [Polarity::P, Polarity::N] {
                    out.push(Gh22Descriptor::new(pol, aux, adv, conn));
                }
            }
        }
        out
    }

    pub fn with_polarity(self, polarity: Polarity) -> Self {
        Gh22Descriptor { polarity, ..self }
    }
}

impl fmt::Display for Gh22Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pol = match self.polarity {
            Polarity::P => "P",
            Polarity::N => "N",
        };
        write!(
            f,
            "gh22:{pol}:aux={}:adv={}",
            u8::from(self.aux),
            u8::from(self.adv)
        )?;
        if self.connective {
            f.write_str(":conn")?;
        }
        Ok(())
    }
}

/// Identifies what produced a rendered example or a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSpec {
    Scnt(ScntPattern),
    Gh22(Gh22Descriptor),
    Gh22Selector,
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternSpec::Scnt(p) => p.fmt(f),
            PatternSpec::Gh22(d) => d.fmt(f),
            PatternSpec::Gh22Selector => f.write_str("gh22:selector"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub text: String,
    /// `None` only for the selector pattern, which has no ACT slot.
    pub act: Option<String>,
    pub pattern: PatternSpec,
    pub coref: CorefMode,
    pub name: NameEntry,
    pub profession: Profession,
}

fn context_sentence(triplet: &Triplet, negated: bool) -> String {
    let like = if negated { "doesn't like" } else { "likes" };
    format!(
        "{} is {} {} who {like} to {}.",
        triplet.name.name, triplet.profession.article, triplet.profession.label, triplet.verb
    )
}

pub fn render_scnt(
    triplet: &Triplet,
    pattern: ScntPattern,
    coref: &CorefMode,
    family: TargetFamily,
) -> Result<RenderedExample> {
    coref.validate(&triplet.name)?;
    let subject = coref.subject(&triplet.name);
    let predicate = match (family, pattern.target()) {
        (TargetFamily::Happy, Target::Positive) => "is happy to",
        (TargetFamily::Happy, Target::Negative) => "isn't happy to",
        (TargetFamily::Happy, Target::Very) => "is very happy to",
        (TargetFamily::ReallyLikes, Target::Positive) => "really likes to",
        (TargetFamily::ReallyLikes, Target::Negative) => "really doesn't like to",
        (TargetFamily::ReallyLikes, Target::Very) => "very likes to",
    };
    let text = format!(
        "{} {subject} {predicate} {MASK_PLACEHOLDER}.",
        context_sentence(triplet, pattern.negated_context())
    );
    Ok(RenderedExample {
        text,
        act: Some(triplet.verb.clone()),
        pattern: PatternSpec::Scnt(pattern),
        coref: coref.clone(),
        name: triplet.name.clone(),
        profession: triplet.profession.clone(),
    })
}

pub fn render_gh22(triplet: &Triplet, d: Gh22Descriptor) -> RenderedExample {
    let t = triplet;
    let context = match d.polarity {
        Polarity::N => context_sentence(t, true),
        Polarity::P => format!(
            "{} is {} {} who tries to {} as often as possible.",
            t.name.name, t.profession.article, t.profession.label, t.verb
        ),
    };
    let mut words: Vec<&str> = Vec::with_capacity(6);
    if d.connective {
        words.push(match d.polarity {
            Polarity::N => "However,",
            Polarity::P => "So,",
        });
        words.push(t.name.gender.pronoun());
    } else {
        words.push(t.name.gender.capitalized_pronoun());
    }
    if d.adv {
        words.push("really");
    }
    if d.aux {
        words.push("does");
        words.push("like");
    } else {
        words.push("likes");
    }
    words.push("to");
    let text = format!("{context} {} {MASK_PLACEHOLDER}.", words.join(" "));
    RenderedExample {
        text,
        act: Some(t.verb.clone()),
        pattern: PatternSpec::Gh22(d),
        coref: CorefMode::PRONOUN,
        name: t.name.clone(),
        profession: t.profession.clone(),
    }
}

/// Sentence whose top-1 prediction supplies the replication ACT token.
pub fn render_gh22_selector(name: &NameEntry, prof: &Profession) -> RenderedExample {
    let text = format!(
        "{} is {} {} and {} likes to {MASK_PLACEHOLDER}.",
        name.name,
        prof.article,
        prof.label,
        name.gender.pronoun()
    );
    RenderedExample {
        text,
        act: None,
        pattern: PatternSpec::Gh22Selector,
        coref: CorefMode::PRONOUN,
        name: name.clone(),
        profession: prof.clone(),
    }
}

/// Line-oriented form of a rendered example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub act: Option<String>,
    pub pattern: String,
    pub coref_mode: CorefMode,
    pub triplet: TripletRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub name: NameEntry,
    pub profession: Profession,
    pub verb: Option<String>,
}

impl ExampleRecord {
    pub fn new(id: impl Into<String>, ex: &RenderedExample) -> Self {
        ExampleRecord {
            id: id.into(),
            text: ex.text.clone(),
            act: ex.act.clone(),
            pattern: ex.pattern.to_string(),
            coref_mode: ex.coref.clone(),
            triplet: TripletRecord {
                name: ex.name.clone(),
                profession: ex.profession.clone(),
                verb: ex.act.clone(),
            },
        }
    }
}

/// Writes one JSON record per line, ids `<pattern>:<index>`.
pub fn write_examples_jsonl<'a, W: Write>(
    mut out: W,
    examples: impl IntoIterator<Item = &'a RenderedExample>,
) -> Result<()> {
    for (i, ex) in examples.into_iter().enumerate() {
        let record = ExampleRecord::new(format!("{}:{i}", ex.pattern), ex);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<examples>", e))?;
    }
    Ok(())
}
