//! Word lists that instantiate the test patterns.
//!
//! Three inputs are line oriented UTF-8 files: gendered first names
//! (`name<TAB>gender`), professions (`label[<TAB>article]`) and plain word
//! lists (one word per line) used to build the intransitive verb candidates.
//! The verb lexicon is model specific: only candidates the backend reports
//! as a single vocabulary token survive.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Client;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Feminine,
    Masculine,
}

impl Gender {
    /// Subject pronoun, lowercase.
    pub fn pronoun(self) -> &'static str {
        match self {
            Gender::Feminine => "she",
            Gender::Masculine => "he",
        }
    }

    pub fn capitalized_pronoun(self) -> &'static str {
        match self {
            Gender::Feminine => "She",
            Gender::Masculine => "He",
        }
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Feminine => Gender::Masculine,
            Gender::Masculine => Gender::Feminine,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Feminine => "feminine",
            Gender::Masculine => "masculine",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feminine" => Ok(Gender::Feminine),
            "masculine" => Ok(Gender::Masculine),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub gender: Gender,
}

impl NameEntry {
    pub fn new(name: impl Into<String>, gender: Gender) -> Result<Self> {
        let name = name.into();
        match name.chars().next() {
            None => Err(Error::InvalidInput("empty name".into())),
            Some(c) if !c.is_uppercase() => Err(Error::InvalidInput(format!(
                "name {name:?} must start with an uppercase letter"
            ))),
            Some(_) => Ok(NameEntry { name, gender }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Article {
    A,
    An,
}

impl Article {
    /// "an" iff the label starts with a vowel letter.
    pub fn for_label(label: &str) -> Article {
        match label.chars().next().map(|c| c.to_ascii_lowercase()) {
            Some('a' | 'e' | 'i' | 'o' | 'u') => Article::An,
            _ => Article::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Article::A => "a",
            Article::An => "an",
        }
    }
}

impl fmt::Display for Article {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Article {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(Article::A),
            "an" => Ok(Article::An),
            other => Err(format!("unknown article {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profession {
    pub label: String,
    pub article: Article,
}

impl Profession {
    pub fn new(label: impl Into<String>, article: Option<Article>) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::InvalidInput("empty profession label".into()));
        }
        let article = article.unwrap_or_else(|| Article::for_label(&label));
        Ok(Profession { label, article })
    }
}

/// Yields `(line_number, line)` for every non-blank line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_names(text: &str, source: &str) -> Result<Vec<NameEntry>> {
    let malformed = |line, reason: String| Error::MalformedLine {
        path: source.to_string(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    for (line, content) in content_lines(text) {
        let mut fields = content.split('\t');
        let name = fields.next().unwrap_or("").trim();
        let gender = fields
            .next()
            .ok_or_else(|| malformed(line, "missing gender field".into()))?
            .trim();
        if fields.next().is_some() {
            return Err(malformed(line, "too many fields".into()));
        }
        let gender: Gender = gender.parse().map_err(|e| malformed(line, e))?;
        let entry = NameEntry::new(name, gender).map_err(|e| malformed(line, e.to_string()))?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::EmptyLexicon {
            path: source.to_string(),
        });
    }
    Ok(entries)
}

pub fn load_names(path: impl AsRef<Path>) -> Result<Vec<NameEntry>> {
    let path = path.as_ref();
    parse_names(&read(path)?, &path.display().to_string())
}

pub fn parse_professions(text: &str, source: &str) -> Result<Vec<Profession>> {
    let malformed = |line, reason: String| Error::MalformedLine {
        path: source.to_string(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    for (line, content) in content_lines(text) {
        let mut fields = content.split('\t');
        let label = fields.next().unwrap_or("").trim();
        let article = match fields.next().map(str::trim) {
            None | Some("") => None,
            Some(a) => Some(a.parse::<Article>().map_err(|e| malformed(line, e))?),
        };
        if fields.next().is_some() {
            return Err(malformed(line, "too many fields".into()));
        }
        let entry = Profession::new(label, article).map_err(|e| malformed(line, e.to_string()))?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::EmptyLexicon {
            path: source.to_string(),
        });
    }
    Ok(entries)
}

pub fn load_professions(path: impl AsRef<Path>) -> Result<Vec<Profession>> {
    let path = path.as_ref();
    parse_professions(&read(path)?, &path.display().to_string())
}

/// A plain word list with the descriptor of where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    pub words: Vec<String>,
    pub source: String,
}

impl WordList {
    pub fn new(words: impl IntoIterator<Item = impl Into<String>>, source: impl Into<String>) -> Self {
        WordList {
            words: words.into_iter().map(Into::into).collect(),
            source: source.into(),
        }
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, source: &str) -> Self {
        let words = content_lines(text)
            .map(|(_, l)| l.trim())
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect::<Vec<_>>();
        WordList::new(words, source)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(WordList::parse(&read(path)?, &path.display().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbCandidateList {
    pub verbs: Vec<String>,
    pub provenance: Vec<String>,
}

/// Case-insensitive intersection of the two lists, lowercased, deduplicated
/// and sorted.
pub fn build_verb_candidates(
    intransitive_words: &WordList,
    verbnet_words: &WordList,
) -> Result<VerbCandidateList> {
    for list in [intransitive_words, verbnet_words] {
        if list.words.is_empty() {
            return Err(Error::EmptyLexicon {
                path: list.source.clone(),
            });
        }
    }
    let lower = |l: &WordList| -> BTreeSet<String> {
        l.words.iter().map(|w| w.trim().to_lowercase()).collect()
    };
    let other = lower(verbnet_words);
    let verbs = lower(intransitive_words)
        .into_iter()
        .filter(|w| other.contains(w))
        .collect();
    Ok(VerbCandidateList {
        verbs,
        provenance: vec![
            intransitive_words.source.clone(),
            verbnet_words.source.clone(),
        ],
    })
}

/// Model-specific ACT vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbLexicon {
    pub verbs: Vec<String>,
    pub tokenizer_id: String,
}

const TOKENIZER_HEADER: &str = "#tokenizer=";

impl VerbLexicon {
    pub fn new(verbs: Vec<String>, tokenizer_id: impl Into<String>) -> Self {
        VerbLexicon {
            verbs,
            tokenizer_id: tokenizer_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{TOKENIZER_HEADER}{}\n", self.tokenizer_id);
        for v in &self.verbs {
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (_, header) = lines.next().ok_or_else(|| Error::EmptyLexicon {
            path: source.to_string(),
        })?;
        let tokenizer_id = header
            .strip_prefix(TOKENIZER_HEADER)
            .ok_or_else(|| Error::MalformedLine {
                path: source.to_string(),
                line: 1,
                reason: format!("expected `{TOKENIZER_HEADER}<id>` header"),
            })?
            .trim()
            .to_string();
        let verbs = lines.map(|(_, l)| l.trim().to_string()).collect();
        Ok(VerbLexicon { verbs, tokenizer_id })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        VerbLexicon::parse(&read(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}

/// Keeps the candidates the backend tokenizes as one token after "to ".
///
/// Every word is asked twice; differing answers mean the backend is not
/// deterministic and the lexicon cannot be trusted.
pub fn filter_monotokenized(candidates: &VerbCandidateList, client: &Client) -> Result<VerbLexicon> {
    let first = client.single_token(&candidates.verbs)?;
    let second = client.single_token(&candidates.verbs)?;
    if let Some(i) = (0..first.len()).find(|&i| first[i] != second[i]) {
        return Err(Error::Integrity(format!(
            "backend {} answered inconsistently for {:?}",
            client.backend_id(),
            candidates.verbs[i]
        )));
    }
    let verbs = candidates
        .verbs
        .iter()
        .zip(first)
        .filter(|(_, single)| *single)
        .map(|(v, _)| v.clone())
        .collect();
    Ok(VerbLexicon::new(verbs, client.backend_id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_in_file_order() {
        let names = parse_names("Jessica\tfeminine\nJohn\tmasculine\n", "names").unwrap();
        assert_eq!(
            names,
            vec![
                NameEntry::new("Jessica", Gender::Feminine).unwrap(),
                NameEntry::new("John", Gender::Masculine).unwrap(),
            ]
        );
    }

    #[test]
    fn empty_names_file_is_rejected() {
        let err = parse_names("", "names.tsv").unwrap_err();
        assert!(err.to_string().contains("empty lexicon"), "{err}");
        assert!(matches!(parse_names("\n\n", "x"), Err(Error::EmptyLexicon { .. })));
    }

    #[test]
    fn unknown_gender_names_line() {
        match parse_names("Maria\tunknown\n", "names.tsv") {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_names("Anna\tfeminine\nBob\n", "names.tsv") {
            Err(Error::MalformedLine { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("missing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lowercase_name_is_rejected() {
        assert!(parse_names("maria\tfeminine", "n").is_err());
    }

    #[test]
    fn profession_articles() {
        let profs = parse_professions("architect\ndancer\ndoctor\ta\nhonest broker\tan\n", "p").unwrap();
        let got: Vec<_> = profs.iter().map(|p| (p.label.as_str(), p.article)).collect();
        assert_eq!(
            got,
            vec![
                ("architect", Article::An),
                ("dancer", Article::A),
                ("doctor", Article::A),
                ("honest broker", Article::An),
            ]
        );
    }

    #[test]
    fn stored_article_overrides_heuristic() {
        let p = parse_professions("university lecturer\ta\n", "p").unwrap();
        assert_eq!(p[0].article, Article::A);
    }

    #[test]
    fn empty_profession_label() {
        assert!(matches!(
            parse_professions("\tan\n", "p"),
            Err(Error::MalformedLine { line: 1, .. })
        ));
        assert!(parse_professions("doctor\tthe\n", "p").is_err());
    }

    #[test]
    fn candidates_intersection() {
        let a = WordList::new(["sail", "smoke", "run"], "wiktionary");
        let b = WordList::new(["smoke", "run", "see"], "verbnet");
        let c = build_verb_candidates(&a, &b).unwrap();
        assert_eq!(c.verbs, vec!["run", "smoke"]);
        assert_eq!(c.provenance, vec!["wiktionary", "verbnet"]);
    }

    #[test]
    fn candidates_identity_and_case_folding() {
        let a = WordList::new(["smoke", "dance", "run"], "a");
        assert_eq!(
            build_verb_candidates(&a, &a).unwrap().verbs,
            vec!["dance", "run", "smoke"]
        );
        let upper = WordList::new(["Sail"], "a");
        let lower = WordList::new(["sail"], "b");
        assert_eq!(build_verb_candidates(&upper, &lower).unwrap().verbs, vec!["sail"]);
    }

    #[test]
    fn candidates_reject_empty_input() {
        let a = WordList::new(["run"], "a");
        let empty = WordList::new(Vec::<String>::new(), "b");
        assert!(build_verb_candidates(&a, &empty).is_err());
        assert!(build_verb_candidates(&empty, &a).is_err());
    }

    #[test]
    fn lexicon_file_format() {
        let lex = VerbLexicon::new(vec!["run".into(), "smoke".into()], "bert-base-cased");
        let text = lex.to_file_string();
        assert_eq!(text, "#tokenizer=bert-base-cased\nrun\nsmoke\n");
        assert_eq!(VerbLexicon::parse(&text, "x").unwrap(), lex);
        assert!(VerbLexicon::parse("run\n", "x").is_err());
    }
}
