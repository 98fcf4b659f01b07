#![allow(dead_code)]

use std::sync::Arc;

use selfneg_core::digest::sha256_hex;
use selfneg_core::lexicon::{Gender, NameEntry, Profession, VerbLexicon};
use selfneg_core::model::{Client, FnBackend};
use selfneg_core::patterns::CorefKind;

pub fn names() -> Vec<NameEntry> {
    vec![
        NameEntry::new("Jessica", Gender::Feminine).unwrap(),
        NameEntry::new("John", Gender::Masculine).unwrap(),
        NameEntry::new("Maria", Gender::Feminine).unwrap(),
    ]
}

/// The non-coreference modes need a second name of each gender.
pub fn names_for(coref: CorefKind) -> Vec<NameEntry> {
    let mut names = names();
    if matches!(coref, CorefKind::NonCorefSameGender | CorefKind::NonCorefOtherGender) {
        names.push(NameEntry::new("David", Gender::Masculine).unwrap());
    }
    names
}

pub fn professions() -> Vec<Profession> {
    vec![
        Profession::new("architect", None).unwrap(),
        Profession::new("dancer", None).unwrap(),
        Profession::new("doctor", None).unwrap(),
    ]
}

pub fn verbs() -> Vec<String> {
    ["sail", "smoke", "rest", "dance", "swim"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn lexicon(tokenizer: &str) -> VerbLexicon {
    VerbLexicon::new(verbs(), tokenizer)
}

/// Deterministic pseudo-model: repeats the context verb for roughly two
/// texts in three, otherwise answers "sing". With no context verb it picks a
/// word from the hash.
pub fn hash_top1(text: &str) -> String {
    let digest = sha256_hex(text);
    let byte = u8::from_str_radix(&digest[..2], 16).unwrap();
    let context_verb = text
        .split(" to ")
        .nth(1)
        .and_then(|rest| rest.split(|c: char| !c.is_alphabetic()).next())
        .filter(|w| !w.is_empty());
    match context_verb {
        Some(v) if !byte.is_multiple_of(3) => v.to_string(),
        Some(_) => "sing".to_string(),
        None => ["swim", "read", ",", "cook"][byte as usize % 4].to_string(),
    }
}

pub fn hash_client() -> Client {
    Client::new(Arc::new(FnBackend::new("mock:hash", hash_top1)))
}
