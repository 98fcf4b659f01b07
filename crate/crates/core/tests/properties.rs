mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use selfneg_core::evaluation::run_scnt;
use selfneg_core::lexicon::{build_verb_candidates, filter_monotokenized, Gender, NameEntry, Profession, WordList};
use selfneg_core::model::{Client, FnBackend, PredictionCache};
use selfneg_core::patterns::{render_scnt, CorefMode, ScntPattern, TargetFamily, Triplet};
use selfneg_core::selection::{select_triplets, SelectionConfig};

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,9}"
}

fn capitalized() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{1,8}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn negated_patterns_share_the_unnegated_frame(name in capitalized(), prof in word(), verb in word(), fem in any::<bool>()) {
        let gender = if fem { Gender::Feminine } else { Gender::Masculine };
        let t = Triplet::new(NameEntry::new(name, gender).unwrap(), Profession::new(prof, None).unwrap(), verb);
        let r = |p| render_scnt(&t, p, &CorefMode::PRONOUN, TargetFamily::Happy).unwrap().text;
        let cntn = r(ScntPattern::CnTn);
        prop_assert_eq!(cntn.replacen("doesn't like", "likes", 1).replacen("isn't happy", "is happy", 1), r(ScntPattern::CpTp));
        prop_assert_eq!(cntn.matches("⟨MASK⟩").count(), 1);
    }

    #[test]
    fn pair_order_does_not_change_the_selection(seed in any::<u64>(), rot in 0usize..3) {
        let client = common::hash_client();
        let config = SelectionConfig { seed, max_verbs_per_pair: 2, ..SelectionConfig::default() };
        let lex = common::lexicon("mock:hash");
        let names = common::names();
        let mut profs = common::professions();
        let a = select_triplets(&client, &names, &profs, &lex, &config).unwrap();
        profs.rotate_left(rot);
        let b = select_triplets(&client, &names, &profs, &lex, &config).unwrap();
        let set = |s: &selfneg_core::selection::SelectionSet| -> BTreeSet<(String, String, String)> {
            s.triplets.iter().map(|t| (t.triplet.name.name.clone(), t.triplet.profession.label.clone(), t.triplet.verb.clone())).collect()
        };
        prop_assert_eq!(set(&a), set(&b));
        prop_assert_eq!(a.stats.repeating_triplets, b.stats.repeating_triplets);
    }

    #[test]
    fn filtering_is_idempotent_and_shrinks(words in prop::collection::btree_set(word(), 1..30)) {
        let list = WordList::new(words.iter().cloned(), "x");
        let candidates = build_verb_candidates(&list, &list).unwrap();
        let client = Client::new(Arc::new(
            FnBackend::new("tok", |_| "x".into()).with_single_token(|w| w.len() % 2 == 0),
        ));
        let once = filter_monotokenized(&candidates, &client).unwrap();
        prop_assert!(once.verbs.iter().all(|v| words.contains(v)));
        let again_list = WordList::new(once.verbs.iter().cloned(), "y");
        if !once.verbs.is_empty() {
            let again = filter_monotokenized(&build_verb_candidates(&again_list, &again_list).unwrap(), &client).unwrap();
            prop_assert_eq!(again.verbs, once.verbs);
        }
    }
}

#[test]
fn cache_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let names = common::names();
    let profs = common::professions();
    let lex = common::lexicon("mock:hash");
    let config = SelectionConfig {
        max_verbs_per_pair: 3,
        seed: 5,
        ..SelectionConfig::default()
    };

    let plain = common::hash_client();
    let sel = select_triplets(&plain, &names, &profs, &lex, &config).unwrap();
    let report = run_scnt(&plain, &sel).unwrap();

    for round in 0..2 {
        let cache = Arc::new(PredictionCache::open(&path).unwrap());
        let cached = common::hash_client().with_cache(cache.clone());
        let s = select_triplets(&cached, &names, &profs, &lex, &config).unwrap();
        let r = run_scnt(&cached, &s).unwrap();
        assert_eq!(s, sel);
        assert_eq!(r.results, report.results);
        let stats = cache.stats();
        if round == 1 {
            assert_eq!(stats.misses, 0, "second run should be served from the cache");
            assert!(stats.hits > 0);
        }
    }
}
