use anonleak::classifier::cross_validated_aid;
use anonleak::metrics::{eer, RecallReport};
use anonleak::scoring::{insert_set, score_trials};
use anonleak::synthlab::{gen_corpus, SynthConfig};
use anonleak::trials::{gen_sv_trials, Scenario};

#[test]
fn separated_accents_are_identified_on_held_out_speakers() {
    let (manifest, set) = gen_corpus(&SynthConfig::separated(3)).unwrap();
    let cm = cross_validated_aid(&set, &set, &manifest, 5).unwrap();
    let recall = RecallReport::from_confusion(&cm).unwrap();
    assert!(recall.war_percent >= 95.0, "{}", recall.war_percent);
    assert_eq!((0..13).map(|i| cm.row_sum(i)).sum::<u64>(), 1300);
}

#[test]
fn separated_speakers_verify_almost_perfectly() {
    let mut cfg = SynthConfig::separated(4);
    cfg.k_accents = 4;
    cfg.speakers_per_accent = 5;
    cfg.utts_per_speaker = 4;
    let (manifest, set) = gen_corpus(&cfg).unwrap();
    let probe = set.probe.clone();
    let list = gen_sv_trials(&manifest, &Scenario::baseline(), 1, 9).unwrap();
    let mut table = Default::default();
    insert_set(&mut table, set);
    let scores = score_trials(&list, &probe, &table).unwrap();
    let (t, n) = scores.by_label(&list);
    assert!(eer(&t, &n).unwrap().eer_percent < 1.0);
}
