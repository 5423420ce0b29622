mod common;

use fetalscope::deliberation::{Abstention, VoteRecord, VoterProfile};
use fetalscope::evidence::{
    chunk_documents, BankMode, Document, Embedder, EvidenceBank, EvidenceItem, KnowledgeChunk,
    RetrievedSnippet, Section, VectorIndex,
};
use fetalscope::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(snips: &[RetrievedSnippet]) -> Vec<usize> {
    snips.iter().map(|s| s.chunk_id).collect()
}

#[test]
fn top_five_matches_exhaustive_oracle() {
    let words = common::vocab();
    for corpus in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(corpus);
        let chunks: Vec<KnowledgeChunk> = (0..200).map(|i| common::random_chunk(&mut rng, &words, i)).collect();
        let index = VectorIndex::build(Embedder::default(), chunks.clone()).unwrap();
        for _ in 0..20 {
            let q = common::random_chunk(&mut rng, &words, 0).text;
            let got = index.retrieve(&q, 5).unwrap();
            assert_eq!(got.len(), 5);
            assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
            assert_eq!(ids(&got), common::oracle_top_k(&chunks, &q, 5), "corpus {corpus}, query {q}");
        }
    }
}

#[test]
fn planted_chunks_are_recalled() {
    let words = common::vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    for trial in 0..20 {
        let query: Vec<&String> = words.choose_multiple(&mut rng, 10).collect();
        let mut planted: Vec<&str> = query[..8].iter().map(|s| s.as_str()).collect();
        planted.extend(words.choose_multiple(&mut rng, 4).map(String::as_str));
        let mut chunks: Vec<KnowledgeChunk> = (0..200).map(|i| common::random_chunk(&mut rng, &words, i)).collect();
        let slot = rng.gen_range(0..200);
        chunks[slot].text = planted.join(" ");
        let index = VectorIndex::build(Embedder::default(), chunks).unwrap();
        let q: Vec<&str> = query.iter().map(|s| s.as_str()).collect();
        let got = index.retrieve(&q.join(" "), 5).unwrap();
        if ids(&got).contains(&slot) {
            hits += 1;
        } else {
            panic!("trial {trial}: planted chunk {slot} missing from {:?}", ids(&got));
        }
    }
    assert_eq!(hits, 20);
}

#[test]
fn verbatim_chunk_scores_one() {
    let docs = [Document::new("a", "head circumference is measured on the transthalamic plane"), Document::new("b", "the stomach bubble sits left of the midline")];
    let index = VectorIndex::from_documents(Embedder::default(), &docs, 800, 120).unwrap();
    let got = index.retrieve("the stomach bubble sits left of the midline", 5).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].doc_id, "b");
    assert!((got[0].score - 1.0).abs() < 1e-9);
}

#[test]
fn empty_index_is_an_error() {
    let index = VectorIndex::build(Embedder::default(), Vec::new()).unwrap();
    assert!(matches!(index.retrieve("anything", 5), Err(Error::EmptyIndex)));
}

fn doc_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![4 => "[a-z ]{1,30}", 1 => Just("\n\n".to_string())], 0..40).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn chunks_tile_documents(text in doc_text(), size in 10usize..200, overlap_frac in 0.0f64..0.9) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let doc = Document::new("d", text.clone());
        let chunks = chunk_documents(&[doc], size, overlap).unwrap();
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            prop_assert!(chunks.is_empty());
        } else {
            prop_assert_eq!(chunks[0].start, 0);
            prop_assert_eq!(chunks.last().unwrap().end, chars.len());
            for c in &chunks {
                prop_assert!(c.end > c.start && c.end - c.start <= size);
                prop_assert_eq!(&c.text, &chars[c.start..c.end].iter().collect::<String>());
            }
            for w in chunks.windows(2) {
                prop_assert_eq!(w[1].start, w[0].end - overlap);
                prop_assert!(w[1].start > w[0].start);
            }
        }
    }

    #[test]
    fn bank_is_append_only_and_mode_lawful(ops in prop::collection::vec(0u8..4, 0..40), general in any::<bool>()) {
        let mode = if general { BankMode::GeneralTask } else { BankMode::SpecificTask };
        let mut bank = EvidenceBank::new("run", mode);
        let mut history: Vec<(u64, EvidenceItem)> = Vec::new();
        for (n, op) in ops.iter().enumerate() {
            let profile = VoterProfile::ALL[n % 5];
            let item = match op {
                0 => EvidenceItem::Vote(VoteRecord { profile, key: "A".into(), rationale: format!("r{n}") }),
                1 => EvidenceItem::Abstention(Abstention { profile, reason: "unparseable".into(), reply: String::new() }),
                _ => EvidenceItem::Snippet(RetrievedSnippet {
                    chunk_id: n,
                    doc_id: "d".into(),
                    start: 0,
                    end: 1,
                    score: 0.5,
                    text: "x".into(),
                }),
            };
            let section = item.section();
            match bank.append(item.clone()) {
                Ok(id) => {
                    prop_assert!(history.last().map_or(true, |(last, _)| id > *last));
                    history.push((id, item));
                }
                Err(Error::ModeViolation(_)) => prop_assert!(general && section == Section::Votes),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
            for (id, it) in &history {
                prop_assert_eq!(&bank.get(*id).unwrap().item, it);
            }
        }
        if general {
            prop_assert_eq!(bank.votes().count(), 0);
        }
        let snap = bank.snapshot();
        let back = EvidenceBank::from_snapshot(&fetalscope::evidence::BankSnapshot::from_json(&snap.to_json().unwrap()).unwrap()).unwrap();
        prop_assert_eq!(back.entries(), bank.entries());
    }
}
