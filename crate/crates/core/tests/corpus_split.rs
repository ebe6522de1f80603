use melody_typicality::corpus::{split, split_of, Corpus, Piece, Split};
use melody_typicality::tokenizer::NoteEvent;
use proptest::prelude::*;

fn piece(id: &str) -> Piece {
    Piece {
        id: id.to_string(),
        events: vec![NoteEvent::pitched(60, 0, 500)],
    }
}

#[test]
fn twelve_thousand_pieces_train_fraction() {
    let pieces: Vec<Piece> = (0..12_000).map(|i| piece(&format!("tune-{i}"))).collect();
    let corpus = Corpus::new(pieces).unwrap();
    for seed in [0, 1, 2022] {
        let a = split(&corpus, seed);
        let train = a.count(Split::Train) as f64 / 12_000.0;
        assert!((train - 10.0 / 12.0).abs() <= 0.02, "seed {seed}: {train}");
        let val = a.count(Split::Validation) as f64 / 12_000.0;
        let test = a.count(Split::Test) as f64 / 12_000.0;
        assert!((val - 1.0 / 12.0).abs() <= 0.02);
        assert!((test - 1.0 / 12.0).abs() <= 0.02);
    }
}

proptest! {
    #[test]
    fn split_ignores_corpus_order(
        ids in proptest::collection::btree_set("[a-z0-9]{1,12}", 1..60),
        seed in any::<u64>(),
        rotate in 0usize..60,
    ) {
        let ids: Vec<String> = ids.into_iter().collect();
        let mut shuffled = ids.clone();
        let r = rotate % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let a = split(&Corpus::new(ids.iter().map(|i| piece(i)).collect()).unwrap(), seed);
        let b = split(&Corpus::new(shuffled.iter().map(|i| piece(i)).collect()).unwrap(), seed);
        for id in &ids {
            prop_assert_eq!(a.get(id), b.get(id));
            prop_assert_eq!(a.get(id), Some(split_of(id, seed)));
        }
        // assignment of one piece does not depend on the other pieces
        let alone = split(&Corpus::new(vec![piece(&ids[0])]).unwrap(), seed);
        prop_assert_eq!(alone.get(&ids[0]), a.get(&ids[0]));
    }
}
