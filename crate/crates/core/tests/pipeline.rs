use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use bbscore::bridge::{estimate_sigma_sq_corpus, simulate_corpus, CorpusSimConfig};
use bbscore::encoder::{
    contrastive_loss, sample_triplets, train_encoder, Negatives, TrainConfig, Triplet,
};
use bbscore::harness::{make_shuffle_dataset, ShuffleDataset, ShuffleKind};
use bbscore::metrics::evaluate_shuffle_task;
use bbscore::rng::rng_from_seed;
use bbscore::storage::{decode_bbx, encode_bbx, read_bbx, read_corpus, write_corpus, Format};
use bbscore::{HiddenStateSequence, Sequence};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

/// Bridge latents pushed through a fixed random linear map into 16 dims.
fn mapped_bridges(docs: usize, seed: u64) -> Vec<HiddenStateSequence> {
    let latents = simulate_corpus(&CorpusSimConfig {
        docs,
        len: 24,
        dim: 8,
        sigma_sq: 1.0,
        seed,
        endpoint_scale: 2.0,
    })
    .unwrap();
    let mut rng = rng_from_seed(99);
    let map: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    latents
        .iter()
        .map(|s| {
            let rows = s
                .rows()
                .map(|r| {
                    map.iter()
                        .map(|m| m.iter().zip(r).map(|(a, b)| a * b).sum())
                        .collect()
                })
                .collect();
            Sequence::from_rows(s.doc_id(), rows).unwrap()
        })
        .collect()
}

#[test]
fn training_lowers_held_out_loss() {
    let train = mapped_bridges(60, 1);
    let held_out = mapped_bridges(10, 2);
    let mut rng = rng_from_seed(5);
    let batch: Vec<Triplet> = held_out
        .iter()
        .enumerate()
        .flat_map(|(i, d)| sample_triplets(d, i, 4, &mut rng).unwrap())
        .collect();

    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let initial = train_encoder(
        &train,
        &TrainConfig {
            epochs: 0,
            ..cfg.clone()
        },
    )
    .unwrap();
    let trained = train_encoder(&train, &cfg).unwrap();
    assert_eq!(trained.loss_trace.len(), 20);
    let before = contrastive_loss(&batch, &initial.encoder, Negatives::InBatch).unwrap();
    let after = contrastive_loss(&batch, &trained.encoder, Negatives::InBatch).unwrap();
    assert!(after < before, "held-out loss {before} -> {after}");
}

#[test]
fn shuffling_commutes_with_encoding() {
    let hidden = mapped_bridges(8, 3);
    let out = train_encoder(
        &hidden,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let latents = out.encoder.encode_corpus(&hidden).unwrap();
    for (kind, param) in [
        (ShuffleKind::GlobalBlock, 1),
        (ShuffleKind::GlobalBlock, 4),
        (ShuffleKind::LocalWindow, 2),
    ] {
        let on_hidden = make_shuffle_dataset(&hidden, kind, param, 3, 17).unwrap();
        let on_latent = make_shuffle_dataset(&latents, kind, param, 3, 17).unwrap();
        assert_eq!(on_hidden.pairs.len(), on_latent.pairs.len());
        for (h, l) in on_hidden.pairs.iter().zip(&on_latent.pairs) {
            assert_eq!(h.perm, l.perm);
            let encoded = out.encoder.encode(&h.shuffled).unwrap();
            assert_eq!(encoded.as_flat(), l.shuffled.as_flat());
        }
    }
}

#[test]
fn manifest_round_trip_reproduces_scores() {
    let corpus = simulate_corpus(&CorpusSimConfig {
        docs: 30,
        len: 20,
        dim: 4,
        sigma_sq: 1.0,
        seed: 8,
        endpoint_scale: 1.0,
    })
    .unwrap();
    let ds = make_shuffle_dataset(&corpus, ShuffleKind::LocalWindow, 2, 4, 21).unwrap();
    let mut buf = Vec::new();
    ds.write_manifest(&mut buf).unwrap();
    let back = ShuffleDataset::read_manifest(&buf[..], &corpus).unwrap();
    let sigma = estimate_sigma_sq_corpus(&corpus).unwrap().sigma_sq;
    let a = evaluate_shuffle_task(&corpus, &ds, sigma).unwrap();
    let b = evaluate_shuffle_task(&corpus, &back, sigma).unwrap();
    assert_eq!(a, b);
}

#[test]
fn independent_fixture_decodes() {
    let docs = read_bbx(format!("{FIXTURES}/three_docs.bbx")).unwrap();
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id()).collect();
    assert_eq!(ids, ["alpha", "béta", "gamma"]);
    assert_eq!(
        docs[0].to_rows(),
        vec![vec![1.0, -2.0, 0.5], vec![0.25, 3.0, -1.5]]
    );
    assert_eq!(docs[1].len(), 3);
    assert_eq!(docs[1].row(2), &[-4.0, 8.0, 16.0]);
    assert_eq!(docs[2].to_rows(), vec![vec![-0.75, 0.375, 1024.0]]);

    let bytes = std::fs::read(format!("{FIXTURES}/three_docs.bbx")).unwrap();
    assert_eq!(encode_bbx(&docs).unwrap(), bytes);

    let hand = read_bbx(format!("{FIXTURES}/hand.bbx")).unwrap();
    assert_eq!(hand[0].to_rows(), vec![vec![0.0], vec![1.0], vec![0.0]]);
}

#[test]
fn every_truncation_of_the_fixture_is_rejected() {
    let bytes = std::fs::read(format!("{FIXTURES}/three_docs.bbx")).unwrap();
    for cut in 0..bytes.len() {
        assert!(
            decode_bbx(&bytes[..cut]).is_err(),
            "prefix of {cut} bytes accepted"
        );
    }
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(decode_bbx(&extended).is_err());
}

#[test]
fn jsonl_and_bbx_agree_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng_from_seed(4);
    let docs: Vec<Sequence> = (0..5)
        .map(|i| {
            let len = rng.random_range(1..9);
            let data = (0..len * 3)
                .map(|_| rng.random_range(-5.0f32..5.0) as f64)
                .collect();
            Sequence::from_flat(format!("d{i}"), 3, data).unwrap()
        })
        .collect();
    let bbx = dir.path().join("c.bbx");
    let jsonl = dir.path().join("c.jsonl");
    write_corpus(&docs, &bbx, None).unwrap();
    write_corpus(&docs, &jsonl, None).unwrap();
    assert_eq!(read_corpus(&bbx, None).unwrap(), docs);
    assert_eq!(read_corpus(&jsonl, None).unwrap(), docs);
    assert_eq!(read_corpus(&jsonl, Some(Format::Jsonl)).unwrap(), docs);
    assert!(read_corpus(&jsonl, Some(Format::Bbx)).is_err());
}

#[test]
fn model_files_round_trip_exactly() {
    use bbscore::classifier::Mlp3;
    use bbscore::encoder::MlpEncoder;
    use bbscore::nn::{Activation, Mlp};
    use bbscore::storage::{load_encoder, load_mlp3, save_encoder, save_mlp3};

    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng_from_seed(6);
    let enc = MlpEncoder::new(7, 13, 4, Activation::Tanh, &mut rng).unwrap();
    let path = dir.path().join("enc.json");
    save_encoder(&enc, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert_eq!(load_encoder(&path).unwrap(), enc);
    save_encoder(&load_encoder(&path).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let net = Mlp::new(&[5, 6, 6, 2], Activation::Relu, &mut rng).unwrap();
    let model = Mlp3::from_parts(
        net,
        vec![0.3, -1.0, 2.0, 0.0, 1e-3],
        vec![1.0, 2.5, 0.1, 3.0, 7.0],
    )
    .unwrap();
    let path = dir.path().join("clf.json");
    save_mlp3(&model, &path).unwrap();
    assert_eq!(load_mlp3(&path).unwrap(), model);
    assert!(load_encoder(&path).is_err());
}
