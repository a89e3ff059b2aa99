//! Quick checks of the library surface a downstream user touches first.

use vistrack::harness::{read_results, results_to_json, write_results, Config, KEYS};
use vistrack::metrics::{evaluate, gt_tracks, FrameMask, PredictedTrack, Protocol};
use vistrack::synthdata::{encode_rle, generate_corpus, read_dataset, write_dataset, ClipSpec, CorpusSpec, Dataset};
use vistrack::Model32;

fn dataset() -> Dataset {
    let spec = CorpusSpec {
        num_clips: 2,
        min_objects: Some(1),
        clip: ClipSpec {
            num_frames: 3,
            height: 64,
            width: 64,
            num_objects: 2,
            seed: 4,
            ..ClipSpec::default()
        },
    };
    let (clips, gts) = generate_corpus(&spec).unwrap().into_iter().unzip();
    Dataset::new(clips, gts)
}

#[test]
fn every_listed_key_survives_a_config_round_trip() {
    let cfg = Config::from_toml_str("optim.iterations = 40\noptim.milestones = [10, 30]").unwrap();
    let text = cfg.to_toml_string();
    for key in KEYS {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing from\n{text}");
    }
    assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    assert!(Config::from_toml_str("optim.lr = 0.1\nbogus = 1").unwrap_err().is_validation());
}

#[test]
fn written_dataset_scores_perfectly_against_itself() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data.clips, &data.ground_truths, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    let preds: Vec<PredictedTrack> = back
        .clips
        .iter()
        .zip(&back.ground_truths)
        .flat_map(|(clip, gt)| {
            gt_tracks(gt).into_iter().map(move |t| PredictedTrack {
                clip_id: clip.clip_id.clone(),
                track_id: t.track_id,
                category_id: t.category_id,
                score: 0.8,
                masks: t
                    .masks
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| !m.is_empty())
                    .map(|(frame, m)| FrameMask { frame, rle: encode_rle(m) })
                    .collect(),
            })
        })
        .collect();
    let path = dir.path().join("results.json");
    write_results(&preds, &path).unwrap();
    let read = read_results(&path).unwrap();
    assert_eq!(results_to_json(&read), results_to_json(&preds));
    let report = evaluate(&read, &back, Protocol::Uvos).unwrap();
    assert_eq!((report.ap, report.jf_mean), (1.0, 1.0));
}

#[test]
fn untrained_model_runs_online_inference() {
    let cfg = Config::from_toml_str(
        "model.channels = 8\nmodel.backbone_widths = [4, 6, 8]\nmodel.roi_size = 4\nmodel.mask_size = 8\n\
         model.mask_channels = 4\nmodel.encoder_channels = 3\ndetect.score_threshold = 0.0",
    )
    .unwrap();
    let model = Model32::new(cfg).unwrap();
    let data = dataset();
    let tracks = model.infer_dataset(&data).unwrap();
    assert!(tracks.iter().all(|t| data.find(&t.clip_id).is_some()));
    assert!(tracks.windows(2).all(|w| (w[0].clip_id.as_str(), w[0].track_id) < (w[1].clip_id.as_str(), w[1].track_id)));
}
