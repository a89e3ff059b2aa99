use super::*;

fn spec(seed: u64) -> ClipSpec {
    ClipSpec {
        seed,
        ..ClipSpec::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let s = ClipSpec {
        motion_model: MotionModel::LinearPlusJitter,
        occlusion_rate: 0.5,
        exit_reentry: true,
        ..spec(42)
    };
    assert_eq!(generate_clip(&s).unwrap(), generate_clip(&s).unwrap());
}

#[test]
fn three_objects_present_in_first_frame() {
    for seed in 0..20 {
        let (clip, gt) = generate_clip(&spec(seed)).unwrap();
        assert_eq!(clip.len(), 8);
        assert_eq!(gt.objects.len(), 3);
        assert!(gt.objects.iter().all(|o| o.present[0]), "seed {seed}");
        gt.check_consistency().unwrap();
    }
}

#[test]
fn invalid_specs_name_the_field() {
    let cases: Vec<(ClipSpec, &str)> = vec![
        (ClipSpec { num_frames: 1, ..spec(0) }, "num_frames"),
        (ClipSpec { num_objects: 0, ..spec(0) }, "num_objects"),
        (ClipSpec { height: 32, ..spec(0) }, "height"),
        (ClipSpec { width: 63, ..spec(0) }, "width"),
        (ClipSpec { occlusion_rate: 1.5, ..spec(0) }, "occlusion_rate"),
        (ClipSpec { category_set: vec![9], ..spec(0) }, "category_set"),
        (ClipSpec { num_frames: 3, exit_reentry: true, ..spec(0) }, "num_frames"),
    ];
    for (s, field) in cases {
        match generate_clip(&s).unwrap_err() {
            Error::Validation { field: f, .. } => assert_eq!(f, field),
            e => panic!("unexpected {e}"),
        }
    }
}

#[test]
fn masks_disjoint_and_areas_match_analytic_shapes() {
    for seed in 0..6 {
        let s = ClipSpec {
            height: 256,
            width: 256,
            num_frames: 4,
            ..spec(seed)
        };
        let plan = plan_clip(&s).unwrap();
        let (_, gt) = generate_clip(&s).unwrap();
        for (t, m) in gt.masks.iter().enumerate() {
            let masks: Vec<BinaryMask> = plan.objects.iter().map(|o| m.binary(o.track_id as u16)).collect();
            for i in 0..masks.len() {
                for j in i + 1..masks.len() {
                    assert_eq!(masks[i].intersection(&masks[j]), 0);
                }
            }
            for (o, mask) in plan.objects.iter().zip(&masks) {
                let count = mask.area() as f64;
                let analytic = o.style.area();
                assert!(
                    (count - analytic).abs() / analytic < 0.01,
                    "seed {seed} frame {t} category {}: {count} vs {analytic}",
                    o.style.category_id
                );
            }
        }
    }
}

#[test]
fn zero_occlusion_objects_keep_full_area() {
    // Without occlusion every object's visible area equals its solo render.
    for seed in 0..5 {
        let s = ClipSpec {
            height: 256,
            width: 256,
            num_frames: 6,
            ..spec(100 + seed)
        };
        let (_, gt) = generate_clip(&s).unwrap();
        for obj in &gt.objects {
            let areas: Vec<usize> = (0..6).map(|t| gt.binary_mask(t, obj.track_id).area()).collect();
            let max = *areas.iter().max().unwrap() as f64;
            let min = *areas.iter().min().unwrap() as f64;
            // Rotation changes rasterisation slightly, occlusion would remove a chunk.
            assert!(min / max > 0.97, "seed {seed} track {}: {areas:?}", obj.track_id);
        }
    }
}

#[test]
fn exit_reentry_leaves_and_returns() {
    for seed in 0..10 {
        let s = ClipSpec {
            num_frames: 10,
            exit_reentry: true,
            ..spec(seed)
        };
        let (_, gt) = generate_clip(&s).unwrap();
        let returns = gt.objects.iter().any(|o| {
            let first_gap = o.present.iter().position(|p| !p);
            match first_gap {
                Some(g) => o.present[..g].iter().all(|&p| p) && o.present[g..].iter().any(|&p| p),
                None => false,
            }
        });
        assert!(returns, "seed {seed}: {:?}", gt.objects);
    }
}

#[test]
fn occlusion_rate_one_produces_overlap() {
    let mut occluded = 0;
    for seed in 0..10 {
        let s = ClipSpec {
            num_frames: 12,
            occlusion_rate: 1.0,
            ..spec(seed)
        };
        let (_, gt) = generate_clip(&s).unwrap();
        for obj in &gt.objects {
            let areas: Vec<usize> = (0..12).map(|t| gt.binary_mask(t, obj.track_id).area()).collect();
            let max = *areas.iter().max().unwrap() as f64;
            if (*areas.iter().min().unwrap() as f64) < 0.9 * max {
                occluded += 1;
                break;
            }
        }
    }
    assert!(occluded >= 7, "only {occluded} clips with occlusion");
}

#[test]
fn corpus_uses_xor_seeds() {
    let c = CorpusSpec {
        num_clips: 3,
        min_objects: Some(2),
        clip: ClipSpec {
            num_frames: 3,
            ..spec(7)
        },
    };
    let corpus = generate_corpus(&c).unwrap();
    assert_eq!(corpus[2].0.clip_id, "clip_0002");
    let again = generate_clip_with_id(&c.clip_spec(2), "clip_0002").unwrap();
    assert_eq!(corpus[2], again);
    assert_eq!(c.clip_spec(2).seed, 7 ^ 2);
}

#[test]
fn scripted_reentry_shape() {
    let (clip, gt) = scripted_reentry(3, 10, 128);
    assert_eq!(clip.len(), 10);
    let p = &gt.object(1).unwrap().present;
    let gap = p.iter().position(|v| !v).unwrap();
    assert!(p[gap..].iter().any(|&v| v));
    assert!(gt.object(2).unwrap().present.iter().all(|&v| v));
}

#[test]
fn scripted_crossing_overlaps() {
    let (_, gt) = scripted_crossing(1, 8, 128);
    let areas: Vec<usize> = (0..8).map(|t| gt.binary_mask(t, 1).area()).collect();
    assert!(areas.iter().all(|&a| a > 0));
    assert!(*areas.iter().min().unwrap() * 4 < areas[0] * 3, "{areas:?}");
}

mod augmentation {
    use super::*;

    fn single_frame() -> (Frame, GroundTruth) {
        let (clip, gt) = generate_clip(&spec(5)).unwrap();
        (clip.frames[0].clone(), gt.frame(0))
    }

    #[test]
    fn identity_is_a_copy() {
        let (img, gt) = single_frame();
        let (clip, out) = augment_pair_with(&img, &gt, &Affine::identity(), 0, 0.0).unwrap();
        assert_eq!(clip.frames[0], clip.frames[1]);
        assert_eq!(out.masks[0], out.masks[1]);
        assert!(out.objects.iter().all(|o| o.present == vec![true, true]));
    }

    #[test]
    fn translation_shifts_centroids() {
        let (img, gt) = single_frame();
        let (dx, dy) = (5.0, -3.0);
        let (_, out) = augment_pair_with(&img, &gt, &Affine::translation(dx, dy), 5, 0.0).unwrap();
        for o in &out.objects {
            let before = out.binary_mask(0, o.track_id);
            let after = out.binary_mask(1, o.track_id);
            let bb = before.bbox().unwrap();
            if bb.x1 + dx < 0.0 || bb.y1 + dy < 0.0 || bb.x2 + dx > 128.0 || bb.y2 + dy > 128.0 {
                continue;
            }
            let (x0, y0) = before.centroid().unwrap();
            let (x1, y1) = after.centroid().unwrap();
            assert!((x1 - x0 - dx).abs() <= 0.5 && (y1 - y0 - dy).abs() <= 0.5);
        }
    }

    #[test]
    fn fractional_translation_within_half_pixel() {
        let (img, gt) = single_frame();
        let (dx, dy) = (2.3, 1.7);
        let (_, out) = augment_pair_with(&img, &gt, &Affine::translation(dx, dy), 0, 0.0).unwrap();
        for o in &out.objects {
            let (x0, y0) = out.binary_mask(0, o.track_id).centroid().unwrap();
            let (x1, y1) = out.binary_mask(1, o.track_id).centroid().unwrap();
            assert!((x1 - x0 - dx).abs() <= 0.5 && (y1 - y0 - dy).abs() <= 0.5);
        }
    }

    #[test]
    fn seeded_augmentation_is_deterministic() {
        let (img, gt) = single_frame();
        let p = AugmentParams::default();
        let a = augment_pair(&img, &gt, &p, 11).unwrap();
        assert_eq!(a, augment_pair(&img, &gt, &p, 11).unwrap());
        assert_ne!(a.0.frames[1], augment_pair(&img, &gt, &p, 12).unwrap().0.frames[1]);
    }

    #[test]
    fn pushing_out_clears_presence() {
        let (img, gt) = single_frame();
        let (_, out) = augment_pair_with(&img, &gt, &Affine::translation(500.0, 0.0), 0, 0.0).unwrap();
        let ids: Vec<u32> = out.objects.iter().map(|o| o.track_id).collect();
        assert_eq!(ids, gt.objects.iter().map(|o| o.track_id).collect::<Vec<_>>());
        assert!(out.objects.iter().all(|o| o.present == vec![true, false]));
        out.check_consistency().unwrap();
    }
}

mod disk {
    use super::*;

    fn two_clips() -> (Vec<VideoClip>, Vec<GroundTruth>) {
        let corpus = generate_corpus(&CorpusSpec {
            num_clips: 2,
            min_objects: None,
            clip: ClipSpec {
                num_frames: 3,
                height: 64,
                width: 96,
                ..spec(9)
            },
        })
        .unwrap();
        corpus.into_iter().unzip()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (clips, gts) = two_clips();
        write_dataset(&clips, &gts, dir.path()).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.clips, clips);
        assert_eq!(ds.ground_truths, gts);
        assert_eq!(ds.categories.len(), 4);
    }

    #[test]
    fn empty_directory_has_no_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NoAnnotations(_)));
        assert!(err.to_string().contains("no annotations.json"));
    }

    #[test]
    fn missing_clip_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (clips, gts) = two_clips();
        write_dataset(&clips, &gts, dir.path()).unwrap();
        std::fs::remove_dir_all(dir.path().join("clips/clip_0001")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("clip_0001"), "{err}");
    }

    #[test]
    fn malformed_annotation_reports_clip_and_path() {
        let dir = tempfile::tempdir().unwrap();
        let (clips, gts) = two_clips();
        write_dataset(&clips, &gts, dir.path()).unwrap();
        let path = dir.path().join("annotations.json");
        let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["clips"][1]["objects"][0]["present"][2] = serde_json::json!("yes");
        std::fs::write(&path, doc.to_string()).unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Parse { clip, field, .. } => {
                assert_eq!(clip, "clip_0001");
                assert_eq!(field, "clips[1].objects[0].present[2]");
            }
            e => panic!("unexpected {e}"),
        }
    }
}

#[test]
fn crowded_small_frames_still_generate() {
    for seed in 0..60 {
        let spec = ClipSpec {
            num_frames: 6,
            height: 96,
            width: 96,
            num_objects: 5,
            occlusion_rate: 0.3,
            exit_reentry: seed % 2 == 0,
            seed,
            ..ClipSpec::default()
        };
        let (clip, gt) = generate_clip(&spec).unwrap();
        assert_eq!(clip.len(), 6);
        gt.check_consistency().unwrap();
    }
}
