use proptest::prelude::*;

use super::*;

fn line_mask(n: usize, on: &[usize]) -> Mask {
    Mask::from_indices([1, 1, n], on)
}

fn bx(y0: f64, x0: f64, y1: f64, x1: f64) -> BBox {
    BBox::new([y0, x0], [y1, x1]).unwrap()
}

fn scored(b: BBox, score: f64) -> ScoredBox {
    ScoredBox { bbox: b, score }
}

#[test]
fn dice_examples() {
    let a = line_mask(8, &[0, 1, 2, 3]);
    assert_eq!(dice(&a, &a).unwrap(), 1.0);
    assert_eq!(dice(&a, &line_mask(8, &[4, 5])).unwrap(), 0.0);
    assert_eq!(dice(&a, &line_mask(8, &[2, 3, 4, 5])).unwrap(), 0.5);
    let e = Mask::empty([1, 1, 8]);
    assert_eq!(dice(&e, &e).unwrap(), 1.0);
    assert!(matches!(dice(&a, &Mask::empty([1, 2, 4])), Err(Error::Dimension { .. })));
}

#[test]
fn dice_per_case_examples() {
    let a = line_mask(4, &[0]);
    let b = line_mask(4, &[1]);
    assert_eq!(dice_per_case(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap(), 0.5);
    assert_eq!(dice_per_case(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 1.0);
    assert!(matches!(dice_per_case(std::slice::from_ref(&a), &[]), Err(Error::Contract { .. })));
}

#[test]
fn component_examples() {
    let two = Mask::from_fn([3, 3, 3], |z, y, x| (z, y, x) == (0, 0, 0) || (z, y, x) == (2, 2, 2));
    assert_eq!(connected_components(&two, Connectivity::TwentySix).count(), 2);
    let diag = Mask::from_fn([2, 2, 2], |z, y, x| (z, y, x) == (0, 0, 0) || (z, y, x) == (1, 1, 1));
    assert_eq!(connected_components(&diag, Connectivity::TwentySix).count(), 1);
    assert_eq!(connected_components(&diag, Connectivity::Six).count(), 2);
    assert_eq!(Connectivity::default(), Connectivity::TwentySix);
}

#[test]
fn component_labels_follow_raster_order() {
    // A U shape whose arms meet only at the bottom row: the right arm gets a
    // provisional label that must merge into the left one.
    let m = Mask::from_fn([1, 3, 3], |_, y, x| x != 1 || y == 2);
    let cc = connected_components(&m, Connectivity::Six);
    assert_eq!(cc.count(), 1);
    assert_eq!(cc.members[0], vec![0, 2, 3, 5, 6, 7, 8]);
    assert!(cc.labels.iter().all(|&l| l <= 1));
}

#[test]
fn diameter_examples() {
    let d1 = lesion_diameter(1, [1.0; 3]).unwrap();
    assert!((d1 - 1.2407).abs() < 1e-4);
    let d8 = lesion_diameter(8, [1.0; 3]).unwrap();
    assert!((d8 - 2.0 * d1).abs() < 1e-12);
    assert!(lesion_diameter(0, [1.0; 3]).is_err());
}

#[test]
fn strata_boundaries() {
    assert_eq!(SizeStratum::of(14.999), SizeStratum::Small);
    assert_eq!(SizeStratum::of(15.0), SizeStratum::Medium);
    assert_eq!(SizeStratum::of(30.0), SizeStratum::Medium);
    assert_eq!(SizeStratum::of(30.001), SizeStratum::Large);
}

#[test]
fn perfect_segmentation_strata() {
    let gt = Mask::from_fn([4, 12, 12], |z, y, x| z < 2 && y < 3 && x < 3 || y > 7 && x > 7);
    let s = stratified_dice(&gt, &gt, [1.0; 3]).unwrap();
    assert_eq!(s.small, Some(1.0));
    assert_eq!(s.medium, None);
    assert_eq!(s.large, None);
}

#[test]
fn distant_false_positive_is_not_attributed() {
    let gt = Mask::from_fn([1, 1, 20], |_, _, x| x < 2);
    let pred = Mask::from_fn([1, 1, 20], |_, _, x| !(2..=15).contains(&x));
    assert_eq!(stratified_dice(&pred, &gt, [1.0; 3]).unwrap().small, Some(1.0));
    // one voxel inside the dilation radius does count: 2·2/(3+2)
    let near = Mask::from_fn([1, 1, 20], |_, _, x| x < 2 || x == 3);
    assert_eq!(stratified_dice(&near, &gt, [1.0; 3]).unwrap().small, Some(0.8));
}

#[test]
fn dilation_is_a_cube() {
    let m = Mask::from_fn([5, 5, 5], |z, y, x| (z, y, x) == (2, 2, 2));
    assert_eq!(dilate(&m, 1).count(), 27);
    assert_eq!(dilate(&m, 2).count(), 125);
}

#[test]
fn postprocess_examples() {
    let liver = Mask::from_fn([1, 4, 4], |_, y, _| y < 3);
    let inside = Mask::from_fn([1, 4, 4], |_, y, x| y == 1 && x < 2);
    assert_eq!(mask_and_postprocess(&liver, &inside).unwrap(), inside);
    let outside = Mask::from_fn([1, 4, 4], |_, y, _| y == 3);
    assert!(mask_and_postprocess(&liver, &outside).unwrap().is_empty());
    assert!(mask_and_postprocess(&liver, &Mask::empty([1, 2, 8])).is_err());
}

#[test]
fn perfect_detector() {
    let recs: Vec<DetectionRecord> = (0..3)
        .map(|i| {
            let g = bx(i as f64, 0.0, i as f64 + 2.0, 2.0);
            DetectionRecord {
                image: i.to_string(),
                predictions: vec![scored(g, 0.9)],
                ground_truth: vec![g],
            }
        })
        .collect();
    assert_eq!(froc_sensitivity(&recs, &DEFAULT_FPPI).unwrap(), vec![1.0; 3]);
    assert_eq!(ap50(&recs).unwrap(), 1.0);
}

#[test]
fn zero_true_positives() {
    let rec = DetectionRecord {
        image: "a".into(),
        predictions: vec![scored(bx(10.0, 10.0, 12.0, 12.0), 0.8)],
        ground_truth: vec![bx(0.0, 0.0, 2.0, 2.0)],
    };
    assert_eq!(ap50(std::slice::from_ref(&rec)).unwrap(), 0.0);
    assert_eq!(froc_sensitivity(&[rec], &[2.0]).unwrap(), vec![0.0]);
}

#[test]
fn detection_errors() {
    assert!(froc_sensitivity(&[], &DEFAULT_FPPI).is_err());
    let none = DetectionRecord::default();
    assert!(ap50(&[none]).is_err());
    assert!(BBox::new([2.0, 0.0], [1.0, 1.0]).is_err());
    let bad = DetectionRecord {
        image: String::new(),
        predictions: vec![scored(bx(0.0, 0.0, 1.0, 1.0), 1.5)],
        ground_truth: vec![bx(0.0, 0.0, 1.0, 1.0)],
    };
    assert!(ap50(&[bad]).is_err());
}

#[test]
fn greedy_match_takes_best_iou_once() {
    let g = bx(0.0, 0.0, 4.0, 4.0);
    let rec = DetectionRecord {
        image: String::new(),
        predictions: vec![scored(bx(0.0, 0.0, 4.0, 3.0), 0.4), scored(g, 0.9)],
        ground_truth: vec![g],
    };
    assert_eq!(match_image(&rec, 0.5), vec![false, true]);
}

#[test]
fn records_from_probability_map() {
    let dims = [2, 4, 6];
    let gt = Mask::from_fn(dims, |z, y, x| z == 0 && y < 2 && x < 2);
    let mut prob = vec![0.0; 48];
    prob[0] = 0.7;
    prob[1] = 0.9;
    prob[6] = 0.6;
    prob[7] = 0.55;
    prob[24 + 23] = 0.8;
    let recs = records_from_slices(&prob, &gt, 0.5, "c").unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].image, "c:0");
    assert_eq!(recs[0].predictions.len(), 1);
    assert_eq!(recs[0].predictions[0].score, 0.9);
    assert_eq!(recs[0].predictions[0].bbox, recs[0].ground_truth[0]);
    assert_eq!(recs[1].ground_truth.len(), 0);
    assert_eq!(recs[1].predictions[0].bbox, bx(3.0, 5.0, 4.0, 6.0));
}

#[test]
fn report_and_records_round_trip() {
    let dims = [2, 6, 6];
    let gt = Mask::from_fn(dims, |_, y, x| y < 3 && x < 3);
    let prob: Vec<f64> = gt.data().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
    let case = EvalCase {
        name: "p".into(),
        prob,
        gt,
        spacing: [1.0; 3],
    };
    let (report, records) = MetricsReport::evaluate(&[case]).unwrap();
    assert_eq!(report.dice_per_case, 1.0);
    assert_eq!(report.dice_s, Some(1.0));
    assert_eq!(report.ap50, Some(1.0));
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(v["froc"]["0.5"], 1.0);
    assert_eq!(v["froc"]["2"], 1.0);
    assert!(v["dice_m"].is_null());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_records(&path, &records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_records(&path).unwrap(), records);
}

fn arb_mask(dims: [usize; 3]) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), dims.iter().product::<usize>())
        .prop_map(move |d| Mask::new(dims, d).unwrap())
}

fn arb_record() -> impl Strategy<Value = DetectionRecord> {
    let b = (0u8..6, 0u8..6, 1u8..4, 1u8..4)
        .prop_map(|(y, x, h, w)| bx(y as f64, x as f64, (y + h) as f64, (x + w) as f64));
    (
        prop::collection::vec((b.clone(), 1u8..=10), 0..4),
        prop::collection::vec(b, 0..3),
    )
        .prop_map(|(p, g)| DetectionRecord {
            image: String::new(),
            predictions: p.into_iter().map(|(b, s)| scored(b, s as f64 / 10.0)).collect(),
            ground_truth: g,
        })
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded(a in arb_mask([2, 3, 4]), b in arb_mask([2, 3, 4])) {
        let ab = dice(&a, &b).unwrap();
        prop_assert_eq!(ab, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if !a.is_empty() {
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn six_never_fewer_than_twenty_six(m in arb_mask([3, 4, 4])) {
        let six = connected_components(&m, Connectivity::Six).count();
        let full = connected_components(&m, Connectivity::TwentySix).count();
        prop_assert!(six >= full);
    }

    #[test]
    fn components_partition_the_mask(m in arb_mask([3, 4, 5])) {
        let cc = connected_components(&m, Connectivity::TwentySix);
        let mut all: Vec<usize> = cc.members.concat();
        all.sort_unstable();
        let on: Vec<usize> = (0..m.data().len()).filter(|&i| m.data()[i]).collect();
        prop_assert_eq!(all, on);
    }

    #[test]
    fn postprocess_never_hurts_inside_liver(
        liver in arb_mask([1, 4, 5]), lesion in arb_mask([1, 4, 5]), gt_raw in arb_mask([1, 4, 5])
    ) {
        let gt = gt_raw.and(&liver).unwrap();
        let post = mask_and_postprocess(&liver, &lesion).unwrap();
        prop_assert!(dice(&post, &gt).unwrap() >= dice(&lesion, &gt).unwrap() - 1e-15);
    }

    #[test]
    fn froc_is_monotone(recs in prop::collection::vec(arb_record(), 1..5)) {
        prop_assume!(recs.iter().any(|r| !r.ground_truth.is_empty()));
        let ops = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
        let s = froc_sensitivity(&recs, &ops).unwrap();
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ap_depends_only_on_score_ranks(recs in prop::collection::vec(arb_record(), 1..5), k in 0.1f64..1.0) {
        prop_assume!(recs.iter().any(|r| !r.ground_truth.is_empty()));
        let scaled: Vec<DetectionRecord> = recs
            .iter()
            .map(|r| DetectionRecord {
                predictions: r.predictions.iter().map(|p| scored(p.bbox, p.score * k)).collect(),
                ..r.clone()
            })
            .collect();
        prop_assert_eq!(ap50(&recs).unwrap(), ap50(&scaled).unwrap());
    }
}
