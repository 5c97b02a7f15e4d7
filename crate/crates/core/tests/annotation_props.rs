use boneage_core::annotation::{
    parse_coco, parse_sidecar, parse_via, to_coco, Annotation, Category, Cohort, Dataset, ImageRecord, Point,
};
use proptest::prelude::*;

const COCO_FIXTURE: &str = include_str!("fixtures/annotations/triangle.coco.json");
const VIA_FIXTURE: &str = include_str!("fixtures/annotations/two_hands.via.json");

fn cohort() -> impl Strategy<Value = Cohort> {
    prop_oneof![Just(Cohort::Male), Just(Cohort::Female), Just(Cohort::Unknown)]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    let images = prop::collection::vec(
        (1u32..200, 1u32..200, cohort(), prop::option::of(0.0f64..=300.0), "[a-z0-9_]{1,12}\\.pgm"),
        0..4,
    );
    let categories = prop::collection::vec("[a-z ]{1,10}", 1..3);
    (images, categories)
        .prop_flat_map(|(images, categories)| {
            let records: Vec<ImageRecord> = images
                .into_iter()
                .enumerate()
                .map(|(i, (width, height, cohort, target_age, file_name))| ImageRecord {
                    id: 10 * i as i64 + 3,
                    file_name,
                    width,
                    height,
                    cohort,
                    target_age,
                })
                .collect();
            let categories: Vec<Category> = categories
                .into_iter()
                .enumerate()
                .map(|(i, name)| Category { id: i as i64 + 1, name })
                .collect();
            let n_cat = categories.len();
            let anns = if records.is_empty() {
                Just(Vec::new()).boxed()
            } else {
                let dims: Vec<(i64, u32, u32)> = records.iter().map(|r| (r.id, r.width, r.height)).collect();
                prop::collection::vec(
                    (0..dims.len(), 0..n_cat, prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 3..7)),
                    0..5,
                )
                .prop_map(move |raw| {
                    raw.into_iter()
                        .enumerate()
                        .map(|(k, (img, cat, unit))| {
                            let (image_id, w, h) = dims[img];
                            Annotation {
                                id: k as i64 + 1,
                                image_id,
                                category_id: cat as i64 + 1,
                                polygon: unit.iter().map(|&(u, v)| Point::new(u * w as f64, v * h as f64)).collect(),
                            }
                        })
                        .collect()
                })
                .boxed()
            };
            (Just(records), Just(categories), anns)
        })
        .prop_map(|(images, categories, annotations)| Dataset { images, annotations, categories })
}

/// Byte-level mutations of a fixture: overwrite, delete a span, or splice in
/// a JSON-ish token.
fn mutate(text: &str) -> impl Strategy<Value = String> {
    let len = text.len();
    let bytes = text.as_bytes().to_vec();
    let tokens = prop_oneof![
        Just("{"), Just("}"), Just("["), Just("]"), Just(","), Just(":"), Just("\""),
        Just("null"), Just("-1"), Just("1e400"), Just("0.5"), Just("[]"), Just("{}"), Just("\"x\""),
    ];
    prop::collection::vec((0..3u8, 0..len, 0..len, any::<u8>(), tokens), 1..4).prop_map(move |edits| {
        let mut b = bytes.clone();
        for (kind, at, to, byte, token) in edits {
            let at = at.min(b.len().saturating_sub(1));
            match kind {
                0 if !b.is_empty() => b[at] = byte,
                1 => {
                    let end = to.clamp(at, b.len());
                    b.drain(at..end);
                }
                _ => {
                    let at = at.min(b.len());
                    b.splice(at..at, token.bytes());
                }
            }
        }
        String::from_utf8_lossy(&b).into_owned()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coco_round_trip(d in dataset()) {
        d.validate().unwrap();
        prop_assert_eq!(parse_coco(&to_coco(&d)).unwrap(), d);
    }

    #[test]
    fn mutated_coco_never_panics(text in mutate(COCO_FIXTURE)) {
        if let Ok(d) = parse_coco(&text) {
            prop_assert!(d.validate().is_ok());
        }
    }

    #[test]
    fn mutated_via_never_panics(text in mutate(VIA_FIXTURE)) {
        if let Ok(d) = parse_via(&text) {
            prop_assert!(d.validate().is_ok());
        }
    }

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        let _ = parse_coco(&text);
        let _ = parse_via(&text);
        let _ = parse_sidecar(&text);
    }
}

#[test]
fn via_fixture_converts_to_coco() {
    let d = parse_via(VIA_FIXTURE).unwrap();
    assert_eq!(d.images.len(), 2);
    assert_eq!(d.annotations.len(), 3);
    assert_eq!(d.annotations_for(d.images[0].id).count(), 2);
    assert_eq!(d.categories.len(), 1);
    let again = parse_coco(&to_coco(&d)).unwrap();
    assert_eq!(again, d);
}

#[test]
fn coco_fixture_fields() {
    let d = parse_coco(COCO_FIXTURE).unwrap();
    let img = &d.images[0];
    assert_eq!((img.id, img.file_name.as_str(), img.width, img.height), (1, "hand.pgm", 100, 80));
    assert_eq!(img.cohort, Cohort::Unknown);
    assert_eq!(d.annotations[0].polygon, vec![Point::new(10.0, 10.0), Point::new(90.5, 10.0), Point::new(50.0, 70.25)]);
}
