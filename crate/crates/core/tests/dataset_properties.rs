use idconf::data::{read_dataset, write_dataset, LabelNames, RecordDataset, Schema};
use ndarray::Array2;
use proptest::prelude::*;

/// (subject, is_case) per record plus a finite feature matrix.
fn dataset() -> impl Strategy<Value = RecordDataset> {
    (2usize..10, 1usize..5)
        .prop_flat_map(|(subjects, features)| {
            let rows = prop::collection::vec(0..subjects, subjects..subjects * 4);
            (Just(subjects), Just(features), rows)
        })
        .prop_flat_map(|(subjects, features, mut rows)| {
            // Every subject gets at least one record.
            rows.extend(0..subjects);
            let n = rows.len();
            let values = prop::collection::vec(
                prop_oneof![
                    any::<f64>().prop_filter("finite", |v| v.is_finite()),
                    -1e3..1e3f64,
                    Just(0.0),
                    Just(-0.0),
                    Just(f64::MIN_POSITIVE),
                ],
                n * features,
            );
            (Just(rows), Just(features), values)
        })
        .prop_map(|(rows, features, values)| {
            let n = rows.len();
            RecordDataset::new(
                Array2::from_shape_vec((n, features), values).unwrap(),
                rows.iter().map(|&s| s % 2 == 1).collect(),
                rows.iter().map(|&s| format!("id-{s}")).collect(),
                (0..features).map(|j| format!("feat_{j}")).collect(),
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_bit_exact(ds in dataset()) {
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf, LabelNames::default()).unwrap();
        let back = read_dataset(buf.as_slice(), &Schema::default()).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.subject_ids(), ds.subject_ids());
        let bits = |d: &RecordDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn summary_matches_recount(ds in dataset()) {
        let s = ds.summarize();
        let mut ids: Vec<&String> = ds.subject_ids().iter().collect();
        ids.sort();
        ids.dedup();
        let per_subject: Vec<usize> = ids
            .iter()
            .map(|id| ds.subject_ids().iter().filter(|x| x == id).count())
            .collect();
        let case_subjects = ids
            .iter()
            .filter(|id| {
                let row = ds.subject_ids().iter().position(|x| x == **id).unwrap();
                ds.labels()[row]
            })
            .count();
        prop_assert_eq!(s.records, ds.labels().len());
        prop_assert_eq!(s.subjects, ids.len());
        prop_assert_eq!(s.cases, case_subjects);
        prop_assert_eq!(s.controls, ids.len() - case_subjects);
        prop_assert_eq!(s.min_records_per_subject, *per_subject.iter().min().unwrap());
        prop_assert_eq!(s.max_records_per_subject, *per_subject.iter().max().unwrap());
        prop_assert_eq!(s.features, ds.n_features());
    }
}

#[test]
fn eight_subject_schematic_from_csv() {
    let mut csv = String::from("subject_id,label,f1,f2\n");
    for s in 1..=8 {
        for r in 0..2 {
            let label = if s <= 4 { "case" } else { "control" };
            csv.push_str(&format!("S{s},{label},{}.5,{}\n", s * 10 + r, r));
        }
    }
    let ds = read_dataset(csv.as_bytes(), &Schema::default()).unwrap();
    let s = ds.summarize();
    assert_eq!((s.records, s.subjects, s.cases, s.controls), (16, 8, 4, 4));
    assert_eq!((s.min_records_per_subject, s.max_records_per_subject, s.features), (2, 2, 2));
}
