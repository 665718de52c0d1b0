//! Bit-exactness of the binary formats over arbitrary finite values.

use gltr::features::{read_features, write_features, SequenceRecord};
use gltr::tensor::RealMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]
    #[test]
    fn feature_file_round_trip_is_bitwise(
        person in any::<u32>(),
        camera in any::<u32>(),
        d in 1usize..6,
        t in 1usize..8,
        values in proptest::collection::vec(-1e12f64..1e12, 1..48),
    ) {
        let needed = d * t;
        let mut data = values;
        while data.len() < needed {
            let next = data[data.len() % data.len().max(1)] * 0.5 - 1.0;
            data.push(next);
        }
        data.truncate(needed);
        let record = SequenceRecord {
            person_id: person,
            camera_id: camera,
            features: RealMatrix::from_vec(d, t, data),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.glfv");
        write_features(&path, std::slice::from_ref(&record), d).unwrap();
        let (dd, back) = read_features(&path).unwrap();
        prop_assert_eq!(dd, d);
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(back[0].person_id, person);
        prop_assert_eq!(back[0].camera_id, camera);
        for (a, b) in record.features.data().iter().zip(back[0].features.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
