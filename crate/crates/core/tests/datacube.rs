use std::collections::BTreeSet;

use chrono::NaiveDate;
use ndarray::Array4;
use proptest::prelude::*;

use hydrocube::datacube::{self, bimonthly_dates, Band, CubeManifest, DataCube, Located};

#[derive(Debug, Clone)]
struct Item(String);

impl Located for Item {
    fn location_key(&self) -> String {
        self.0.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn container_round_trip_is_exact(
        t in 1usize..4,
        h in 1usize..6,
        w in 1usize..6,
        lat in -89.0f64..89.0,
        lon in -179.0f64..179.0,
        seed in any::<u32>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let start = NaiveDate::from_ymd_opt(2016, 1 + seed % 12, 1).unwrap();
        let manifest = CubeManifest::new(lat, lon, bimonthly_dates(start, t), h, w, 10.0);
        let values = Array4::from_shape_fn((t, h, w, 8), |(a, b, c, d)| {
            (seed as f32).sin() * (a * 1000 + b * 100 + c * 10 + d) as f32 / 7.0
        });
        let cube = DataCube::new(manifest, values).unwrap();
        datacube::save_cube(&cube, dir.path()).unwrap();
        let back = datacube::load_cube(dir.path()).unwrap();
        prop_assert_eq!(&back.manifest, &cube.manifest);
        prop_assert!(back.values().iter().zip(cube.values().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        for band in Band::ALL {
            prop_assert_eq!(back.frame(t - 1, band).unwrap(), cube.frame(t - 1, band).unwrap());
        }
    }

    #[test]
    fn split_keeps_locations_disjoint_and_complete(
        locations in 2usize..12,
        per in 1usize..5,
        ratio in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let items: Vec<Item> = (0..locations)
            .flat_map(|l| (0..per).map(move |_| Item(format!("loc{l}"))))
            .collect();
        let (train, val) = datacube::temporal_split(&items, ratio, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), items.len());
        let keys = |v: &[Item]| v.iter().map(|i| i.0.clone()).collect::<BTreeSet<_>>();
        prop_assert!(keys(&train).is_disjoint(&keys(&val)));
        prop_assert!(!train.is_empty() && !val.is_empty());
    }
}
