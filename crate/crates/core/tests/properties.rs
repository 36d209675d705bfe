use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use proptest::prelude::*;

use rfidloc_core::coverage::{coverage_map, coverage_percentage, AntennaPair, Mode};
use rfidloc_core::estimation::{crlb_rmse, fisher_information_for_pairs, simulate_measurements};
use rfidloc_core::experiments::{build_scenario, Cdf, Overrides};
use rfidloc_core::io;
use rfidloc_core::propagation::{bistatic_rss_dbm, patch_gain_polar, Position3D};
use rfidloc_core::scenario::{Placement, Scenario};

fn coarse(product: f64) -> Overrides {
    Overrides { coverage_step: Some(0.4), backscatter_product: Some(product), ..Overrides::default() }
}

fn scenario(placement: Placement, theta: f64, power: f64, mode: Mode, product: f64) -> Scenario {
    build_scenario(placement, theta, power, mode, &coarse(product)).unwrap()
}

fn placement() -> impl Strategy<Value = Placement> {
    prop_oneof![Just(Placement::Side), Just(Placement::Corner)]
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Monostatic), Just(Mode::Bistatic)]
}

fn theta() -> impl Strategy<Value = f64> {
    FRAC_PI_4..=FRAC_PI_2
}

fn product() -> impl Strategy<Value = f64> {
    (-4.0f64..0.0).prop_map(|e| 10f64.powf(e))
}

fn tag() -> impl Strategy<Value = Position3D> {
    (0.2f64..7.8, 0.2f64..7.8).prop_map(|(x, y)| Position3D::new(x, y, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coverage_non_decreasing_in_power(p in placement(), t in theta(), m in mode(), k in product(),
                                        a in 1000.0f64..3000.0, b in 1000.0f64..3000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = coverage_map(&scenario(p, t, lo, m, k)).unwrap();
        let high = coverage_map(&scenario(p, t, hi, m, k)).unwrap();
        for c in 0..low.len() {
            prop_assert!(low.m_count[c] <= high.m_count[c]);
        }
    }

    #[test]
    fn bistatic_covers_what_monostatic_covers(p in placement(), t in theta(), w in 1000.0f64..3000.0, k in product()) {
        let mono = coverage_map(&scenario(p, t, w, Mode::Monostatic, k)).unwrap();
        let bi = coverage_map(&scenario(p, t, w, Mode::Bistatic, k)).unwrap();
        for c in 0..mono.len() {
            prop_assert!(mono.m_count[c] <= bi.m_count[c]);
            prop_assert!(!mono.localizable[c] || bi.localizable[c]);
        }
        prop_assert!(coverage_percentage(&mono).unwrap() <= coverage_percentage(&bi).unwrap());
    }

    #[test]
    fn measurement_count_within_bounds(p in placement(), t in theta(), m in mode(), k in product()) {
        let s = scenario(p, t, 2000.0, m, k);
        let map = coverage_map(&s).unwrap();
        let max = m.max_measurements(s.antennas.len()) as u32;
        for c in 0..map.len() {
            prop_assert!(map.m_count[c] <= max);
            prop_assert_eq!(map.localizable[c], map.m_count[c] >= 2);
        }
    }

    #[test]
    fn bistatic_rss_is_symmetric(p in placement(), t in theta(), tag in tag(), i in 0usize..4, j in 0usize..4) {
        let s = scenario(p, t, 2000.0, Mode::Bistatic, 0.1);
        let (a, b) = (&s.antennas[i], &s.antennas[j]);
        let ab = bistatic_rss_dbm(&s.radio, a, b, &tag).unwrap();
        let ba = bistatic_rss_dbm(&s.radio, b, a, &tag).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0) || ab == ba);
    }

    #[test]
    fn gain_is_bounded(alpha in -FRAC_PI_2..FRAC_PI_2, phi in -3.2f64..3.2) {
        let g = patch_gain_polar(alpha, phi);
        prop_assert!(g >= 0.0);
        prop_assert!(g <= 7.737_771);
    }

    #[test]
    fn adding_a_pair_never_raises_the_bound(p in placement(), t in theta(), tag in tag(),
                                            mask in 0u32..1 << 10, extra in 0usize..10) {
        let s = scenario(p, t, 3000.0, Mode::Bistatic, 0.1);
        let all = Mode::Bistatic.pairs(4);
        let subset: Vec<AntennaPair> = (0..all.len()).filter(|b| mask >> b & 1 == 1).map(|b| all[b]).collect();
        let mut bigger = subset.clone();
        bigger.push(all[extra]);
        let before = crlb_rmse(&fisher_information_for_pairs(&s, &subset, &tag, 2.0).unwrap());
        let after = crlb_rmse(&fisher_information_for_pairs(&s, &bigger, &tag, 2.0).unwrap());
        prop_assert!(after <= before * (1.0 + 1e-12) || before == f64::INFINITY);
    }

    #[test]
    fn bound_scales_with_sigma(p in placement(), t in theta(), tag in tag(), sigma in 0.1f64..5.0, c in 1.1f64..4.0) {
        let s = scenario(p, t, 3000.0, Mode::Bistatic, 0.1);
        let pairs = Mode::Bistatic.pairs(4);
        let a = crlb_rmse(&fisher_information_for_pairs(&s, &pairs, &tag, sigma).unwrap());
        let b = crlb_rmse(&fisher_information_for_pairs(&s, &pairs, &tag, c * sigma).unwrap());
        if a.is_finite() {
            prop_assert!((b / a - c).abs() <= 1e-9 * c);
        } else {
            prop_assert_eq!(b, f64::INFINITY);
        }
    }

    #[test]
    fn coverage_csv_round_trips(p in placement(), t in theta(), m in mode(), k in product()) {
        let map = coverage_map(&scenario(p, t, 1500.0, m, k)).unwrap();
        let mut buf = Vec::new();
        io::write_coverage_csv(&map, &mut buf).unwrap();
        let rows = io::read_coverage_csv(buf.as_slice()).unwrap();
        let want = io::coverage_rows(&map);
        prop_assert_eq!(rows.len(), want.len());
        for (r, w) in rows.iter().zip(&want) {
            prop_assert_eq!(r.m, w.m);
            prop_assert_eq!(r.localizable, w.localizable);
            prop_assert!((r.x - w.x).abs() <= 1e-8 * w.x.abs().max(1.0));
            prop_assert!(r.max_rss_dbm == w.max_rss_dbm || (r.max_rss_dbm - w.max_rss_dbm).abs() <= 1e-8 * w.max_rss_dbm.abs());
        }
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one(samples in prop::collection::vec(0.0f64..10.0, 1..200)) {
        let cdf = Cdf::from_samples(&samples);
        prop_assert!(cdf.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert!((cdf.points.last().unwrap().1 - 1.0).abs() < 1e-12);
        prop_assert_eq!(cdf.at(-1.0), 0.0);
    }

    #[test]
    fn measurements_are_deterministic(p in placement(), t in theta(), tag in tag(), seed in any::<u64>()) {
        let s = scenario(p, t, 3000.0, Mode::Bistatic, 0.1);
        let a = simulate_measurements(&s, &tag, seed).unwrap();
        let b = simulate_measurements(&s, &tag, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
