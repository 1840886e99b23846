mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use rsma_ee::grouping::{channel_similarity, extended_similarity, form_groups, GroupingResult};
use rsma_ee::oracle::replay_grouping;
use rsma_ee::scenario::ChannelMatrix;

fn r_ext_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (2usize..=8, 1usize..=3).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(prop::collection::vec(1e-6f64..1.0, k), k),
            Just(d),
        )
    })
}

fn channel_strategy() -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
    (1usize..=6, 2usize..=6).prop_flat_map(|(n, k)| {
        prop::collection::vec(prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n), k)
    })
}

fn to_channel(cols: &[Vec<(f64, f64)>]) -> Option<ChannelMatrix> {
    let cols: Vec<Vec<Complex64>> = cols
        .iter()
        .map(|c| c.iter().map(|&(re, im)| Complex64::new(re, im)).collect())
        .collect();
    if cols.iter().any(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>() < 1e-6) {
        return None;
    }
    ChannelMatrix::from_columns(cols).ok()
}

fn check_structure(g: &GroupingResult, k: usize, d: usize) {
    g.validate().unwrap();
    for u in 0..k {
        let z = g.decodes(u);
        assert!(!z.is_empty() && z.len() <= d);
        assert_eq!(*z.last().unwrap(), u, "own message decoded last");
        for &owner in z {
            assert!(g.decoded_by(owner).contains(&u));
        }
        for &rx in g.decoded_by(u) {
            assert!(g.decodes(rx).contains(&u));
        }
    }
}

proptest! {
    #[test]
    fn output_is_consistent_and_bounded((r_ext, d) in r_ext_strategy()) {
        let k = r_ext.len();
        let g = form_groups(&r_ext, d).unwrap();
        check_structure(&g, k, d);
        prop_assert!(g.assignments().len() <= k * (k - 1));
        prop_assert!(g.assignments().len() <= k * (d - 1));
    }

    #[test]
    fn matches_replay((r_ext, d) in r_ext_strategy()) {
        prop_assert_eq!(form_groups(&r_ext, d).unwrap(), replay_grouping(&r_ext, d).unwrap());
    }

    #[test]
    fn similarity_ignores_column_scaling(cols in channel_strategy(), seed in any::<u64>()) {
        let Some(h) = to_channel(&cols) else { return Ok(()); };
        let mut r = common::rng(seed);
        let scaled: Vec<Vec<Complex64>> = (0..h.n_users())
            .map(|k| {
                let c = common::complex_gaussian(&mut r) * 10.0 + Complex64::new(1e-3, 0.0);
                h.column(k).iter().map(|z| z * c).collect()
            })
            .collect();
        let a = channel_similarity(&h).unwrap();
        let b = channel_similarity(&ChannelMatrix::from_columns(scaled).unwrap()).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn similarity_entries_are_unit_bounded(cols in channel_strategy()) {
        let Some(h) = to_channel(&cols) else { return Ok(()); };
        let r = channel_similarity(&h).unwrap();
        for (i, row) in r.iter().enumerate() {
            prop_assert!((row[i] - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                prop_assert!((v - r[j][i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn reference_three_user_instance() {
    let r_ext = vec![
        vec![1.0, 0.9, 0.2],
        vec![0.4, 0.5, 0.3],
        vec![0.1, 0.8, 0.6],
    ];
    let g = form_groups(&r_ext, 2).unwrap();
    assert_eq!(g.decodes(0), &[1, 0]);
    assert_eq!(g.decodes(1), &[1]);
    assert_eq!(g.decodes(2), &[1, 2]);
    let mut m = g.decoded_by(1).to_vec();
    m.sort_unstable();
    assert_eq!(m, vec![0, 1, 2]);
    assert_eq!(g.assignments(), &[(0, 1), (2, 1)]);
}

#[test]
fn extended_similarity_scales_rows() {
    let r = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
    let e = extended_similarity(&r, &[1.0, 0.25]).unwrap();
    assert_eq!(e, vec![vec![1.0, 0.5], vec![0.125, 0.25]]);
}

#[test]
fn one_layer_means_no_alien_decoding() {
    let mut r = common::rng(5);
    for k in 2..=8 {
        let g = form_groups(&common::random_r_ext(&mut r, k), 1).unwrap();
        for u in 0..k {
            assert_eq!(g.decodes(u), &[u]);
            assert_eq!(g.decoded_by(u), &[u]);
        }
    }
}
