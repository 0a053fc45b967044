use h2c_core::domain::{GroundTruth, SceneGeometry};
use h2c_core::grid::{GridSpec, Heatmap};
use h2c_core::matrix::ResultMatrix;
use h2c_core::memory::{CompletionBuffer, SeparationBuffer};
use h2c_core::metrics::{bwt, extract_endpoints, fde_sample, mr_threshold, PredictionSet};
use h2c_core::scenarios::{build_stream, StreamSpec, TaskKind, TaskSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> impl Strategy<Value = GridSpec> {
    (2usize..20, 2usize..20, -50.0..50.0f64, -50.0..50.0f64, 0.1..5.0f64)
        .prop_map(|(r, c, x, y, s)| GridSpec::new(r, c, [x, y], s).unwrap())
}

proptest! {
    #[test]
    fn endpoint_to_cell_is_total(g in grid(), x in -1e6..1e6f64, y in -1e6..1e6f64) {
        let c = g.endpoint_to_cell([x, y]);
        prop_assert!(g.contains(c));
        prop_assert_eq!(c, g.endpoint_to_cell([x, y]));
    }

    #[test]
    fn buffers_never_exceed_capacity(cap in 1usize..20, n in 0usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cp = CompletionBuffer::<usize>::new(cap).unwrap();
        let mut sp = SeparationBuffer::<usize>::new(cap, 3).unwrap();
        for i in 0..n {
            cp.observe(i, &mut rng);
            sp.observe(i, (i % 7) as f64 / 3.5, &mut rng);
            prop_assert!(cp.len() <= cap && sp.len() <= cap);
        }
        prop_assert_eq!(cp.len(), n.min(cap));
        prop_assert_eq!(cp.stream_count(), n as u64);
    }

    #[test]
    fn threshold_is_monotone(a in 0.0..30.0f64, b in 0.0..30.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mr_threshold(lo).unwrap() <= mr_threshold(hi).unwrap());
    }

    #[test]
    fn fde_never_grows_with_more_endpoints(
        pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..10),
        tx in -50.0..50.0f64,
        ty in -50.0..50.0f64,
    ) {
        let truth = GroundTruth::new([tx, ty], 1.0).unwrap();
        let all: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let mut prev = f64::INFINITY;
        for w in 1..=all.len() {
            let f = fde_sample(&PredictionSet { endpoints: all[..w].to_vec() }, &truth).unwrap();
            prop_assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn one_hot_heatmap_decodes_to_its_cell(g in grid(), idx in any::<prop::sample::Index>()) {
        let i = idx.index(g.len());
        let mut logits = vec![0.0; g.len()];
        logits[i] = 5.0;
        let hm = Heatmap::new(logits, g).unwrap();
        let e = extract_endpoints(&hm, 3).unwrap();
        prop_assert_eq!(e.endpoints[0], g.cell_to_center(g.cell_at(i)).unwrap());
        prop_assert_eq!(e.endpoints.len(), 3);
    }

    #[test]
    fn identical_checkpoints_have_zero_bwt(n in 2usize..7, vals in prop::collection::vec(0.0..10.0f64, 7)) {
        let mut m = ResultMatrix::new(n);
        for i in 1..=n {
            for j in 1..=i {
                m.set(i, j, vals[j - 1]).unwrap();
            }
        }
        for c in 2..=n {
            prop_assert_eq!(bwt(&m, c).unwrap(), 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stream_labels_are_monotone(sizes in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
        let kinds = [TaskKind::Straight, TaskKind::Arc, TaskKind::Turn];
        let tasks = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut t = match kinds[i % 3] {
                    TaskKind::Straight => TaskSpec::straight(n, seed ^ i as u64),
                    TaskKind::Arc => TaskSpec::arc(n, seed ^ i as u64),
                    TaskKind::Turn => TaskSpec::turn(n, seed ^ i as u64),
                };
                t.onset_lead = i;
                t
            })
            .collect();
        let stream = build_stream(&StreamSpec { tasks, seed }, &SceneGeometry::default()).unwrap();
        prop_assert_eq!(stream.len(), sizes.iter().sum::<usize>());
        let labels: Vec<u32> = stream.iter().map(|s| s.task_label()).collect();
        prop_assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    }
}
