use std::collections::BTreeMap;

use proptest::prelude::*;
use storyloom_core::batch_format::{parse_batch, serialize_batch};
use storyloom_core::bsv::invariants::*;
use storyloom_core::bsv::{build_1d_bsv, build_2d_bsv, build_compact_view};
use storyloom_core::*;

#[derive(Debug, Clone)]
struct Case {
    batch: PlaythroughBatch,
    dims: [Dimension; 2],
    asgs: [DimensionAssignment; 2],
}

fn dimension(name: &str, n: usize) -> Dimension {
    let values = (0..n).map(|i| format!("{name}_v{i}")).collect();
    Dimension::new(name, "", values, DimensionOrigin::Author).unwrap()
}

/// Label index `n` stands for UNCLASSIFIED.
fn case() -> impl Strategy<Value = Case> {
    (2usize..=4, 2usize..=4, prop::collection::vec(1usize..=6, 0..=6))
        .prop_flat_map(|(na, nb, lens)| {
            let total: usize = lens.iter().sum();
            (
                Just((na, nb, lens)),
                prop::collection::vec((0..=na, 0..=nb), total),
            )
        })
        .prop_map(|((na, nb, lens), labels)| {
            let storylines = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let id = StorylineId(format!("s{}", i + 1));
                    Storyline {
                        id: id.clone(),
                        display_color: String::new(),
                        player_profile: None,
                        states: (1..=n as u32)
                            .map(|t| NarrativeState {
                                storyline_id: id.clone(),
                                timestep: t,
                                gm_text: format!("gm {i} {t}"),
                                player_text: format!("player {i} {t}"),
                                summary: None,
                                triggered_rule_ids: Default::default(),
                            })
                            .collect(),
                    }
                })
                .collect();
            let batch = PlaythroughBatch::new(BatchId(1), storylines).unwrap();
            let dims = [dimension("alpha", na), dimension("beta", nb)];
            let mut maps = [BTreeMap::new(), BTreeMap::new()];
            for (key, (a, b)) in batch.state_keys().into_iter().zip(labels) {
                for (k, (idx, dim)) in [(a, &dims[0]), (b, &dims[1])].into_iter().enumerate() {
                    let label = dim.values.get(idx).map_or(Label::Unclassified, |v| Label::value(v.clone()));
                    maps[k].insert(key.clone(), label);
                }
            }
            let [ma, mb] = maps;
            let asgs = [
                DimensionAssignment {
                    dimension_id: dims[0].id.clone(),
                    batch_id: batch.batch_id,
                    assignments: ma,
                },
                DimensionAssignment {
                    dimension_id: dims[1].id.clone(),
                    batch_id: batch.batch_id,
                    assignments: mb,
                },
            ];
            Case { batch, dims, asgs }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn partition_edges_and_paths(c in case()) {
        for k in 0..2 {
            let g = build_1d_bsv(&c.batch, &c.dims[k], &c.asgs[k]).unwrap();
            prop_assert_eq!(check_partition(&c.batch, &[&c.asgs[k]], &g), Ok(()));
            prop_assert_eq!(check_edges(&c.batch, &[&c.asgs[k]], &g), Ok(()));
            prop_assert_eq!(check_paths(&c.batch, &g), Ok(()));
        }
        let grid = build_2d_bsv(&c.batch, &c.dims[0], &c.dims[1], &c.asgs[0], &c.asgs[1]).unwrap();
        let both = [&c.asgs[0], &c.asgs[1]];
        prop_assert_eq!(check_partition(&c.batch, &both, &grid), Ok(()));
        prop_assert_eq!(check_edges(&c.batch, &both, &grid), Ok(()));
        prop_assert_eq!(check_paths(&c.batch, &grid), Ok(()));
    }

    #[test]
    fn grid_projects_onto_each_axis(c in case()) {
        let grid = build_2d_bsv(&c.batch, &c.dims[0], &c.dims[1], &c.asgs[0], &c.asgs[1]).unwrap();
        for k in 0..2 {
            let g = build_1d_bsv(&c.batch, &c.dims[k], &c.asgs[k]).unwrap();
            prop_assert_eq!(check_projection(&grid, k, &g), Ok(()));
        }
    }

    #[test]
    fn compact_counts_are_column_sums(c in case()) {
        let g = build_1d_bsv(&c.batch, &c.dims[0], &c.asgs[0]).unwrap();
        let compact = build_compact_view(&c.batch, &c.dims[0], &c.asgs[0]).unwrap();
        prop_assert_eq!(check_compact_sums(&c.batch, &g, &compact), Ok(()));
    }

    #[test]
    fn graphs_are_deterministic(c in case()) {
        let a = build_2d_bsv(&c.batch, &c.dims[0], &c.dims[1], &c.asgs[0], &c.asgs[1]).unwrap();
        let b = build_2d_bsv(&c.batch, &c.dims[0], &c.dims[1], &c.asgs[0], &c.asgs[1]).unwrap();
        prop_assert_eq!(bsv::to_json(&a), bsv::to_json(&b));
        prop_assert_eq!(bsv::to_dot(&a), bsv::to_dot(&b));
    }

    #[test]
    fn batch_file_round_trips(c in case()) {
        let text = serialize_batch(&c.batch);
        let back = parse_batch(text.as_bytes(), c.batch.batch_id).unwrap();
        prop_assert_eq!(&back, &c.batch);
        prop_assert_eq!(serialize_batch(&back), text);
    }

    #[test]
    fn assignments_round_trip(c in case()) {
        let json = serde_json::to_string(&c.asgs[0]).unwrap();
        let back: DimensionAssignment = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &c.asgs[0]);
        prop_assert_eq!(back.check(&c.batch, &c.dims[0]), Ok(()));
    }
}
