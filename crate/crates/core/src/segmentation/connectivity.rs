use super::{Grid, SegmentMap};

/// Renumbers labels `0..n` in scan order of first appearance.
pub fn relabel_compact(shape: &[usize], labels: &[u32]) -> SegmentMap {
    let mut map = std::collections::HashMap::new();
    let out: Vec<u32> = labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect();
    SegmentMap::from_parts(shape.to_vec(), out, map.len())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Splits labels into connected components and merges every component
/// smaller than `min_size` into its largest neighbour (ties: lowest
/// component, by scan order), repeating until nothing changes.
pub fn enforce_connectivity(shape: &[usize], labels: &[u32], min_size: usize) -> SegmentMap {
    let grid = Grid::of(shape);
    assert_eq!(grid.len(), labels.len(), "labels do not match shape");

    // Connected components in scan order.
    let mut comp = vec![usize::MAX; labels.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        comp[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            grid.for_neighbors(i, |j| {
                if comp[j] == usize::MAX && labels[j] == labels[start] {
                    comp[j] = id;
                    stack.push(j);
                }
            });
        }
        sizes.push(size);
    }

    let n = sizes.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..labels.len() {
        grid.for_neighbors(i, |j| {
            if j > i && comp[i] != comp[j] {
                adjacency[comp[i]].push(comp[j]);
                adjacency[comp[j]].push(comp[i]);
            }
        });
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut changed = min_size > 1;
    while changed {
        changed = false;
        for c in 0..n {
            if parent[c] != c || sizes[c] >= min_size {
                continue;
            }
            let mut neighbors: Vec<usize> = std::mem::take(&mut adjacency[c])
                .into_iter()
                .map(|a| find(&mut parent, a))
                .filter(|&a| a != c)
                .collect();
            neighbors.sort_unstable();
            neighbors.dedup();
            let target = neighbors
                .iter()
                .copied()
                .fold(None::<usize>, |best, a| match best {
                    Some(b) if sizes[b] >= sizes[a] => Some(b),
                    _ => Some(a),
                });
            match target {
                Some(t) => {
                    parent[c] = t;
                    sizes[t] += sizes[c];
                    adjacency[t].extend(neighbors.into_iter().filter(|&a| a != t));
                    changed = true;
                }
                None => adjacency[c] = neighbors,
            }
        }
    }

    let roots: Vec<u32> = comp.iter().map(|&c| find(&mut parent, c) as u32).collect();
    relabel_compact(shape, &roots)
}

#[cfg(test)]
mod tests {
    use super::super::is_connected;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn checkerboard_collapses_to_one_segment() {
        let labels: Vec<u32> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as u32).collect();
        let m = enforce_connectivity(&[8, 8], &labels, 2);
        assert_eq!(m.n_segments(), 1);
    }

    #[test]
    fn connected_large_segments_only_relabel() {
        let labels: Vec<u32> = (0..36).map(|i| if i % 6 < 3 { 7 } else { 2 }).collect();
        let m = enforce_connectivity(&[6, 6], &labels, 4);
        assert_eq!(m, relabel_compact(&[6, 6], &labels));
        assert_eq!(m.labels()[0], 0);
        assert_eq!(m.labels()[3], 1);
    }

    #[test]
    fn disconnected_label_splits() {
        // Label 0 appears in two separate columns.
        let labels: Vec<u32> = (0..9).map(|i| if i % 3 == 1 { 1 } else { 0 }).collect();
        let m = enforce_connectivity(&[3, 3], &labels, 1);
        assert_eq!(m.n_segments(), 3);
        assert!(is_connected(&m));
    }

    #[test]
    fn small_blob_joins_largest_neighbour() {
        // A single pixel of label 9 between a 5-pixel and a 3-pixel region.
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 0,
            0, 9, 1,
            0, 1, 1,
        ];
        let m = enforce_connectivity(&[3, 3], &labels, 2);
        assert_eq!(m.labels()[4], m.labels()[0]);
        assert_eq!(m.n_segments(), 2);
    }

    #[test]
    fn volumes_use_six_connectivity() {
        // Two voxels touching only along an edge are separate components.
        let mut labels = vec![0u32; 8];
        labels[0] = 1;
        labels[7] = 1;
        let m = enforce_connectivity(&[2, 2, 2], &labels, 1);
        assert_eq!(m.n_segments(), 3);
    }

    proptest! {
        #[test]
        fn output_is_connected_partition(
            h in 1usize..12, w in 1usize..12, k in 1u32..5, min_size in 1usize..6, seed in any::<u64>(),
        ) {
            let mut rng = crate::Prng::new(seed);
            let labels: Vec<u32> = (0..h * w).map(|_| rng.below(k as usize) as u32).collect();
            let m = enforce_connectivity(&[h, w], &labels, min_size);
            prop_assert!(is_connected(&m));
            prop_assert_eq!(m.sizes().iter().sum::<usize>(), h * w);
            prop_assert!(m.sizes().iter().all(|&s| s > 0));
            if m.n_segments() > 1 {
                prop_assert!(m.sizes().iter().all(|&s| s >= min_size));
            }
        }
    }
}
