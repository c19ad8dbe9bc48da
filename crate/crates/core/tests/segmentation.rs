use segrank::datagen::{gen_moving_shapes_3d, gen_shapes_2d};
use segrank::segmentation::{is_connected, quickshift_2d, slic_2d, slic_3d, QuickShiftParams, SegmentMap, SlicParams};

fn bounding_extents(map: &SegmentMap) -> Vec<Vec<usize>> {
    let shape = map.shape();
    let rank = shape.len();
    let mut lo = vec![vec![usize::MAX; rank]; map.n_segments()];
    let mut hi = vec![vec![0; rank]; map.n_segments()];
    for (i, &l) in map.labels().iter().enumerate() {
        let mut rem = i;
        for a in (0..rank).rev() {
            let c = rem % shape[a];
            rem /= shape[a];
            lo[l as usize][a] = lo[l as usize][a].min(c);
            hi[l as usize][a] = hi[l as usize][a].max(c);
        }
    }
    lo.iter().zip(&hi).map(|(l, h)| l.iter().zip(h).map(|(a, b)| b - a + 1).collect()).collect()
}

#[test]
fn slic_on_shapes_corpus() {
    let k = 50;
    let step = (64.0 * 64.0 / k as f64).sqrt();
    for s in gen_shapes_2d(12, 5) {
        let map = slic_2d(&s.input, &SlicParams::with_k(k)).unwrap();
        assert!(is_connected(&map));
        assert!((k / 2..=2 * k).contains(&map.n_segments()), "{}", map.n_segments());
        for ext in bounding_extents(&map) {
            assert!(ext.iter().all(|&e| e as f64 <= 4.0 * step), "{ext:?}");
        }
    }
}

#[test]
fn slic_on_moving_shapes_corpus() {
    let k = 32;
    let step = (16.0 * 32.0 * 32.0 / k as f64).cbrt();
    for s in gen_moving_shapes_3d(4, 9) {
        let map = slic_3d(&s.input, &SlicParams::with_k(k)).unwrap();
        assert!(is_connected(&map));
        assert!((k / 2..=2 * k).contains(&map.n_segments()), "{}", map.n_segments());
        for ext in bounding_extents(&map) {
            assert!(ext.iter().all(|&e| e as f64 <= 4.0 * step), "{ext:?}");
        }
    }
}

#[test]
fn quickshift_defaults_on_shapes_corpus() {
    let mut counts = Vec::new();
    for s in gen_shapes_2d(8, 11) {
        let map = quickshift_2d(&s.input, &QuickShiftParams::default()).unwrap();
        assert!(is_connected(&map));
        counts.push(map.n_segments());
    }
    eprintln!("quickshift segment counts: {counts:?}");
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    assert!((40.0..=80.0).contains(&mean), "{counts:?}");
}
