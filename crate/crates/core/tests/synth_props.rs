use linehue::ingest::{fit_bbox, BBox};
use linehue::raster::{density_of, extract_feature_sets};
use linehue::synth::{gen_continuation, gen_disconnected, gen_illusory, ContinuationMode};

#[test]
fn touching_and_crossing_share_a_density_plot() {
    // The two variants only differ in how lines continue through the central
    // segment; elsewhere their grids differ by offset sampling noise alone.
    let spec = fit_bbox(BBox::new(0.0, 0.0, 1.0, 1.0), 64, 64, false).unwrap();
    for seed in 1..=5 {
        let grid = |mode| {
            let data = gen_continuation(200, mode, seed).unwrap();
            density_of(&extract_feature_sets(&data.lineset, &spec, 1.0).unwrap())
        };
        let (a, b) = (grid(ContinuationMode::Crossing), grid(ContinuationMode::Touching));
        for bin in 0..spec.bin_count() {
            let (col, _) = spec.col_row(bin);
            if !(29..35).contains(&col) {
                let diff = a.counts[bin].abs_diff(b.counts[bin]);
                assert!(diff <= 32, "seed {seed} bin {bin}: {diff}");
            }
        }
        let (ta, tb) = (a.counts.iter().sum::<u32>() as f64, b.counts.iter().sum::<u32>() as f64);
        assert!((ta - tb).abs() <= 0.02 * ta);
    }
}

#[test]
fn label_counts_are_exact() {
    let i = gen_illusory(400, 100, 0.6, 8).unwrap();
    let count = |labels: &[u32], l| labels.iter().filter(|&&x| x == l).count();
    assert_eq!((count(&i.labels, 0), count(&i.labels, 1), count(&i.labels, 2)), (200, 200, 100));
    let c = gen_continuation(200, ContinuationMode::Crossing, 8).unwrap();
    assert_eq!((count(&c.labels, 0), count(&c.labels, 1)), (200, 200));
    let d = gen_disconnected(200, 1.0, 8).unwrap();
    assert_eq!((count(&d.labels, 0), count(&d.labels, 1)), (200, 200));
}
