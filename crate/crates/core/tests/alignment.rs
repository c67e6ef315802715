use hieralign::alignment::{
    alignment_objective, argmin_lambda, default_grid, expost_sweep, neighborhood, parse_grid, refine_grid,
    tune_lambda_cached, AlignConfig, Scoring,
};
use hieralign::dataio::{generate_synthetic, split_frames, Frame};
use hieralign::gbm::{AsymmetricLoss, GbmConfig, StoreCache};
use hieralign::hierarchy::aggregate;
use hieralign::metrics::{dollar_weights, ScaleConvention};

#[test]
fn grids() {
    let g = default_grid();
    assert_eq!(g.len(), 40);
    assert_eq!(g[0], 0.05);
    assert_eq!(g[19], 1.0);
    assert_eq!(g[39], 2.0);
    assert_eq!(refine_grid(1.15), vec![1.11, 1.12, 1.13, 1.14, 1.15, 1.16, 1.17, 1.18, 1.19]);
    assert_eq!(refine_grid(0.02), vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06]);
    assert_eq!(parse_grid("0.9:1.1:0.1").unwrap(), vec![0.9, 1.0, 1.1]);
    assert_eq!(parse_grid("1.2, 0.8").unwrap(), vec![1.2, 0.8]);
    assert!(parse_grid("0:1:0.5").is_err());
    assert!(parse_grid("a:b").is_err());
}

#[test]
fn objective_is_rms_gap_to_the_total() {
    let ds = generate_synthetic(1, 3, 1, 60, 0.0).unwrap();
    let (train, actual) = split_frames(&ds, Frame::Validation).unwrap();
    let total = aggregate(&train.hierarchy, &actual, 1).unwrap();
    let top: Vec<f64> = total.row(0).iter().map(|v| v + 2.0).collect();
    let o = alignment_objective(&top, &actual, &train.hierarchy).unwrap();
    assert!((o - 2.0).abs() < 1e-12);
    assert_eq!(alignment_objective(total.row(0), &actual, &train.hierarchy).unwrap(), 0.0);
    assert!(alignment_objective(&top[1..], &actual, &train.hierarchy).is_err());
}

#[test]
fn argmin_tie_breaking() {
    let grid = [0.8, 0.9, 1.1, 1.2];
    assert_eq!(argmin_lambda(&grid, &[Some(1.0), Some(0.5), Some(0.5), Some(2.0)]), Some(1));
    assert_eq!(argmin_lambda(&grid, &[Some(0.5), Some(0.7), Some(0.7), Some(0.5)]), Some(0));
    assert_eq!(argmin_lambda(&grid, &[None, Some(0.7), None, Some(0.5)]), Some(3));
    assert_eq!(argmin_lambda(&grid, &[None, None, None, None]), None);
}

#[test]
fn neighborhoods_are_clipped_windows() {
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let all = [Some(1.0); 6];
    assert_eq!(neighborhood(&grid, &all, 3), vec![0.6, 0.7, 0.8, 0.9, 1.0]);
    assert_eq!(neighborhood(&grid, &all, 0), vec![0.5, 0.6, 0.7]);
    assert_eq!(neighborhood(&grid, &all, 5), vec![0.8, 0.9, 1.0]);
    let gaps = [Some(1.0), None, Some(1.0), Some(1.0), None, Some(1.0)];
    assert_eq!(neighborhood(&grid, &gaps, 2), vec![0.5, 0.7, 0.8, 1.0]);
}

fn small_config() -> GbmConfig {
    GbmConfig {
        num_rounds: 40,
        ..GbmConfig::default()
    }
}

#[test]
fn an_inflated_top_pulls_lambda_above_one() {
    let ds = generate_synthetic(12, 20, 2, 300, 0.5).unwrap();
    let (train, _) = split_frames(&ds, Frame::Validation).unwrap();
    let config = small_config();
    let cache = StoreCache::build(&train, &config).unwrap();
    let base = cache
        .train_and_forecast(&AsymmetricLoss::new(1.0).unwrap(), &config)
        .unwrap();
    let top: Vec<f64> = aggregate(&train.hierarchy, &base, 1)
        .unwrap()
        .row(0)
        .iter()
        .map(|v| 1.1 * v)
        .collect();
    let grid = parse_grid("0.8:1.6:0.1").unwrap();
    let r = tune_lambda_cached(&cache, &train.hierarchy, &top, &grid, &config, &AlignConfig::default()).unwrap();
    assert!(r.lambda_star > 1.0, "{r:?}");
    assert_eq!(r.grid[argmin_lambda(&r.grid, &r.objective).unwrap()], r.lambda_star);
    assert!(r.neighborhood.contains(&r.lambda_star));
    let f = r.ensemble_forecast.unwrap();
    assert_eq!(f.n_series(), train.num_series());

    let refined = tune_lambda_cached(
        &cache,
        &train.hierarchy,
        &top,
        &grid,
        &config,
        &AlignConfig {
            refine: true,
            ..AlignConfig::default()
        },
    )
    .unwrap();
    assert!(refined.grid.len() > grid.len());
    let best = |o: &[Option<f64>]| o.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    assert!(best(&refined.objective) <= best(&r.objective));
}

#[test]
fn singleton_sweep_gives_one_row() {
    let ds = generate_synthetic(13, 8, 2, 200, 0.5).unwrap();
    let (train, actual) = split_frames(&ds, Frame::Validation).unwrap();
    let config = GbmConfig {
        num_rounds: 10,
        ..GbmConfig::default()
    };
    let weights = dollar_weights(&train, &train.hierarchy, 28).unwrap();
    let cache = StoreCache::build(&train, &config).unwrap();
    let scoring = Scoring {
        spec: &train.hierarchy,
        history: &train.sales,
        actual: &actual,
        weights: &weights,
        convention: ScaleConvention::FromFirstNonZero,
    };
    let rows = expost_sweep(&cache, &scoring, None, &[1.0], &config).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].lambda, 1.0);
    assert!(rows[0].alignment_rmse.is_none());
    assert_eq!(rows[0].wrmsse_levels.len(), 12);
    let total = rows[0].wrmsse_total.unwrap();
    let mean_levels = rows[0].wrmsse_levels.iter().sum::<f64>() / 12.0;
    assert!((total - mean_levels).abs() < 1e-9);
}
