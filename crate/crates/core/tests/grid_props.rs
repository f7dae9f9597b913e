use hjbopt::geometry::DomainBox;
use hjbopt::grid::{RectGrid, ValueField};
use proptest::prelude::*;

fn field_strategy() -> impl Strategy<Value = (ValueField, Vec<f64>)> {
    (1usize..=3)
        .prop_flat_map(|dim| {
            let nodes = prop::collection::vec(3usize..7, dim);
            (Just(dim), nodes)
        })
        .prop_flat_map(|(dim, nodes)| {
            let len: usize = nodes.iter().product();
            (Just(nodes), prop::collection::vec(-5.0..5.0f64, len), prop::collection::vec(0.0..1.0f64, dim))
        })
        .prop_map(|(nodes, values, frac)| {
            let dim = nodes.len();
            let grid = RectGrid::new(vec![-1.0; dim], vec![2.0; dim], nodes).unwrap();
            let x = frac.iter().map(|s| -1.0 + 3.0 * s).collect();
            (ValueField::new(grid, values, 0.1).unwrap(), x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn interpolation_stays_within_its_stencil((vf, x) in field_strategy()) {
        let g = &vf.grid;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..g.len() {
            let node = g.node(k);
            let in_cell = (0..g.dim()).all(|d| (node[d] - x[d]).abs() <= g.spacing()[d] * (1.0 + 1e-12));
            if in_cell {
                lo = lo.min(vf.values[k]);
                hi = hi.max(vf.values[k]);
            }
        }
        let v = vf.interpolate(&x).unwrap();
        prop_assert!(lo - 1e-12 <= v && v <= hi + 1e-12, "{lo} <= {v} <= {hi}");
    }

    #[test]
    fn affine_fields_have_exact_gradients(
        slope in prop::collection::vec(-3.0..3.0f64, 2),
        offset in -2.0..2.0f64,
        frac in prop::collection::vec(0.05..0.95f64, 2),
    ) {
        let grid = RectGrid::new(vec![-2.0, -1.0], vec![2.0, 3.0], vec![41, 21]).unwrap();
        let vf = ValueField::from_fn(grid, 0.1, |x| offset + slope[0] * x[0] + slope[1] * x[1]).unwrap();
        let x = [-2.0 + 4.0 * frac[0], -1.0 + 4.0 * frac[1]];
        let g = vf.gradient(&x).unwrap();
        prop_assert!((g[0] - slope[0]).abs() < 1e-10 && (g[1] - slope[1]).abs() < 1e-10);
    }
}

#[test]
fn gradient_of_sine_converges_at_second_order() {
    let domain = DomainBox::new(vec![0.0], vec![3.0]).unwrap();
    let probes: Vec<f64> = (0..50).map(|k| 0.5 + 2.0 * (k as f64 + 0.37) / 50.0).collect();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [31, 61, 121, 241, 481] {
        let vf = ValueField::from_fn(RectGrid::uniform(&domain, n).unwrap(), 0.1, |x| x[0].sin()).unwrap();
        let err = probes.iter().map(|&x| (vf.gradient(&[x]).unwrap()[0] - x.cos()).abs()).fold(0.0, f64::max);
        hs.push(vf.grid.max_spacing().ln());
        errs.push(err.ln());
    }
    let n = hs.len() as f64;
    let mh = hs.iter().sum::<f64>() / n;
    let me = errs.iter().sum::<f64>() / n;
    let order = hs.iter().zip(&errs).map(|(h, e)| (h - mh) * (e - me)).sum::<f64>()
        / hs.iter().map(|h| (h - mh).powi(2)).sum::<f64>();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn interpolation_examples() {
    let line = DomainBox::new(vec![-2.0], vec![2.0]).unwrap();
    let constant = ValueField::from_fn(RectGrid::uniform(&line, 11).unwrap(), 0.1, |_| 3.0).unwrap();
    assert_eq!(constant.interpolate(&[0.123]).unwrap(), 3.0);
    assert_eq!(constant.gradient(&[0.123]).unwrap(), vec![0.0]);
    let linear = ValueField::from_fn(RectGrid::uniform(&line, 11).unwrap(), 0.1, |x| 2.0 * x[0]).unwrap();
    assert!((linear.interpolate(&[0.37]).unwrap() - 0.74).abs() < 1e-14);
    assert!((linear.gradient(&[0.5]).unwrap()[0] - 2.0).abs() < 1e-12);
    let plane = DomainBox::cube(2, -1.0, 1.0).unwrap();
    let sum = ValueField::from_fn(RectGrid::uniform(&plane, 9).unwrap(), 0.1, |x| x[0] + x[1]).unwrap();
    assert!((sum.interpolate(&[0.25, 0.5]).unwrap() - 0.75).abs() < 1e-14);
    let grid = RectGrid::uniform(&plane, 5).unwrap();
    assert_eq!(grid.clamp_to_box(&[-5.0, 0.3]), vec![-1.0, 0.3]);
}
