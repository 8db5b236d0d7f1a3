use langnav_nn::checks::layer_checks;
use langnav_nn::conv::ConvGeom;

#[test]
fn every_layer_matches_finite_differences() {
    let checks = layer_checks().unwrap();
    assert_eq!(checks.len(), 9);
    for c in &checks {
        assert!(c.report.checked > 0, "{}", c.name);
        assert!(c.passed(), "{}: {:?}", c.name, c.report);
        assert!(c.tolerance <= 1e-4);
    }
}

#[test]
fn conv_geometry_rejects_misfit() {
    let g = ConvGeom {
        cin: 1,
        cout: 1,
        d: 2,
        h: 4,
        w: 4,
        kd: 3,
        kh: 3,
        kw: 3,
        stride: [1, 1, 1],
        pad: [0, 1, 1],
    };
    assert!(g.out_dims().is_err());
}
