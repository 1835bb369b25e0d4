use dualrecon_web::*;

#[test]
fn grid_shape_and_boundaries() {
    let p = feasibility(2, 32, 1, 8, 0.125).unwrap();
    assert_eq!(p.len(), 31 * 8);
    assert!(p[..31].iter().all(|&v| v == 1.0));
    assert!(p[7 * 31..].iter().all(|&v| v == 0.0));
}

#[test]
fn zero_fill_with_every_line_is_the_phantom() {
    let full = zero_filled(32, 3, 1.0, 1.0, 0).unwrap();
    let truth = phantom(32, 3).unwrap();
    let err = full
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-9);
    let lines = mask_lines(32, 4.0, 0.125, 0).unwrap();
    assert_eq!(lines.len(), 32);
    assert_eq!(lines.iter().map(|&b| b as usize).sum::<usize>(), 8);
}
