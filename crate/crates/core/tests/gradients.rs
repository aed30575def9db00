use svc_core::gradients::suite;

#[test]
fn every_component_matches_central_differences() {
    let cases = suite(10, 2024);
    for c in &cases {
        println!("{:<24} {:.3e}", c.name, c.worst);
    }
    let failing: Vec<_> = cases.iter().filter(|c| !(c.worst <= 1e-4)).collect();
    assert!(failing.is_empty(), "{failing:?}");
}
