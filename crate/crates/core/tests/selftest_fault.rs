//! The conv2d fault hook is process-global, so this check runs in its own
//! test binary.

use tsit::selftest::gradient_suite;
use tsit::tensor::fault::set_conv_grad_fault;

#[test]
fn injected_conv_gradient_fault_is_reported_as_conv2d() {
    let clean = gradient_suite();
    assert!(clean.all_passed(), "{clean}");
    set_conv_grad_fault(true);
    let faulty = gradient_suite();
    set_conv_grad_fault(false);
    let failed: Vec<&str> = faulty.failures().map(|c| c.op()).collect();
    assert!(failed.contains(&"conv2d"), "{faulty}");
}
