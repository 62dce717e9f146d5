use std::time::Instant;

#[allow(dead_code)]
#[path = "common/gradcheck.rs"]
mod gradcheck;

use gradcheck::Checks;

fn run(group: fn(&mut Checks)) {
    let mut c = Checks::default();
    group(&mut c);
    c.assert_ok();
}

#[test]
fn elementwise_ops() {
    run(gradcheck::elementwise_ops);
}

#[test]
fn matrix_ops() {
    run(gradcheck::matrix_ops);
}

#[test]
fn normalising_ops_and_losses() {
    run(gradcheck::normalising_ops_and_losses);
}

#[test]
fn recurrent_cells() {
    run(gradcheck::recurrent_cells);
}

#[test]
fn additive_and_multi_head_attention() {
    run(gradcheck::attention);
}

#[test]
fn every_architecture_end_to_end() {
    let start = Instant::now();
    run(gradcheck::architectures);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient checks took {elapsed:.1} s");
}
