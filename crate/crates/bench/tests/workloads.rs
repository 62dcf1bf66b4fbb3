use sortcma_bench::{comparison_sort, engine, generation_step, scrambled, short_run};

#[test]
fn workloads_run() {
    let mut e = engine(12, 1);
    for _ in 0..5 {
        generation_step(&mut e);
    }
    assert_eq!(e.generation(), 5);
    let q = comparison_sort(scrambled(64));
    assert!(q > 0 && q <= 64 * 6 + 64);
    assert!(short_run(4, 10, 1).is_finite());
}
