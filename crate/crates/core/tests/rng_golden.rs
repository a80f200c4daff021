use latsurv::Rng;

const GOLDEN: &str = include_str!("data/rng_golden.txt");
const SEED: u64 = 20240601;

fn draws() -> Vec<u64> {
    let mut rng = Rng::new(SEED);
    (0..1000).map(|_| rng.next_u64()).collect()
}

#[test]
fn first_thousand_draws_are_pinned() {
    if std::env::var_os("LATSURV_REGEN_GOLDEN").is_some() {
        let text: String = draws().iter().map(|d| format!("{d}\n")).collect();
        std::fs::write(
            concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/rng_golden.txt"),
            text,
        )
        .unwrap();
        return;
    }
    let expected: Vec<u64> = GOLDEN.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(expected.len(), 1000);
    assert_eq!(draws(), expected);
}
