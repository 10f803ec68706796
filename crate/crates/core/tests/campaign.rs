use tagfuzz::checksum::ChecksumStatus;
use tagfuzz::fuzzer::{Budget, Campaign, FuzzConfig};
use tagfuzz::target::extra::nested_encode;
use tagfuzz::target::running_example::CMP_D;
use tagfuzz::target::{run_target, InstrMode, NestedChecksum, Outcome, PatchSet, RunningExample, Target};

fn campaign<'t>(t: &'t dyn Target, seeds: &[Vec<u8>], execs: u64, checksums: bool) -> Campaign<'t> {
    let mut cfg = FuzzConfig { budget: Budget::Execs(execs), rng_seed: 11, ..FuzzConfig::default() };
    cfg.features.checksums = checksums;
    let mut c = Campaign::new(t, cfg, None).unwrap();
    c.add_seeds(seeds).unwrap();
    c.run().unwrap();
    c
}

#[test]
fn running_example_checksum_confirmed() {
    let seed = vec![0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];
    let c = campaign(&RunningExample, &[seed], 50_000, true);
    assert_eq!(c.checksums().get(CMP_D).unwrap().status, ChecksumStatus::Confirmed);
    let accepted = c
        .queue()
        .entries()
        .iter()
        .filter(|e| e.repaired_ok)
        .filter(|e| run_target(&RunningExample, &e.input, &PatchSet::new(), InstrMode::Light).outcome == Outcome::Ok)
        .count();
    assert!(accepted > 1, "only {accepted} entries pass the unpatched parser");
}

#[test]
fn disabled_checksums_leave_index_empty() {
    let seed = vec![0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];
    let c = campaign(&RunningExample, &[seed], 20_000, false);
    assert!(c.checksums().is_empty());
}

#[test]
fn nested_checksums_both_confirmed() {
    let c = campaign(&NestedChecksum, &[nested_encode(b"abcdef")], 30_000, true);
    let confirmed = c.checksums().count(ChecksumStatus::Confirmed);
    assert_eq!(confirmed, 2, "{}", c.checksums().to_text());
}

#[test]
fn budget_is_respected() {
    let seed = vec![0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];
    let c = campaign(&RunningExample, &[seed], 5_000, true);
    // the last fuzz_one may finish a surgical stage started below the budget
    assert!(c.executor().execs < 5_000 + 2_000);
}
