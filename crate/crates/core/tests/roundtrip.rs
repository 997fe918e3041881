use proptest::prelude::*;

use speckernel::gen::{random_system, random_user_program};
use speckernel::par::item_rng;
use speckernel::syntax::{parse_attacker, parse_system, print};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn systems_survive_printing(seed in any::<u64>()) {
        let sys = random_system(&mut item_rng(seed, 0));
        let text = print::system(&sys);
        let back = parse_system(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &sys);
        prop_assert_eq!(print::system(&back), text);
    }

    #[test]
    fn programs_survive_printing(seed in any::<u64>()) {
        let mut rng = item_rng(seed, 1);
        let sys = random_system(&mut rng);
        let prog = random_user_program(&sys, &mut rng, 10);
        let text = print::cmd(&prog, 0);
        let back = parse_attacker(&text, &sys).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, prog);
    }
}

#[test]
fn fixtures_print_to_a_fixpoint() {
    for (name, src) in speckernel::scenarios::FIXTURES {
        let sys = parse_system(src).unwrap();
        let once = print::system(&sys);
        assert_eq!(print::system(&parse_system(&once).unwrap()), once, "{name}");
    }
}
