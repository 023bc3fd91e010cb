mod common;

use common::{audit_fields, example3, example3_audit, parse_triple, GOLDEN_EXAMPLE3};
use hbv::State;

#[test]
fn example3_audit_matches_golden() {
    let fresh = example3_audit();
    if std::env::var_os("HBV_BLESS").is_some() {
        std::fs::write(GOLDEN_EXAMPLE3, &fresh).unwrap();
    }
    let golden = std::fs::read_to_string(GOLDEN_EXAMPLE3).expect("golden file present");
    assert_eq!(golden, fresh);
}

#[test]
fn example3_golden_is_self_consistent() {
    let p = example3();
    let fields = audit_fields(&std::fs::read_to_string(GOLDEN_EXAMPLE3).unwrap());
    let r0: f64 = fields["R0"].parse().unwrap();
    assert!(r0 < 1.0);
    assert_eq!(fields["DEE"], "none");
    let dfe = parse_triple(&fields["DFE"]);
    let res = p.rhs(&State::from_array(dfe));
    assert!(res.iter().all(|r| r.abs() <= 1e-9 * p.lambda()), "{res:?}");
    let printed = parse_triple(&fields["printed_DEE"]);
    let res = p.rhs(&State::from_array(printed));
    assert!(res.iter().any(|r| r.abs() > 1e-3), "{res:?}");
    assert!(fields.contains_key("discrepancy"));
}
