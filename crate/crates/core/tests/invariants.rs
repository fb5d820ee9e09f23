mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn arnoldi_relation_and_orthonormality(case in arnoldi_case()) {
        check_arnoldi(case)?;
    }

    #[test]
    fn fdm_conserves_weighted_stress(case in conservation_case()) {
        check_conservation(case)?;
    }

    #[test]
    fn delta_r_is_monotone_and_nonnegative(case in delta_r_case()) {
        check_delta_r(case)?;
    }

    #[test]
    fn tuner_trace_never_increases(case in tuner_case()) {
        check_tuner_trace(case)?;
    }

    #[test]
    fn detection_is_monotone_in_critical_stress(case in detection_case()) {
        check_detection_monotone(case)?;
    }
}
