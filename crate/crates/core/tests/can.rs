mod common;

use canloc_core::can::{crc15, decode_frame, encode_frame, CanFrame, Field, MAX_ID, STUFF_RUN};
use proptest::prelude::*;

fn frame_strategy() -> impl Strategy<Value = CanFrame> {
    (0..=MAX_ID, prop::collection::vec(any::<u8>(), 0..=8), any::<bool>(), 0u8..=8).prop_map(|(id, data, remote, dlc)| {
        if remote {
            CanFrame::remote(id, dlc).unwrap()
        } else {
            CanFrame::new(id, &data).unwrap()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn crc_matches_the_serial_register(f in frame_strategy()) {
        let bits = common::prefix_bits(&f);
        prop_assert_eq!(crc15(&bits), common::crc15_serial(&bits));
    }

    #[test]
    fn crc_matches_on_arbitrary_bit_strings(bits in prop::collection::vec(any::<bool>(), 0..200)) {
        prop_assert_eq!(crc15(&bits), common::crc15_serial(&bits));
    }

    #[test]
    fn encode_decode_round_trip(f in frame_strategy()) {
        let (s, mask) = encode_frame(&f).unwrap();
        prop_assert_eq!(s.len(), mask.len());
        prop_assert_eq!(decode_frame(&s).unwrap(), f);
    }

    #[test]
    fn no_six_equal_bits_in_stuffed_region(f in frame_strategy()) {
        let (s, mask) = encode_frame(&f).unwrap();
        // Stuffing covers SOF through the CRC sequence.
        let end = mask.labels().iter().rposition(|l| matches!(l, Field::Crc | Field::Stuff)).unwrap() + 1;
        let mut run = 1;
        for i in 1..end {
            run = if s.bits[i] == s.bits[i - 1] { run + 1 } else { 1 };
            prop_assert!(run <= STUFF_RUN, "run of {} at bit {}", run, i);
        }
    }
}
