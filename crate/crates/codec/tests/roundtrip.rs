use hecsb_codec::{decode, encode, read_cdf, write_cdf, CdfTable};
use proptest::prelude::*;

fn arb_table() -> impl Strategy<Value = CdfTable> {
    // 1 to 4 dimensions, each with 2 to 80 symbols of random positive mass
    // at a random signed offset.
    prop::collection::vec(
        (
            -40i32..40,
            prop::collection::vec(1e-6f64..1.0, 2..80),
        ),
        1..4,
    )
    .prop_map(|pmfs| CdfTable::from_pmfs(&pmfs).unwrap())
}

fn symbols_for(table: &CdfTable, picks: &[u32]) -> Vec<i32> {
    picks
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (min, max) = table.support(i % table.dim_count());
            min + (p % (max - min + 1) as u32) as i32
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_streams_round_trip(table in arb_table(), picks in prop::collection::vec(any::<u32>(), 0..300)) {
        let symbols = symbols_for(&table, &picks);
        let bs = encode(&symbols, &table).unwrap();
        prop_assert_eq!(decode(&bs, &table, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn wire_and_file_forms_round_trip(table in arb_table(), picks in prop::collection::vec(any::<u32>(), 1..100)) {
        let symbols = symbols_for(&table, &picks);
        let bs = encode(&symbols, &table).unwrap();

        let wire = bs.to_wire();
        let back = hecsb_codec::Bitstream::from_wire(&wire).unwrap();
        prop_assert_eq!(&back, &bs);

        let mut file = Vec::new();
        write_cdf(&table, &mut file).unwrap();
        let table2 = read_cdf(&file[..]).unwrap();
        prop_assert_eq!(decode(&back, &table2, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn encoded_length_is_near_the_table_entropy_bound(
        pmf in prop::collection::vec(1e-4f64..1.0, 2..40),
        picks in prop::collection::vec(any::<u32>(), 1000..1500),
    ) {
        let table = CdfTable::from_pmfs(&[(0, pmf)]).unwrap();
        let symbols = symbols_for(&table, &picks);
        let bs = encode(&symbols, &table).unwrap();
        let ideal = table.ideal_bits(&symbols).unwrap();
        let limit = (ideal as f64 * 1.02).ceil() as u64 + 64;
        prop_assert!(
            bs.bit_len() <= limit,
            "{} bits exceeds 1.02 x {} + 64",
            bs.bit_len(),
            ideal
        );
    }
}

#[test]
fn ten_thousand_randomized_round_trips() {
    // Cheap xorshift so the loop stays fast and fully deterministic.
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut rng = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for trip in 0..10_000 {
        let dims = 1 + (rng() % 3) as usize;
        let pmfs: Vec<(i32, Vec<f64>)> = (0..dims)
            .map(|_| {
                let support = 2 + (rng() % 65) as usize;
                let min = -((rng() % 33) as i32);
                let pmf = (0..support)
                    .map(|_| (rng() % 1000 + 1) as f64)
                    .collect();
                (min, pmf)
            })
            .collect();
        let table = CdfTable::from_pmfs(&pmfs).unwrap();
        let len = (rng() % 64) as usize;
        let symbols: Vec<i32> = (0..len)
            .map(|i| {
                let (min, max) = table.support(i % dims);
                min + (rng() % (max - min + 1) as u64) as i32
            })
            .collect();
        let bs = encode(&symbols, &table).unwrap();
        assert_eq!(
            decode(&bs, &table, symbols.len()).unwrap(),
            symbols,
            "round trip {trip} failed"
        );
    }
}
