//! Reconstruct private keys from a shared factor and from a shared
//! modulus.
//!
//! ```bash
//! cargo run --release --example recover_key
//! ```

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use torkeyscan::fixtures::{gen_keypair, gen_prime, gen_shared_modulus_pair};
use torkeyscan::keymath::{recover_from_factor, recover_from_shared_modulus, RsaPublicKey};

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);

    // two 512-bit keys that accidentally share a prime: gcd leaks it,
    // division and one modular inverse do the rest
    let shared = gen_prime(&mut rng, 256);
    let key_a = RsaPublicKey::new(&shared * gen_prime(&mut rng, 256), BigUint::from(65_537u32));
    let key_b = RsaPublicKey::new(&shared * gen_prime(&mut rng, 256), BigUint::from(65_537u32));

    use num_integer::Integer;
    let leaked = key_a.n.gcd(&key_b.n);
    println!("gcd(N_a, N_b) = {}...", &leaked.to_str_radix(16)[..16]);

    for (name, key) in [("a", &key_a), ("b", &key_b)] {
        let recovered = recover_from_factor(key, &leaked).expect("leaked prime divides N");
        let m = BigUint::from(123_456_789u64);
        let c = m.modpow(&key.e, &key.n);
        let back = c.modpow(&recovered.d_value(), &key.n);
        assert_eq!(back, m);
        println!("key_{name}: private exponent recovered, roundtrip ok");
    }

    // a shared modulus is just as fatal: either holder computes the
    // other's private exponent from their own
    let pair = gen_shared_modulus_pair(&mut rng, 512);
    println!(
        "\nshared modulus, exponents e_a={} e_b={}",
        pair.key_a.e, pair.key_b.e
    );
    let d_b = recover_from_shared_modulus(&pair.key_a, &pair.key_b, &pair.d_a, 1)
        .expect("factoring from (e, d) succeeds");
    assert_eq!(d_b, pair.d_b);
    println!("holder of key_a recovered key_b's private exponent");

    // sanity: a proper keypair with no shared material stays private
    let lonely = gen_keypair(&mut rng, 512);
    let foreign = gen_prime(&mut rng, 256);
    assert!(recover_from_factor(&lonely.public, &foreign).is_err());
    println!("unrelated factor is rejected, as it should be");
}
