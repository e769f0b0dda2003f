use proptest::prelude::*;
use velo_core::numkit::{matmul, ByteReader, ByteWriter, RngKey, Tensor};

fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..7, 1usize..7, 1usize..7)
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop((m, k, n) in dims(), seed in any::<u64>()) {
        let mut g = RngKey::new(seed).generator();
        let a: Vec<f64> = (0..m * k).map(|_| g.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| g.normal()).collect();
        let c = matmul(&Tensor::matrix(m, k, a.clone()).unwrap(), &Tensor::matrix(k, n, b.clone()).unwrap()).unwrap();
        prop_assert_eq!(c.shape(), &[m, n][..]);
        for (x, y) in c.data().iter().zip(naive(&a, &b, m, k, n)) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn transpose_of_product((m, k, n) in dims(), seed in any::<u64>()) {
        let mut g = RngKey::new(seed).generator();
        let a = Tensor::matrix(m, k, (0..m * k).map(|_| g.normal()).collect()).unwrap();
        let b = Tensor::matrix(k, n, (0..k * n).map(|_| g.normal()).collect()).unwrap();
        let lhs = matmul(&a, &b).unwrap().transpose().unwrap();
        let rhs = matmul(&b.transpose().unwrap(), &a.transpose().unwrap()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn reductions_match_scalar_loops(xs in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        let t = Tensor::vector(xs.clone());
        let n = xs.len() as f64;
        let sum: f64 = xs.iter().sum();
        let mean = sum / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        prop_assert!((t.sum() - sum).abs() <= 1e-9);
        prop_assert!((t.mean() - mean).abs() <= 1e-9);
        prop_assert!((t.variance() - var).abs() <= 1e-6 * (1.0 + var));
        prop_assert!((t.sq_norm() - xs.iter().map(|x| x * x).sum::<f64>()).abs() <= 1e-6);
        prop_assert_eq!(t.max(), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        prop_assert_eq!(t.min(), xs.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn byte_codec_round_trips(bits in prop::collection::vec(any::<u64>(), 0..16), s in ".{0,24}", tag in any::<u8>()) {
        let xs: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
        let mut w = ByteWriter::new();
        w.u8(tag).f64s(&xs).str(&s).u64(bits.len() as u64);
        let buf = w.finish();
        let mut r = ByteReader::new(&buf, "test");
        prop_assert_eq!(r.u8().unwrap(), tag);
        let back = r.f64s().unwrap();
        prop_assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), bits.clone());
        prop_assert_eq!(r.str().unwrap(), s);
        prop_assert_eq!(r.u64().unwrap(), bits.len() as u64);
        prop_assert!(r.expect_end().is_ok());
    }

    #[test]
    fn key_derivation_is_deterministic_and_separating(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let k = RngKey::new(seed);
        prop_assert_eq!(k.fold_in(a).generator().next_u64(), k.fold_in(a).generator().next_u64());
        if a != b {
            prop_assert_ne!(k.fold_in(a), k.fold_in(b));
        }
        let (l, r) = k.split();
        prop_assert_ne!(l, r);
    }
}
