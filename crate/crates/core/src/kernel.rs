//! Squared-L2 distance kernel.
//!
//! Vectors are stored in single precision; all arithmetic runs in double
//! precision. The reduction order is fixed and identical across every code
//! path: elements fold into eight interleaved f64 accumulator lanes (lane `j`
//! takes elements `j`, `j+8`, `j+16`, ...) with one fused multiply-add per
//! element, lanes combine pairwise as `((l0+l1)+(l2+l3)) + ((l4+l5)+(l6+l7))`,
//! and a tail shorter than eight elements folds in ascending order, again with
//! fused multiply-adds. The AVX2 path performs the same IEEE-754 operations in
//! the same order as the scalar path, so both yield bit-identical results on
//! any input; `paths_agree` below pins that.

const LANES: usize = 8;

/// Scalar reference implementation of the fixed reduction order.
pub(crate) fn squared_l2_scalar(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / LANES;
    let mut acc = [0.0f64; LANES];
    for c in 0..chunks {
        let o = c * LANES;
        for j in 0..LANES {
            let d = a[o + j] as f64 - b[o + j] as f64;
            acc[j] = d.mul_add(d, acc[j]);
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in (chunks * LANES)..n {
        let d = a[i] as f64 - b[i] as f64;
        sum = d.mul_add(d, sum);
    }
    sum
}

/// AVX2 + FMA implementation. Two 4-lane f64 registers realize the same eight
/// accumulator lanes as the scalar path.
///
/// # Safety
/// Caller must ensure `avx2` and `fma` are available and `a.len() == b.len()`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn squared_l2_avx2(a: &[f32], b: &[f32]) -> f64 {
    use std::arch::x86_64::*;

    let n = a.len();
    let chunks = n / LANES;
    let pa = a.as_ptr();
    let pb = b.as_ptr();
    let mut acc0 = _mm256_setzero_pd(); // lanes 0..4
    let mut acc1 = _mm256_setzero_pd(); // lanes 4..8
    for c in 0..chunks {
        let o = c * LANES;
        let va0 = _mm256_cvtps_pd(_mm_loadu_ps(pa.add(o)));
        let vb0 = _mm256_cvtps_pd(_mm_loadu_ps(pb.add(o)));
        let va1 = _mm256_cvtps_pd(_mm_loadu_ps(pa.add(o + 4)));
        let vb1 = _mm256_cvtps_pd(_mm_loadu_ps(pb.add(o + 4)));
        let d0 = _mm256_sub_pd(va0, vb0);
        let d1 = _mm256_sub_pd(va1, vb1);
        acc0 = _mm256_fmadd_pd(d0, d0, acc0);
        acc1 = _mm256_fmadd_pd(d1, d1, acc1);
    }
    let mut l0 = [0.0f64; 4];
    let mut l1 = [0.0f64; 4];
    _mm256_storeu_pd(l0.as_mut_ptr(), acc0);
    _mm256_storeu_pd(l1.as_mut_ptr(), acc1);
    let mut sum = ((l0[0] + l0[1]) + (l0[2] + l0[3])) + ((l1[0] + l1[1]) + (l1[2] + l1[3]));
    for i in (chunks * LANES)..n {
        let d = *pa.add(i) as f64 - *pb.add(i) as f64;
        sum = d.mul_add(d, sum);
    }
    sum
}

type KernelFn = unsafe fn(&[f32], &[f32]) -> f64;

unsafe fn scalar_shim(a: &[f32], b: &[f32]) -> f64 {
    squared_l2_scalar(a, b)
}

fn select_kernel() -> KernelFn {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return squared_l2_avx2;
        }
    }
    scalar_shim
}

static KERNEL: std::sync::OnceLock<KernelFn> = std::sync::OnceLock::new();

/// Squared L2 distance between two equal-length f32 slices, f64 accumulation.
#[inline]
pub(crate) fn squared_l2_raw(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let f = *KERNEL.get_or_init(select_kernel);
    // Both implementations are safe for equal-length slices; the dispatched
    // one additionally requires the CPU features probed in select_kernel.
    unsafe { f(a, b) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(seed: u64, n: usize) -> Vec<f32> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64 * 8.0 - 4.0) as f32
            })
            .collect()
    }

    #[test]
    fn paths_agree() {
        for dim in [0usize, 1, 2, 5, 7, 8, 9, 15, 16, 17, 31, 64, 127, 512, 513] {
            for seed in 0..20u64 {
                let a = pseudo(seed * 2 + 1, dim);
                let b = pseudo(seed * 2 + 2, dim);
                let scalar = squared_l2_scalar(&a, &b);
                let dispatched = squared_l2_raw(&a, &b);
                assert_eq!(
                    scalar.to_bits(),
                    dispatched.to_bits(),
                    "kernel paths disagree at dim {dim}, seed {seed}"
                );
            }
        }
    }

    #[test]
    fn matches_ascending_loop_closely() {
        // The fixed lane order differs from a strict ascending sum by at most
        // a few ULPs; all summands are non-negative so there is no
        // cancellation to amplify the difference.
        for dim in [3usize, 8, 33, 512] {
            for seed in 0..10u64 {
                let a = pseudo(seed * 2 + 101, dim);
                let b = pseudo(seed * 2 + 102, dim);
                let mut ascending = 0.0f64;
                for i in 0..dim {
                    let d = a[i] as f64 - b[i] as f64;
                    ascending += d * d;
                }
                let got = squared_l2_raw(&a, &b);
                let tol = 1e-12 * ascending.max(1e-300);
                assert!(
                    (got - ascending).abs() <= tol,
                    "dim {dim} seed {seed}: {got} vs {ascending}"
                );
            }
        }
    }
}
