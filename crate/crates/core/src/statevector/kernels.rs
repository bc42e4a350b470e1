//! Hot loops over split real/imaginary amplitude arrays.
//!
//! `s` is the index stride of the target qubit: amplitude pairs are
//! `(k, k + s)` for every `k` with that bit clear. On x86-64 the loops are
//! compiled twice and the AVX2/FMA copy is selected at runtime; strides of
//! four or more use explicit FMA intrinsics there.

/// 2x2 complex matrix as `[ar, ai, br, bi, cr, ci, dr, di]` for `[[a, b], [c, d]]`.
pub(crate) type Mat2Flat = [f64; 8];

#[inline(always)]
fn mat2_pair(m: &Mat2Flat, xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64, f64, f64) {
    let [ar, ai, br, bi, cr, ci, dr, di] = *m;
    (
        ar * xr - ai * xi + br * yr - bi * yi,
        ar * xi + ai * xr + br * yi + bi * yr,
        cr * xr - ci * xi + dr * yr - di * yi,
        cr * xi + ci * xr + dr * yi + di * yr,
    )
}

/// Lower index of the `p`-th pair inside a block of `BLOCK` amplitudes.
#[inline(always)]
fn pair_index<const S: usize>(p: usize) -> usize {
    (p / S) * 2 * S + p % S
}

const BLOCK: usize = 8;

#[inline(always)]
fn mat2_small<const S: usize>(re: &mut [f64], im: &mut [f64], m: &Mat2Flat) {
    for (r, i) in re.chunks_exact_mut(BLOCK).zip(im.chunks_exact_mut(BLOCK)) {
        let r: &mut [f64; BLOCK] = r.try_into().expect("block");
        let i: &mut [f64; BLOCK] = i.try_into().expect("block");
        let mut xr = [0.0; BLOCK / 2];
        let mut xi = [0.0; BLOCK / 2];
        let mut yr = [0.0; BLOCK / 2];
        let mut yi = [0.0; BLOCK / 2];
        for p in 0..BLOCK / 2 {
            let a = pair_index::<S>(p);
            xr[p] = r[a];
            xi[p] = i[a];
            yr[p] = r[a + S];
            yi[p] = i[a + S];
        }
        let [ar, ai, br, bi, cr, ci, dr, di] = *m;
        let mut o = [[0.0; BLOCK / 2]; 4];
        for p in 0..BLOCK / 2 {
            o[0][p] = ar * xr[p] - ai * xi[p] + br * yr[p] - bi * yi[p];
            o[1][p] = ar * xi[p] + ai * xr[p] + br * yi[p] + bi * yr[p];
            o[2][p] = cr * xr[p] - ci * xi[p] + dr * yr[p] - di * yi[p];
            o[3][p] = cr * xi[p] + ci * xr[p] + dr * yi[p] + di * yr[p];
        }
        for p in 0..BLOCK / 2 {
            let a = pair_index::<S>(p);
            r[a] = o[0][p];
            i[a] = o[1][p];
            r[a + S] = o[2][p];
            i[a + S] = o[3][p];
        }
    }
}

#[inline(always)]
fn mat2_impl(re: &mut [f64], im: &mut [f64], s: usize, m: &Mat2Flat) {
    if re.len() < BLOCK {
        for b in (0..re.len()).step_by(2 * s) {
            for k in b..b + s {
                let (w, x, y, z) = mat2_pair(m, re[k], im[k], re[k + s], im[k + s]);
                re[k] = w;
                im[k] = x;
                re[k + s] = y;
                im[k + s] = z;
            }
        }
        return;
    }
    match s {
        1 => mat2_small::<1>(re, im, m),
        2 => mat2_small::<2>(re, im, m),
        4 => mat2_small::<4>(re, im, m),
        _ => {
            for (r, i) in re.chunks_exact_mut(2 * s).zip(im.chunks_exact_mut(2 * s)) {
                let (r0, r1) = r.split_at_mut(s);
                let (i0, i1) = i.split_at_mut(s);
                for k in 0..s {
                    let (w, x, y, z) = mat2_pair(m, r0[k], i0[k], r1[k], i1[k]);
                    r0[k] = w;
                    i0[k] = x;
                    r1[k] = y;
                    i1[k] = z;
                }
            }
        }
    }
}

/// Four pairs at a time: `x = (ar, ai, br, bi)` from `phi`, `y = (cr, ci, dr, di)` from `lambda`.
#[inline(always)]
fn overlap_lanes(acc: &mut [[f64; 4]; 3], x: &[[f64; 4]; 4], y: &[[f64; 4]; 4]) {
    let [ar, ai, br, bi] = x;
    let [cr, ci, dr, di] = y;
    for l in 0..4 {
        acc[0][l] += (ai[l] * dr[l] - ar[l] * di[l]) + (bi[l] * cr[l] - br[l] * ci[l]);
        acc[1][l] += (ar[l] * dr[l] + ai[l] * di[l]) - (br[l] * cr[l] + bi[l] * ci[l]);
        acc[2][l] += (ai[l] * cr[l] - ar[l] * ci[l]) - (bi[l] * dr[l] - br[l] * di[l]);
    }
}

#[inline(always)]
fn quad(v: &[f64], at: usize) -> [f64; 4] {
    v[at..at + 4].try_into().expect("quad")
}

#[inline(always)]
fn quad_small<const S: usize>(v: &[f64], base: usize, upper: bool) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (p, o) in out.iter_mut().enumerate() {
        *o = v[base + pair_index::<S>(p) + if upper { S } else { 0 }];
    }
    out
}

#[inline(always)]
fn overlap_small<const S: usize>(acc: &mut [[f64; 4]; 3], pr: &[f64], pi: &[f64], lr: &[f64], li: &[f64]) {
    for b in (0..pr.len()).step_by(8) {
        let x = [
            quad_small::<S>(pr, b, false),
            quad_small::<S>(pi, b, false),
            quad_small::<S>(pr, b, true),
            quad_small::<S>(pi, b, true),
        ];
        let y = [
            quad_small::<S>(lr, b, false),
            quad_small::<S>(li, b, false),
            quad_small::<S>(lr, b, true),
            quad_small::<S>(li, b, true),
        ];
        overlap_lanes(acc, &x, &y);
    }
}

/// `Im <lambda| P |phi>` for `P = X, Y, Z` on the qubit with stride `s`.
#[inline(always)]
fn overlap_impl(pr: &[f64], pi: &[f64], lr: &[f64], li: &[f64], s: usize) -> [f64; 3] {
    let mut acc = [[0.0; 4]; 3];
    if pr.len() < 8 {
        for b in (0..pr.len()).step_by(2 * s) {
            for a in b..b + s {
                let lane = |v: f64| [v, 0.0, 0.0, 0.0];
                let x = [lane(pr[a]), lane(pi[a]), lane(pr[a + s]), lane(pi[a + s])];
                let y = [lane(lr[a]), lane(li[a]), lane(lr[a + s]), lane(li[a + s])];
                overlap_lanes(&mut acc, &x, &y);
            }
        }
    } else {
        match s {
            1 => overlap_small::<1>(&mut acc, pr, pi, lr, li),
            2 => overlap_small::<2>(&mut acc, pr, pi, lr, li),
            _ => {
                let blocks = pr
                    .chunks_exact(2 * s)
                    .zip(pi.chunks_exact(2 * s))
                    .zip(lr.chunks_exact(2 * s).zip(li.chunks_exact(2 * s)));
                for ((pr, pi), (lr, li)) in blocks {
                    let (ar, br) = pr.split_at(s);
                    let (ai, bi) = pi.split_at(s);
                    let (cr, dr) = lr.split_at(s);
                    let (ci, di) = li.split_at(s);
                    for k in (0..s).step_by(4) {
                        let x = [quad(ar, k), quad(ai, k), quad(br, k), quad(bi, k)];
                        let y = [quad(cr, k), quad(ci, k), quad(dr, k), quad(di, k)];
                        overlap_lanes(&mut acc, &x, &y);
                    }
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for (o, lanes) in out.iter_mut().zip(&acc) {
        *o = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    }
    out
}

#[cfg(target_arch = "x86_64")]
mod fast {
    use super::*;

    use std::arch::x86_64::*;

    // Plain array reads and writes keep debug builds free of the overlap
    // checks behind the load/store intrinsics; both compile to unaligned moves.
    #[inline(always)]
    unsafe fn load(p: *const f64) -> __m256d {
        // SAFETY: the caller guarantees four readable f64 at `p`.
        unsafe { std::mem::transmute::<[f64; 4], __m256d>(p.cast::<[f64; 4]>().read()) }
    }

    #[inline(always)]
    unsafe fn store(p: *mut f64, v: __m256d) {
        // SAFETY: the caller guarantees four writable f64 at `p`.
        unsafe { p.cast::<[f64; 4]>().write(std::mem::transmute::<__m256d, [f64; 4]>(v)) }
    }

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    fn hsum(v: __m256d) -> f64 {
        // SAFETY: both types are 32 bytes of plain data.
        let l = unsafe { std::mem::transmute::<__m256d, [f64; 4]>(v) };
        (l[0] + l[1]) + (l[2] + l[3])
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn mat2(re: &mut [f64], im: &mut [f64], s: usize, m: &Mat2Flat) {
        if re.len() < 8 {
            return mat2_impl(re, im, s, m);
        }
        if s < 4 {
            return mat2_low(re, im, s, m);
        }
        let n = re.len();
        assert!(im.len() == n);
        let [ar, ai, br, bi, cr, ci, dr, di] = m.map(|v| _mm256_set1_pd(v));
        let (re, im) = (re.as_mut_ptr(), im.as_mut_ptr());
        let mut b = 0;
        while b < n {
            for k in (b..b + s).step_by(4) {
                // SAFETY: k + s + 3 < n since s is a power of two >= 4 dividing n / 2.
                unsafe {
                    let (r0, i0, r1, i1) = (re.add(k), im.add(k), re.add(k + s), im.add(k + s));
                    let (xr, xi) = (load(r0), load(i0));
                    let (yr, yi) = (load(r1), load(i1));
                    let or0 = _mm256_fnmadd_pd(ai, xi, _mm256_fmadd_pd(ar, xr, _mm256_fnmadd_pd(bi, yi, _mm256_mul_pd(br, yr))));
                    let oi0 = _mm256_fmadd_pd(ai, xr, _mm256_fmadd_pd(ar, xi, _mm256_fmadd_pd(bi, yr, _mm256_mul_pd(br, yi))));
                    let or1 = _mm256_fnmadd_pd(ci, xi, _mm256_fmadd_pd(cr, xr, _mm256_fnmadd_pd(di, yi, _mm256_mul_pd(dr, yr))));
                    let oi1 = _mm256_fmadd_pd(ci, xr, _mm256_fmadd_pd(cr, xi, _mm256_fmadd_pd(di, yr, _mm256_mul_pd(dr, yi))));
                    store(r0, or0);
                    store(i0, oi0);
                    store(r1, or1);
                    store(i1, oi1);
                }
            }
            b += 2 * s;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn overlap(pr: &[f64], pi: &[f64], lr: &[f64], li: &[f64], s: usize) -> [f64; 3] {
        if pr.len() < 8 {
            return overlap_impl(pr, pi, lr, li, s);
        }
        if s < 4 {
            return overlap_low(pr, pi, lr, li, s);
        }
        let n = pr.len();
        assert!(pi.len() == n && lr.len() == n && li.len() == n);
        let mut ax = _mm256_setzero_pd();
        let mut ay = _mm256_setzero_pd();
        let mut az = _mm256_setzero_pd();
        let (pr, pi, lr, li) = (pr.as_ptr(), pi.as_ptr(), lr.as_ptr(), li.as_ptr());
        let mut b = 0;
        while b < n {
            for k in (b..b + s).step_by(4) {
                // SAFETY: k + s + 3 < n since s is a power of two >= 4 dividing n / 2.
                let (a_r, a_i, b_r, b_i, c_r, c_i, d_r, d_i) = unsafe {
                    (
                        load(pr.add(k)),
                        load(pi.add(k)),
                        load(pr.add(k + s)),
                        load(pi.add(k + s)),
                        load(lr.add(k)),
                        load(li.add(k)),
                        load(lr.add(k + s)),
                        load(li.add(k + s)),
                    )
                };
                ax = _mm256_fmadd_pd(a_i, d_r, _mm256_fnmadd_pd(a_r, d_i, ax));
                ax = _mm256_fmadd_pd(b_i, c_r, _mm256_fnmadd_pd(b_r, c_i, ax));
                ay = _mm256_fmadd_pd(a_r, d_r, _mm256_fmadd_pd(a_i, d_i, ay));
                ay = _mm256_fnmadd_pd(b_r, c_r, _mm256_fnmadd_pd(b_i, c_i, ay));
                az = _mm256_fmadd_pd(a_i, c_r, _mm256_fnmadd_pd(a_r, c_i, az));
                az = _mm256_fnmadd_pd(b_i, d_r, _mm256_fmadd_pd(b_r, d_i, az));
            }
            b += 2 * s;
        }
        [hsum(ax), hsum(ay), hsum(az)]
    }

    /// Swaps the two members of every pair inside a four-lane vector.
    #[inline]
    #[target_feature(enable = "avx2,fma")]
    fn partner(v: __m256d, s: usize) -> __m256d {
        if s == 1 {
            _mm256_permute_pd::<0b0101>(v)
        } else {
            _mm256_permute2f128_pd::<0x01>(v, v)
        }
    }

    /// Strides 1 and 2, where both members of a pair share one vector:
    /// `out = C v + D partner(v)` with per-lane coefficients.
    #[target_feature(enable = "avx2,fma")]
    fn mat2_low(re: &mut [f64], im: &mut [f64], s: usize, m: &Mat2Flat) {
        let [ar, ai, br, bi, cr, ci, dr, di] = *m;
        let lanes = |lo: f64, hi: f64| {
            if s == 1 {
                _mm256_setr_pd(lo, hi, lo, hi)
            } else {
                _mm256_setr_pd(lo, lo, hi, hi)
            }
        };
        let (vr, vi, wr, wi) = (lanes(ar, dr), lanes(ai, di), lanes(br, cr), lanes(bi, ci));
        let n = re.len();
        assert!(im.len() == n && n % 4 == 0);
        let (re, im) = (re.as_mut_ptr(), im.as_mut_ptr());
        for k in (0..n).step_by(4) {
            // SAFETY: k + 3 < n.
            unsafe {
                let (r, i) = (re.add(k), im.add(k));
                let (xr, xi) = (load(r), load(i));
                let (yr, yi) = (partner(xr, s), partner(xi, s));
                store(r, _mm256_fnmadd_pd(vi, xi, _mm256_fmadd_pd(vr, xr, _mm256_fnmadd_pd(wi, yi, _mm256_mul_pd(wr, yr)))));
                store(i, _mm256_fmadd_pd(vi, xr, _mm256_fmadd_pd(vr, xi, _mm256_fmadd_pd(wi, yr, _mm256_mul_pd(wr, yi)))));
            }
        }
    }

    /// Strides 1 and 2 as sums over every amplitude `j` with partner `j'`:
    /// `wx = sum Im(conj(l_j') p_j)`, `wy = sum sign_j Re(conj(l_j') p_j)`,
    /// `wz = sum sign_j Im(conj(l_j) p_j)`, where `sign_j` is +1 on the lower member.
    #[target_feature(enable = "avx2,fma")]
    fn overlap_low(pr: &[f64], pi: &[f64], lr: &[f64], li: &[f64], s: usize) -> [f64; 3] {
        let n = pr.len();
        assert!(pi.len() == n && lr.len() == n && li.len() == n && n % 4 == 0);
        let sign = if s == 1 {
            _mm256_setr_pd(1.0, -1.0, 1.0, -1.0)
        } else {
            _mm256_setr_pd(1.0, 1.0, -1.0, -1.0)
        };
        let mut ax = _mm256_setzero_pd();
        let mut ty = _mm256_setzero_pd();
        let mut tz = _mm256_setzero_pd();
        let (pr, pi, lr, li) = (pr.as_ptr(), pi.as_ptr(), lr.as_ptr(), li.as_ptr());
        for k in (0..n).step_by(4) {
            // SAFETY: k + 3 < n.
            let (p_r, p_i, l_r, l_i) = unsafe {
                (
                    load(pr.add(k)),
                    load(pi.add(k)),
                    load(lr.add(k)),
                    load(li.add(k)),
                )
            };
            let (q_r, q_i) = (partner(l_r, s), partner(l_i, s));
            ax = _mm256_fmadd_pd(q_r, p_i, _mm256_fnmadd_pd(q_i, p_r, ax));
            ty = _mm256_fmadd_pd(q_r, p_r, _mm256_fmadd_pd(q_i, p_i, ty));
            tz = _mm256_fmadd_pd(l_r, p_i, _mm256_fnmadd_pd(l_i, p_r, tz));
        }
        [hsum(ax), hsum(_mm256_mul_pd(sign, ty)), hsum(_mm256_mul_pd(sign, tz))]
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static DETECTED: OnceLock<bool> = OnceLock::new();
    *DETECTED.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

pub(crate) fn mat2(re: &mut [f64], im: &mut [f64], s: usize, m: &Mat2Flat) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { fast::mat2(re, im, s, m) };
    }
    mat2_impl(re, im, s, m)
}

pub(crate) fn overlap(pr: &[f64], pi: &[f64], lr: &[f64], li: &[f64], s: usize) -> [f64; 3] {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { fast::overlap(pr, pi, lr, li, s) };
    }
    overlap_impl(pr, pi, lr, li, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dispatched_kernels_match_portable_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vec = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let m: Mat2Flat = [0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, -0.7];
        for n in [2usize, 4, 8, 64] {
            let (pr, pi, lr, li) = (vec(n), vec(n), vec(n), vec(n));
            let mut s = 1;
            while s < n {
                let (mut ar, mut ai) = (pr.clone(), pi.clone());
                let (mut br, mut bi) = (pr.clone(), pi.clone());
                mat2(&mut ar, &mut ai, s, &m);
                mat2_impl(&mut br, &mut bi, s, &m);
                for k in 0..n {
                    assert!((ar[k] - br[k]).abs() < 1e-14 && (ai[k] - bi[k]).abs() < 1e-14, "n={n} s={s}");
                }
                let fast = overlap(&pr, &pi, &lr, &li, s);
                let slow = overlap_impl(&pr, &pi, &lr, &li, s);
                for (a, b) in fast.iter().zip(slow) {
                    assert!((a - b).abs() < 1e-12, "n={n} s={s}");
                }
                s *= 2;
            }
        }
    }
}
