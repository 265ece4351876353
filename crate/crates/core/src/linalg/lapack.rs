//! Thin FFI bindings to the system BLAS/LAPACK (OpenBLAS).
//!
//! Only the two routines the crate actually leans on: `zheevd` for Hermitian
//! eigendecompositions and `zgemm` for large complex matrix products. BLAS
//! threading is pinned to one thread; callers parallelize at the task level.

use num_complex::Complex64 as C64;
use std::sync::Once;

extern "C" {
    fn zheevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut f64,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn zgemm_(
        transa: *const u8,
        transb: *const u8,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const C64,
        a: *const C64,
        lda: *const i32,
        b: *const C64,
        ldb: *const i32,
        beta: *const C64,
        c: *mut C64,
        ldc: *const i32,
    );

    fn openblas_set_num_threads(n: i32);
}

static PIN_THREADS: Once = Once::new();

fn pin_blas_threads() {
    PIN_THREADS.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

/// Eigendecomposition of a Hermitian matrix handed over in row-major order.
///
/// Returns eigenvalues in ascending order and eigenvectors as row-major
/// columns. On failure the number of unresolved off-diagonal elements of the
/// intermediate tridiagonal form is reported.
pub fn zheevd_rowmajor(a_rowmajor: &[C64], n: usize) -> Result<(Vec<f64>, Vec<C64>), i32> {
    pin_blas_threads();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    // LAPACK is column-major; for Hermitian input the column-major image is
    // the entrywise conjugate.
    let mut a: Vec<C64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            a.push(a_rowmajor[i * n + j]);
        }
    }
    let nn = n as i32;
    let mut w = vec![0.0f64; n];
    let lwork = (2 * n + n * n) as i32 + 64;
    let lrwork = (1 + 5 * n + 2 * n * n) as i32 + 64;
    let liwork = (3 + 5 * n) as i32 + 64;
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    let mut rwork = vec![0.0f64; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    let mut info: i32 = 0;
    unsafe {
        zheevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(info);
    }
    // Columns of the column-major output are eigenvectors; transpose back.
    let mut v = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            v[i * n + j] = a[j * n + i];
        }
    }
    Ok((w, v))
}

/// Row-major C = A * B via zgemm.
///
/// Uses the identity C^T = B^T A^T: feeding row-major buffers as column-major
/// operands in swapped order yields a row-major product.
pub fn zgemm_rowmajor(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    pin_blas_threads();
    let mut c = vec![C64::new(0.0, 0.0); m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let (mm, nn, kk) = (n as i32, m as i32, k as i32);
    unsafe {
        zgemm_(
            b"N".as_ptr(),
            b"N".as_ptr(),
            &mm,
            &nn,
            &kk,
            &one,
            b.as_ptr(),
            &mm,
            a.as_ptr(),
            &kk,
            &zero,
            c.as_mut_ptr(),
            &mm,
        );
    }
    c
}
