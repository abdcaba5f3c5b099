/// `C += A · B` for an `m×k` by `k×n` product with arbitrary strides.
///
/// Strides are `(row, column)` in elements; passing swapped strides reads an
/// operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rs: isize, cs: isize, rows: usize, cols: usize| {
        (rows as isize - 1) * rs + (cols as isize - 1) * cs
    };
    assert!(last(rsa, csa, m, k) < a.len() as isize);
    assert!(last(rsb, csb, k, n) < b.len() as isize);
    assert!(last(rsc, csc, m, n) < c.len() as isize);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
