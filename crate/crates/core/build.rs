fn main() {
    // LAPACK/BLAS symbols (zheevd, zgemm) come from the system OpenBLAS.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
