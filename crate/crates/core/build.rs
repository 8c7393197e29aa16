fn main() {
    // The `blas` feature routes ndarray's matmul through cblas; link the
    // system OpenBLAS to provide the symbols.
    if std::env::var_os("CARGO_FEATURE_BLAS").is_some() {
        println!("cargo:rustc-link-lib=dylib=openblas");
    }
}
