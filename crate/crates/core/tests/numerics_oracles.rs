mod common;

use common::oracles;

#[test]
fn matmul_all_transpose_flags() {
    oracles::matmul_all_transpose_flags();
}

#[test]
fn elementwise_ops() {
    oracles::elementwise_ops();
}

#[test]
fn row_softmax_and_layer_norm() {
    oracles::row_softmax_and_layer_norm();
}

#[test]
fn mse_and_shape_ops() {
    oracles::mse_and_shape_ops();
}

#[test]
fn composed_attention_block() {
    oracles::composed_attention_block();
}

#[test]
fn svd_matches_eigen_oracle() {
    oracles::svd_matches_eigen_oracle();
}
