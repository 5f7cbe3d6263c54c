#include "doctest.h"

#include <cmath>

#include "silora/lora.hpp"
#include "silora/rng.hpp"

using namespace silora;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-1.0, 1.0);
    }
    return m;
}

LoraAdapter make_adapter(std::size_t d_out, std::size_t d_in, std::size_t rank, double alpha,
                         ScalingMode mode, Rng& rng) {
    LoraAdapter a = lora_init("test", d_out, d_in, rank, alpha, mode, rng.next_u64());
    a.theta0 = random_matrix(d_out, d_in, rng);
    a.B = random_matrix(d_out, rank, rng);
    a.A = random_matrix(rank, d_in, rng);
    return a;
}

double rel_diff(const Matrix& a, const Matrix& b) {
    const Matrix d = sub(a, b);
    const double denom = std::max(a.frobenius_norm(), 1e-300);
    return d.frobenius_norm() / denom;
}

} // namespace

TEST_CASE("fresh adapters have an exactly zero delta") {
    LoraAdapter a = lora_init("layer", 6, 5, 3, 16.0, ScalingMode::Standard, 11);
    a.theta0 = Matrix(6, 5, 0.25);
    CHECK(matmul(a.B, a.A).max_abs() == 0.0);
    CHECK(effective_weight(a) == a.theta0);
}

TEST_CASE("scaling factors follow the mode") {
    const LoraAdapter standard = lora_init("l", 16, 16, 8, 32.0, ScalingMode::Standard, 1);
    CHECK(standard.scaling() == doctest::Approx(4.0).epsilon(1e-15));
    const LoraAdapter rs = lora_init("l", 16, 16, 16, 32.0, ScalingMode::RankStabilized, 1);
    CHECK(rs.scaling() == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("lora_init rejects a rank larger than the smaller dimension") {
    CHECK_THROWS_AS(lora_init("l", 4, 8, 5, 16.0, ScalingMode::Standard, 1), Error);
    CHECK_NOTHROW(lora_init("l", 4, 8, 4, 16.0, ScalingMode::Standard, 1));
}

TEST_CASE("lora_init A statistics follow the 1/sqrt(r) scale") {
    const std::size_t rank = 4;
    const LoraAdapter a = lora_init("l", 8, 512, rank, 16.0, ScalingMode::Standard, 3);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.A.size(); ++i) {
        sq += a.A.data()[i] * a.A.data()[i];
    }
    const double sample_std = std::sqrt(sq / static_cast<double>(a.A.size()));
    CHECK(sample_std == doctest::Approx(1.0 / std::sqrt(double(rank))).epsilon(0.1));
}

TEST_CASE("effective weight of a 1x1 adapter expands by hand") {
    LoraAdapter a = lora_init("l", 1, 1, 1, 1.0, ScalingMode::Standard, 1); // s = 1
    a.theta0 = Matrix(1, 1, 0.0);
    a.B = Matrix(1, 1, 2.0);
    a.A = Matrix(1, 1, 3.0);
    CHECK(effective_weight(a).at(0, 0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("switching standard to rank-stabilized rescales the delta by the scale ratio") {
    Rng rng(5);
    LoraAdapter standard = make_adapter(6, 6, 4, 8.0, ScalingMode::Standard, rng);
    LoraAdapter rs = standard;
    rs.scaling_mode = ScalingMode::RankStabilized;
    // alpha=8, r=4: standard s=2, rank-stabilized s=4, ratio 2
    CHECK(rs.scaling() / standard.scaling() == doctest::Approx(2.0).epsilon(1e-15));

    const Matrix delta_standard = sub(effective_weight(standard), standard.theta0);
    const Matrix delta_rs = sub(effective_weight(rs), rs.theta0);
    CHECK(rel_diff(delta_rs, scaled(delta_standard, 2.0)) < 1e-12);
}

TEST_CASE("sgd_step applies the hand-computed update") {
    LoraAdapter a = lora_init("l", 1, 1, 1, 1.0, ScalingMode::Standard, 1);
    a.A = Matrix(1, 1, 1.0);
    const LoraAdapter next = sgd_step(a, Matrix(1, 1, 2.0), Matrix(1, 1, 3.0), 0.1);
    CHECK(next.B.at(0, 0) == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(next.A.at(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(next.theta0 == a.theta0);
}

TEST_CASE("zero gradients leave the adapter unchanged") {
    Rng rng(6);
    const LoraAdapter a = make_adapter(4, 5, 2, 8.0, ScalingMode::Standard, rng);
    const LoraAdapter next = sgd_step(a, Matrix(4, 2), Matrix(2, 5), 0.05);
    CHECK(next.B == a.B);
    CHECK(next.A == a.A);
}

TEST_CASE("two successive steps equal one step applied after another") {
    Rng rng(8);
    const LoraAdapter a0 = make_adapter(4, 4, 2, 8.0, ScalingMode::Standard, rng);
    const Matrix g1b = random_matrix(4, 2, rng), g1a = random_matrix(2, 4, rng);
    const Matrix g2b = random_matrix(4, 2, rng), g2a = random_matrix(2, 4, rng);
    const LoraAdapter chained = sgd_step(sgd_step(a0, g1b, g1a, 0.1), g2b, g2a, 0.1);

    LoraAdapter manual = a0;
    axpy(manual.B, -0.1, g1b);
    axpy(manual.A, -0.1, g1a);
    axpy(manual.B, -0.1, g2b);
    axpy(manual.A, -0.1, g2a);
    CHECK(chained.B == manual.B);
    CHECK(chained.A == manual.A);
}

TEST_CASE("sgd_step rejects mismatched gradient shapes") {
    Rng rng(9);
    const LoraAdapter a = make_adapter(4, 5, 2, 8.0, ScalingMode::Standard, rng);
    CHECK_THROWS_AS(sgd_step(a, Matrix(5, 2), Matrix(2, 5), 0.1), Error);
}

TEST_CASE("virtual gradient matches the step-difference oracle in 1x1") {
    LoraAdapter a = lora_init("l", 1, 1, 1, 1.0, ScalingMode::Standard, 1); // s = 1
    a.A = Matrix(1, 1, 1.0);
    const Matrix gb(1, 1, 2.0), ga(1, 1, 3.0);
    const double eta = 0.1;

    const Matrix g = virtual_gradient(a, gb, ga, eta);
    CHECK(g.at(0, 0) == doctest::Approx(1.4).epsilon(1e-14)); // 2*1 + 0*3 - 0.1*2*3

    // oracle: apply the step, rebuild the gradient from the product change
    const LoraAdapter after = sgd_step(a, gb, ga, eta);
    const double ba_change = matmul(after.B, after.A).at(0, 0) - matmul(a.B, a.A).at(0, 0);
    CHECK(g.at(0, 0) == doctest::Approx(ba_change / -eta).epsilon(1e-12));
}

TEST_CASE("virtual gradient is zero for a stationary step") {
    Rng rng(10);
    const LoraAdapter a = make_adapter(5, 3, 2, 8.0, ScalingMode::Standard, rng);
    const Matrix g = virtual_gradient(a, Matrix(5, 2), Matrix(2, 3), 0.1);
    CHECK(g.max_abs() == 0.0);
}

TEST_CASE("the eta cross term vanishes linearly as eta shrinks") {
    Rng rng(11);
    const LoraAdapter a = make_adapter(4, 4, 2, 4.0, ScalingMode::Standard, rng);
    const Matrix gb = random_matrix(4, 2, rng), ga = random_matrix(2, 4, rng);

    Matrix first_order = matmul(gb, a.A);
    matmul_accumulate(first_order, a.B, ga);
    first_order = scaled(first_order, a.scaling());

    const double eta_small = 1e-8;
    const Matrix g = virtual_gradient(a, gb, ga, eta_small);
    CHECK(rel_diff(g, first_order) < 1e-6);

    // the deviation scales like eta itself
    const Matrix g10 = virtual_gradient(a, gb, ga, 10.0 * eta_small);
    const double dev1 = sub(g, first_order).frobenius_norm();
    const double dev10 = sub(g10, first_order).frobenius_norm();
    CHECK(dev10 == doctest::Approx(10.0 * dev1).epsilon(1e-6));
}

TEST_CASE("with B=0 the virtual gradient loses its B*gA term") {
    Rng rng(12);
    LoraAdapter a = make_adapter(5, 5, 3, 6.0, ScalingMode::Standard, rng);
    a.B = Matrix(5, 3); // fresh init
    const Matrix gb = random_matrix(5, 3, rng), ga = random_matrix(3, 5, rng);
    const double eta = 0.01;

    const Matrix g = virtual_gradient(a, gb, ga, eta);
    Matrix expected = matmul(gb, a.A);
    matmul_accumulate(expected, scaled(gb, -eta), ga);
    expected = scaled(expected, a.scaling());
    CHECK(rel_diff(g, expected) < 1e-14);
}

TEST_CASE("delta_theta of identical adapters is zero and mismatched bases are rejected") {
    Rng rng(13);
    const LoraAdapter a = make_adapter(4, 4, 2, 8.0, ScalingMode::Standard, rng);
    CHECK(delta_theta(a, a).max_abs() == 0.0);

    LoraAdapter other = a;
    other.theta0.at(0, 0) += 1.0;
    CHECK_THROWS_AS(delta_theta(a, other), Error);
}

TEST_CASE("delta_theta matches the hand-expanded 1x1 case under both scales") {
    for (const double s : {0.1, 1.0}) {
        LoraAdapter a = lora_init("l", 1, 1, 1, s, ScalingMode::Standard, 1); // r=1: s=alpha
        a.A = Matrix(1, 1, 1.0);
        const LoraAdapter after = sgd_step(a, Matrix(1, 1, 2.0), Matrix(1, 1, 3.0), 0.1);
        const Matrix d = delta_theta(a, after);
        // B'A' - BA = (-0.2)(0.7) - 0 = -0.14, scaled by s
        CHECK(d.at(0, 0) == doctest::Approx(-0.14 * s).epsilon(1e-12));
    }
}

TEST_CASE("step identity: effective-weight change equals -eta times the virtual gradient") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d_out = 1 + rng.below(64);
        const std::size_t d_in = 1 + rng.below(64);
        const std::size_t rank = 1 + rng.below(std::min<std::uint64_t>(16, std::min(d_out, d_in)));
        const double alpha = rng.uniform(0.5, 64.0);
        const ScalingMode mode =
            rng.below(2) == 0 ? ScalingMode::Standard : ScalingMode::RankStabilized;
        LoraAdapter a = lora_init("l", d_out, d_in, rank, alpha, mode, rng.next_u64());
        a.theta0 = random_matrix(d_out, d_in, rng);
        a.B = random_matrix(d_out, rank, rng);
        a.A = random_matrix(rank, d_in, rng);
        const Matrix gb = random_matrix(d_out, rank, rng);
        const Matrix ga = random_matrix(rank, d_in, rng);
        const double eta = rng.uniform(1e-3, 1e-1);

        const LoraAdapter after = sgd_step(a, gb, ga, eta);
        const Matrix d = delta_theta(a, after);
        Matrix residual = d;
        axpy(residual, eta, virtual_gradient(a, gb, ga, eta));
        CAPTURE(trial);
        REQUIRE(residual.frobenius_norm() <= 1e-12 * std::max(d.frobenius_norm(), 1e-300));
    }
}

TEST_CASE("theta0 stays fixed while the factors move") {
    Rng rng(14);
    LoraAdapter a = make_adapter(6, 6, 3, 12.0, ScalingMode::Standard, rng);
    const Matrix base = a.theta0;
    for (int i = 0; i < 5; ++i) {
        const Matrix gb = random_matrix(6, 3, rng), ga = random_matrix(3, 6, rng);
        a = sgd_step(a, gb, ga, 0.01);
        const Matrix residual = sub(effective_weight(a), scaled(matmul(a.B, a.A), a.scaling()));
        CHECK(rel_diff(residual, base) < 1e-12);
    }
    CHECK(a.theta0 == base);
}
