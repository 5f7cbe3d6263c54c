#include "doctest.h"

#include <cmath>

#include "silora/regularizer.hpp"
#include "silora/rng.hpp"

using namespace silora;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(lo, hi);
    }
    return m;
}

} // namespace

TEST_CASE("the penalty vanishes exactly at the anchor") {
    Rng rng(1);
    const Matrix theta = random_matrix(4, 4, rng);
    const Matrix omega = random_matrix(4, 4, rng, 0.0, 2.0);
    CHECK(layer_reg_loss(theta, theta, omega) == 0.0);
}

TEST_CASE("the penalty evaluates the weighted squared drift") {
    const Matrix omega(1, 1, 1.0);
    const Matrix theta_ref(1, 1, 0.0);
    const Matrix theta(1, 1, 0.5);
    CHECK(layer_reg_loss(theta, theta_ref, omega) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("zero importance means zero penalty regardless of drift") {
    Rng rng(2);
    const Matrix theta = random_matrix(3, 3, rng, 5.0, 9.0);
    CHECK(layer_reg_loss(theta, Matrix(3, 3), Matrix(3, 3)) == 0.0);
}

TEST_CASE("negative importance entries are rejected") {
    Matrix omega(1, 2);
    omega.at(0, 1) = -0.25;
    CHECK_THROWS_AS(layer_reg_loss(Matrix(1, 2, 1.0), Matrix(1, 2), omega), Error);
}

TEST_CASE("layer weights form a softmax over the norms") {
    SUBCASE("equal norms are uniform") {
        const auto w = layer_weights({{"a", 2.0}, {"b", 2.0}, {"c", 2.0}});
        for (const auto& lw : w) {
            CHECK(lw.weight == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        }
    }
    SUBCASE("norms 0 and ln 2 give 1/3 and 2/3") {
        const auto w = layer_weights({{"a", 0.0}, {"b", std::log(2.0)}});
        CHECK(w[0].weight == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(w[1].weight == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("a constant shift leaves the weights unchanged") {
        const auto w1 = layer_weights({{"a", 0.3}, {"b", 1.1}, {"c", 0.0}});
        const auto w2 = layer_weights({{"a", 5.3}, {"b", 6.1}, {"c", 5.0}});
        for (std::size_t i = 0; i < w1.size(); ++i) {
            CHECK(w1[i].weight == doctest::Approx(w2[i].weight).epsilon(1e-12));
        }
    }
    SUBCASE("weights sum to one") {
        Rng rng(3);
        std::vector<std::pair<std::string, double>> norms;
        for (int i = 0; i < 7; ++i) {
            norms.emplace_back("l" + std::to_string(i), rng.uniform(0.0, 4.0));
        }
        const auto w = layer_weights(norms);
        double sum = 0.0;
        for (const auto& lw : w) {
            sum += lw.weight;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
    SUBCASE("empty layer set is rejected") {
        CHECK_THROWS_AS(layer_weights({}), Error);
    }
}

TEST_CASE("total loss combines the task term and the scaled penalty") {
    RegLossBreakdown breakdown;
    breakdown.weighted_total = 0.5;

    SUBCASE("phi zero returns the task loss exactly") {
        breakdown.phi = 0.0;
        CHECK(total_loss(2.0, breakdown) == 2.0);
    }
    SUBCASE("phi = e^-3 matches the hand-computed total") {
        breakdown.phi = std::exp(-3.0);
        CHECK(total_loss(2.0, breakdown) == doctest::Approx(2.0248935).epsilon(1e-7));
    }
    SUBCASE("a positive penalty keeps the total positive at zero task loss") {
        breakdown.phi = std::exp(-3.0);
        CHECK(total_loss(0.0, breakdown) > 0.0);
    }
    SUBCASE("negative phi is rejected") {
        breakdown.phi = -0.1;
        CHECK_THROWS_AS(total_loss(1.0, breakdown), Error);
    }
}

TEST_CASE("penalty gradient through the factors matches finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        LoraAdapter adapter = lora_init("l", 4, 5, 2, 6.0, ScalingMode::Standard, rng.next_u64());
        adapter.theta0 = random_matrix(4, 5, rng);
        adapter.B = random_matrix(4, 2, rng);
        adapter.A = random_matrix(2, 5, rng);
        const Matrix theta_ref = random_matrix(4, 5, rng);
        const Matrix omega = random_matrix(4, 5, rng, 0.0, 2.0);
        const double coeff = 0.37;

        auto loss = [&](const LoraAdapter& a) {
            return coeff * layer_reg_loss(effective_weight(a), theta_ref, omega);
        };

        Matrix grad_b(4, 2), grad_a(2, 5);
        const Matrix grad_theta =
            layer_reg_grad_theta(effective_weight(adapter), theta_ref, omega);
        chain_theta_grad_to_factors(grad_theta, adapter, coeff, grad_b, grad_a);

        const double h = 1e-6;
        for (std::size_t i = 0; i < adapter.B.size(); ++i) {
            LoraAdapter plus = adapter, minus = adapter;
            plus.B.data()[i] += h;
            minus.B.data()[i] -= h;
            const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
            CHECK(std::fabs(grad_b.data()[i] - fd) <= 1e-5 * std::max(1.0, std::fabs(fd)));
        }
        for (std::size_t i = 0; i < adapter.A.size(); ++i) {
            LoraAdapter plus = adapter, minus = adapter;
            plus.A.data()[i] += h;
            minus.A.data()[i] -= h;
            const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
            CHECK(std::fabs(grad_a.data()[i] - fd) <= 1e-5 * std::max(1.0, std::fabs(fd)));
        }
    }
}

TEST_CASE("a small gradient step on the penalty alone strictly decreases it") {
    Rng rng(5);
    LoraAdapter adapter = lora_init("l", 4, 4, 2, 4.0, ScalingMode::Standard, rng.next_u64());
    adapter.theta0 = random_matrix(4, 4, rng);
    adapter.B = random_matrix(4, 2, rng);
    adapter.A = random_matrix(2, 4, rng);
    const Matrix theta_ref = random_matrix(4, 4, rng);
    const Matrix omega = random_matrix(4, 4, rng, 0.5, 2.0);

    const double before = layer_reg_loss(effective_weight(adapter), theta_ref, omega);
    REQUIRE(before > 0.0);

    Matrix grad_b(4, 2), grad_a(2, 4);
    chain_theta_grad_to_factors(layer_reg_grad_theta(effective_weight(adapter), theta_ref, omega),
                                adapter, 1.0, grad_b, grad_a);
    const LoraAdapter stepped = sgd_step(adapter, grad_b, grad_a, 1e-3);
    const double after = layer_reg_loss(effective_weight(stepped), theta_ref, omega);
    CHECK(after < before);
}

TEST_CASE("scaling importance by c scales penalties by c and reshapes the softmax") {
    Rng rng(6);
    const Matrix theta = random_matrix(3, 3, rng);
    const Matrix theta_ref = random_matrix(3, 3, rng);
    const Matrix omega = random_matrix(3, 3, rng, 0.0, 1.0);
    const double c = 3.5;

    const double raw = layer_reg_loss(theta, theta_ref, omega);
    const double raw_scaled = layer_reg_loss(theta, theta_ref, scaled(omega, c));
    CHECK(raw_scaled == doctest::Approx(c * raw).epsilon(1e-12));

    // the softmax is not scale invariant, only shift invariant
    const auto w1 = layer_weights({{"a", 1.0}, {"b", 2.0}});
    const auto w2 = layer_weights({{"a", c * 1.0}, {"b", c * 2.0}});
    CHECK(w1[0].weight != doctest::Approx(w2[0].weight).epsilon(1e-6));
}
