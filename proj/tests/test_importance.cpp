#include "doctest.h"

#include <cmath>

#include "silora/importance.hpp"
#include "silora/rng.hpp"

using namespace silora;

namespace {

ImportanceTracker single_layer_tracker(std::size_t rows, std::size_t cols) {
    ImportanceTracker tracker;
    tracker.register_layer("layer", rows, cols);
    tracker.begin_task({Matrix(rows, cols)});
    return tracker;
}

} // namespace

TEST_CASE("a zero virtual gradient leaves omega unchanged") {
    ImportanceTracker tracker = single_layer_tracker(2, 2);
    tracker.accumulate("layer", Matrix(2, 2), Matrix(2, 2, 0.5));
    CHECK(tracker.layer("layer").omega.max_abs() == 0.0);
}

TEST_CASE("one SGD step contributes +eta*g^2 elementwise") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    const double eta = 0.1;
    const Matrix g(1, 1, 1.4);
    const Matrix delta(1, 1, -eta * 1.4); // the step identity
    tracker.accumulate("layer", g, delta);
    CHECK(tracker.layer("layer").omega.at(0, 0) == doctest::Approx(0.196).epsilon(1e-12));
}

TEST_CASE("a constant gradient telescopes to the endpoint loss difference") {
    // L(theta) = c . theta (linear): g is constant, so the path integral is
    // exactly L(start) - L(end). Oracle: evaluate the loss at the endpoints.
    Rng rng(3);
    const std::size_t n = 6;
    Matrix c(1, n);
    Matrix theta(1, n);
    for (std::size_t i = 0; i < n; ++i) {
        c.data()[i] = rng.uniform(-1.0, 1.0);
        theta.data()[i] = rng.uniform(-1.0, 1.0);
    }
    auto loss = [&](const Matrix& t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += c.data()[i] * t.data()[i];
        }
        return acc;
    };

    ImportanceTracker tracker;
    tracker.register_layer("layer", 1, n);
    tracker.begin_task({theta});
    const double loss_start = loss(theta);

    const double eta = 0.05;
    for (int step = 0; step < 40; ++step) {
        Matrix delta = scaled(c, -eta); // SGD on a linear loss
        tracker.accumulate("layer", c, delta);
        axpy(theta, 1.0, delta);
    }
    const double omega_sum = tracker.layer("layer").omega.sum();
    CHECK(omega_sum == doctest::Approx(loss_start - loss(theta)).epsilon(1e-10));
}

TEST_CASE("consolidation applies the damped normalization") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    // omega = 0.5 via one synthetic contribution
    tracker.accumulate("layer", Matrix(1, 1, -0.5), Matrix(1, 1, 1.0));
    CHECK(tracker.layer("layer").omega.at(0, 0) == doctest::Approx(0.5));
    tracker.consolidate({Matrix(1, 1, 2.0)}, 0.1); // delta_total = 2
    CHECK(tracker.layer("layer").Omega.at(0, 0) == doctest::Approx(0.5 / 4.1).epsilon(1e-12));
    CHECK(tracker.layer("layer").omega.max_abs() == 0.0);
    CHECK_FALSE(tracker.task_open());
}

TEST_CASE("zero omega consolidates to zero importance") {
    ImportanceTracker tracker = single_layer_tracker(3, 2);
    tracker.consolidate({Matrix(3, 2, 0.7)}, 1e-3);
    CHECK(tracker.layer("layer").Omega.max_abs() == 0.0);
    CHECK(tracker.layer("layer").theta_ref == Matrix(3, 2, 0.7));
}

TEST_CASE("negative omega is clamped to zero at consolidation") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    tracker.accumulate("layer", Matrix(1, 1, 0.3), Matrix(1, 1, 1.0)); // omega = -0.3
    CHECK(tracker.layer("layer").omega.at(0, 0) == doctest::Approx(-0.3));
    tracker.consolidate({Matrix(1, 1, 1.0)}, 1e-3);
    CHECK(tracker.layer("layer").Omega.at(0, 0) == 0.0);
}

TEST_CASE("importance sums across recorded tasks") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    tracker.accumulate("layer", Matrix(1, 1, -1.0), Matrix(1, 1, 1.0)); // omega = 1
    tracker.consolidate({Matrix(1, 1, 1.0)}, 1.0);                      // Omega += 1/2
    tracker.begin_task({Matrix(1, 1, 1.0)});
    tracker.accumulate("layer", Matrix(1, 1, -1.0), Matrix(1, 1, 1.0));
    tracker.consolidate({Matrix(1, 1, 2.0)}, 1.0); // delta 1 again, Omega += 1/2
    CHECK(tracker.layer("layer").Omega.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lifecycle misuse is rejected") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    tracker.consolidate({Matrix(1, 1)}, 1e-3);
    CHECK_THROWS_AS(tracker.accumulate("layer", Matrix(1, 1), Matrix(1, 1)), Error);
    CHECK_THROWS_AS(tracker.consolidate({Matrix(1, 1)}, 1e-3), Error);
    tracker.begin_task({Matrix(1, 1)});
    CHECK_NOTHROW(tracker.accumulate("layer", Matrix(1, 1), Matrix(1, 1)));
    CHECK_THROWS_AS(tracker.begin_task({Matrix(1, 1)}), Error);
    CHECK_THROWS_AS(tracker.accumulate("nope", Matrix(1, 1), Matrix(1, 1)), Error);
}

TEST_CASE("layer norms follow the Frobenius norm and its homogeneity") {
    ImportanceTracker tracker;
    tracker.register_layer("a", 1, 2);
    tracker.register_layer("b", 1, 2);
    tracker.begin_task({Matrix(1, 2), Matrix(1, 2)});
    // omega picked so Omega lands on [[3,4]] for layer a (xi=1, delta=0)
    Matrix omega_a(1, 2);
    omega_a.at(0, 0) = 3.0;
    omega_a.at(0, 1) = 4.0;
    tracker.accumulate("a", scaled(omega_a, -1.0), Matrix(1, 2, 1.0));
    tracker.consolidate({Matrix(1, 2), Matrix(1, 2)}, 1.0);

    auto norms = tracker.layer_l2_norms();
    REQUIRE(norms.size() == 2);
    CHECK(norms[0].first == "a");
    CHECK(norms[0].second == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(norms[1].second == 0.0);

    // doubling every entry doubles every norm
    ImportanceTracker doubled;
    doubled.register_layer("a", 1, 2);
    doubled.begin_task({Matrix(1, 2)});
    doubled.accumulate("a", scaled(omega_a, -2.0), Matrix(1, 2, 1.0));
    doubled.consolidate({Matrix(1, 2)}, 1.0);
    CHECK(doubled.layer_l2_norms()[0].second == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("norms before any consolidation are rejected") {
    ImportanceTracker tracker = single_layer_tracker(1, 1);
    CHECK_THROWS_AS(tracker.layer_l2_norms(), Error);
}

TEST_CASE("SGD contributions are nonnegative so clamping is a no-op") {
    // whenever delta = -eta * g, each contribution is +eta*g^2
    Rng rng(17);
    ImportanceTracker tracker = single_layer_tracker(4, 4);
    const double eta = 0.05;
    for (int step = 0; step < 25; ++step) {
        Matrix g(4, 4);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.data()[i] = rng.uniform(-2.0, 2.0);
        }
        tracker.accumulate("layer", g, scaled(g, -eta));
    }
    const Matrix& omega = tracker.layer("layer").omega;
    for (std::size_t i = 0; i < omega.size(); ++i) {
        CHECK(omega.data()[i] >= 0.0);
    }

    const Matrix before_clamp = omega;
    tracker.consolidate({Matrix(4, 4, 0.1)}, 1e-3);
    const Matrix& Omega = tracker.layer("layer").Omega;
    // clamp changed nothing: Omega is exactly omega / (delta^2 + xi)
    for (std::size_t i = 0; i < Omega.size(); ++i) {
        CHECK(Omega.data()[i] ==
              doctest::Approx(before_clamp.data()[i] / (0.01 + 1e-3)).epsilon(1e-12));
    }
}

TEST_CASE("theta_ref stays anchored after consolidation") {
    ImportanceTracker tracker = single_layer_tracker(2, 2);
    const Matrix final_weights(2, 2, 1.5);
    tracker.consolidate({final_weights}, 1e-3);
    CHECK(tracker.layer("layer").theta_ref == final_weights);
    // reading it later still returns the consolidated snapshot
    CHECK(tracker.layer("layer").theta_ref == final_weights);
}
