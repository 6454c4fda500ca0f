#include "doctest.h"

#include <cmath>
#include <random>

#include "gradcheck.hpp"

using namespace livreg;
using namespace livreg::testing;

namespace {

Volume3 box_mask(const Grid &g, Index3 lo, Index3 hi) {
    Volume3 m(g, VolumeKind::mask);
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) m.at(i, j, k) = 1.0;
    return m;
}

VectorField3 constant_field(const Grid &g, Vec3 t) {
    VectorField3 f(g);
    for (std::size_t i = 0; i < f.voxel_count(); ++i) f.set(i, t);
    return f;
}

VectorField3 noise_field(const Grid &g, unsigned seed, double amp) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    VectorField3 f(g);
    for (double &x : f.data()) x = u(rng);
    return f;
}

// Central-difference derivative of a scalar function of one field entry.
template <class Fn> double fd_entry(VectorField3 f, std::size_t n, double h, Fn &&fn) {
    const double x = f.data()[n];
    f.data()[n] = x + h;
    const double up = fn(f);
    f.data()[n] = x - h;
    const double dn = fn(f);
    return (up - dn) / (2 * h);
}

} // namespace

TEST_CASE("loss_smooth") {
    const Grid g = make_grid({8, 8, 8});
    CHECK(loss_smooth(VectorField3(g)) == 0.0);
    CHECK(loss_smooth(constant_field(g, {1.0, -2.0, 0.5})) == 0.0);
    VectorField3 f(g);
    for (std::size_t i = 0; i < f.voxel_count(); ++i) f.set(i, {double(g.coords(i)[0]), 0.0, 0.0});
    CHECK(loss_smooth(f) == doctest::Approx(1.0));
    // Translation invariance.
    VectorField3 n = noise_field(g, 1, 0.8), shifted = n;
    shifted += constant_field(g, {3.0, -1.0, 2.0});
    CHECK(loss_smooth(shifted) == doctest::Approx(loss_smooth(n)).epsilon(1e-12));
}

TEST_CASE("loss_antifold") {
    const Grid g = make_grid({8, 8, 8});
    CHECK(loss_antifold(VectorField3(g)) == 0.0);

    // d phi^x / dx at (4, 2, 3) is (phi(5) - phi(3)) / 2.
    VectorField3 f(g);
    f.set(g.index(3, 2, 3), {1.0, 0.0, 0.0});
    f.set(g.index(5, 2, 3), {-1.0, 0.0, 0.0});
    CHECK(loss_antifold(f) == doctest::Approx(1.0 / 512.0));

    f.set(g.index(3, 2, 3), {0.5, 0.0, 0.0});
    f.set(g.index(5, 2, 3), {-0.5, 0.0, 0.0});
    CHECK(loss_antifold(f) == 0.0);

    // Off-diagonal derivatives never contribute.
    VectorField3 shear(g);
    for (std::size_t i = 0; i < shear.voxel_count(); ++i) shear.set(i, {-3.0 * g.coords(i)[1], 0.0, 0.0});
    CHECK(loss_antifold(shear) == 0.0);

    VectorField3 n = noise_field(g, 2, 2.0), shifted = n;
    shifted += constant_field(g, {5.0, 1.0, -2.0});
    CHECK(loss_antifold(n) > 0.0);
    CHECK(loss_antifold(shifted) == doctest::Approx(loss_antifold(n)).epsilon(1e-12));
}

TEST_CASE("loss_sim") {
    const Grid g = make_grid({10, 10, 10});
    const Volume3 a = box_mask(g, {2, 2, 2}, {5, 5, 5});
    CHECK(std::abs(loss_sim(a, a)) <= 1e-9);
    CHECK(loss_sim(a, box_mask(g, {6, 6, 6}, {9, 9, 9})) == doctest::Approx(1.0).epsilon(1e-8));
    // Equal volumes (64 voxels), half of each overlapping.
    CHECK(loss_sim(a, box_mask(g, {4, 2, 2}, {7, 5, 5})) == doctest::Approx(0.5).epsilon(1e-8));
    CHECK_THROWS_AS(loss_sim(a, Volume3(make_grid({10, 10, 9}), VolumeKind::mask)), Error);
    // Both empty: epsilon keeps the value finite.
    const Volume3 empty(g, VolumeKind::mask);
    CHECK(loss_sim(empty, empty) == 0.0);
}

TEST_CASE("loss_inv") {
    const Grid g = make_grid({10, 10, 10});
    const Vec3 t{0.75, -1.5, 2.0};
    CHECK(loss_inv(constant_field(g, t), constant_field(g, {-t[0], -t[1], -t[2]})) == 0.0);
    const double n2 = t[0] * t[0] + t[1] * t[1] + t[2] * t[2];
    CHECK(loss_inv(constant_field(g, t), constant_field(g, t)) == doctest::Approx(4.0 * n2));

    const Grid g16 = make_grid({16, 16, 16});
    VectorField3 v(g16);
    for (std::size_t i = 0; i < v.voxel_count(); ++i) {
        const Index3 p = g16.coords(i);
        v.set(i, {std::sin(0.3 * p[1]), 0.8 * std::cos(0.25 * p[2]), 0.6 * std::sin(0.2 * p[0] + 1.0)});
    }
    VectorField3 neg = v;
    neg *= -1.0;
    CHECK(loss_inv(integrate_velocity(v), integrate_velocity(neg)) <= 1e-2);
}

TEST_CASE("term gradients match finite differences") {
    const Grid g = make_grid({7, 6, 8});
    // smooth and antifold (gate held fixed) are quadratic, so a large step is exact.
    const double h = 1e-3;

    SUBCASE("smooth") {
        const VectorField3 f = noise_field(g, 3, 1.0);
        VectorField3 grad(g);
        loss_smooth(f, grad, 1.0);
        for (std::size_t n = 0; n < f.data().size(); n += 5) {
            const double fd = fd_entry(f, n, h, [](const VectorField3 &x) { return loss_smooth(x); });
            CHECK(grad.data()[n] == doctest::Approx(fd).epsilon(1e-6).scale(1e-9));
        }
    }
    SUBCASE("antifold with an active gate") {
        // Diagonal derivatives around -1.5 and -0.3, far from the gate at -1.
        VectorField3 f(g);
        std::mt19937 rng(4);
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        for (std::size_t i = 0; i < f.voxel_count(); ++i) {
            const Index3 p = g.coords(i);
            f.set(i, {-1.5 * p[0] + u(rng), -0.3 * p[1] + u(rng), -1.4 * p[2] + u(rng)});
        }
        VectorField3 grad(g);
        const double value = loss_antifold(f, grad, 1.0);
        CHECK(value > 0.0);
        CHECK(value == loss_antifold(f));
        for (std::size_t n = 0; n < f.data().size(); n += 3) {
            const double fd = fd_entry(f, n, h, [](const VectorField3 &x) { return loss_antifold(x); });
            CHECK(grad.data()[n] == doctest::Approx(fd).epsilon(1e-6).scale(1e-9));
        }
    }
    SUBCASE("sim") {
        const Volume3 a = soft_blob(g, {3.0, 2.5, 4.0}, {2.0, 2.0, 2.5});
        const Volume3 b = soft_blob(g, {3.5, 3.0, 3.2}, {2.5, 1.5, 2.0});
        std::vector<double> grad(a.size(), 0.0);
        loss_sim(a, b, grad, 1.0);
        const double h = 1e-5;
        for (std::size_t n = 0; n < a.size(); n += 4) {
            Volume3 up = a, dn = a;
            up[n] += h;
            dn[n] -= h;
            const double fd = (loss_sim(up, b) - loss_sim(dn, b)) / (2 * h);
            CHECK(grad[n] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    SUBCASE("inv") {
        // Offsets keep sample points off cell faces.
        VectorField3 f = noise_field(g, 5, 0.1), b = noise_field(g, 6, 0.1);
        f += constant_field(g, {0.35, 0.4, 0.3});
        b += constant_field(g, {-0.3, -0.45, -0.35});
        VectorField3 gf(g), gb(g);
        loss_inv(f, b, gf, gb, 1.0);
        const double h = 1e-5;
        for (std::size_t n = 0; n < f.data().size(); n += 5) {
            const double dff = fd_entry(f, n, h, [&](const VectorField3 &x) { return loss_inv(x, b); });
            const double dfb = fd_entry(b, n, h, [&](const VectorField3 &x) { return loss_inv(f, x); });
            CHECK(gf.data()[n] == doctest::Approx(dff).epsilon(1e-5).scale(1e-9));
            CHECK(gb.data()[n] == doctest::Approx(dfb).epsilon(1e-5).scale(1e-9));
        }
    }
    SUBCASE("scale argument accumulates") {
        const VectorField3 f = noise_field(g, 7, 1.0);
        VectorField3 g1(g), g2(g);
        loss_smooth(f, g1, 1.0);
        loss_smooth(f, g2, 0.5);
        loss_smooth(f, g2, 0.5);
        for (std::size_t n = 0; n < f.data().size(); ++n) CHECK(g2.data()[n] == doctest::Approx(g1.data()[n]));
    }
}

TEST_CASE("loss_total") {
    const Grid g = make_grid({12, 12, 12});
    const Volume3 a = box_mask(g, {3, 3, 3}, {8, 8, 8});
    const Volume3 b = box_mask(g, {4, 3, 2}, {9, 8, 8});

    SUBCASE("zero fields, identical masks") {
        for (Mode m : all_modes()) {
            const EnergyModel model(a, a, m, LossWeights{});
            CHECK(model.loss_total(model.forward(model.zero_parameters())).total == 0.0);
        }
    }
    SUBCASE("zero fields, different masks") {
        for (Mode m : all_modes()) {
            const EnergyModel model(a, b, m, LossWeights{});
            const LossBreakdown lb = model.loss_total(model.forward(model.zero_parameters()));
            CHECK(lb.total == doctest::Approx(loss_sim(a, b)));
            CHECK(lb.smooth == 0.0);
            CHECK(lb.antifold == 0.0);
            CHECK(lb.inv == 0.0);
        }
    }
    SUBCASE("independent recomputation and exact decomposition") {
        const LossWeights w{1.0, 0.8, 1.0, 0.4};
        for (Mode m : all_modes()) {
            CAPTURE(to_string(m));
            const EnergyModel model(a, b, m, w);
            const Parameters p = random_parameters(model, 17, 1.2);
            const PipelineState st = model.forward(p);
            const LossBreakdown lb = model.loss_total(st);

            // Rebuild the pipeline from the public field operations.
            const ModeTraits t = traits(m);
            std::vector<VectorField3> full;
            for (const auto &f : p.fields) full.push_back(upsample2x(t.integrate ? integrate_velocity(f) : f, g));
            const std::size_t n = std::size_t(t.fields_per_direction);
            const VectorField3 fwd = n == 1 ? full[0] : compose(full[0], full[1]);
            double smooth = 0.0, antifold = 0.0, inv = 0.0;
            for (const auto &f : full) {
                smooth += loss_smooth(f);
                if (t.antifold) antifold += loss_antifold(f);
            }
            if (t.cyclic) {
                const VectorField3 bwd = n == 1 ? full[1] : compose(full[2], full[3]);
                inv = loss_inv(fwd, bwd) + loss_inv(bwd, fwd);
            }
            const double sim = loss_sim(warp(a, fwd), b);
            CHECK(lb.sim == doctest::Approx(sim).epsilon(1e-14));
            CHECK(lb.smooth == doctest::Approx(smooth).epsilon(1e-14));
            CHECK(lb.antifold == doctest::Approx(antifold).epsilon(1e-14));
            CHECK(lb.inv == doctest::Approx(inv).epsilon(1e-14));
            CHECK(lb.total == doctest::Approx(1.0 * sim + 0.8 * smooth + 1.0 * antifold + 0.4 * inv).epsilon(1e-14));
            CHECK(lb.total - (w.alpha * lb.sim + w.beta * lb.smooth + w.gamma * lb.antifold + w.mu * lb.inv) == 0.0);
            CHECK(lb.sim >= 0.0);
            CHECK(lb.sim <= 1.0);
            CHECK(lb.smooth >= 0.0);
            CHECK(lb.antifold >= 0.0);
            CHECK(lb.inv >= 0.0);
            if (!t.cyclic) CHECK_FALSE(st.cyclic.has_value());
            else CHECK(st.cyclic.has_value());
        }
    }
    SUBCASE("inconsistent inputs") {
        const EnergyModel model(a, b, Mode::diffeocyc_inc2, LossWeights{});
        Parameters p = model.zero_parameters();
        CHECK(p.fields.size() == 4);
        p.fields.pop_back();
        CHECK_THROWS_AS(model.forward(p), Error);
        CHECK_THROWS_AS(EnergyModel(a, Volume3(make_grid({12, 12, 11}), VolumeKind::mask), Mode::direct, LossWeights{}),
                        Error);
        CHECK_THROWS_AS(EnergyModel(a, b, Mode::direct, LossWeights{1.0, -0.1, 1.0, 0.4}), Error);
    }
}

TEST_CASE("gradient vanishes at a global minimum") {
    const Grid g = make_grid({12, 12, 12});
    // A uniform mask pair: the zero field is a smooth minimum of every term.
    const Volume3 full(g, VolumeKind::mask, 1.0);
    for (Mode m : all_modes()) {
        const EnergyModel model(full, full, m, LossWeights{});
        const Parameters grad = model.grad_total(model.forward(model.zero_parameters()));
        for (const auto &f : grad.fields)
            for (double v : f.data()) CHECK(v == 0.0);
    }
    // Non-uniform identical masks: the regularizers alone have zero gradient.
    const Volume3 blob = soft_blob(g, {6.0, 5.5, 6.5}, {3.0, 3.5, 2.5});
    for (Mode m : all_modes()) {
        const EnergyModel model(blob, blob, m, LossWeights{0.0, 0.8, 1.0, 0.4});
        const Parameters grad = model.grad_total(model.forward(model.zero_parameters()));
        for (const auto &f : grad.fields)
            for (double v : f.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("mode gradients match finite differences") {
    const Grid g = make_grid({12, 12, 12});
    const Volume3 moving = soft_blob(g, {5.5, 6.0, 6.2}, {3.5, 3.0, 3.2});
    const Volume3 fixed = soft_blob(g, {6.3, 5.4, 5.8}, {3.0, 3.6, 3.0});
    for (Mode m : all_modes()) {
        CAPTURE(to_string(m));
        const EnergyModel model(moving, fixed, m, LossWeights{});
        for (std::uint64_t s = 0; s < 3; ++s) {
            // A small step isolates the analytic gradient from the O(h^2)
            // truncation of the difference quotient.
            const GradCheckResult r = check_gradient(model, offset_parameters(model, 10 + s), 50, 1e-5, 99 + s);
            CHECK(r.probes == 50);
            CHECK(r.max_rel_error <= 1e-4);
        }
    }
    // Without integration the energy is piecewise quadratic in the parameters
    // away from cell faces, so the coarse step already converges.
    const EnergyModel direct(moving, fixed, Mode::direct, LossWeights{});
    CHECK(check_gradient(direct, offset_parameters(direct, 3), 50, 1e-3, 5).max_rel_error <= 1e-4);
}
