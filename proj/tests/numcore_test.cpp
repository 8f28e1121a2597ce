#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iern/layers.hpp"
#include "iern/optim.hpp"

using namespace iern;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

TEST_CASE("relu forward matches definition") {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
}

TEST_CASE("dense with identity weights is the identity") {
    ParamSet ps;
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w.data()[static_cast<std::size_t>(i) * 3 + i] = 1.0;
    ps.add("w", w);
    ps.add("b", Tensor({3}));
    Tensor x({2, 3}, {0.5, -1.0, 2.0, 3.0, 0.0, -0.25});
    Tensor y = layer_forward(LayerSpec::dense(3, 3), x, ps);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d with a centered delta kernel reproduces the image") {
    ParamSet ps;
    Tensor w({1, 1, 3, 3});
    w.data()[4] = 1.0;  // center tap
    ps.add("w", w);
    ps.add("b", Tensor({1}));
    Rng rng(7);
    Tensor x = random_tensor({1, 1, 5, 5}, rng);
    Tensor y = layer_forward(LayerSpec::conv(1, 1, 3, 1, 1), x, ps);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < 25; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("unknown layer kind is a configuration error") {
    ParamSet ps;
    LayerSpec bad;
    bad.kind = static_cast<LayerKind>(99);
    CHECK_THROWS_AS(layer_forward(bad, Tensor({1}), ps), ConfigError);
}

TEST_CASE("layer_forward rejects mismatched shapes") {
    ParamSet ps;
    ps.add("w", Tensor({4, 2}));
    ps.add("b", Tensor({2}));
    CHECK_THROWS_AS(layer_forward(LayerSpec::dense(4, 2), Tensor({3, 3}), ps), ContractError);
}

TEST_CASE("backward of sum(w*w) gives 2w") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({2}, {1.0, 2.0}));
    Tensor loss = sum_all(mul(w, w));
    GradMap g = backward_into(loss, ps);
    CHECK(g["w"][0] == doctest::Approx(2.0));
    CHECK(g["w"][1] == doctest::Approx(4.0));
}

TEST_CASE("parameter not in the graph gets a zero gradient") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({2}, {1.0, 2.0}));
    ps.add("unused", Tensor({3}, {1.0, 1.0, 1.0}));
    GradMap g = backward_into(sum_all(mul(w, w)), ps);
    REQUIRE(g.count("unused"));
    for (double v : g["unused"]) CHECK(v == 0.0);
}

TEST_CASE("frozen parameters receive no gradient and are never stepped") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({2}, {1.0, 2.0}));
    Tensor f = ps.add("f", Tensor({2}, {3.0, 4.0}));
    ps.set_frozen("f", true);
    Tensor loss = sum_all(mul(add(w, f), add(w, f)));
    GradMap g = backward_into(loss, ps);
    CHECK(!g.count("f"));
    CHECK(!f.has_grad());
    AdamState st;
    adam_step(ps, st);
    CHECK(f.data()[0] == 3.0);
    CHECK(f.data()[1] == 4.0);
    CHECK(w.data()[0] != 1.0);
}

TEST_CASE("backward contract errors") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(backward_into(mul(w, w), ps), ContractError);  // not scalar
    Tensor leaf = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(leaf, {}), StateError);  // no recorded forward
}

TEST_CASE("tensor constructors enforce invariants") {
    CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), ContractError);
    CHECK_THROWS_AS(Tensor({2}, {1.0}), ContractError);
    CHECK_THROWS_AS(Tensor({0}), ContractError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0, INFINITY}), ContractError);
}

TEST_CASE("softmax basics") {
    Tensor u = softmax(Tensor({3}, {0.0, 0.0, 0.0}));
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    Tensor t = softmax(Tensor({2}, {0.0, std::log(2.0)}));
    CHECK(t.data()[0] == doctest::Approx(1.0 / 3.0));
    CHECK(t.data()[1] == doctest::Approx(2.0 / 3.0));

    Tensor bad({2});
    bad.data()[0] = std::nan("");  // constructors reject NaN; the mutation path is still guarded
    CHECK_THROWS_AS(softmax(bad), ContractError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor z = random_tensor({4}, rng, 30.0);  // large logits exercise max-subtraction
        const double c = rng.uniform(-100.0, 100.0);
        Tensor zs = z.clone();
        for (auto& v : zs.data()) v += c;
        Tensor a = softmax(z), b = softmax(zs);
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(a.data()[i] >= 0.0);
            sum += a.data()[i];
            CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-9));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(argmax(a.data()) == argmax(b.data()));
    }
}

TEST_CASE("cross entropy limits and oracle") {
    // peaked logits drive the loss to zero
    Tensor peaked({3}, {100.0, 0.0, -50.0});
    CHECK(cross_entropy(peaked, 0).item() == doctest::Approx(0.0).epsilon(1e-9));

    // uniform logits give ln N
    Tensor unif({4}, {0.0, 0.0, 0.0, 0.0});
    CHECK(cross_entropy(unif, 2).item() == doctest::Approx(std::log(4.0)));

    CHECK_THROWS_AS(cross_entropy(unif, 4), ContractError);
    CHECK_THROWS_AS(cross_entropy(unif, -1), ContractError);

    // random case against a direct reimplementation
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor z = random_tensor({5}, rng, 3.0);
        const int label = static_cast<int>(rng.uniform_int(5));
        double denom = 0.0;
        for (double v : z.data()) denom += std::exp(v);
        const double expected = -std::log(std::exp(z.data()[static_cast<std::size_t>(label)]) / denom);
        CHECK(cross_entropy(z, label).item() == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("mse basics and oracle") {
    Rng rng(31);
    Tensor x = random_tensor({6}, rng);
    CHECK(mse(x, x).item() == 0.0);

    CHECK(mse(Tensor({2}, {0.0, 1.0}), Tensor({2}, {1.0, 0.0})).item() == doctest::Approx(1.0));
    CHECK_THROWS_AS(mse(Tensor({2}), Tensor({3})), ContractError);

    // probability vector against the uniform broadcast target, vs a direct sum
    Tensor p = softmax(random_tensor({4}, rng));
    const double target = 0.25;
    double direct = 0.0;
    for (double v : p.data()) direct += (v - target) * (v - target);
    direct /= 4.0;
    CHECK(mse_scalar(p, target).item() == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("adam first step moves by ~lr against the gradient sign") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({3}, {0.5, -0.2, 1.0}));
    w.alloc_grad();
    w.grad()[0] = 0.3;
    w.grad()[1] = 1.7;
    w.grad()[2] = -0.01;
    AdamState st(AdamConfig{.lr = 1e-2});
    adam_step(ps, st);
    CHECK(w.data()[0] == doctest::Approx(0.5 - 1e-2).epsilon(1e-4));
    CHECK(w.data()[1] == doctest::Approx(-0.2 - 1e-2).epsilon(1e-4));
    CHECK(w.data()[2] == doctest::Approx(1.0 + 1e-2).epsilon(1e-4));
    CHECK(st.step_count() == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({2}, {0.7, -0.3}));
    w.alloc_grad();
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step(ps, st);
    CHECK(w.data()[0] == 0.7);
    CHECK(w.data()[1] == -0.3);
    CHECK(st.step_count() == 5);
}

TEST_CASE("adam missing gradient is a contract error") {
    ParamSet ps;
    ps.add("w", Tensor({2}, {0.7, -0.3}));
    AdamState st;
    CHECK_THROWS_AS(adam_step(ps, st), ContractError);
}

TEST_CASE("adam trajectory matches an independent scalar implementation") {
    // loss f(w) = (w - 3)^2 on a single scalar parameter
    ParamSet ps;
    Tensor w = ps.add("w", Tensor({1}, {0.0}));
    AdamConfig cfg{.lr = 0.05, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8};
    AdamState st(cfg);

    // hand-rolled reference
    double rw = 0.0, rm = 0.0, rv = 0.0;
    for (int t = 1; t <= 10; ++t) {
        Tensor diff = sub(w, Tensor::scalar(3.0));
        Tensor loss = mul(diff, diff);
        backward_into(loss, ps);
        adam_step(ps, st);

        const double g = 2.0 * (rw - 3.0);
        rm = cfg.beta1 * rm + (1 - cfg.beta1) * g;
        rv = cfg.beta2 * rv + (1 - cfg.beta2) * g * g;
        const double mhat = rm / (1 - std::pow(cfg.beta1, t));
        const double vhat = rv / (1 - std::pow(cfg.beta2, t));
        rw -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        CHECK(w.data()[0] == doctest::Approx(rw).epsilon(1e-10));
    }
}

TEST_CASE("grad_check on a linear loss is exact to machine noise") {
    ParamSet ps;
    ps.add("w", Tensor({4}, {0.1, -0.4, 0.9, 0.02}));
    auto loss = [&]() { return sum_all(scale(ps.at("w"), 3.0)); };
    CHECK(grad_check(loss, {&ps}) < 1e-8);
}

TEST_CASE("grad_check flags a corrupted gradient") {
    ParamSet ps;
    ps.add("w", Tensor({3}, {0.4, -0.2, 0.7}));
    auto loss = [&]() { return sum_all(mul(ps.at("w"), ps.at("w"))); };
    GradMap g = backward_into(loss(), ps);
    g["w"][1] *= 2.0;  // corrupt one coordinate
    CHECK(grad_check_against(loss, {&ps}, g) > 0.3);
    CHECK(grad_check(loss, {&ps}) < 1e-8);  // uncorrupted passes
}

TEST_CASE("finite differences agree with analytic gradients per op") {
    Rng rng(101);

    SUBCASE("dense + relu + cross entropy") {
        ParamSet ps;
        ps.add("w", random_tensor({5, 4}, rng, 0.5));
        ps.add("b", random_tensor({4}, rng, 0.1));
        Tensor x = random_tensor({3, 5}, rng);
        auto loss = [&]() {
            return cross_entropy_mean(relu(dense(x, ps.at("w"), ps.at("b"))), {0, 2, 1});
        };
        CHECK(grad_check(loss, {&ps}) < 1e-6);
    }

    SUBCASE("conv2d stride 2 pad 1 + leaky relu + mse") {
        ParamSet ps;
        ps.add("w", random_tensor({3, 2, 3, 3}, rng, 0.3));
        ps.add("b", random_tensor({3}, rng, 0.1));
        Tensor x = random_tensor({2, 2, 5, 5}, rng);
        auto loss = [&]() {
            return mse_scalar(leaky_relu(conv2d(x, ps.at("w"), ps.at("b"), 2, 1), 0.2), 0.1);
        };
        CHECK(grad_check(loss, {&ps}) < 1e-6);
    }

    SUBCASE("batchnorm2d (bias-free conv feeding it)") {
        ParamSet ps;
        ps.add("gamma", random_tensor({3}, rng, 1.0));
        ps.add("beta", random_tensor({3}, rng, 0.5));
        ps.add("w", random_tensor({3, 3, 1, 1}, rng, 0.5));
        Tensor x = random_tensor({4, 3, 2, 2}, rng);
        auto loss = [&]() {
            Tensor y = conv2d(x, ps.at("w"), 1, 0);
            return mse_scalar(batchnorm2d(y, ps.at("gamma"), ps.at("beta")), 0.3);
        };
        CHECK(grad_check(loss, {&ps}) < 1e-5);
    }

    SUBCASE("global_avg_pool + concat + select_rows + broadcast_row") {
        ParamSet ps;
        ps.add("a", random_tensor({2, 2, 3, 3}, rng));
        ps.add("table", random_tensor({3, 2, 3, 3}, rng));
        auto loss = [&]() {
            Tensor sel = select_rows(ps.at("table"), {2, 0});
            Tensor bro = broadcast_row(ps.at("table"), 1, 2);
            Tensor cat = concat_channels(ps.at("a"), add(sel, bro));
            return mean_all(global_avg_pool(cat));
        };
        CHECK(grad_check(loss, {&ps}) < 1e-6);
    }

    SUBCASE("softmax + mse uniform target") {
        ParamSet ps;
        ps.add("z", random_tensor({4, 3}, rng, 2.0));
        auto loss = [&]() { return mse_scalar(softmax(ps.at("z")), 1.0 / 3.0); };
        CHECK(grad_check(loss, {&ps}) < 1e-6);
    }

    SUBCASE("residual block stack") {
        Rng init(5);
        LayerStack stack("g", {LayerSpec::conv(2, 4, 3, 1, 1), LayerSpec::residual(4),
                               LayerSpec::global_avg_pool()});
        stack.init(init);
        Tensor x = random_tensor({3, 2, 4, 4}, rng);
        ForwardOpts opt;
        auto loss = [&]() { return cross_entropy_mean(stack.forward(x, opt), {1, 0, 3}); };
        CHECK(grad_check(loss, {&stack.params()}, 1e-4, 12) < 1e-5);
    }
}

TEST_CASE("identical seeds give bitwise identical losses") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        LayerStack stack("s", {LayerSpec::conv(1, 3, 3, 2, 1), LayerSpec::relu(),
                               LayerSpec::global_avg_pool()});
        Rng init(derive_seed(seed, "init"));
        stack.init(init);
        Tensor x({2, 1, 6, 6});
        for (auto& v : x.data()) v = rng.uniform();
        ForwardOpts opt;
        return cross_entropy_mean(stack.forward(x, opt), {0, 2}).item();
    };
    CHECK(run(42) == run(42));
    CHECK(run(42) != run(43));
}

TEST_CASE("warmup ramps linearly then holds") {
    CHECK(warmup_lr(1.0, 0, 10) == doctest::Approx(0.1));
    CHECK(warmup_lr(1.0, 4, 10) == doctest::Approx(0.5));
    CHECK(warmup_lr(1.0, 9, 10) == doctest::Approx(1.0));
    CHECK(warmup_lr(1.0, 50, 10) == 1.0);
    CHECK(warmup_lr(1.0, 0, 0) == 1.0);
}
