#include <cmath>

#include <doctest.h>

#include "lpbnn/tensor.hpp"

using namespace lpbnn;

namespace {

Tensor rand_tensor(std::vector<int> shape, RngStream& s, double scale_factor = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data()) x = scale_factor * s.next_normal();
    return t;
}

}  // namespace

TEST_CASE("matmul identity and shape errors") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor col = Tensor::from({2, 1}, {2, 3});
    Tensor out = matmul(eye, col);
    CHECK(out.at(0, 0) == 2.0);
    CHECK(out.at(1, 0) == 3.0);

    Tensor bad = Tensor::zeros({3, 2});
    CHECK_THROWS_WITH_AS(matmul(eye, bad), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(eye, bad), doctest::Contains("(2,2)"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(eye, bad), doctest::Contains("(3,2)"), ShapeError);
}

TEST_CASE("hadamard and relu match their definitions") {
    Tensor a = Tensor::from({3}, {1, -1, 2});
    Tensor b = Tensor::from({3}, {3, 3, 3});
    Tensor h = hadamard(a, b);
    CHECK(h.at(0) == 3.0);
    CHECK(h.at(1) == -3.0);
    CHECK(h.at(2) == 6.0);

    Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 0.0);
    CHECK(r.at(2) == 2.0);
}

TEST_CASE("scalar broadcast is allowed, mismatched shapes are not") {
    Tensor a = Tensor::from({3}, {1, 2, 3});
    Tensor s = Tensor::scalar(10.0);
    Tensor out = add(a, s);
    CHECK(out.at(2) == 13.0);
    Tensor prod = hadamard(s, a);
    CHECK(prod.at(0) == 10.0);

    CHECK_THROWS_AS(add(a, Tensor::zeros({4})), ShapeError);
    CHECK_THROWS_AS(hadamard(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("non-finite inputs are rejected with the op name") {
    Tensor bad = Tensor::from({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_WITH_AS(relu(bad), doctest::Contains("relu"), NonFiniteError);
    CHECK_THROWS_WITH_AS(add(bad, bad), doctest::Contains("add"), NonFiniteError);
}

TEST_CASE("forward primitives are deterministic") {
    RngStream s(7);
    Tensor a = rand_tensor({4, 5}, s);
    Tensor b = rand_tensor({5, 3}, s);
    Tensor c1 = matmul(a, b), c2 = matmul(a, b);
    for (std::int64_t i = 0; i < c1.size(); ++i) {
        CHECK(c1.data()[static_cast<size_t>(i)] == c2.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("backward: sum gives unit gradients") {
    Tensor w = Tensor::param({3}, {5, -2, 0.5});
    Tape tape;
    Tensor loss = sum(w);
    backward(tape, loss);
    CHECK(w.grad()[0] == 1.0);
    CHECK(w.grad()[1] == 1.0);
    CHECK(w.grad()[2] == 1.0);
}

TEST_CASE("backward: d(w^2)/dw = 2w") {
    Tensor w = Tensor::param({2}, {2, 3});
    Tape tape;
    Tensor loss = sum(hadamard(w, w));
    backward(tape, loss);
    CHECK(w.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(w.grad()[1] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: cross-entropy of softmax gives softmax minus onehot") {
    // Oracle: central finite differences with step 1e-5.
    Tensor z = Tensor::from({2, 3}, {0.5, -1.0, 2.0, 0.0, 0.3, -0.7});
    std::vector<int> labels = {2, 0};

    Tensor zg = z.clone();
    zg.set_requires_grad(true);
    Tape tape;
    Tensor probs = softmax_rows(zg);
    Tensor onehot = Tensor::zeros({2, 3});
    onehot.at(0, 2) = 1.0;
    onehot.at(1, 0) = 1.0;
    Tensor picked = sum(hadamard(probs, onehot), 1);
    Tensor loss = scale(sum(log(picked)), -0.5);
    backward(tape, loss);

    // Analytic expectation (softmax - onehot) / batch.
    Tensor p = softmax_rows(z);
    for (int i = 0; i < 2; ++i) {
        for (int c = 0; c < 3; ++c) {
            double expected = (p.at(i, c) - onehot.at(i, c)) / 2.0;
            CHECK(zg.grad()[static_cast<size_t>(i * 3 + c)] == doctest::Approx(expected).epsilon(1e-9));
        }
    }

    // And against the numeric oracle via grad_check.
    auto f = [&labels](const Tensor& x) { return cross_entropy_with_logits(x, labels); };
    CHECK(grad_check(f, z, 1e-5) <= 1e-8);
}

TEST_CASE("backward requires a scalar produced on the tape, single shot") {
    Tensor w = Tensor::param({2}, {1, 2});
    Tape tape;
    Tensor v = hadamard(w, w);
    CHECK_THROWS_AS(backward(tape, v), ShapeError);
    Tensor loss = sum(v);
    backward(tape, loss);
    CHECK_THROWS_WITH_AS(backward(tape, loss), doctest::Contains("consumed"), ValueError);
}

TEST_CASE("gradients accumulate additively for a value used twice") {
    Tensor w = Tensor::param({2}, {3, 4});
    Tape tape;
    Tensor loss = add(sum(w), sum(hadamard(w, w)));
    backward(tape, loss);
    CHECK(w.grad()[0] == doctest::Approx(1.0 + 6.0).epsilon(1e-12));
    CHECK(w.grad()[1] == doctest::Approx(1.0 + 8.0).epsilon(1e-12));
}

TEST_CASE("backward of a sum of losses equals the sum of separate runs") {
    RngStream s(11);
    Tensor base = rand_tensor({6}, s);

    auto loss_a = [](const Tensor& w) { return sum(hadamard(w, w)); };
    auto loss_b = [](const Tensor& w) { return sum(relu(w)); };

    Tensor w1 = base.clone();
    w1.set_requires_grad(true);
    {
        Tape tape;
        backward(tape, add(loss_a(w1), loss_b(w1)));
    }
    Tensor w2 = base.clone();
    w2.set_requires_grad(true);
    {
        Tape tape;
        backward(tape, loss_a(w2));
    }
    Tensor w3 = base.clone();
    w3.set_requires_grad(true);
    {
        Tape tape;
        backward(tape, loss_b(w3));
    }
    for (size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(w1.grad()[i] - (w2.grad()[i] + w3.grad()[i])) <= 1e-12);
    }
}

TEST_CASE("unreachable tensors keep zero gradients") {
    Tensor used = Tensor::param({2}, {1, 2});
    Tensor unused = Tensor::param({2}, {3, 4});
    Tape tape;
    Tensor dangling = hadamard(unused, unused);  // recorded but not reachable from the loss
    Tensor loss = sum(used);
    backward(tape, loss);
    CHECK(dangling.defined());
    CHECK(unused.grad()[0] == 0.0);
    CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("slice and concat round-trip gradients") {
    Tensor w = Tensor::param({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    Tape tape;
    Tensor top = slice(w, {0, 0}, {1, 4});
    Tensor bottom = slice(w, {1, 0}, {2, 4});
    Tensor glued = concat({top, bottom}, 0);
    Tensor loss = sum(hadamard(glued, glued));
    backward(tape, loss);
    for (int i = 0; i < 12; ++i) {
        CHECK(w.grad()[static_cast<size_t>(i)] == doctest::Approx(2.0 * (i + 1)).epsilon(1e-12));
    }
}

TEST_CASE("axis reductions") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor rows = sum(a, 1);
    CHECK(rows.at(0) == 6.0);
    CHECK(rows.at(1) == 15.0);
    Tensor cols = sum(a, 0);
    CHECK(cols.at(0) == 5.0);
    Tensor m = mean(a, 1);
    CHECK(m.at(1) == doctest::Approx(5.0));
    CHECK(mean(a).item() == doctest::Approx(3.5));
}

TEST_CASE("forward_primitive dispatch covers every op kind") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK(forward_primitive(OpKind::kMatmul, {a, b}).at(1, 0) == 3.0);
    CHECK(forward_primitive(OpKind::kAdd, {a, b}).at(0, 0) == 2.0);
    CHECK(forward_primitive(OpKind::kHadamard, {a, b}).at(1, 1) == 4.0);
    OpAttrs attrs;
    attrs.scalar = -2.0;
    CHECK(forward_primitive(OpKind::kScale, {a}, attrs).at(0, 1) == -4.0);
    CHECK(forward_primitive(OpKind::kRelu, {Tensor::from({2}, {-1, 1})}).at(0) == 0.0);
    CHECK(forward_primitive(OpKind::kSoftplus, {Tensor::zeros({1})}).item() == doctest::Approx(std::log(2.0)));
    CHECK(forward_primitive(OpKind::kExp, {Tensor::zeros({1})}).item() == 1.0);
    CHECK(forward_primitive(OpKind::kLog, {Tensor::ones({1})}).item() == 0.0);
    CHECK(forward_primitive(OpKind::kSum, {a}).item() == 10.0);
    CHECK(forward_primitive(OpKind::kMean, {a}).item() == 2.5);
    OpAttrs slice_attrs;
    slice_attrs.starts = {0, 1};
    slice_attrs.lengths = {2, 1};
    CHECK(forward_primitive(OpKind::kSlice, {a}, slice_attrs).at(1, 0) == 4.0);
    OpAttrs cat_attrs;
    cat_attrs.axis = 0;
    CHECK(forward_primitive(OpKind::kConcat, {a, b}, cat_attrs).dim(0) == 4);
}

TEST_CASE("grad_check: linear functions are exact") {
    RngStream s(3);
    Tensor x = rand_tensor({5}, s);
    CHECK(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-4) <= 1e-10);
}

TEST_CASE("grad_check: relu away from kinks") {
    Tensor x = Tensor::from({4}, {-1.5, -0.3, 0.4, 2.0});
    CHECK(grad_check([](const Tensor& t) { return sum(relu(t)); }, x, 1e-4) <= 1e-6);
}

TEST_CASE("grad_check: composite ops at random points") {
    RngStream s(19);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rand_tensor({6}, s);
        // Keep away from relu kinks.
        for (double& v : x.data()) {
            if (std::abs(v) < 0.05) v += 0.2;
        }
        auto f = [](const Tensor& t) {
            Tensor m = reshape(t, {2, 3});
            Tensor y = matmul(m, Tensor::from({3, 2}, {0.5, -1, 2, 0.3, 1, 1}));
            return add(sum(relu(y)), sum(softplus(scale(t, 0.5))));
        };
        CHECK(grad_check(f, x, 1e-4) <= 1e-4);
    }
}

TEST_CASE("grad_check rejects non-finite functions") {
    Tensor x = Tensor::from({1}, {-1.0});
    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return log(t); }, x, 1e-4), NonFiniteError);
}

TEST_CASE("gaussian_sample: degenerate sigma returns mu exactly") {
    Tensor mu = Tensor::from({3}, {1, -2, 0.5});
    Tensor sigma = Tensor::zeros({3});
    auto [z, eps] = gaussian_sample(mu, sigma, 42);
    for (int i = 0; i < 3; ++i) CHECK(z.at(i) == mu.at(i));
}

TEST_CASE("gaussian_sample: same seed is reproducible, negative sigma rejected") {
    Tensor mu = Tensor::zeros({4});
    Tensor sigma = Tensor::ones({4});
    auto [z1, e1] = gaussian_sample(mu, sigma, 9);
    auto [z2, e2] = gaussian_sample(mu, sigma, 9);
    for (int i = 0; i < 4; ++i) CHECK(z1.at(i) == z2.at(i));

    Tensor bad = Tensor::from({4}, {1, 1, -0.1, 1});
    CHECK_THROWS_AS(gaussian_sample(mu, bad, 1), ValueError);
}

TEST_CASE("gaussian_sample: empirical mean within 3 sigma / sqrt(n)") {
    const int n = 100000;
    Tensor mu = Tensor::from({2}, {1.5, -0.5});
    Tensor sigma = Tensor::from({2}, {2.0, 0.7});
    RngStream stream(123);
    double mean0 = 0.0, mean1 = 0.0;
    for (int i = 0; i < n; ++i) {
        auto [z, eps] = gaussian_sample(mu, sigma, stream);
        mean0 += z.at(0);
        mean1 += z.at(1);
    }
    mean0 /= n;
    mean1 /= n;
    CHECK(std::abs(mean0 - 1.5) <= 3.0 * 2.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(mean1 + 0.5) <= 3.0 * 0.7 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("gaussian_sample routes gradients to mu and sigma but not eps") {
    Tensor mu = Tensor::param({2}, {0, 0});
    Tensor sigma = Tensor::param({2}, {1, 2});
    RngStream stream(5);
    Tape tape;
    auto [z, eps] = gaussian_sample(mu, sigma, stream);
    backward(tape, sum(z));
    CHECK(mu.grad()[0] == 1.0);
    CHECK(mu.grad()[1] == 1.0);
    CHECK(sigma.grad()[0] == eps.at(0));
    CHECK(sigma.grad()[1] == eps.at(1));
    CHECK_FALSE(eps.requires_grad());
}

TEST_CASE("rng streams are independent and splittable") {
    RngStream root(99);
    RngStream a = root.substream("alpha");
    RngStream b = root.substream("beta");
    CHECK(a.key() != b.key());
    RngStream a2 = RngStream(99).substream("alpha");
    CHECK(a.next_u64() == a2.next_u64());
    double u = root.substream("gamma").next_uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
}
