#include <cmath>

#include "doctest.h"
#include "fedsplit/loss.hpp"
#include "fedsplit/rng.hpp"

using namespace fedsplit;
using namespace fedsplit::nn;

TEST_CASE("a certain correct prediction has zero cross-entropy") {
    const Tensor logits = Tensor::from({1, 2}, {1000.0, 0.0});
    const Tensor labels = Tensor::from({1}, {0.0});
    const LossResult r = loss(LossKind::CrossEntropy, logits, labels);
    CHECK(r.value == 0.0);
    CHECK(r.grad.at2(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("uniform logits give ln 2 and a half/half gradient") {
    const Tensor logits = Tensor::from({1, 2}, {0.0, 0.0});
    const Tensor labels = Tensor::from({1}, {0.0});
    const LossResult r = loss(LossKind::CrossEntropy, logits, labels);
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.grad.at2(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(r.grad.at2(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("one-hot targets agree with index targets") {
    Rng rng(21);
    Tensor logits({5, 3});
    for (double& v : logits.vec()) v = rng.normal();
    Tensor idx({5});
    Tensor hot({5, 3});
    for (size_t i = 0; i < 5; ++i) {
        const size_t t = rng.uniform_below(3);
        idx[i] = static_cast<double>(t);
        hot.at2(i, t) = 1.0;
    }
    const LossResult a = loss(LossKind::CrossEntropy, logits, idx);
    const LossResult b = loss(LossKind::CrossEntropy, logits, hot);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
    CHECK(max_rel_diff(a.grad, b.grad) <= 1e-12);
}

TEST_CASE("cross-entropy is a SUM over the batch") {
    const Tensor one = Tensor::from({1, 2}, {0.3, -0.4});
    const Tensor two = Tensor::from({2, 2}, {0.3, -0.4, 0.3, -0.4});
    const double v1 = loss(LossKind::CrossEntropy, one, Tensor::from({1}, {1.0})).value;
    const double v2 = loss(LossKind::CrossEntropy, two, Tensor::from({2}, {1.0, 1.0})).value;
    CHECK(v2 == 2.0 * v1);
}

TEST_CASE("labels out of range or mis-shaped are rejected") {
    const Tensor logits({2, 3});
    CHECK_THROWS_AS((void)loss(LossKind::CrossEntropy, logits, Tensor::from({2}, {0.0, 3.0})), ConfigError);
    CHECK_THROWS_AS((void)loss(LossKind::CrossEntropy, logits, Tensor::from({2}, {-1.0, 0.0})), ConfigError);
    CHECK_THROWS_AS((void)loss(LossKind::CrossEntropy, logits, Tensor::from({2}, {0.5, 1.0})), ConfigError);
    CHECK_THROWS_AS((void)loss(LossKind::CrossEntropy, logits, Tensor({3})), ConfigError);
    CHECK_THROWS_AS((void)loss(LossKind::CrossEntropy, logits, Tensor({2, 2})), ConfigError);
}

TEST_CASE("L1 loss is the absolute residual with a sign gradient") {
    const LossResult r = loss(LossKind::L1, Tensor::from({1, 1}, {3.0}), Tensor::from({1}, {5.0}));
    CHECK(r.value == 2.0);
    CHECK(r.grad[0] == -1.0);

    // zero residual uses the 0 subgradient
    const LossResult z = loss(LossKind::L1, Tensor::from({1, 1}, {5.0}), Tensor::from({1}, {5.0}));
    CHECK(z.value == 0.0);
    CHECK(z.grad[0] == 0.0);

    CHECK_THROWS_AS((void)loss(LossKind::L1, Tensor({2, 3}), Tensor({2})), ConfigError);
}

TEST_CASE("a single chunk reproduces the plain loss") {
    Rng rng(31);
    Tensor logits({4, 3});
    for (double& v : logits.vec()) v = rng.normal();
    const Tensor labels = Tensor::from({4}, {0.0, 1.0, 2.0, 1.0});
    const LossResult whole = loss(LossKind::CrossEntropy, logits, labels);
    const ChunkedLossResult chunked = loss_chunked(LossKind::CrossEntropy, {{logits, labels}});
    CHECK(chunked.value == whole.value);
    REQUIRE(chunked.chunk_grads.size() == 1);
    CHECK(chunked.chunk_grads[0] == whole.grad);
}

TEST_CASE("chunked losses reassemble the full-batch loss and gradient") {
    for (u64 seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const size_t batch = 12, classes = 4;
        Tensor logits({batch, classes});
        for (double& v : logits.vec()) v = rng.normal();
        Tensor labels({batch});
        for (size_t i = 0; i < batch; ++i) labels[i] = static_cast<double>(rng.uniform_below(classes));

        // random 3-way contiguous split
        const size_t a = 1 + rng.uniform_below(batch - 2);
        const size_t b = a + 1 + rng.uniform_below(batch - a - 1);
        std::vector<std::pair<Tensor, Tensor>> chunks{
            {logits.slice_rows(0, a), labels.slice_rows(0, a)},
            {logits.slice_rows(a, b), labels.slice_rows(a, b)},
            {logits.slice_rows(b, batch), labels.slice_rows(b, batch)},
        };
        const ChunkedLossResult ch = loss_chunked(LossKind::CrossEntropy, chunks);
        const LossResult whole = loss(LossKind::CrossEntropy, logits, labels);

        CHECK(std::abs(ch.value - whole.value) <= 1e-12);
        double sum = 0.0;
        for (double v : ch.per_chunk_values) sum += v;
        CHECK(sum == ch.value);

        // gradient slices agree exactly, not just approximately
        CHECK(ch.chunk_grads[0] == whole.grad.slice_rows(0, a));
        CHECK(ch.chunk_grads[1] == whole.grad.slice_rows(a, b));
        CHECK(ch.chunk_grads[2] == whole.grad.slice_rows(b, batch));
    }
}

TEST_CASE("empty chunk lists are rejected") {
    CHECK_THROWS_AS((void)loss_chunked(LossKind::CrossEntropy, {}), ConfigError);
}
