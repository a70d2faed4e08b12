#include "doctest.h"
#include "fedsplit/stack.hpp"

using namespace fedsplit;
using namespace fedsplit::nn;

namespace {

LayerStack seeded_mlp(u64 seed) {
    LayerStack stack({Layer::dense(4, 8), Layer::relu(), Layer::batch_norm(8), Layer::dense(8, 2)}, {4});
    Rng rng(seed);
    stack.init_weights(rng);
    return stack;
}

Tensor seeded_batch(u64 seed, size_t rows, size_t cols) {
    Rng rng(seed);
    Tensor x({rows, cols});
    for (double& v : x.vec()) v = rng.normal();
    return x;
}

} // namespace

TEST_CASE("identity-only stack passes batches and gradients through untouched") {
    LayerStack stack({Layer::identity()}, {3});
    const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tape tape;
    CHECK(stack.forward(x, Mode::Train, tape) == x);
    std::vector<Tensor> wg;
    const Tensor g = Tensor::from({2, 3}, {6, 5, 4, 3, 2, 1});
    CHECK(stack.backward(tape, g, wg) == g);
    CHECK(wg.empty());
}

TEST_CASE("two-layer MLP forward equals a hand-rolled matrix chain to 1e-12") {
    LayerStack stack({Layer::dense(3, 2), Layer::dense(2, 1)}, {3});
    Rng rng(77);
    stack.init_weights(rng);
    const Tensor x = seeded_batch(78, 4, 3);
    Tape tape;
    const Tensor y = stack.forward(x, Mode::Train, tape);

    // independent oracle: explicit loops over both layers
    const Tensor &w0 = stack.layer(0).weights[0], &b0 = stack.layer(0).weights[1];
    const Tensor &w1 = stack.layer(1).weights[0], &b1 = stack.layer(1).weights[1];
    Tensor want({4, 1});
    for (size_t r = 0; r < 4; ++r) {
        double h[2];
        for (size_t j = 0; j < 2; ++j) {
            h[j] = b0[j];
            for (size_t k = 0; k < 3; ++k) h[j] += x.at2(r, k) * w0.at2(k, j);
        }
        double o = b1[0];
        for (size_t j = 0; j < 2; ++j) o += h[j] * w1.at2(j, 0);
        want.at2(r, 0) = o;
    }
    CHECK(max_rel_diff(y, want) <= 1e-12);
}

TEST_CASE("a tape is single-use") {
    LayerStack stack = seeded_mlp(1);
    const Tensor x = seeded_batch(2, 3, 4);
    Tape tape;
    (void)stack.forward(x, Mode::Train, tape);
    std::vector<Tensor> wg;
    (void)stack.backward(tape, Tensor({3, 2}, 1.0), wg);
    std::vector<Tensor> wg2;
    CHECK_THROWS_WITH_AS((void)stack.backward(tape, Tensor({3, 2}, 1.0), wg2),
                         "stale tape: backward already consumed this tape", ConfigError);
    CHECK_THROWS_AS((void)stack.forward(x, Mode::Train, tape), ConfigError);

    Tape fresh;
    std::vector<Tensor> wg3;
    CHECK_THROWS_WITH_AS((void)stack.backward(fresh, Tensor({3, 2}, 1.0), wg3),
                         "stale tape: backward called before forward", ConfigError);
}

TEST_CASE("forward rejects mismatched batches") {
    LayerStack stack = seeded_mlp(1);
    Tape tape;
    CHECK_THROWS_AS((void)stack.forward(Tensor({3, 5}, 1.0), Mode::Train, tape), ConfigError);
    Tape tape2;
    (void)stack.forward(Tensor({3, 4}, 1.0), Mode::Train, tape2);
    std::vector<Tensor> wg;
    CHECK_THROWS_AS((void)stack.backward(tape2, Tensor({3, 3}, 1.0), wg), ConfigError);
}

TEST_CASE("weight gradients mirror the weight list") {
    LayerStack stack = seeded_mlp(3);
    const Tensor x = seeded_batch(4, 5, 4);
    Tape tape;
    (void)stack.forward(x, Mode::Train, tape);
    std::vector<Tensor> wg;
    (void)stack.backward(tape, Tensor({5, 2}, 1.0), wg);
    const auto refs = stack.weight_refs();
    REQUIRE(wg.size() == refs.size());
    for (size_t i = 0; i < wg.size(); ++i) CHECK(wg[i].same_shape(*refs[i]));
}

TEST_CASE("split at zero puts everything on the server side") {
    LayerStack stack = seeded_mlp(5);
    const SubNetworks parts = split(stack, CutSpec{0});
    CHECK_FALSE(parts.last_layer_cut);
    CHECK(parts.fs.depth() == stack.depth());
    const Tensor x = seeded_batch(6, 3, 4);
    LayerStack fi = parts.fi;
    CHECK(fi.predict(x) == x);  // identity institution side
}

TEST_CASE("split at the last layer flags the failing configuration") {
    LayerStack stack = seeded_mlp(5);
    const SubNetworks parts = split(stack, CutSpec{stack.depth()});
    CHECK(parts.last_layer_cut);
    CHECK(parts.fs.depth() == 0);
    CHECK(parts.fs.parameter_count() == 0);
    LayerStack fs = parts.fs;
    const Tensor h = seeded_batch(7, 3, 2);
    CHECK(fs.predict(h) == h);  // empty server side passes features through
    CHECK_THROWS_AS((void)split(stack, CutSpec{stack.depth() + 1}), ConfigError);
}

TEST_CASE("join(split(F,c)) reproduces the stack bit-for-bit at every cut") {
    LayerStack stack = seeded_mlp(9);
    const Tensor x = seeded_batch(10, 4, 4);
    const Tensor want = LayerStack(stack).predict(x);
    for (size_t c = 0; c <= stack.depth(); ++c) {
        const SubNetworks parts = split(stack, CutSpec{c});
        LayerStack rejoined = join(parts);
        CHECK(rejoined.depth() == stack.depth());
        CHECK(rejoined.predict(x) == want);

        // split is also lossless when run piecewise
        LayerStack fi = parts.fi, fs = parts.fs;
        CHECK(fs.predict(fi.predict(x)) == want);
    }
}

TEST_CASE("state round-trips and counts parameters plus running stats") {
    LayerStack stack = seeded_mlp(11);
    // dense(4,8): 40, batchnorm(8): 16 (+16 running), dense(8,2): 18
    CHECK(stack.parameter_count() == 40 + 16 + 18);
    CHECK(stack.state_scalar_count() == stack.parameter_count() + 16);

    // perturb running stats so state has non-default content
    const Tensor x = seeded_batch(12, 6, 4);
    Tape tape;
    (void)stack.forward(x, Mode::Train, tape);

    const auto st = stack.state_copy();
    LayerStack other = seeded_mlp(999);
    other.set_state(st);
    CHECK(other.predict(x) == stack.predict(x));
    CHECK(other.state_copy() == st);

    auto ws = stack.weights_copy();
    ws.pop_back();
    CHECK_THROWS_AS(other.set_weights(ws), ConfigError);
}

TEST_CASE("task helpers describe the output contract") {
    CHECK(Task::classification(4).output_width() == 4);
    CHECK(Task::regression().output_width() == 1);
    CHECK_THROWS_AS((void)Task::classification(1), ConfigError);
}
